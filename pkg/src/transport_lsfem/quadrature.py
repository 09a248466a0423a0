"""Gauss rules on the reference segment and the reference triangle.

The reference segment is ``[0, 1]`` and the reference triangle has vertices
``(0, 0), (1, 0), (0, 1)``.  Triangle rules are collapsed (Duffy) products of
a Gauss-Jacobi rule and a Gauss-Legendre rule, so every weight is positive and
every point is interior.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_TRIANGLE_DEGREE = 20
MAX_SEGMENT_DEGREE = 31


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on a reference domain.

    ``points`` has shape ``(n, 2)`` on the triangle and ``(n,)`` on the
    segment.  ``degree`` is the polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int
    domain: str


@lru_cache(maxsize=None)
def _segment(degree: int) -> QuadratureRule:
    n = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, degree, "segment")


@lru_cache(maxsize=None)
def _triangle(degree: int) -> QuadratureRule:
    n = degree // 2 + 1
    # x = (1 + a)/2; the Jacobi weight (1 - a) absorbs the (1 - x) Jacobian
    a, wa = roots_jacobi(n, 1.0, 0.0)
    b, wb = np.polynomial.legendre.leggauss(n)
    xa = 0.5 * (1.0 + a)
    wa = wa / 8.0  # (1/2) * (1/2)^2 from the two affine changes of variable
    yb = 0.5 * (1.0 + b)
    X = np.repeat(xa, n)
    Y = np.tile(yb, n) * (1.0 - X)
    W = np.repeat(wa, n) * np.tile(wb, n)
    pts = np.column_stack([X, Y])
    pts.setflags(write=False)
    W.setflags(write=False)
    return QuadratureRule(pts, W, degree, "triangle")


def quadrature(domain: str, degree: int) -> QuadratureRule:
    """Return a rule on ``"triangle"`` or ``"segment"`` exact to ``degree``.

    Raises
    ------
    ValueError
        If the domain is unknown or the degree is outside the supported range.
    """
    degree = int(degree)
    if domain == "triangle":
        if not 0 <= degree <= MAX_TRIANGLE_DEGREE:
            raise ValueError(
                f"triangle quadrature degree {degree} not in [0, {MAX_TRIANGLE_DEGREE}]"
            )
        return _triangle(degree)
    if domain == "segment":
        if not 0 <= degree <= MAX_SEGMENT_DEGREE:
            raise ValueError(
                f"segment quadrature degree {degree} not in [0, {MAX_SEGMENT_DEGREE}]"
            )
        return _segment(degree)
    raise ValueError(f"unknown quadrature domain {domain!r}")
