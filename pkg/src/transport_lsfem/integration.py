"""Element integration with optional splitting along a known interface.

For an element ``K`` cut by the interface, an integrand that is smooth on each
side is integrated as::

    int_K F = int_K F_plus + int_{K cap minus} (F_minus - F_plus)

where ``F_plus``/``F_minus`` use the smooth extensions from each side.  The
minus part is a convex polygon (or a chord approximation of a disk sector),
fan-triangulated for quadrature.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .mesh import Mesh
from .quadrature import quadrature
from .spaces import physical_points, reference_coordinates

CHUNK = 4096


def _fan(poly: np.ndarray):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def minus_subtriangles(mesh: Mesh, elems: np.ndarray, discontinuity):
    """Fan triangles of ``K cap minus`` for each element in ``elems``.

    Returns ``(owner, tris)`` with ``tris`` of shape ``(ns, 3, 2)``.
    """
    owner, tris = [], []
    P = mesh.p[mesh.t[elems]]
    for e, tri in zip(elems, P):
        poly = discontinuity.minus_polygon(tri)
        for a, b, c in _fan(poly):
            area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
            if abs(area) > 1e-300:
                owner.append(e)
                tris.append((a, b, c))
    return np.asarray(owner, dtype=np.int64), np.asarray(tris, dtype=float).reshape(-1, 3, 2)


def integrate_cells(
    mesh: Mesh,
    fn: Callable,
    degree: int,
    discontinuity=None,
    elems: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-element integrals of ``fn``.

    ``fn(elems, ref_pts, xy, side)`` returns integrand values ``(m, nq)``
    (or ``(m, nq, c)`` for several integrands at once) at
    per-element reference points ``ref_pts`` / physical points ``xy`` (both
    ``(m, nq, 2)``); ``side`` is ``"full"``, ``"plus"`` or ``"minus"``.
    Without a discontinuity only ``"full"`` is requested.
    """
    elems = np.arange(mesh.n_triangles) if elems is None else np.asarray(elems, dtype=np.int64)
    quad = quadrature("triangle", degree)
    out = None
    cut = np.zeros(elems.size, dtype=bool)
    if discontinuity is not None:
        cut = discontinuity.cut(mesh.p[mesh.t[elems]])
    for start in range(0, elems.size, CHUNK):
        sl = slice(start, min(start + CHUNK, elems.size))
        ee = elems[sl]
        ref = np.broadcast_to(quad.points, (ee.size,) + quad.points.shape)
        xy = physical_points(mesh, quad.points, ee)
        w = quad.weights[None, :] * (2.0 * mesh.area[ee])[:, None]
        c = cut[sl]
        if np.any(~c):
            v = _weighted(w[~c], fn(ee[~c], ref[~c], xy[~c], "full"))
            out = _alloc(out, elems.size, v)
            out[start + np.flatnonzero(~c)] = v
        if np.any(c):
            v = _weighted(w[c], fn(ee[c], ref[c], xy[c], "plus"))
            out = _alloc(out, elems.size, v)
            out[start + np.flatnonzero(c)] = v
    if np.any(cut):
        pos = np.flatnonzero(cut)
        owner_pos, tris = minus_subtriangles(mesh, elems[pos], discontinuity)
        if owner_pos.size:
            # map owner element ids back to positions in ``elems``
            lookup = dict(zip(elems[pos].tolist(), pos.tolist()))
            owner_idx = np.array([lookup[o] for o in owner_pos.tolist()], dtype=np.int64)
            for start in range(0, owner_pos.size, CHUNK):
                sl = slice(start, min(start + CHUNK, owner_pos.size))
                T = tris[sl]
                J = np.stack([T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]], axis=2)
                xy = T[:, 0, None, :] + np.einsum("mcd,qd->mqc", J, quad.points)
                det = np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
                w = quad.weights[None, :] * det[:, None]
                oe = owner_pos[sl]
                ref = reference_coordinates(mesh, oe, xy)
                diff = fn(oe, ref, xy, "minus") - fn(oe, ref, xy, "plus")
                np.add.at(out, owner_idx[sl], _weighted(w, diff))
    return np.zeros(0) if out is None else out


def _weighted(w, vals):
    return np.einsum("mq,mq...->m...", w, vals)


def _alloc(out, n, v):
    if out is None:
        out = np.zeros((n,) + v.shape[1:])
    return out
