"""Linear solvers for the symmetric positive definite LS systems."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 2000


class SolverError(RuntimeError):
    """Raised when the linear solve does not reach the requested tolerance."""

    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    method: str


def jacobi(A) -> Callable[[np.ndarray], np.ndarray]:
    d = np.asarray(A.diagonal(), dtype=float)
    if np.any(d <= 0):
        raise ValueError("Jacobi preconditioner needs a positive diagonal")
    inv = 1.0 / d
    return lambda r: inv * r


def cg_solve(
    A,
    b: np.ndarray,
    tol: float = 1e-10,
    maxit: Optional[int] = None,
    precond="jacobi",
    x0: Optional[np.ndarray] = None,
    raise_on_failure: bool = True,
):
    """Preconditioned conjugate gradients.

    Stops when ``||r|| <= tol * ||b||``.  ``precond`` is ``"jacobi"``,
    ``"none"`` or a callable applying the preconditioner to a residual;
    ``maxit`` defaults to ``10 n``.

    Returns
    -------
    x, SolveReport

    Raises
    ------
    SolverError
        When the tolerance is not reached within ``maxit`` iterations (and
        ``raise_on_failure`` is set).
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    maxit = 10 * max(n, 1) if maxit is None else maxit
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, "cg")
    if precond == "jacobi":
        M = jacobi(A)
    elif precond is None or precond == "none":
        M = lambda r: r
    elif callable(precond):
        M = precond
    else:
        raise ValueError(f"unknown preconditioner {precond!r}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = M(r)
    p = z.copy()
    rz = r @ z
    target = tol * bnorm
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > target and it < maxit:
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        it += 1
        if rnorm <= target:
            break
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    report = SolveReport(it, rnorm / bnorm, rnorm <= target, "cg")
    if not report.converged and raise_on_failure:
        raise SolverError(
            f"CG did not converge: relative residual {report.residual:.3e} after {it} iterations",
            report,
        )
    return x, report


def dense_solve(A, b: np.ndarray):
    """Cholesky solve of a small SPD system (falls back to LU if needed)."""
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        return np.zeros(0), SolveReport(0, 0.0, True, "dense")
    try:
        x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(Ad), b)
    except np.linalg.LinAlgError:
        x = scipy.linalg.solve(Ad, b)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(Ad @ x - b) / bnorm if bnorm > 0 else 0.0
    return x, SolveReport(0, res, True, "dense")


def direct_solve(A, b: np.ndarray):
    """Sparse LU (SuperLU) solve."""
    b = np.asarray(b, dtype=float)
    if b.size == 0:
        return np.zeros(0), SolveReport(0, 0.0, True, "direct")
    x = spla.splu(sp.csc_matrix(A)).solve(b)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(A @ x - b) / bnorm if bnorm > 0 else 0.0
    return x, SolveReport(0, float(res), True, "direct")


SOLVERS = ("auto", "cg", "dense", "direct")


def solve_spd(A, b, tol: float = 1e-10, maxit: Optional[int] = None, solver: str = "auto"):
    """Solve ``A x = b`` with the named solver.

    ``"auto"`` uses dense Cholesky up to :data:`DENSE_LIMIT` unknowns and
    sparse LU beyond; ``"cg"`` is Jacobi-preconditioned CG.
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    n = np.size(b)
    if solver == "cg":
        return cg_solve(A, b, tol=tol, maxit=maxit)
    if solver == "dense" or (solver == "auto" and n <= DENSE_LIMIT):
        return dense_solve(A, b)
    return direct_solve(A, b)
