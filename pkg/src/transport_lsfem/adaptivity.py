"""A posteriori indicators, bulk marking and the adaptive loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .assembly import (
    Method,
    MethodKind,
    Solution,
    _eval_beta,
    _eval_scalar,
    as_method,
    inflow_residuals,
    mu_values,
    quad_degree_cell,
    solve,
)
from .integration import integrate_cells
from .linalg import SolverError
from .mesh import Mesh, classify_boundary, refine, uniform_refine
from .problems import ProblemSpec, exact_errors
from .spaces import eval_field


@dataclass
class Indicators:
    """Element indicators (not squared) and the global estimator.

    When built by :meth:`from_squared` the squares are kept as computed, so
    marking does not see the rounding of ``sqrt(.)**2``.
    """

    local: np.ndarray
    kind: str = "eta"
    _squared: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def from_squared(cls, sq, kind: str = "eta") -> "Indicators":
        sq = np.asarray(sq, dtype=float)
        if np.any(sq < 0):
            raise ValueError("squared indicators must be non-negative")
        return cls(np.sqrt(sq), kind, sq)

    @property
    def squared(self) -> np.ndarray:
        return self.local**2 if self._squared is None else self._squared

    @property
    def global_value(self) -> float:
        return float(np.sqrt(self.squared.sum()))


def compute_indicators(mesh: Mesh, solution: Solution, problem: ProblemSpec, method=None, quad_degree: Optional[int] = None) -> Indicators:
    """Least-squares indicators of ``solution``.

    ``eta_K`` (LSFEM) is the element LS residual, ``xi_K`` (LSFEM-B) adds the
    weighted inflow-edge mismatch, ``zeta_K`` (C-LSFEM) is the element residual
    of the non-conservative equation.  Elements cut by a known data
    discontinuity are integrated piecewise.
    """
    disc = solution.disc
    kind = disc.method.kind if method is None else as_method(method).kind
    deg = quad_degree_cell(disc.k) if quad_degree is None else quad_degree
    sig_c, u_c = disc.split(solution.x)
    flux = disc.rt is not None

    def residual(elems, ref, xy, side):
        f = problem.f if side == "full" else problem.pieces["f_" + side]
        X, Y = xy[..., 0], xy[..., 1]
        uh, guh = eval_field(mesh, disc.pk, u_c, elems, ref)
        bx, by = _eval_beta(problem, X, Y)
        fv = _eval_scalar(f, X, Y)
        if not flux:
            mu = mu_values(problem, X, Y, mesh.diameter[elems][:, None])
            r = bx * guh[..., 0] + by * guh[..., 1] + mu * uh - fv
            return r * r
        sh, dh = eval_field(mesh, disc.rt, sig_c, elems, ref)
        gam = _eval_scalar(problem.gamma, X, Y)
        r1x = sh[..., 0] - bx * uh
        r1y = sh[..., 1] - by * uh
        r2 = dh + gam * uh - fv
        return r1x * r1x + r1y * r1y + r2 * r2

    split = problem.discontinuity if problem.pieces else None
    sq = integrate_cells(mesh, residual, deg, split)
    sq = np.maximum(sq, 0.0)
    if kind.weak_inflow:
        sq = sq + inflow_residuals(disc, problem, solution.x)
        name = "xi"
    else:
        name = "zeta" if kind is MethodKind.C_LSFEM else "eta"
    return Indicators.from_squared(sq, name)


def dorfler_mark(ind, theta: float = 0.5) -> np.ndarray:
    """Minimal bulk set: the shortest prefix of elements sorted by descending
    squared indicator (ties by ascending id) holding a ``theta`` fraction of
    the total.  ``ind`` is an :class:`Indicators` or an array of ``eta_K``.
    Returns sorted element ids; empty when all indicators vanish.
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if isinstance(ind, Indicators):
        sq = ind.squared
    else:
        eta = np.asarray(ind, dtype=float)
        sq = eta * eta
    order = np.lexsort((np.arange(sq.size), -sq))
    csum = np.cumsum(sq[order])
    if csum.size == 0 or csum[-1] <= 0.0:
        return np.zeros(0, dtype=np.int64)
    n = int(np.searchsorted(csum, theta * csum[-1], side="left")) + 1
    return np.sort(order[: min(n, sq.size)])


def overshoot(u, bounds) -> float:
    """Largest excursion of nodal/element values outside ``[lo, hi]``."""
    lo, hi = bounds
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        return 0.0
    return float(max(u.max() - hi, lo - u.min(), 0.0))


def mesh_size(mesh: Mesh) -> float:
    """Area-based mesh size ``sqrt(2 max |K|)``.

    Under uniform bisection it shrinks by exactly ``1/sqrt(2)`` per round,
    whereas the largest diameter alternates between hypotenuse and leg.
    """
    return float(np.sqrt(2.0 * mesh.area.max()))


def eoc(errors, sizes) -> np.ndarray:
    """Orders ``log(e_{i-1}/e_i) / log(s_{i-1}/s_i)``; first entry NaN."""
    e = np.asarray(errors, dtype=float)
    s = np.asarray(sizes, dtype=float)
    out = np.full(e.size, np.nan)
    if e.size > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            out[1:] = np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:])
    return out


@dataclass
class AmrConfig:
    theta: float = 0.5
    node_budget: int = 20000
    k: int = 0
    solver_tol: float = 1e-10
    estimator_tol: float = 1e-10
    max_iterations: int = 200
    solver: str = "auto"
    keep_history: bool = False
    timing: bool = True


@dataclass
class AmrRecord:
    iteration: int
    n_vertices: int
    n_triangles: int
    n_dofs: int
    estimator: float
    ls_error: float = float("nan")
    l2_u_error: float = float("nan")
    overshoot: float = float("nan")
    solver_iterations: int = 0
    wall_ms: float = 0.0
    h: float = float("nan")
    n_marked: int = 0


@dataclass
class HistoryEntry:
    mesh: Mesh
    solution: Solution
    indicators: Indicators
    marked: np.ndarray
    errors: object = None


class AmrAborted(RuntimeError):
    """Solver failure inside a refinement loop; ``records`` holds the rows
    completed before the failure."""

    def __init__(self, message, records, history=None):
        super().__init__(message)
        self.records = records
        self.history = history or []


def _step(mesh, problem, method, cfg: AmrConfig, it):
    t0 = time.perf_counter()
    sol = solve(mesh, method, cfg.k, problem, tol=cfg.solver_tol, solver=cfg.solver)
    ind = compute_indicators(mesh, sol, problem)
    rec = AmrRecord(
        iteration=it,
        n_vertices=mesh.n_vertices,
        n_triangles=mesh.n_triangles,
        n_dofs=sol.disc.n,
        estimator=ind.global_value,
        solver_iterations=getattr(sol.report, "iterations", 0),
        h=mesh_size(mesh),
    )
    errs = None
    if problem.has_exact:
        errs = exact_errors(mesh, sol, problem)
        rec.ls_error, rec.l2_u_error = errs.ls_norm, errs.l2_u
    if problem.exact_u_bounds is not None:
        rec.overshoot = overshoot(sol.u, problem.exact_u_bounds)
    if cfg.timing:
        rec.wall_ms = 1e3 * (time.perf_counter() - t0)
    return sol, ind, rec, errs


def _initial(problem: ProblemSpec, level: int = 0) -> Mesh:
    mesh = problem.mesh_family(level) if problem.mesh_family is not None else problem.initial_mesh()
    return classify_boundary(mesh, problem.beta)


def amr_loop(problem: ProblemSpec, method, config: Optional[AmrConfig] = None, mesh: Optional[Mesh] = None, on_record: Optional[Callable] = None):
    """Solve, estimate, mark and refine until the vertex budget is reached or
    the estimator vanishes (``<= estimator_tol``).

    Returns ``(records, history)``; ``history`` is empty unless
    ``config.keep_history``.  ``on_record(record, mesh, solution)`` is called after every solve.

    Raises
    ------
    AmrAborted
        On solver failure, carrying the completed records.
    """
    cfg = config or AmrConfig()
    method = as_method(method)
    mesh = _initial(problem) if mesh is None else mesh
    if not mesh.is_classified:
        mesh = classify_boundary(mesh, problem.beta)
    records: List[AmrRecord] = []
    history: List[HistoryEntry] = []
    for it in range(cfg.max_iterations):
        try:
            sol, ind, rec, errs = _step(mesh, problem, method, cfg, it)
        except SolverError as err:
            raise AmrAborted(str(err), records, history) from err
        done = mesh.n_vertices >= cfg.node_budget or ind.global_value <= cfg.estimator_tol
        marked = np.zeros(0, dtype=np.int64) if done else dorfler_mark(ind, cfg.theta)
        rec.n_marked = int(marked.size)
        records.append(rec)
        if on_record is not None:
            on_record(rec, mesh, sol)
        if cfg.keep_history:
            history.append(HistoryEntry(mesh, sol, ind, marked, errs))
        if marked.size == 0:
            break
        mesh = classify_boundary(refine(mesh, marked), problem.beta)
    return records, history


def uniform_loop(problem: ProblemSpec, method, levels: int, config: Optional[AmrConfig] = None, on_record: Optional[Callable] = None):
    """Solve on a sequence of uniformly refined meshes (or on the problem's
    own mesh family).  Each level is one bisection round of every element.
    Returns ``(records, history)`` like :func:`amr_loop`."""
    cfg = config or AmrConfig()
    method = as_method(method)
    records: List[AmrRecord] = []
    history: List[HistoryEntry] = []
    mesh = _initial(problem)
    for level in range(levels):
        if level > 0:
            if problem.mesh_family is not None:
                mesh = _initial(problem, level)
            else:
                mesh = classify_boundary(uniform_refine(mesh), problem.beta)
        try:
            sol, ind, rec, errs = _step(mesh, problem, method, cfg, level)
        except SolverError as err:
            raise AmrAborted(str(err), records, history) from err
        records.append(rec)
        if on_record is not None:
            on_record(rec, mesh, sol)
        if cfg.keep_history:
            history.append(HistoryEntry(mesh, sol, ind, np.zeros(0, dtype=np.int64), errs))
    return records, history
