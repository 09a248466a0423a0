"""Least-squares system assembly.

The flux methods minimize, over ``(tau, v)`` in ``RT_k x P_k``::

    || tau - beta v ||^2 + || div tau + gamma v - f ||^2   (+ inflow term)

Every basis function contributes a three-component residual vector
``(tau - beta v, div tau + gamma v)`` at the quadrature points; the element
matrix is the weighted Gram matrix of these vectors and the load vector pairs
them with the target ``(0, 0, f)``.  The weakly constrained variants add
``int_F omega / |beta . n| (tau . n)(rho . n)`` on inflow edges with
``omega = 1`` (B1) or ``omega = alpha_F h_F`` (B2).  C-LSFEM uses the scalar
residual ``beta . grad v + mu v`` on continuous P1.

Unknown ordering for the flux methods: RT dofs first, then P dofs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .mesh import INFLOW, Mesh, MeshError
from .problems import ProblemSpec
from .quadrature import quadrature
from .spaces import (
    DofMap,
    SpaceKind,
    dof_map,
    edge_dof_values,
    p_space,
    physical_points,
    piola_map,
    reference_basis,
    rt_space,
)

CHUNK = 4096


class MethodKind(str, Enum):
    LSFEM = "lsfem"
    LSFEM_B1 = "lsfem-b1"
    LSFEM_B2 = "lsfem-b2"
    C_LSFEM = "c-lsfem"

    @property
    def weak_inflow(self) -> bool:
        return self in (MethodKind.LSFEM_B1, MethodKind.LSFEM_B2)


@dataclass(frozen=True)
class Method:
    kind: MethodKind = MethodKind.LSFEM
    alpha_f: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MethodKind(self.kind))
        if not (np.isfinite(self.alpha_f) and self.alpha_f > 0):
            raise ValueError(f"alpha_F must be finite and positive, got {self.alpha_f}")


def as_method(method) -> Method:
    if isinstance(method, Method):
        return method
    return Method(MethodKind(method))


@dataclass
class Discretization:
    """Dof maps of one method on one mesh."""

    mesh: Mesh
    method: Method
    k: int
    rt: Optional[DofMap]
    pk: DofMap

    @property
    def n_rt(self) -> int:
        return 0 if self.rt is None else self.rt.n_global

    @property
    def n(self) -> int:
        return self.n_rt + self.pk.n_global

    def split(self, x):
        """``(sigma coefficients, u coefficients)`` of a full vector."""
        return (None if self.rt is None else x[: self.n_rt]), x[self.n_rt :]


def discretize(mesh: Mesh, method, k: int) -> Discretization:
    method = as_method(method)
    if method.kind is MethodKind.C_LSFEM:
        if k != 1:
            raise ValueError("C-LSFEM uses continuous P1 (k = 1)")
        return Discretization(mesh, method, k, None, dof_map(mesh, SpaceKind.P1c))
    return Discretization(mesh, method, k, dof_map(mesh, rt_space(k)), dof_map(mesh, p_space(k)))


@dataclass
class BoundaryData:
    """Inflow data of an assembled problem.

    ``dofs``/``values``: strongly imposed unknowns (LSFEM: RT inflow moments of
    ``(beta . n) g``; C-LSFEM: nodal values).  ``edges``: inflow edges used by
    the weak boundary term of LSFEM-B.
    """

    dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def quad_degree_cell(k: int) -> int:
    return 2 * k + 4


def quad_degree_edge(k: int) -> int:
    return 2 * k + 5


def _eval_beta(problem: ProblemSpec, x, y):
    bx, by = problem.beta(x, y)
    shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
    return np.broadcast_to(np.asarray(bx, dtype=float), shape), np.broadcast_to(np.asarray(by, dtype=float), shape)


def _eval_scalar(fn, x, y):
    shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
    return np.broadcast_to(np.asarray(fn(x, y), dtype=float), shape)


def mu_values(problem: ProblemSpec, x, y, h=None):
    """``gamma + div beta`` at points; central differences when the problem
    does not provide ``div beta`` (step ``1e-6 h``)."""
    gam = _eval_scalar(problem.gamma, x, y)
    if problem.div_beta is not None:
        return gam + _eval_scalar(problem.div_beta, x, y)
    step = 1e-6 * (np.ones_like(x) if h is None else np.broadcast_to(h, np.shape(x)))
    bxp, _ = _eval_beta(problem, x + step, y)
    bxm, _ = _eval_beta(problem, x - step, y)
    _, byp = _eval_beta(problem, x, y + step)
    _, bym = _eval_beta(problem, x, y - step)
    return gam + (bxp - bxm) / (2 * step) + (byp - bym) / (2 * step)


def residual_basis(disc: Discretization, problem: ProblemSpec, elems, quad):
    """Residual vectors of all local basis functions at the quadrature points.

    Returns ``R`` of shape ``(m, nq, nb, c)``, weights ``W`` ``(m, nq)`` (with
    the element measure), the data target ``T`` ``(m, nq, c)`` and the local
    dofs/signs.  ``c = 3`` for flux methods, ``1`` for C-LSFEM.
    """
    mesh = disc.mesh
    elems = np.asarray(elems)
    xy = physical_points(mesh, quad.points, elems)
    x, y = xy[..., 0], xy[..., 1]
    W = quad.weights[None, :] * (2.0 * mesh.area[elems])[:, None]
    J = mesh.jacobians()[elems]
    bx, by = _eval_beta(problem, x, y)
    gam = _eval_scalar(problem.gamma, x, y)
    f = _eval_scalar(problem.f, x, y)
    if disc.rt is None:
        ref = reference_basis(SpaceKind.P1c, quad.points)
        mapped = piola_map(J, ref)
        mu = mu_values(problem, x, y, mesh.diameter[elems][:, None])
        psi = np.transpose(mapped.values, (0, 2, 1))  # (m, nq, 3)
        grad = np.transpose(mapped.gradients, (0, 2, 1, 3))  # (m, nq, 3, 2)
        R = (grad[..., 0] * bx[..., None] + grad[..., 1] * by[..., None] + mu[..., None] * psi)[..., None]
        T = f[..., None]
        return R, W, T, disc.pk.cell_to_global[elems], disc.pk.signs[elems]
    rt = piola_map(J, reference_basis(disc.rt.space, quad.points), disc.rt.signs[elems])
    pv = reference_basis(disc.pk.space, quad.points).values  # (np, nq)
    phi = np.transpose(rt.values, (0, 2, 1, 3))  # (m, nq, nr, 2)
    div = np.transpose(rt.divergences, (0, 2, 1))  # (m, nq, nr)
    R_rt = np.concatenate([phi, div[..., None]], axis=-1)
    psi = pv.T[None]  # (1, nq, np)
    R_p = np.stack([-bx[..., None] * psi, -by[..., None] * psi, gam[..., None] * psi], axis=-1)
    R = np.concatenate([R_rt, R_p], axis=2)
    T = np.stack([np.zeros_like(f), np.zeros_like(f), f], axis=-1)
    dofs = np.concatenate([disc.rt.cell_to_global[elems], disc.n_rt + disc.pk.cell_to_global[elems]], axis=1)
    signs = np.concatenate([np.ones_like(disc.rt.signs[elems]), disc.pk.signs[elems]], axis=1)
    return R, W, T, dofs, signs


def _inflow_edge_setup(disc: Discretization, problem: ProblemSpec, edges):
    """Quadrature data of the weak inflow term on ``edges``.

    Returns owner elements, normal traces of the owner's RT basis
    ``(ne, nq, nr)``, weights ``omega / |beta . n| ds`` and ``(beta . n) g``.
    """
    mesh = disc.mesh
    k = disc.k
    edges = np.asarray(edges, dtype=np.int64)
    owner = mesh.e2t[edges, 0]
    loc = np.argmax(mesh.t2e[owner] == edges[:, None], axis=1)
    seg = quadrature("segment", quad_degree_edge(k))
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    a = verts[(loc + 1) % 3]
    b = verts[(loc + 2) % 3]
    ref_pts = a[:, None, :] + seg.points[None, :, None] * (b - a)[:, None, :]  # (ne, nq, 2)
    nq = seg.points.size
    ref = reference_basis(disc.rt.space, ref_pts.reshape(-1, 2))
    nr = ref.values.shape[0]
    vals = ref.values.reshape(nr, edges.size, nq, 2)
    J = mesh.jacobians()[owner]
    det = 2.0 * mesh.area[owner]
    phys = np.einsum("ecd,iend->einc", J, vals) / det[:, None, None, None]
    phys = phys * disc.rt.signs[owner][:, :, None, None]
    n = mesh.edge_normal[edges]
    trace = np.einsum("einc,ec->eni", phys, n)
    P = mesh.p[mesh.t[owner]]
    xy = P[:, 0, None, :] + np.einsum("ecd,end->enc", J, ref_pts)
    bx, by = _eval_beta(problem, xy[..., 0], xy[..., 1])
    bn = bx * n[:, 0, None] + by * n[:, 1, None]
    bnorm = np.hypot(bx, by)
    if np.any(np.abs(bn) <= 1e-12 * np.maximum(bnorm, 1e-300)):
        raise MeshError(
            "inflow edge with beta . n = 0 at a quadrature point: the weak inflow term "
            "requires |beta . n| bounded away from zero on the inflow boundary"
        )
    h = mesh.edge_length[edges]
    omega = np.ones_like(h) if disc.method.kind is MethodKind.LSFEM_B1 else disc.method.alpha_f * h
    w = seg.weights[None, :] * h[:, None] * omega[:, None] / np.abs(bn)
    g = _eval_scalar(problem.g, xy[..., 0], xy[..., 1])
    return owner, trace, w, bn * g


def assemble(mesh: Mesh, method, k: int, problem: ProblemSpec):
    """Assemble the least-squares system of ``method`` on ``mesh``.

    Returns ``(A, b, bc, disc)``: a CSR matrix that is exactly symmetric, the
    load vector, the :class:`BoundaryData` and the :class:`Discretization`.
    Strong inflow constraints are *not* applied here; see
    :func:`apply_strong_bc`.
    """
    if not mesh.is_classified:
        raise MeshError("mesh boundary must be classified before assembly")
    if k not in (0, 1):
        raise ValueError(f"unsupported order k = {k}")
    disc = discretize(mesh, method, k)
    quad = quadrature("triangle", quad_degree_cell(k))
    rows, cols, vals = [], [], []
    b = np.zeros(disc.n)
    for start in range(0, mesh.n_triangles, CHUNK):
        elems = np.arange(start, min(start + CHUNK, mesh.n_triangles))
        R, W, T, dofs, signs = residual_basis(disc, problem, elems, quad)
        R = R * signs[:, None, :, None]
        Ak = np.einsum("mq,mqic,mqjc->mij", W, R, R)
        Ak = 0.5 * (Ak + np.transpose(Ak, (0, 2, 1)))
        bk = np.einsum("mq,mqic,mqc->mi", W, R, T)
        nb = dofs.shape[1]
        rows.append(np.repeat(dofs, nb, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nb)).ravel())
        vals.append(Ak.ravel())
        np.add.at(b, dofs.ravel(), bk.ravel())

    bc = BoundaryData()
    inflow = mesh.inflow_edges()
    kind = disc.method.kind
    if kind.weak_inflow and inflow.size:
        owner, trace, w, bng = _inflow_edge_setup(disc, problem, inflow)
        Ae = np.einsum("en,eni,enj->eij", w, trace, trace)
        Ae = 0.5 * (Ae + np.transpose(Ae, (0, 2, 1)))
        be = np.einsum("en,en,eni->ei", w, bng, trace)
        d = disc.rt.cell_to_global[owner]
        nr = d.shape[1]
        rows.append(np.repeat(d, nr, axis=1).ravel())
        cols.append(np.tile(d, (1, nr)).ravel())
        vals.append(Ae.ravel())
        np.add.at(b, d.ravel(), be.ravel())
        bc.edges = inflow
    elif kind is MethodKind.LSFEM:
        bc = project_inflow_g(mesh, problem, k)
    elif kind is MethodKind.C_LSFEM:
        bc = assemble_clsfem_bc(mesh, problem)

    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(disc.n, disc.n)
    ).tocsr()
    A.sum_duplicates()
    A = ((A + A.T) * 0.5).tocsr()
    A.sort_indices()
    return A, b, bc, disc


def project_inflow_g(mesh: Mesh, problem: ProblemSpec, k: int) -> BoundaryData:
    """RT inflow dof values: moments of ``(beta . n) g`` on every inflow edge
    (edge quadrature of degree ``2k + 5``)."""
    edges = mesh.inflow_edges()

    def flux(x, y, nx, ny):
        bx, by = _eval_beta(problem, x, y)
        return (bx * nx + by * ny) * _eval_scalar(problem.g, x, y)

    mom = edge_dof_values(mesh, edges, flux, k, degree=quad_degree_edge(k))
    if k == 0:
        return BoundaryData(dofs=edges.copy(), values=mom[:, 0], edges=np.zeros(0, dtype=np.int64))
    dofs = np.stack([2 * edges, 2 * edges + 1], axis=1).ravel()
    return BoundaryData(dofs=dofs, values=mom.ravel(), edges=np.zeros(0, dtype=np.int64))


def assemble_clsfem_bc(mesh: Mesh, problem: ProblemSpec, offset: float = 1e-9) -> BoundaryData:
    """Nodal inflow values for C-LSFEM.

    The value at an inflow vertex is the mean of the one-sided limits of ``g``
    along its adjacent inflow edges, which reduces to plain interpolation
    where ``g`` is continuous.
    """
    edges = mesh.inflow_edges()
    if edges.size == 0:
        return BoundaryData()
    ends = mesh.edges[edges]
    pa, pb = mesh.p[ends[:, 0]], mesh.p[ends[:, 1]]
    # limits at each end, taken slightly inside the edge
    la = _eval_scalar(problem.g, *(pa + offset * (pb - pa)).T)
    lb = _eval_scalar(problem.g, *(pb + offset * (pa - pb)).T)
    verts = np.concatenate([ends[:, 0], ends[:, 1]])
    lim = np.concatenate([la, lb])
    total = np.bincount(verts, weights=lim, minlength=mesh.n_vertices)
    count = np.bincount(verts, minlength=mesh.n_vertices)
    nodes = np.flatnonzero(count)
    return BoundaryData(dofs=nodes, values=total[nodes] / count[nodes])


def apply_strong_bc(A, b, bc: BoundaryData):
    """Eliminate fixed unknowns symmetrically.

    Returns ``(A_ff, b_f, free, fixed)`` where ``A_ff`` is the free block and
    ``b_f = b_f - A_fc x_c``.
    """
    n = A.shape[0]
    fixed = np.asarray(bc.dofs, dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    if fixed.size == 0:
        return A, b.copy(), free, fixed
    xc = np.zeros(n)
    xc[fixed] = bc.values
    rhs = b - A @ xc
    A_ff = A[free][:, free].tocsr()
    return A_ff, rhs[free], free, fixed


def cell_residuals(disc: Discretization, problem: ProblemSpec, x: np.ndarray, degree: Optional[int] = None):
    """Per-element squared LS residual of the coefficient vector ``x``
    (cell terms only)."""
    mesh = disc.mesh
    quad = quadrature("triangle", quad_degree_cell(disc.k) if degree is None else degree)
    out = np.empty(mesh.n_triangles)
    for start in range(0, mesh.n_triangles, CHUNK):
        elems = np.arange(start, min(start + CHUNK, mesh.n_triangles))
        R, W, T, dofs, signs = residual_basis(disc, problem, elems, quad)
        c = x[dofs] * signs
        res = np.einsum("mqic,mi->mqc", R, c) - T
        out[elems] = np.einsum("mq,mqc->m", W, res * res)
    return out


def inflow_residuals(disc: Discretization, problem: ProblemSpec, x: np.ndarray):
    """Weighted squared inflow mismatch ``||sigma_h . n - (beta . n) g||^2_omega``
    per element (LSFEM-B only; zeros otherwise)."""
    mesh = disc.mesh
    out = np.zeros(mesh.n_triangles)
    if not disc.method.kind.weak_inflow:
        return out
    inflow = mesh.inflow_edges()
    if inflow.size == 0:
        return out
    owner, trace, w, bng = _inflow_edge_setup(disc, problem, inflow)
    sig = x[: disc.n_rt][disc.rt.cell_to_global[owner]]
    sn = np.einsum("eni,ei->en", trace, sig)
    np.add.at(out, owner, (w * (sn - bng) ** 2).sum(1))
    return out


@dataclass
class Solution:
    """Discrete solution on one mesh.

    ``x`` is the full coefficient vector (constrained dofs included); use
    :attr:`sigma` and :attr:`u` for the two blocks.
    """

    disc: Discretization
    x: np.ndarray
    report: object = None

    @property
    def mesh(self) -> Mesh:
        return self.disc.mesh

    @property
    def sigma(self):
        return self.disc.split(self.x)[0]

    @property
    def u(self) -> np.ndarray:
        return self.disc.split(self.x)[1]


def solve(mesh: Mesh, method, k: int, problem: ProblemSpec, tol: float = 1e-10, solver: str = "auto") -> Solution:
    """Assemble, impose inflow data and solve.

    Raises :class:`~transport_lsfem.linalg.SolverError` when CG fails.
    """
    from .linalg import solve_spd

    A, b, bc, disc = assemble(mesh, method, k, problem)
    A_ff, b_f, free, fixed = apply_strong_bc(A, b, bc)
    xf, report = solve_spd(A_ff, b_f, tol=tol, solver=solver)
    x = np.zeros(disc.n)
    x[fixed] = bc.values
    x[free] = xf
    return Solution(disc, x, report)


def ls_functional(solution: Solution, problem: ProblemSpec) -> float:
    """Value of the least-squares functional (with the inflow term for the
    weakly constrained methods) at ``solution``."""
    d = solution.disc
    return float(cell_residuals(d, problem, solution.x).sum() + inflow_residuals(d, problem, solution.x).sum())
