"""Finite element spaces on triangles: RT0, RT1, P0, P1 (discontinuous and
continuous).

Reference triangle: vertices ``(0, 0), (1, 0), (0, 1)``; local edge ``i`` is
opposite vertex ``i`` and runs from vertex ``i + 1`` to vertex ``i + 2``.

RT degrees of freedom, for edge ``e`` with unit normal ``n_e`` and
parameter ``s`` in ``[0, 1]`` running from ``edges[e, 0]`` to ``edges[e, 1]``::

    edge dof m   : integral over e of (tau . n_e) * q_m(s) ds,  q_0 = 1, q_1 = 2 s - 1
    interior dof : integral over K of tau . (1, 0)  and  tau . (0, 1)   (RT1 only)

The global basis restricted to an element is ``sign * (Piola image of the
reference basis)`` with signs from :func:`dof_map`.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .mesh import INFLOW, Mesh
from .quadrature import quadrature


class SpaceKind(str, Enum):
    RT0 = "RT0"
    RT1 = "RT1"
    P0 = "P0"
    P1dg = "P1dg"
    P1c = "P1c"

    @property
    def is_rt(self) -> bool:
        return self in (SpaceKind.RT0, SpaceKind.RT1)

    @property
    def n_local(self) -> int:
        return {"RT0": 3, "RT1": 8, "P0": 1, "P1dg": 3, "P1c": 3}[self.value]


def rt_space(k: int) -> SpaceKind:
    if k == 0:
        return SpaceKind.RT0
    if k == 1:
        return SpaceKind.RT1
    raise ValueError(f"unsupported RT order {k}; only 0 and 1 are available")


def p_space(k: int) -> SpaceKind:
    if k == 0:
        return SpaceKind.P0
    if k == 1:
        return SpaceKind.P1dg
    raise ValueError(f"unsupported P order {k}; only 0 and 1 are available")


@dataclass
class BasisEval:
    """Basis values at a set of points.

    ``values`` is ``(..., n_basis, n_points, 2)`` for RT spaces and
    ``(..., n_basis, n_points)`` for scalar spaces.  ``divergences`` (RT) and
    ``gradients`` (scalar, ``(..., n_basis, n_points, 2)``) follow the same
    leading layout.
    """

    space: SpaceKind
    values: np.ndarray
    divergences: Optional[np.ndarray] = None
    gradients: Optional[np.ndarray] = None


_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _ref_edge(i):
    a = _REF_VERTS[(i + 1) % 3]
    b = _REF_VERTS[(i + 2) % 3]
    tang = b - a
    length = np.hypot(*tang)
    normal = np.array([tang[1], -tang[0]]) / length
    return a, b, length, normal


def _rt1_monomials(pts):
    """Values (8, n, 2) and divergences (8, n) of a monomial RT1 basis."""
    x, y = pts[:, 0], pts[:, 1]
    z = np.zeros_like(x)
    o = np.ones_like(x)
    vals = np.stack(
        [
            np.stack([o, z], -1),
            np.stack([x, z], -1),
            np.stack([y, z], -1),
            np.stack([z, o], -1),
            np.stack([z, x], -1),
            np.stack([z, y], -1),
            np.stack([x * x, x * y], -1),
            np.stack([x * y, y * y], -1),
        ]
    )
    divs = np.stack([z, o, z, z, z, o, 3 * x, 3 * y])
    return vals, divs


def _rt1_dofs_of(fun_vals_div):
    """Apply the eight reference RT1 functionals to functions given by a
    callable ``pts -> (values (nf, n, 2), divs)``.  Returns ``(8, nf)``."""
    seg = quadrature("segment", 7)
    rows = []
    for i in range(3):
        a, b, length, normal = _ref_edge(i)
        pts = a + seg.points[:, None] * (b - a)
        vals, _ = fun_vals_div(pts)
        flux = vals @ normal  # (nf, nq)
        for q in (np.ones_like(seg.points), 2.0 * seg.points - 1.0):
            rows.append((flux * (q * seg.weights * length)).sum(-1))
    tri = quadrature("triangle", 4)
    vals, _ = fun_vals_div(tri.points)
    rows.append((vals[..., 0] * tri.weights).sum(-1))
    rows.append((vals[..., 1] * tri.weights).sum(-1))
    return np.array(rows)


@lru_cache(maxsize=None)
def _rt1_coefficients():
    # dof order: edge0 (q0, q1), edge1 (q0, q1), edge2 (q0, q1), interior x, interior y
    D = _rt1_dofs_of(_rt1_monomials)  # D[d, j] = dof_d(monomial_j)
    C = np.linalg.inv(D)  # basis_i = sum_j C[j, i] monomial_j
    C.setflags(write=False)
    return C


def reference_basis(space, points) -> BasisEval:
    """Evaluate a reference basis at ``points`` (``(n, 2)``) of the reference
    triangle.

    RT0 returns the three functions with unit outward flux through their own
    edge; RT1 returns the eight functions dual to the dof set described in
    the module docstring; P0/P1dg/P1c return constant and barycentric bases.
    """
    space = SpaceKind(space)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    x, y = pts[:, 0], pts[:, 1]
    if space is SpaceKind.RT0:
        vals = np.stack([pts - v for v in _REF_VERTS])  # (3, n, 2)
        divs = np.full((3, n), 2.0)
        return BasisEval(space, vals, divergences=divs)
    if space is SpaceKind.RT1:
        mv, md = _rt1_monomials(pts)
        C = _rt1_coefficients()
        vals = np.einsum("ji,jnc->inc", C, mv)
        divs = np.einsum("ji,jn->in", C, md)
        return BasisEval(space, vals, divergences=divs)
    if space is SpaceKind.P0:
        return BasisEval(space, np.ones((1, n)), gradients=np.zeros((1, n, 2)))
    if space in (SpaceKind.P1dg, SpaceKind.P1c):
        vals = np.stack([1.0 - x - y, x, y])
        grads = np.broadcast_to(
            np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])[:, None, :], (3, n, 2)
        ).copy()
        return BasisEval(space, vals, gradients=grads)
    raise ValueError(f"unsupported space {space}")


def piola_map(J: np.ndarray, ref: BasisEval, signs: Optional[np.ndarray] = None) -> BasisEval:
    """Map reference basis values to physical elements.

    ``J`` holds element Jacobians, shape ``(m, 2, 2)`` (or a single
    ``(2, 2)``).  RT values become ``J v / det J`` and divergences
    ``div / det J``; scalar gradients become ``J^{-T} grad``.  ``signs``
    (``(m, n_basis)``) multiplies each mapped basis function.

    Raises
    ------
    ValueError
        If a Jacobian is singular.
    """
    J = np.asarray(J, dtype=float)
    single = J.ndim == 2
    if single:
        J = J[None]
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    scale = np.max(np.abs(J).reshape(J.shape[0], -1), axis=1) ** 2
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise ValueError("singular element Jacobian")
    s = None if signs is None else np.asarray(signs, dtype=float)
    if single and s is not None and s.ndim == 1:
        s = s[None]
    if ref.space.is_rt:
        vals = np.einsum("mcd,ind->minc", J, ref.values) / det[:, None, None, None]
        divs = ref.divergences[None] / det[:, None, None]
        if s is not None:
            vals = vals * s[:, :, None, None]
            divs = divs * s[:, :, None]
        out = BasisEval(ref.space, vals, divergences=divs)
    else:
        Jinv_T = np.stack(
            [np.stack([J[:, 1, 1], -J[:, 1, 0]], -1), np.stack([-J[:, 0, 1], J[:, 0, 0]], -1)], axis=1
        ) / det[:, None, None]
        vals = np.broadcast_to(ref.values[None], (J.shape[0],) + ref.values.shape).copy()
        grads = None
        if ref.gradients is not None:
            grads = np.einsum("mcd,ind->minc", Jinv_T, ref.gradients)
        if s is not None:
            vals = vals * s[:, :, None]
            grads = None if grads is None else grads * s[:, :, None, None]
        out = BasisEval(ref.space, vals, gradients=grads)
    if single:
        out.values = out.values[0]
        if out.divergences is not None:
            out.divergences = out.divergences[0]
        if out.gradients is not None:
            out.gradients = out.gradients[0]
    return out


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global numbering of one space on one mesh.

    ``cell_to_global`` is ``(m, n_local)``; ``signs`` is the matching array of
    ``+1/-1``.  ``inflow_dofs`` lists RT edge dofs on inflow edges (empty for
    scalar spaces or unclassified meshes).
    """

    space: SpaceKind
    n_global: int
    cell_to_global: np.ndarray
    signs: np.ndarray
    inflow_dofs: np.ndarray


def dof_map(mesh: Mesh, space) -> DofMap:
    space = SpaceKind(space)
    m = mesh.n_triangles
    inflow = np.zeros(0, dtype=np.int64)
    if space is SpaceKind.RT0:
        c2g = mesh.t2e.copy()
        signs = mesh.normal_sign.astype(float)
        n = mesh.n_edges
        if mesh.is_classified:
            inflow = mesh.inflow_edges()
    elif space is SpaceKind.RT1:
        ne = mesh.n_edges
        e = mesh.t2e
        c2g = np.empty((m, 8), dtype=np.int64)
        signs = np.empty((m, 8))
        for i in range(3):
            c2g[:, 2 * i] = 2 * e[:, i]
            c2g[:, 2 * i + 1] = 2 * e[:, i] + 1
            signs[:, 2 * i] = mesh.normal_sign[:, i]
            signs[:, 2 * i + 1] = mesh.normal_sign[:, i] * mesh.dir_sign[:, i]
        c2g[:, 6] = 2 * ne + 2 * np.arange(m)
        c2g[:, 7] = 2 * ne + 2 * np.arange(m) + 1
        signs[:, 6:] = 1.0
        n = 2 * ne + 2 * m
        if mesh.is_classified:
            ie = mesh.inflow_edges()
            inflow = np.sort(np.concatenate([2 * ie, 2 * ie + 1]))
    elif space is SpaceKind.P0:
        c2g = np.arange(m)[:, None]
        signs = np.ones((m, 1))
        n = m
    elif space is SpaceKind.P1dg:
        c2g = np.arange(3 * m).reshape(m, 3)
        signs = np.ones((m, 3))
        n = 3 * m
    elif space is SpaceKind.P1c:
        c2g = mesh.t.copy()
        signs = np.ones((m, 3))
        n = mesh.n_vertices
    else:  # pragma: no cover
        raise ValueError(space)
    return DofMap(space, n, c2g, signs, inflow)


def physical_points(mesh: Mesh, ref_pts: np.ndarray, elems=None) -> np.ndarray:
    """Map reference points to physical coordinates.

    ``ref_pts`` is ``(nq, 2)`` (shared) or ``(m, nq, 2)`` (per element).
    Returns ``(m, nq, 2)``.
    """
    elems = np.arange(mesh.n_triangles) if elems is None else np.asarray(elems)
    P = mesh.p[mesh.t[elems]]
    J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    if ref_pts.ndim == 2:
        return P[:, 0, None, :] + np.einsum("mcd,qd->mqc", J, ref_pts)
    return P[:, 0, None, :] + np.einsum("mcd,mqd->mqc", J, ref_pts)


def reference_coordinates(mesh: Mesh, elems, xy: np.ndarray) -> np.ndarray:
    """Inverse affine map: physical points ``(m, nq, 2)`` to reference ones."""
    elems = np.asarray(elems)
    P = mesh.p[mesh.t[elems]]
    J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    Jinv = np.linalg.inv(J)
    return np.einsum("mcd,mqd->mqc", Jinv, xy - P[:, 0, None, :])


def eval_field(mesh: Mesh, dm: DofMap, coeffs: np.ndarray, elems, ref_pts: np.ndarray):
    """Evaluate a discrete field at reference points of the given elements.

    ``ref_pts`` is ``(nq, 2)`` or ``(m, nq, 2)``.  Returns ``(values, div)``
    for RT spaces (shapes ``(m, nq, 2)``, ``(m, nq)``) and ``(values, grad)``
    for scalar spaces.
    """
    elems = np.asarray(elems)
    m = elems.size
    c = coeffs[dm.cell_to_global[elems]] * dm.signs[elems]  # (m, nb)
    J = mesh.jacobians()[elems]
    if ref_pts.ndim == 2:
        ref = reference_basis(dm.space, ref_pts)
        mapped = piola_map(J, ref)
        if dm.space.is_rt:
            return (
                np.einsum("mi,minc->mnc", c, mapped.values),
                np.einsum("mi,min->mn", c, mapped.divergences),
            )
        return np.einsum("mi,min->mn", c, mapped.values), np.einsum("mi,minc->mnc", c, mapped.gradients)
    nq = ref_pts.shape[1]
    ref = reference_basis(dm.space, ref_pts.reshape(-1, 2))
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if dm.space.is_rt:
        v = ref.values.reshape(ref.values.shape[0], m, nq, 2)
        d = ref.divergences.reshape(-1, m, nq)
        vals = np.einsum("mcd,imnd->imnc", J, v) / det[None, :, None, None]
        divs = d / det[None, :, None]
        return np.einsum("mi,imnc->mnc", c, vals), np.einsum("mi,imn->mn", c, divs)
    v = ref.values.reshape(-1, m, nq)
    g = ref.gradients.reshape(-1, m, nq, 2)
    Jinv_T = np.transpose(np.linalg.inv(J), (0, 2, 1))
    grads = np.einsum("mcd,imnd->imnc", Jinv_T, g)
    return np.einsum("mi,imn->mn", c, v), np.einsum("mi,imnc->mnc", c, grads)


def _edge_moments(mesh: Mesh, field: Callable, k: int, edges=None, degree: Optional[int] = None):
    """Moments ``int_e (field . n_e) q_m ds`` for m <= k.  Returns ``(ne, k+1)``."""
    edges = np.arange(mesh.n_edges) if edges is None else np.asarray(edges)
    seg = quadrature("segment", 2 * k + 5 if degree is None else degree)
    a = mesh.p[mesh.edges[edges, 0]]
    b = mesh.p[mesh.edges[edges, 1]]
    pts = a[:, None, :] + seg.points[None, :, None] * (b - a)[:, None, :]
    fx, fy = field(pts[..., 0], pts[..., 1])
    n = mesh.edge_normal[edges]
    fn = np.asarray(fx) * n[:, 0, None] + np.asarray(fy) * n[:, 1, None]
    w = seg.weights[None, :] * mesh.edge_length[edges, None]
    out = [(fn * w).sum(1)]
    if k >= 1:
        out.append((fn * w * (2 * seg.points - 1.0)).sum(1))
    return np.stack(out, axis=1)


def interpolate_rt(mesh: Mesh, field: Callable, k: int, degree: Optional[int] = None) -> np.ndarray:
    """Canonical RT_k interpolant of a vector field ``field(x, y) -> (fx, fy)``.

    Returns the global coefficient vector in the numbering of
    :func:`dof_map`.
    """
    if k == 0:
        return _edge_moments(mesh, field, 0, degree=degree)[:, 0]
    if k != 1:
        raise ValueError(f"unsupported RT order {k}")
    ne, m = mesh.n_edges, mesh.n_triangles
    mom = _edge_moments(mesh, field, 1, degree=degree)
    x = np.empty(2 * ne + 2 * m)
    x[0 : 2 * ne : 2] = mom[:, 0]
    x[1 : 2 * ne : 2] = mom[:, 1]
    # interior dofs: match the two cell moments of the field
    tri = quadrature("triangle", 6 if degree is None else degree)
    J = mesh.jacobians()
    det = 2.0 * mesh.area
    xy = physical_points(mesh, tri.points)
    fx, fy = field(xy[..., 0], xy[..., 1])
    target = np.stack([(np.asarray(fx) * tri.weights).sum(1), (np.asarray(fy) * tri.weights).sum(1)], 1) * det[:, None]
    dm = dof_map(mesh, SpaceKind.RT1)
    mapped = piola_map(J, reference_basis(SpaceKind.RT1, tri.points), dm.signs)
    mom_basis = np.einsum("minc,n->mic", mapped.values, tri.weights) * det[:, None, None]  # (m, 8, 2)
    edge_part = np.einsum("mi,mic->mc", x[dm.cell_to_global[:, :6]], mom_basis[:, :6])
    rhs = target - edge_part
    A = np.transpose(mom_basis[:, 6:], (0, 2, 1))  # (m, 2, 2): A[c, j]
    x[2 * ne :] = np.linalg.solve(A, rhs[..., None])[..., 0].ravel()
    return x


def project_l2(mesh: Mesh, field: Callable, k: int, degree: Optional[int] = None) -> np.ndarray:
    """Element-wise L2 projection of a scalar field onto P_k (k = 0 or 1)."""
    deg = 2 * k + 2 if degree is None else degree
    tri = quadrature("triangle", max(deg, 2 * k + 2))
    xy = physical_points(mesh, tri.points)
    f = np.asarray(field(xy[..., 0], xy[..., 1]), dtype=float)
    f = np.broadcast_to(f, xy.shape[:2])
    if k == 0:
        return (f * tri.weights).sum(1) / tri.weights.sum()
    if k != 1:
        raise ValueError(f"unsupported P order {k}")
    phi = reference_basis(SpaceKind.P1dg, tri.points).values  # (3, nq)
    M = np.einsum("in,jn,n->ij", phi, phi, tri.weights)
    rhs = np.einsum("mn,in,n->mi", f, phi, tri.weights)
    return np.linalg.solve(M, rhs.T).T.ravel()


def edge_dof_values(mesh: Mesh, edges, scalar_flux: Callable, k: int, degree: Optional[int] = None) -> np.ndarray:
    """Moments ``int_e s(x, y) q_m ds`` of a scalar normal flux on the listed
    edges, shape ``(len(edges), k + 1)``.  ``scalar_flux`` receives the
    points and the edge normals: ``scalar_flux(x, y, nx, ny)``."""
    edges = np.asarray(edges, dtype=np.int64)
    seg = quadrature("segment", 2 * k + 5 if degree is None else degree)
    a = mesh.p[mesh.edges[edges, 0]]
    b = mesh.p[mesh.edges[edges, 1]]
    pts = a[:, None, :] + seg.points[None, :, None] * (b - a)[:, None, :]
    n = mesh.edge_normal[edges]
    s = scalar_flux(pts[..., 0], pts[..., 1], n[:, 0, None], n[:, 1, None])
    s = np.broadcast_to(np.asarray(s, dtype=float), pts.shape[:2])
    w = seg.weights[None, :] * mesh.edge_length[edges, None]
    cols = [(s * w).sum(1)]
    if k >= 1:
        cols.append((s * w * (2 * seg.points - 1.0)).sum(1))
    return np.stack(cols, axis=1)


def inflow_flags(mesh: Mesh) -> np.ndarray:
    if mesh.boundary_class is None:
        return np.zeros(mesh.n_edges, dtype=bool)
    return mesh.boundary_class == INFLOW
