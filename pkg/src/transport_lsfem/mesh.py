"""Conforming triangular meshes with longest-edge bisection.

A :class:`Mesh` stores vertex coordinates ``p`` (``(n, 2)``) and counter-
clockwise triangles ``t`` (``(m, 3)``), together with the derived edge
structure used by the H(div) spaces:

* ``edges[e] = (a, b)`` with ``a < b`` (global orientation),
* ``t2e[k, i]`` is the edge opposite local vertex ``i`` of triangle ``k``,
* ``e2t[e]`` holds the one or two adjacent triangles (``-1`` pads),
* ``normal_sign[k, i]`` is ``+1`` when the outward normal of triangle ``k``
  on local edge ``i`` equals the global edge normal,
* ``dir_sign[k, i]`` is ``+1`` when the local edge direction, from vertex
  ``i + 1`` to vertex ``i + 2``, runs from ``edges[e, 0]`` to ``edges[e, 1]``.

Interior edge normals are the clockwise rotation of the ``a -> b`` tangent;
boundary edge normals point outward.

Meshes are treated as immutable values.  :func:`refine` and
:func:`classify_boundary` return new meshes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

INTERIOR, INFLOW, OUTFLOW, CHARACTERISTIC = 0, 1, 2, 3
BOUNDARY_NAMES = {
    INTERIOR: "interior",
    INFLOW: "inflow",
    OUTFLOW: "outflow",
    CHARACTERISTIC: "characteristic",
}


class MeshError(ValueError):
    """Raised for invalid mesh input or a failed refinement."""


@dataclass(frozen=True)
class GeometryDescriptor:
    """Projection of new boundary vertices onto a curved boundary.

    ``snap`` maps an ``(n, 2)`` array of points onto the true boundary and
    ``on_curve`` flags points lying on the curved part.  A boundary edge is
    treated as a chord of the curve when both endpoints lie on it.
    """

    snap: Callable[[np.ndarray], np.ndarray]
    on_curve: Callable[[np.ndarray], np.ndarray]


def circle_snapper(center=(0.0, 0.0), radius: float = 1.0, tol: float = 1e-10) -> GeometryDescriptor:
    """Radial projection onto the circle of given center and radius."""
    c = np.asarray(center, dtype=float)

    def snap(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = pts - c
        r = np.hypot(d[:, 0], d[:, 1])
        return c + d * (radius / r)[:, None]

    def on_curve(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = pts - c
        return np.abs(np.hypot(d[:, 0], d[:, 1]) - radius) <= tol * max(radius, 1.0)

    return GeometryDescriptor(snap, on_curve)


@dataclass(frozen=True, eq=False)
class Mesh:
    p: np.ndarray
    t: np.ndarray
    edges: np.ndarray
    t2e: np.ndarray
    e2t: np.ndarray
    normal_sign: np.ndarray
    dir_sign: np.ndarray
    edge_length: np.ndarray
    edge_normal: np.ndarray
    area: np.ndarray
    diameter: np.ndarray
    boundary_class: Optional[np.ndarray] = None
    generation: int = 0
    snapper: Optional[GeometryDescriptor] = None
    parent: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return self.p.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.t.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.e2t[:, 1] < 0)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.e2t[:, 1] >= 0)

    @property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.p[self.edges[:, 0]] + self.p[self.edges[:, 1]])

    @property
    def centroids(self) -> np.ndarray:
        return self.p[self.t].mean(axis=1)

    @property
    def is_classified(self) -> bool:
        return self.boundary_class is not None

    def inflow_edges(self) -> np.ndarray:
        if self.boundary_class is None:
            raise MeshError("mesh boundary has not been classified")
        return np.flatnonzero(self.boundary_class == INFLOW)

    def jacobians(self) -> np.ndarray:
        """Affine map Jacobians ``J[k] = [p1 - p0, p2 - p0]`` as columns."""
        P = self.p[self.t]
        return np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle of every triangle, in radians."""
        P = self.p[self.t]
        angles = []
        for i in range(3):
            a = P[:, (i + 1) % 3] - P[:, i]
            b = P[:, (i + 2) % 3] - P[:, i]
            cosv = (a * b).sum(1) / (np.hypot(*a.T) * np.hypot(*b.T))
            angles.append(np.arccos(np.clip(cosv, -1.0, 1.0)))
        return np.min(angles, axis=0)

    def triangles_touching_edges(self, edge_ids) -> np.ndarray:
        """Triangles having at least one edge in ``edge_ids``."""
        flag = np.zeros(self.n_edges, dtype=bool)
        flag[np.asarray(edge_ids, dtype=int)] = True
        return np.flatnonzero(flag[self.t2e].any(axis=1))

    def check_conforming(self) -> None:
        """Raise :class:`MeshError` if an edge is used by more than two triangles
        or if the recorded adjacency disagrees with the triangle list."""
        used = np.bincount(self.t2e.ravel(), minlength=self.n_edges)
        if used.max() > 2:
            raise MeshError(f"edges shared by more than two triangles: {np.flatnonzero(used > 2)}")
        n_adj = (self.e2t >= 0).sum(1)
        if not np.array_equal(used, n_adj):
            raise MeshError("edge adjacency inconsistent with triangles")


def _edge_table(t: np.ndarray):
    m = t.shape[0]
    # local edge i is opposite local vertex i
    loc = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)  # (m, 3, 2)
    flat = np.sort(loc.reshape(-1, 2), axis=1)
    edges, inv, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if counts.max() > 2:
        bad = np.flatnonzero(counts > 2)
        owners = sorted({int(i // 3) for i in np.flatnonzero(np.isin(inv, bad))})
        raise MeshError(
            f"non-conforming input: edges {edges[bad].tolist()} shared by more than "
            f"two triangles (triangles {owners})"
        )
    t2e = inv.reshape(m, 3)
    e2t = -np.ones((edges.shape[0], 2), dtype=np.int64)
    order = np.argsort(inv, kind="stable")
    tri_of = order // 3
    sorted_inv = inv[order]
    first = np.ones(sorted_inv.shape[0], dtype=bool)
    first[1:] = sorted_inv[1:] != sorted_inv[:-1]
    e2t[sorted_inv[first], 0] = tri_of[first]
    e2t[sorted_inv[~first], 1] = tri_of[~first]
    dir_sign = np.where(loc[:, :, 0] < loc[:, :, 1], 1, -1).astype(np.int8)
    return edges.astype(np.int64), t2e.astype(np.int64), e2t, dir_sign


def build_mesh(
    vertex_coords,
    triangle_vertex_ids,
    *,
    snapper: Optional[GeometryDescriptor] = None,
    generation: int = 0,
    parent: Optional[np.ndarray] = None,
) -> Mesh:
    """Build a mesh from vertex coordinates and triangle vertex triples.

    Clockwise triangles are reoriented.  Raises :class:`MeshError` for
    out-of-range or duplicate triangles, degenerate triangles and edges shared
    by more than two triangles.
    """
    p = np.asarray(vertex_coords, dtype=float).reshape(-1, 2)
    t = np.array(triangle_vertex_ids, dtype=np.int64).reshape(-1, 3)
    if not np.all(np.isfinite(p)):
        raise MeshError("vertex coordinates must be finite")
    if t.size == 0:
        raise MeshError("mesh has no triangles")
    if t.min() < 0 or t.max() >= p.shape[0]:
        raise MeshError("triangle references a vertex id out of range")
    if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
        raise MeshError("triangle with repeated vertex")
    key = np.sort(t, axis=1)
    _, idx, cnt = np.unique(key, axis=0, return_index=True, return_counts=True)
    if cnt.max() > 1:
        raise MeshError(f"duplicate triangles: {np.sort(idx[cnt > 1]).tolist()}")

    P = p[t]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    lens = np.stack(
        [np.hypot(*(P[:, 2] - P[:, 1]).T), np.hypot(*(P[:, 0] - P[:, 2]).T), np.hypot(*(P[:, 1] - P[:, 0]).T)],
        axis=1,
    )
    diam = lens.max(axis=1)
    degenerate = np.abs(signed) <= 1e-14 * diam**2
    if degenerate.any():
        raise MeshError(f"degenerate triangles: {np.flatnonzero(degenerate).tolist()}")
    cw = signed < 0
    if cw.any():
        t = t.copy()
        t[cw] = t[cw][:, [0, 2, 1]]
        signed = np.abs(signed)

    edges, t2e, e2t, dir_sign = _edge_table(t)
    ev = p[edges[:, 1]] - p[edges[:, 0]]
    elen = np.hypot(ev[:, 0], ev[:, 1])
    normal = np.column_stack([ev[:, 1], -ev[:, 0]]) / elen[:, None]
    boundary = e2t[:, 1] < 0
    # boundary normals: outward w.r.t. the single adjacent triangle
    bt = e2t[boundary, 0]
    be = np.flatnonzero(boundary)
    loc = np.argmax(t2e[bt] == be[:, None], axis=1)
    flip = dir_sign[bt, loc] < 0
    normal[be[flip]] *= -1.0
    normal_sign = dir_sign.copy()
    normal_sign[bt, loc] = 1

    return Mesh(
        p=p,
        t=t,
        edges=edges,
        t2e=t2e,
        e2t=e2t,
        normal_sign=normal_sign,
        dir_sign=dir_sign,
        edge_length=elen,
        edge_normal=normal,
        area=signed,
        diameter=diam,
        generation=generation,
        snapper=snapper,
        parent=parent,
    )


def classify_boundary(mesh: Mesh, beta: Callable, eps: float = 1e-12) -> Mesh:
    """Label boundary edges by the sign of ``beta . n`` at the edge midpoint.

    An edge is inflow when ``beta . n < -eps |beta|``, outflow when
    ``beta . n > eps |beta|`` and characteristic otherwise.
    """
    be = mesh.boundary_edges
    mid = mesh.edge_midpoints[be]
    b = np.asarray(beta(mid[:, 0], mid[:, 1]), dtype=float)
    b = np.broadcast_to(b, (2, be.size)) if b.ndim == 2 else b
    bn = b[0] * mesh.edge_normal[be, 0] + b[1] * mesh.edge_normal[be, 1]
    thr = eps * np.hypot(b[0], b[1])
    cls = np.full(mesh.n_edges, INTERIOR, dtype=np.int8)
    lab = np.full(be.size, CHARACTERISTIC, dtype=np.int8)
    lab[bn < -thr] = INFLOW
    lab[bn > thr] = OUTFLOW
    cls[be] = lab
    return replace(mesh, boundary_class=cls)


def _refinement_edges(mesh: Mesh) -> np.ndarray:
    """Longest edge of each triangle; near-ties go to the lexicographically
    smallest vertex pair so the choice does not depend on numbering of edges."""
    L = mesh.edge_length[mesh.t2e]
    Lmax = L.max(axis=1, keepdims=True)
    cand = L >= Lmax * (1.0 - 1e-12)
    pair = mesh.edges[mesh.t2e]  # (m, 3, 2)
    key = pair[:, :, 0] * (mesh.n_vertices + 1) + pair[:, :, 1]
    key = np.where(cand, key, np.iinfo(np.int64).max)
    loc = np.argmin(key, axis=1)
    return loc


def refine(mesh: Mesh, marked: Iterable[int], max_vertices: Optional[int] = None) -> Mesh:
    """Bisect the marked triangles through their longest edge.

    Triangles whose edges receive a new vertex are bisected in turn, first
    through their own longest edge, until the mesh is conforming.  New
    vertices on curved boundary chords are moved onto the curve.  The returned
    mesh carries ``parent`` (old triangle id of every new triangle) and is
    unclassified.

    Raises
    ------
    MeshError
        If ``marked`` is empty or invalid, or the refined mesh would exceed
        ``max_vertices``.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked, dtype=np.int64))
    if marked.size == 0:
        raise MeshError("no triangles marked for refinement")
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise MeshError("marked triangle id out of range")

    ref_loc = _refinement_edges(mesh)
    ref_edge = mesh.t2e[np.arange(mesh.n_triangles), ref_loc]
    emark = np.zeros(mesh.n_edges, dtype=bool)
    emark[ref_edge[marked]] = True
    while True:
        need = emark[mesh.t2e].any(axis=1) & ~emark[ref_edge]
        if not need.any():
            break
        emark[ref_edge[need]] = True

    new_e = np.flatnonzero(emark)
    n_old = mesh.n_vertices
    if max_vertices is not None and n_old + new_e.size > max_vertices:
        raise MeshError(
            f"refinement would create {n_old + new_e.size} vertices, above the cap {max_vertices}"
        )
    mid = 0.5 * (mesh.p[mesh.edges[new_e, 0]] + mesh.p[mesh.edges[new_e, 1]])
    if mesh.snapper is not None:
        bnd = mesh.e2t[new_e, 1] < 0
        a = mesh.snapper.on_curve(mesh.p[mesh.edges[new_e, 0]])
        b = mesh.snapper.on_curve(mesh.p[mesh.edges[new_e, 1]])
        curved = bnd & a & b
        if curved.any():
            mid[curved] = mesh.snapper.snap(mid[curved])
    midpoint_of = -np.ones(mesh.n_edges, dtype=np.int64)
    midpoint_of[new_e] = n_old + np.arange(new_e.size)
    p_new = np.vstack([mesh.p, mid])

    pair_mid = {}
    for e, v in zip(new_e, midpoint_of[new_e]):
        a, b = mesh.edges[e]
        pair_mid[(int(a), int(b))] = int(v)

    def mid_of(a, b):
        return pair_mid.get((a, b) if a < b else (b, a), -1)

    tri_out = []
    par_out = []
    split = emark[mesh.t2e].any(axis=1)
    keep = np.flatnonzero(~split)
    for k in np.flatnonzero(split):
        v = [int(x) for x in mesh.t[k]]
        i = int(ref_loc[k])
        v0, v1, v2 = v[i], v[(i + 1) % 3], v[(i + 2) % 3]
        m = mid_of(v1, v2)
        children = []
        # child (v0, v1, m) may carry a marked edge v0-v1, child (v0, m, v2) edge v2-v0
        c1 = (v0, v1, m)
        mm = mid_of(v0, v1)
        if mm >= 0:
            children += [(m, v0, mm), (m, mm, v1)]
        else:
            children.append(c1)
        mm = mid_of(v2, v0)
        if mm >= 0:
            children += [(m, v2, mm), (m, mm, v0)]
        else:
            children.append((v0, m, v2))
        tri_out.extend(children)
        par_out.extend([k] * len(children))

    t_new = np.vstack([mesh.t[keep], np.asarray(tri_out, dtype=np.int64).reshape(-1, 3)])
    parent = np.concatenate([keep, np.asarray(par_out, dtype=np.int64)])
    return build_mesh(p_new, t_new, snapper=mesh.snapper, generation=mesh.generation + 1, parent=parent)


def uniform_refine(mesh: Mesh, max_vertices: Optional[int] = None) -> Mesh:
    """Bisect every triangle once through its longest edge."""
    return refine(mesh, np.arange(mesh.n_triangles), max_vertices=max_vertices)


def unit_square_mesh(n: int = 4, x0=0.0, x1=1.0, y0=0.0, y1=1.0) -> Mesh:
    """``n x n`` grid of squares, each cut by its diagonal parallel to (1, 1)."""
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    p = np.column_stack([X.ravel(), Y.ravel()])
    idx = lambda i, j: j * (n + 1) + i
    tris = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
    return build_mesh(p, tris)


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text export: a ``VERTICES n / TRIANGLES m`` header, ``n`` lines
    ``x y`` and ``m`` lines ``i j k`` (0-based)."""
    with open(path, "w") as fh:
        fh.write(f"VERTICES {mesh.n_vertices} / TRIANGLES {mesh.n_triangles}\n")
        for x, y in mesh.p:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.t:
            fh.write(f"{a} {b} {c}\n")


def read_mesh(path, snapper: Optional[GeometryDescriptor] = None) -> Mesh:
    """Inverse of :func:`write_mesh`.

    Raises
    ------
    MeshError
        On a malformed header or a wrong number of lines.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MeshError(f"{path}: empty mesh file")
    tokens = lines[0].replace("/", " ").split()
    try:
        head = dict(zip(tokens[0::2], (int(v) for v in tokens[1::2])))
        n, m = head["VERTICES"], head["TRIANGLES"]
    except (KeyError, ValueError):
        raise MeshError(f"{path}: expected header 'VERTICES n / TRIANGLES m', got {lines[0]!r}") from None
    if len(lines) != 1 + n + m:
        raise MeshError(f"{path}: header announces {n} vertices and {m} triangles, found {len(lines) - 1} data lines")
    try:
        p = np.array([[float(v) for v in ln.split()] for ln in lines[1 : 1 + n]]).reshape(n, 2)
        t = np.array([[int(v) for v in ln.split()] for ln in lines[1 + n :]], dtype=np.int64).reshape(m, 3)
    except ValueError as err:
        raise MeshError(f"{path}: malformed data line ({err})") from None
    return build_mesh(p, t, snapper=snapper)
