"""Benchmark transport problems and their initial meshes.

Every coefficient is a vectorized callable of ``(x, y)``.  ``beta`` returns a
pair ``(bx, by)``.  Problems with a known discontinuity carry a
:class:`LineDiscontinuity` or :class:`CircleDiscontinuity` together with the
smooth pieces of the exact solution on either side, which the error
integration uses to split cut elements.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .integration import integrate_cells
from .mesh import Mesh, build_mesh, circle_snapper, unit_square_mesh


def _const(c):
    return lambda x, y: np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(c))


def _const_vec(cx, cy):
    def beta(x, y):
        shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
        return np.full(shape, float(cx)), np.full(shape, float(cy))

    return beta


def clip_halfplane(poly: np.ndarray, normal, offset: float) -> np.ndarray:
    """Part of a convex polygon where ``normal . x <= offset``."""
    if len(poly) == 0:
        return poly
    s = poly @ np.asarray(normal, dtype=float) - offset
    out = []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        sa, sb = s[i], s[(i + 1) % n]
        if sa <= 0:
            out.append(a)
        if (sa < 0 < sb) or (sb < 0 < sa):
            out.append(a + (sa / (sa - sb)) * (b - a))
    return np.array(out).reshape(-1, 2)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class LineDiscontinuity:
    """Straight interface ``normal . (x - point) = 0``; the minus side is
    where the expression is negative."""

    point: tuple
    normal: tuple

    def minus(self, x, y):
        n = self.normal
        return n[0] * (x - self.point[0]) + n[1] * (y - self.point[1]) < 0

    def cut(self, tri: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Flags for triangles ``(m, 3, 2)`` crossed by the line."""
        n = np.asarray(self.normal, dtype=float)
        s = (tri - np.asarray(self.point)) @ n
        scale = np.abs(tri).max(axis=(1, 2)) + 1.0
        return (s.min(1) < -tol * scale) & (s.max(1) > tol * scale)

    def minus_polygon(self, tri: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal, dtype=float)
        return clip_halfplane(tri, n, float(n @ np.asarray(self.point, dtype=float)))


@dataclass(frozen=True)
class CircleDiscontinuity:
    """Circular interface; the minus side is the open disk.  Arcs inside an
    element are replaced by ``chords`` straight segments."""

    center: tuple
    radius: float
    chords: int = 8

    def minus(self, x, y):
        return (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2 < self.radius**2

    def cut(self, tri: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        d = np.hypot(*(tri - c).transpose(2, 0, 1))
        dmax = d.max(1)
        dmin = np.full(tri.shape[0], np.inf)
        for i in range(3):
            a = tri[:, i]
            b = tri[:, (i + 1) % 3]
            ab = b - a
            tpar = np.clip(((c - a) * ab).sum(1) / (ab * ab).sum(1), 0.0, 1.0)
            q = a + tpar[:, None] * ab
            dmin = np.minimum(dmin, np.hypot(*(q - c).T))
        inside = _contains(tri, c)
        dmin = np.where(inside, 0.0, dmin)
        r = self.radius
        return (dmin < r * (1 - tol)) & (dmax > r * (1 + tol))

    def minus_polygon(self, tri: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        rel = tri - c
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        ref = np.arctan2(*rel.mean(0)[::-1])
        dang = (ang - ref + np.pi) % (2 * np.pi) - np.pi
        if _contains(tri[None], c)[0] or np.ptp(dang) >= np.pi:
            th = np.linspace(0, 2 * np.pi, 8 * self.chords, endpoint=False)
            clip = c + self.radius * np.column_stack([np.cos(th), np.sin(th)])
        else:
            lo, hi = ref + dang.min(), ref + dang.max()
            th = np.linspace(lo, hi, self.chords + 1)
            arc = c + self.radius * np.column_stack([np.cos(th), np.sin(th)])
            clip = np.vstack([c, arc])
        poly = tri.copy()
        for i in range(len(clip)):
            a, b = clip[i], clip[(i + 1) % len(clip)]
            e = b - a
            out_n = np.array([e[1], -e[0]])  # clip polygon is counterclockwise
            poly = clip_halfplane(poly, out_n, float(out_n @ a))
            if len(poly) == 0:
                break
        return poly


def _contains(tri: np.ndarray, pt: np.ndarray) -> np.ndarray:
    s = []
    for i in range(3):
        a = tri[:, i]
        b = tri[:, (i + 1) % 3]
        s.append((b[:, 0] - a[:, 0]) * (pt[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (pt[0] - a[:, 0]))
    s = np.stack(s, 1)
    return (s >= 0).all(1) | (s <= 0).all(1)


@dataclass
class ProblemSpec:
    """Coefficients and data of ``div(beta u) + gamma u = f``, ``u = g`` on
    the inflow boundary.

    ``pieces`` maps ``"u_minus"``, ``"u_plus"``, ``"f_minus"``, ``"f_plus"``
    to the smooth extensions of ``u`` and ``f`` from each side of
    ``discontinuity``.  ``mesh_family`` (when present) returns the mesh of a
    given level and replaces uniform refinement.
    """

    name: str
    beta: Callable
    gamma: Callable
    f: Callable
    g: Callable
    initial_mesh: Callable[[], Mesh]
    div_beta: Optional[Callable] = None
    exact_u: Optional[Callable] = None
    exact_u_bounds: Optional[tuple] = None
    discontinuity: Optional[object] = None
    pieces: dict = field(default_factory=dict)
    mesh_family: Optional[Callable[[int], Mesh]] = None
    description: str = ""

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None

    def exact_sigma(self, x, y):
        bx, by = self.beta(x, y)
        u = self.exact_u(x, y)
        return bx * u, by * u

    def exact_div_sigma(self, x, y):
        return self.f(x, y) - self.gamma(x, y) * self.exact_u(x, y)

    def side_fields(self, side: str):
        """Smooth ``(u, sigma, div sigma)`` callables of one side."""
        u = self.pieces["u_" + side]
        f = self.pieces["f_" + side]

        def sigma(x, y):
            bx, by = self.beta(x, y)
            uu = u(x, y)
            return bx * uu, by * uu

        def div_sigma(x, y):
            return f(x, y) - self.gamma(x, y) * u(x, y)

        return u, sigma, div_sigma


def _piecewise(disc, minus_fn, plus_fn):
    def fn(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.where(disc.minus(x, y), minus_fn(x, y), plus_fn(x, y))

    return fn


# ---------------------------------------------------------------- meshes


def criss_cross_mesh(n: int = 4) -> Mesh:
    return unit_square_mesh(n)


def nonmatching_mesh() -> Mesh:
    """Four-triangle mesh of (0, 2) x (0, 1) with bottom node (pi/3, 0)."""
    p = [(0.0, 0.0), (np.pi / 3, 0.0), (2.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]
    t = [(0, 1, 4), (0, 4, 3), (1, 2, 4), (2, 5, 4)]
    return build_mesh(p, t)


def half_disk_mesh() -> Mesh:
    """Fan mesh of the upper half of the unit disk with bottom nodes at
    x = -1, -0.5, 0, 0.5, 1."""
    s = np.sqrt(0.5)
    p = [(-1.0, 0.0), (-0.5, 0.0), (0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (s, s), (0.0, 1.0), (-s, s)]
    t = [(3, 4, 5), (2, 3, 5), (2, 5, 6), (2, 6, 7), (1, 2, 7), (0, 1, 7)]
    return build_mesh(p, t, snapper=circle_snapper((0.0, 0.0), 1.0))


def peterson_mesh(n: int) -> Mesh:
    """Layered mesh of the unit square with ``n`` horizontal layers of
    height ``h = 1/n``.

    Even rows carry nodes at ``x = i h``, odd rows at ``x = (i + 1/2) h``
    (plus the two corners), so no edge is parallel to ``(0, 1)`` and every
    layer alternates upward and downward pointing triangles.
    """
    h = 1.0 / n
    pts = []
    rows = []
    for j in range(n + 1):
        if j % 2 == 0:
            xs = np.arange(n + 1) * h
        else:
            xs = np.concatenate([[0.0], (np.arange(n) + 0.5) * h, [1.0]])
        ids = list(range(len(pts), len(pts) + len(xs)))
        pts += [(x, j * h) for x in xs]
        rows.append((xs, ids))
    tris = []
    for j in range(n):
        (xa, ia), (xb, ib) = rows[j], rows[j + 1]
        # sweep both rows left to right, always advancing the nearer next node
        a = b = 0
        while a < len(xa) - 1 or b < len(xb) - 1:
            adv_a = b >= len(xb) - 1 or (a < len(xa) - 1 and xa[a + 1] <= xb[b + 1])
            if adv_a:
                tris.append((ia[a], ib[b], ia[a + 1]))
                a += 1
            else:
                tris.append((ia[a], ib[b], ib[b + 1]))
                b += 1
    return build_mesh(np.array(pts), tris)


# ---------------------------------------------------------------- catalog


def pwc_aligned() -> ProblemSpec:
    beta = _const_vec(1 / np.sqrt(2), 1 / np.sqrt(2))
    disc = LineDiscontinuity((0.0, 0.0), (1.0, -1.0))  # minus side: y > x
    one, zero = _const(1.0), _const(0.0)
    u = _piecewise(disc, one, zero)
    return ProblemSpec(
        name="pwc_aligned",
        beta=beta,
        gamma=_const(1.0),
        f=u,
        g=u,
        div_beta=_const(0.0),
        exact_u=u,
        exact_u_bounds=(0.0, 1.0),
        discontinuity=disc,
        pieces={"u_minus": one, "u_plus": zero, "f_minus": one, "f_plus": zero},
        initial_mesh=criss_cross_mesh,
        description="piecewise constant solution, discontinuity on y = x",
    )


def smooth() -> ProblemSpec:
    u = lambda x, y: np.sin(x + y)
    f = lambda x, y: 2.0 * np.cos(x + y) + np.sin(x + y)
    return ProblemSpec(
        name="smooth",
        beta=_const_vec(1.0, 1.0),
        gamma=_const(1.0),
        f=f,
        g=u,
        div_beta=_const(0.0),
        exact_u=u,
        exact_u_bounds=(0.0, float(np.sin(np.pi / 2))),
        initial_mesh=criss_cross_mesh,
        description="u = sin(x + y)",
    )


def peterson() -> ProblemSpec:
    u = lambda x, y: np.asarray(x, dtype=float) + 0.0 * np.asarray(y, dtype=float)
    return ProblemSpec(
        name="peterson",
        beta=_const_vec(0.0, 1.0),
        gamma=_const(0.0),
        f=_const(0.0),
        g=u,
        div_beta=_const(0.0),
        exact_u=u,
        exact_u_bounds=(0.0, 1.0),
        initial_mesh=lambda: peterson_mesh(6),
        mesh_family=lambda level: peterson_mesh(6 * 2**level),
        description="u = x on the strip mesh family h = 1/6, 1/12, ...",
    )


def pws_aligned() -> ProblemSpec:
    c = 1 / np.sqrt(2)
    disc = LineDiscontinuity((0.0, 0.0), (1.0, -1.0))
    um = lambda x, y: np.sin(x + y)
    up = lambda x, y: np.cos(x + y)
    fm = lambda x, y: 2 * c * np.cos(x + y) + np.sin(x + y)
    fp = lambda x, y: -2 * c * np.sin(x + y) + np.cos(x + y)
    u = _piecewise(disc, um, up)
    return ProblemSpec(
        name="pws_aligned",
        beta=_const_vec(c, c),
        gamma=_const(1.0),
        f=_piecewise(disc, fm, fp),
        g=u,
        div_beta=_const(0.0),
        exact_u=u,
        exact_u_bounds=(float(np.cos(2.0)), 1.0),  # cos(x + y) reaches cos 2 near (1, 1)
        discontinuity=disc,
        pieces={"u_minus": um, "u_plus": up, "f_minus": fm, "f_plus": fp},
        initial_mesh=criss_cross_mesh,
        description="sin(x + y) above y = x, cos(x + y) below",
    )


def pwc_nonmatching() -> ProblemSpec:
    disc = LineDiscontinuity((np.pi / 3, 0.0), (1.0, 0.0))  # minus side: x < pi/3
    zero, one = _const(0.0), _const(1.0)
    u = _piecewise(disc, zero, one)
    return ProblemSpec(
        name="pwc_nonmatching",
        beta=_const_vec(0.0, 1.0),
        gamma=_const(0.0),
        f=_const(0.0),
        g=u,
        div_beta=_const(0.0),
        exact_u=u,
        exact_u_bounds=(0.0, 1.0),
        discontinuity=disc,
        pieces={"u_minus": zero, "u_plus": one, "f_minus": zero, "f_plus": zero},
        initial_mesh=nonmatching_mesh,
        description="jump at x = pi/3 on (0, 2) x (0, 1)",
    )


def pws_nonmatching() -> ProblemSpec:
    a = 1.0 / 8.0
    ca, sa = np.cos(a), np.sin(a)
    disc = LineDiscontinuity((0.0, 0.0), (sa, -ca))  # minus side: y > tan(1/8) x
    um = lambda x, y: np.sin(x + y)
    up = lambda x, y: np.cos(x + y)
    fm = lambda x, y: (ca + sa) * np.cos(x + y) + np.sin(x + y)
    fp = lambda x, y: -(ca + sa) * np.sin(x + y) + np.cos(x + y)
    u = _piecewise(disc, um, up)
    return ProblemSpec(
        name="pws_nonmatching",
        beta=_const_vec(ca, sa),
        gamma=_const(1.0),
        f=_piecewise(disc, fm, fp),
        g=u,
        div_beta=_const(0.0),
        exact_u=u,
        exact_u_bounds=(0.0, 1.0),
        discontinuity=disc,
        pieces={"u_minus": um, "u_plus": up, "f_minus": fm, "f_plus": fp},
        initial_mesh=criss_cross_mesh,
        description="jump along y = tan(1/8) x",
    )


def _rotating_beta(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, y / safe, 0.0), np.where(r > 0, -x / safe, 0.0)


def _curved(name: str, inner: float) -> ProblemSpec:
    disc = CircleDiscontinuity((0.0, 0.0), 0.5)
    ui, uo = _const(inner), _const(1.0)
    u = _piecewise(disc, ui, uo)
    return ProblemSpec(
        name=name,
        beta=_rotating_beta,
        gamma=_const(0.0),
        f=_const(0.0),
        g=u,
        div_beta=_const(0.0),
        exact_u=u,
        exact_u_bounds=(min(inner, 1.0), 1.0),
        discontinuity=disc,
        pieces={"u_minus": ui, "u_plus": uo, "f_minus": _const(0.0), "f_plus": _const(0.0)},
        initial_mesh=half_disk_mesh,
        description=f"rotating flow on the half disk, u = 1 for r > 0.5 and {inner:g} inside",
    )


def curved_01() -> ProblemSpec:
    return _curved("curved_01", 0.0)


def curved_m11() -> ProblemSpec:
    return _curved("curved_m11", -1.0)


def layer(eps: float = 1e-2) -> ProblemSpec:
    gam = 0.1

    def beta(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y + 1.0)
        return (y + 1.0) / r, -x / r

    def u(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.hypot(x, y + 1.0)
        return 0.25 * np.exp(gam * r * np.arcsin(np.clip((y + 1.0) / r, -1.0, 1.0))) * np.arctan((r - 1.5) / eps)

    # bounds from a dense sample of the closed square
    s = np.linspace(0.0, 1.0, 401)
    X, Y = np.meshgrid(s, s)
    vals = u(X, Y)
    return ProblemSpec(
        name=f"layer({eps:g})",
        beta=beta,
        gamma=_const(gam),
        f=_const(0.0),
        g=u,
        div_beta=_const(0.0),
        exact_u=u,
        exact_u_bounds=(float(vals.min()), float(vals.max())),
        initial_mesh=criss_cross_mesh,
        description=f"transient layer along r = 1.5 of width {eps:g}",
    )


_CATALOG = {
    "pwc_aligned": pwc_aligned,
    "smooth": smooth,
    "peterson": peterson,
    "pws_aligned": pws_aligned,
    "pwc_nonmatching": pwc_nonmatching,
    "pws_nonmatching": pws_nonmatching,
    "curved_01": curved_01,
    "curved_m11": curved_m11,
    "layer": layer,
}


def catalog() -> dict:
    """Name -> problem factory.  ``layer`` takes the layer width ``eps``."""
    return dict(_CATALOG)


def get_problem(name: str, **kwargs) -> ProblemSpec:
    """Build a catalog problem; ``layer`` also accepts ``layer(0.01)`` style
    names and an ``eps`` keyword."""
    if name.startswith("layer(") and name.endswith(")"):
        return layer(float(name[6:-1]))
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; available: {sorted(_CATALOG)}") from None
    return factory(**kwargs)


# ---------------------------------------------------------------- errors


@dataclass
class ErrorReport:
    """Global error norms plus their per-element squares (``local_*``).

    For C-LSFEM ``l2_sigma``/``hdiv_sigma`` are NaN and ``ls_norm`` is the
    L2 norm of ``beta . grad(u - u_h) + mu (u - u_h)``.
    """

    l2_u: float
    l2_sigma: float
    hdiv_sigma: float
    ls_norm: float
    local_l2_u: np.ndarray
    local_hdiv: np.ndarray
    local_ls: np.ndarray


def _side_exact(problem: ProblemSpec, side: str):
    if side == "full":
        return problem.exact_u, problem.exact_sigma, problem.exact_div_sigma, problem.f
    u, sigma, div_sigma = problem.side_fields(side)
    return u, sigma, div_sigma, problem.pieces["f_" + side]


def exact_errors(mesh: Mesh, solution, problem: ProblemSpec, quad_degree: int = 8) -> ErrorReport:
    """Errors of a discrete solution against the exact one.

    Elements cut by the problem's discontinuity are integrated piecewise on
    the two sides.  For the weakly constrained methods ``ls_norm`` includes
    the weighted inflow term.

    Raises
    ------
    ValueError
        If the problem has no exact solution.
    """
    from .assembly import _eval_beta, _eval_scalar, inflow_residuals, mu_values
    from .spaces import eval_field

    if not problem.has_exact:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    disc = solution.disc
    x = solution.x
    sig_c, u_c = disc.split(x)
    flux = disc.rt is not None

    def fields(elems, ref, xy, side):
        u_ex, s_ex, d_ex, f = _side_exact(problem, side)
        X, Y = xy[..., 0], xy[..., 1]
        uh, guh = eval_field(mesh, disc.pk, u_c, elems, ref)
        eu = _eval_scalar(u_ex, X, Y) - uh
        bx, by = _eval_beta(problem, X, Y)
        gam = _eval_scalar(problem.gamma, X, Y)
        if not flux:
            mu = mu_values(problem, X, Y, mesh.diameter[elems][:, None])
            res = _eval_scalar(f, X, Y) - (bx * guh[..., 0] + by * guh[..., 1] + mu * uh)
            return eu, None, None, res
        sh, dh = eval_field(mesh, disc.rt, sig_c, elems, ref)
        sx, sy = s_ex(X, Y)
        es = np.stack([np.broadcast_to(sx, X.shape) - sh[..., 0], np.broadcast_to(sy, X.shape) - sh[..., 1]], -1)
        ed = _eval_scalar(d_ex, X, Y) - dh
        r1 = es - np.stack([bx, by], -1) * eu[..., None]
        r2 = ed + gam * eu
        return eu, es, ed, (r1 * r1).sum(-1) + r2 * r2

    def integrand(elems, ref, xy, side):
        eu, es, ed, res = fields(elems, ref, xy, side)
        if not flux:
            z = np.zeros_like(eu)
            return np.stack([eu**2, z, z, res**2], -1)
        return np.stack([eu**2, (es**2).sum(-1), ed**2, res], -1)

    disc_line = problem.discontinuity if problem.pieces else None
    loc = integrate_cells(mesh, integrand, quad_degree, disc_line)
    loc_u, loc_s, loc_d, loc_ls = loc.T
    if flux:
        loc_ls = loc_ls + inflow_residuals(disc, problem, x)
        loc_h = loc_s + loc_d
        l2_s, hdiv = float(np.sqrt(max(loc_s.sum(), 0.0))), float(np.sqrt(max(loc_h.sum(), 0.0)))
    else:
        loc_h = np.full(mesh.n_triangles, np.nan)
        l2_s = hdiv = float("nan")
    return ErrorReport(
        l2_u=float(np.sqrt(max(loc_u.sum(), 0.0))),
        l2_sigma=l2_s,
        hdiv_sigma=hdiv,
        ls_norm=float(np.sqrt(max(loc_ls.sum(), 0.0))),
        local_l2_u=loc_u,
        local_hdiv=loc_h,
        local_ls=loc_ls,
    )
