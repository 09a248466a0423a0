import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from transport_lsfem.assembly import (
    Method,
    MethodKind,
    Solution,
    apply_strong_bc,
    assemble,
    assemble_clsfem_bc,
    ls_functional,
    mu_values,
    project_inflow_g,
    solve,
)
from transport_lsfem.mesh import MeshError, build_mesh, classify_boundary, uniform_refine, unit_square_mesh
from transport_lsfem.problems import ProblemSpec, get_problem
from transport_lsfem.quadrature import quadrature
from transport_lsfem.spaces import interpolate_rt, project_l2

FLUX_METHODS = ["lsfem", "lsfem-b1", "lsfem-b2"]
ALL_METHODS = FLUX_METHODS + ["c-lsfem"]
EXACT = ["pwc_aligned", "smooth", "peterson", "pws_aligned", "pwc_nonmatching", "pws_nonmatching",
         "curved_01", "curved_m11", "layer"]


def const(c):
    return lambda x, y: np.full(np.shape(x), float(c))


def simple_problem(beta=(1 / np.sqrt(2), 1 / np.sqrt(2)), gamma=1.0, f=0.0, g=1.0):
    return ProblemSpec(
        name="custom",
        beta=lambda x, y: (np.full(np.shape(x), beta[0]), np.full(np.shape(x), beta[1])),
        gamma=const(gamma),
        f=const(f),
        g=const(g),
        div_beta=const(0.0),
        initial_mesh=lambda: unit_square_mesh(4),
    )


def setup(name, refinements=0):
    prob = get_problem(name)
    mesh = prob.mesh_family(0) if prob.mesh_family is not None else prob.initial_mesh()
    for _ in range(refinements):
        mesh = uniform_refine(mesh)
    return prob, classify_boundary(mesh, prob.beta)


@pytest.mark.parametrize("method", ALL_METHODS)
@pytest.mark.parametrize("name", ["smooth", "curved_m11", "layer"])
def test_matrix_exactly_symmetric(name, method):
    prob, mesh = setup(name, 1)
    k = 1 if method == "c-lsfem" else 0
    A, _, _, _ = assemble(mesh, method, k, prob)
    assert abs(A - A.T).max() == 0.0


def test_reference_triangle_u_diagonal():
    prob = simple_problem(beta=(0.0, 0.0), gamma=1.0)
    mesh = classify_boundary(build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)]), prob.beta)
    A, _, _, disc = assemble(mesh, "lsfem", 0, prob)
    assert A[disc.n_rt, disc.n_rt] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("k", [0, 1])
def test_aligned_exact_solution_is_stationary(k):
    prob, mesh = setup("pwc_aligned")
    A, b, _, _ = assemble(mesh, "lsfem", k, prob)
    x = np.concatenate([interpolate_rt(mesh, prob.exact_sigma, k), project_l2(mesh, prob.exact_u, k, degree=8)])
    assert np.linalg.norm(b - A @ x) <= 1e-12 * np.linalg.norm(b)


def test_homogeneous_strong_bc():
    prob, mesh = setup("smooth")
    prob = dataclasses.replace(prob, g=const(0.0))
    A, b, bc, _ = assemble(mesh, "lsfem", 0, prob)
    assert np.all(bc.values == 0)
    _, b_f, free, _ = apply_strong_bc(A, b, bc)
    assert np.array_equal(b_f, b[free])


def test_west_edge_moment():
    prob = simple_problem(g=1.0)
    mesh = classify_boundary(unit_square_mesh(4), prob.beta)
    bc = project_inflow_g(mesh, prob, 0)
    mids = mesh.edge_midpoints[bc.dofs]
    west = np.isclose(mids[:, 0], 0.0)
    assert west.sum() == 4
    assert np.allclose(bc.values[west], -0.25 / np.sqrt(2), rtol=0, atol=1e-15)


def test_constant_g_moment():
    prob = simple_problem(beta=(0.3, 0.9), g=2.5)
    mesh = classify_boundary(unit_square_mesh(3), prob.beta)
    bc = project_inflow_g(mesh, prob, 0)
    e = bc.dofs
    bn = mesh.edge_normal[e] @ np.array([0.3, 0.9])
    assert np.allclose(bc.values, 2.5 * bn * mesh.edge_length[e], atol=1e-15)


def test_strong_bc_elimination_matches_kkt_oracle(two_triangle_square):
    prob = simple_problem(beta=(0.6, 0.8), gamma=0.7, f=1.3, g=0.4)
    prob = dataclasses.replace(prob, g=lambda x, y: 0.4 + x - y)
    mesh = classify_boundary(two_triangle_square, prob.beta)
    for k in (0, 1):
        A, b, bc, disc = assemble(mesh, "lsfem", k, prob)
        sol = solve(mesh, "lsfem", k, prob, solver="dense")
        # min 1/2 x'Ax - b'x subject to x[c] = v, via the KKT system
        Ad = A.toarray()
        C = np.zeros((bc.dofs.size, disc.n))
        C[np.arange(bc.dofs.size), bc.dofs] = 1.0
        K = np.block([[Ad, C.T], [C, np.zeros((C.shape[0],) * 2)]])
        ref = np.linalg.solve(K, np.concatenate([b, bc.values]))[: disc.n]
        assert np.allclose(sol.x, ref, atol=1e-12)


def test_curved_inflow_moments():
    prob, mesh = setup("curved_01")
    bc = project_inflow_g(mesh, prob, 0)
    mids = mesh.edge_midpoints[bc.dofs]
    got = dict(zip(np.round(mids[:, 0], 6), bc.values))
    assert got == {-0.75: pytest.approx(-0.5, abs=1e-15), -0.25: pytest.approx(0.0, abs=1e-15)}


def test_peterson_inflow_moments():
    prob, mesh = setup("peterson")
    bc = project_inflow_g(mesh, prob, 0)
    mids = mesh.edge_midpoints[bc.dofs]
    assert np.allclose(mids[:, 1], 0.0)
    assert np.allclose(bc.values, -mids[:, 0] * mesh.edge_length[bc.dofs], atol=1e-15)


def test_clsfem_nodal_data():
    prob, mesh = setup("pwc_aligned")
    bc = assemble_clsfem_bc(mesh, prob)
    corner = np.flatnonzero(np.all(mesh.p[bc.dofs] == 0.0, axis=1))
    assert bc.values[corner] == pytest.approx([0.5], abs=0)
    others = np.delete(np.arange(bc.dofs.size), corner)
    assert np.array_equal(bc.values[others], prob.g(*mesh.p[bc.dofs[others]].T))
    smooth, smesh = setup("smooth")
    bcs = assemble_clsfem_bc(smesh, smooth)
    assert np.allclose(bcs.values, smooth.g(*smesh.p[bcs.dofs].T), atol=1e-8)
    zero = dataclasses.replace(smooth, g=const(0.0))
    assert np.all(assemble_clsfem_bc(smesh, zero).values == 0)


def test_assembly_errors():
    prob = get_problem("smooth")
    with pytest.raises(MeshError, match="classified"):
        assemble(unit_square_mesh(2), "lsfem", 0, prob)
    mesh = classify_boundary(unit_square_mesh(2), prob.beta)
    with pytest.raises(ValueError):
        assemble(mesh, "lsfem", 2, prob)
    with pytest.raises(ValueError):
        assemble(mesh, "c-lsfem", 0, prob)
    with pytest.raises(ValueError):
        Method(MethodKind.LSFEM_B2, alpha_f=0.0)
    with pytest.raises(ValueError):
        Method(MethodKind.LSFEM_B2, alpha_f=float("inf"))


def test_weak_inflow_rejects_vanishing_normal_flux():
    mesh = unit_square_mesh(2)
    # beta . n vanishes at the first Gauss point of the lower west edge
    y0 = 0.5 * quadrature("segment", 5).points[0]
    prob = dataclasses.replace(
        simple_problem(), beta=lambda x, y: ((np.asarray(y) - y0) ** 2, np.ones(np.shape(x)))
    )
    mesh = classify_boundary(mesh, prob.beta)
    with pytest.raises(MeshError, match="beta . n"):
        assemble(mesh, "lsfem-b1", 0, prob)


def test_mu_finite_difference():
    prob = dataclasses.replace(
        simple_problem(), beta=lambda x, y: (np.sin(x) * y, np.exp(y)), div_beta=None
    )
    x, y = np.random.default_rng(0).uniform(0, 1, (2, 50))
    exact = 1.0 + np.cos(x) * y + np.exp(y)
    assert np.allclose(mu_values(prob, x, y, h=0.1), exact, atol=1e-7)


def _reduced(name, method, k):
    prob, mesh = setup(name)
    A, b, bc, _ = assemble(mesh, method, k, prob)
    return apply_strong_bc(A, b, bc)[0]


@pytest.mark.parametrize("method", ALL_METHODS)
@pytest.mark.parametrize("name", ["smooth", "curved_01", "layer"])
def test_spd_probe(name, method):
    k = 1 if method == "c-lsfem" else 0
    A = _reduced(name, method, k)
    X = np.random.default_rng(1).standard_normal((A.shape[0], 100))
    assert np.all(np.einsum("ij,ij->j", X, A @ X) > 0)
    assert np.linalg.eigvalsh(A.toarray()).min() > 0


@given(c=st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), method=st.sampled_from(ALL_METHODS))
def test_linearity_in_data(c, method):
    prob, mesh = setup("smooth")
    k = 1 if method == "c-lsfem" else 0
    scaled = dataclasses.replace(prob, f=lambda x, y: c * prob.f(x, y), g=lambda x, y: c * prob.g(x, y))
    x1 = solve(mesh, method, k, prob, solver="dense").x
    x2 = solve(mesh, method, k, scaled, solver="dense").x
    assert np.allclose(x2, c * x1, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("method", FLUX_METHODS)
@pytest.mark.parametrize("k", [0, 1])
@pytest.mark.parametrize("name", EXACT)
def test_discrete_minimization(name, k, method):
    prob, mesh = setup(name)
    sol = solve(mesh, method, k, prob, solver="dense")
    x = np.concatenate([interpolate_rt(mesh, prob.exact_sigma, k), project_l2(mesh, prob.exact_u, k, degree=8)])
    assert ls_functional(sol, prob) <= ls_functional(Solution(sol.disc, x), prob) + 1e-10


@pytest.mark.parametrize("method", ALL_METHODS)
def test_functional_identity(method):
    prob, mesh = setup("pws_nonmatching", 1)
    k = 1 if method == "c-lsfem" else 0
    A, b, _, disc = assemble(mesh, method, k, prob)
    sol = solve(mesh, method, k, prob)
    x = sol.x
    j0 = ls_functional(Solution(disc, np.zeros(disc.n)), prob)
    algebraic = x @ (A @ x) - 2 * b @ x + j0
    assert ls_functional(sol, prob) == pytest.approx(algebraic, rel=1e-8)
