"""Jump across x = pi/3 that the initial mesh does not resolve.

Uniform refinement leaves a Gibbs-like overshoot of several percent.
Adaptive refinement pulls the mesh onto the line: the estimator decays at
first order in n_dofs^(-1/2) and the overshoot dies out.  RT1 x P1 on the
same final mesh keeps overshooting.
"""
from transport_lsfem import AmrConfig, amr_loop, get_problem, overshoot, solve
from transport_lsfem.mesh import classify_boundary, uniform_refine

problem = get_problem("pwc_nonmatching")

mesh = problem.initial_mesh()
for _ in range(8):
    mesh = uniform_refine(mesh)
mesh = classify_boundary(mesh, problem.beta)
sol = solve(mesh, "lsfem", 0, problem)
print(f"uniform, {mesh.n_vertices} nodes: overshoot {overshoot(sol.u, problem.exact_u_bounds):.4f}")

records, history = amr_loop(problem, "lsfem", AmrConfig(node_budget=20000, keep_history=True))
print(" it  nodes     eta        l2(u)     overshoot")
for r in records:
    print(f"{r.iteration:3d} {r.n_vertices:6d}  {r.estimator:.3e}  {r.l2_u_error:.3e}  {r.overshoot:.4f}")

final = history[-1].mesh
rt1 = solve(final, "lsfem", 1, problem)
print(f"RT1 x P1 on the final adaptive mesh: overshoot {overshoot(rt1.u, problem.exact_u_bounds):.4f}")
