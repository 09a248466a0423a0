"""Weak inflow conditions on the half disk with a jump in the inflow datum.

With the weight alpha_F h_F and alpha_F = 1, the boundary term is too weak:
refinement piles up next to the inflow edge and the L2 error stalls.
alpha_F = 10 restores first-order LS convergence.
"""
import numpy as np

from transport_lsfem import AmrConfig, Method, MethodKind, amr_loop, get_problem

problem = get_problem("curved_01")
for alpha in (1.0, 10.0):
    records, history = amr_loop(
        problem, Method(MethodKind.LSFEM_B2, alpha), AmrConfig(node_budget=20000, keep_history=True)
    )
    touch = []
    for h in history:
        if h.marked.size:
            t = np.zeros(h.mesh.n_triangles, dtype=bool)
            t[h.mesh.triangles_touching_edges(h.mesh.inflow_edges())] = True
            touch.append(t[h.marked].mean() / t.mean())
    print(f"alpha_F = {alpha:g}")
    print("  last L2 errors:", " ".join(f"{r.l2_u_error:.4e}" for r in records[-5:]))
    print("  inflow-touch ratio of marked sets (last 5):", " ".join(f"{v:.1f}" for v in touch[-5:]))
