"""A discontinuity along y = x on a mesh aligned with it.

The piecewise constant exact solution lies in RT0 x P0, so the method
reproduces it to rounding error and the adaptive loop stops after the
first solve.  The continuous comparison method cannot represent the jump.
"""
from transport_lsfem import AmrConfig, amr_loop, get_problem

problem = get_problem("pwc_aligned")
for method, k in (("lsfem", 0), ("lsfem-b2", 0), ("c-lsfem", 1)):
    records, _ = amr_loop(problem, method, AmrConfig(k=k, node_budget=2000))
    first = records[0]
    print(
        f"{method:9s} iterations={len(records):2d}  eta={first.estimator:.2e}  "
        f"l2(u)={first.l2_u_error:.2e}  overshoot={first.overshoot:.3f}"
    )
