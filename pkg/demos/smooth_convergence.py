"""Uniform refinement on the smooth benchmark u = sin(x + y).

Prints the LS-norm error, the L2 error of u and the estimator for the three
flux methods.  All quantities decay at first order with RT0 x P0 and at
second order with RT1 x P1; the estimator coincides with the LS error.
"""
import numpy as np

from transport_lsfem import AmrConfig, Method, MethodKind, get_problem, uniform_loop


def slope(records, attr):
    tail = records[-3:]
    x = np.log([r.n_dofs ** -0.5 for r in tail])
    return np.polyfit(x, np.log([getattr(r, attr) for r in tail]), 1)[0]


problem = get_problem("smooth")
for k in (0, 1):
    for method in ("lsfem", "lsfem-b1", Method(MethodKind.LSFEM_B2, 10.0)):
        records, _ = uniform_loop(problem, method, 8, AmrConfig(k=k))
        last = records[-1]
        name = method if isinstance(method, str) else "lsfem-b2"
        print(
            f"k={k} {name:9s} dofs={last.n_dofs:6d}  ls={last.ls_error:.3e}  "
            f"eta={last.estimator:.3e}  l2={last.l2_u_error:.3e}  "
            f"rates: ls {slope(records, 'ls_error'):.2f}, l2 {slope(records, 'l2_u_error'):.2f}"
        )
