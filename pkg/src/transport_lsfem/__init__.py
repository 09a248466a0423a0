"""Adaptive least-squares finite elements for linear transport.

The flux formulation ``sigma = beta u``, ``div sigma + gamma u = f`` is
discretized with ``RT_k x P_k`` (k = 0, 1); continuous P1 on the
non-conservative form is available for comparison.
"""
from .adaptivity import (
    AmrConfig,
    AmrRecord,
    Indicators,
    amr_loop,
    compute_indicators,
    dorfler_mark,
    eoc,
    overshoot,
    uniform_loop,
)
from .assembly import (
    BoundaryData,
    Method,
    MethodKind,
    Solution,
    apply_strong_bc,
    assemble,
    assemble_clsfem_bc,
    ls_functional,
    project_inflow_g,
    solve,
)
from .linalg import SolveReport, SolverError, cg_solve
from .mesh import Mesh, MeshError, build_mesh, classify_boundary, refine, uniform_refine
from .problems import ErrorReport, ProblemSpec, catalog, exact_errors, get_problem
from .quadrature import QuadratureRule, quadrature
from .spaces import SpaceKind, interpolate_rt, piola_map, project_l2, reference_basis

__version__ = "0.1.0"
