import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from transport_lsfem.mesh import build_mesh, classify_boundary, unit_square_mesh

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("default")


@pytest.fixture
def two_triangle_square():
    return build_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [(0, 1, 2), (0, 2, 3)])


@pytest.fixture
def reference_triangle():
    return build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)])


def perturbed_square(n, amount, seed):
    """Criss-cross grid with interior vertices jittered by ``amount * h``."""
    mesh = unit_square_mesh(n)
    rng = np.random.default_rng(seed)
    p = mesh.p.copy()
    interior = (p[:, 0] > 0) & (p[:, 0] < 1) & (p[:, 1] > 0) & (p[:, 1] < 1)
    p[interior] += amount / n * rng.uniform(-1, 1, size=(interior.sum(), 2))
    return build_mesh(p, mesh.t)


@pytest.fixture
def classified():
    def make(mesh, problem):
        return classify_boundary(mesh, problem.beta)

    return make


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance verdict."""

    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
