from math import factorial

import numpy as np
import pytest

from transport_lsfem.quadrature import quadrature


def test_triangle_degree2_second_moment():
    rule = quadrature("triangle", 2)
    x, y = rule.points.T
    assert np.isclose(rule.weights @ (x**2 + y**2), 1 / 6, rtol=0, atol=1e-15)


def test_segment_two_point_gauss_cubic():
    rule = quadrature("segment", 3)
    assert rule.points.size == 2
    assert np.isclose(rule.weights @ rule.points**3, 0.25, atol=1e-15)


@pytest.mark.parametrize("degree", [0, 1, 2, 4, 8, 12])
def test_reference_measures(degree):
    assert np.isclose(quadrature("triangle", degree).weights.sum(), 0.5, atol=1e-15)
    assert np.isclose(quadrature("segment", degree).weights.sum(), 1.0, atol=1e-15)


@pytest.mark.parametrize("degree", range(0, 13))
def test_triangle_monomials_exact(degree):
    # int_T x^a y^b = a! b! / (a + b + 2)!
    rule = quadrature("triangle", degree)
    assert np.all(rule.weights > 0)
    x, y = rule.points.T
    for a in range(degree + 1):
        b = degree - a
        exact = factorial(a) * factorial(b) / factorial(a + b + 2)
        assert abs(rule.weights @ (x**a * y**b) - exact) <= 1e-14 * max(exact, 1.0)


@pytest.mark.parametrize("degree", range(0, 16))
def test_segment_monomials_exact(degree):
    rule = quadrature("segment", degree)
    assert abs(rule.weights @ rule.points**degree - 1 / (degree + 1)) <= 1e-14


@pytest.mark.parametrize("domain, degree", [("triangle", -1), ("triangle", 99), ("segment", 200), ("square", 2)])
def test_unsupported_rules_rejected(domain, degree):
    with pytest.raises(ValueError):
        quadrature(domain, degree)


def test_rules_are_read_only():
    rule = quadrature("triangle", 4)
    with pytest.raises(ValueError):
        rule.weights[0] = 1.0
