"""적분 규칙 테스트"""
from math import factorial

import numpy as np
import pytest

from app.core.errors import QuadratureError
from app.core.quadrature import Domain, quadrature_rule


def triangle_monomial(a: int, b: int) -> float:
    """∫_T x^a y^b (기준 삼각형)"""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def test_degree_one_is_centroid_rule():
    rule = quadrature_rule("triangle", 1)
    assert len(rule) == 1
    assert rule.points[0] == pytest.approx([1.0 / 3.0, 1.0 / 3.0])
    assert rule.weights[0] == pytest.approx(0.5)
    assert rule.integrate(rule.points[:, 0]) == pytest.approx(1.0 / 6.0)


def test_degree_two_integrates_x_squared():
    rule = quadrature_rule(Domain.TRIANGLE, 2)
    assert rule.integrate(rule.points[:, 0] ** 2) == pytest.approx(1.0 / 12.0, rel=1e-14)


@pytest.mark.parametrize("degree", [0, 1, 3, 6, 11, 25, 30])
def test_triangle_monomials_exact(degree):
    rule = quadrature_rule(Domain.TRIANGLE, degree)
    x, y = rule.points[:, 0], rule.points[:, 1]
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    assert (rule.weights > 0).all()
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            assert rule.integrate(x**a * y**b) == pytest.approx(triangle_monomial(a, b), rel=1e-12)


@pytest.mark.parametrize("k", [0, 1, 4, 9])
def test_segment_gauss_exactness(k):
    rule = quadrature_rule(Domain.SEGMENT, 2 * k + 1)
    assert len(rule) == k + 1
    assert rule.weights.sum() == pytest.approx(1.0, rel=1e-14)
    assert rule.integrate(rule.points ** (2 * k + 1)) == pytest.approx(1.0 / (2 * k + 2), rel=1e-13)


def test_rules_are_cached_and_read_only():
    rule = quadrature_rule(Domain.TRIANGLE, 4)
    assert quadrature_rule("triangle", 4) is rule
    with pytest.raises(ValueError):
        rule.weights[0] = 1.0


def test_degree_above_maximum():
    with pytest.raises(QuadratureError) as info:
        quadrature_rule(Domain.TRIANGLE, 1000)
    assert info.value.requested == 1000


def test_negative_degree():
    with pytest.raises(ValueError):
        quadrature_rule(Domain.SEGMENT, -1)


def test_integrate_vector_values():
    rule = quadrature_rule(Domain.TRIANGLE, 2)
    values = np.column_stack([np.ones(len(rule)), rule.points[:, 1]])
    assert rule.integrate(values) == pytest.approx([0.5, 1.0 / 6.0])
