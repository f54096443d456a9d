import math

import numpy as np
import pytest

from tracelab.quadrature import (cell_rule, exactness_error, facet_rule,
                                 reference_monomial_integral, segment_gauss3,
                                 tet_deg2, triangle_deg2, triangle_deg4)


@pytest.mark.parametrize("rule,degree", [
    (segment_gauss3(), 5),
    (triangle_deg2(), 2),
    (triangle_deg4(), 4),
    (tet_deg2(), 2),
])
def test_monomial_exactness(rule, degree):
    assert exactness_error(rule, degree) < 1e-14


@pytest.mark.parametrize("rule", [segment_gauss3(), triangle_deg2(),
                                  triangle_deg4(), tet_deg2()])
def test_weights_positive_and_sum_to_reference_measure(rule):
    assert np.all(rule.weights > 0)
    assert abs(rule.weights.sum() - 1.0 / math.factorial(rule.dim)) < 1e-15


def test_barycentric_points_lie_in_simplex():
    for rule in (segment_gauss3(), triangle_deg4(), tet_deg2()):
        assert np.all(rule.points >= 0)
        assert np.allclose(rule.points.sum(axis=1), 1.0)


def test_reference_monomial_values():
    # 1D: int_0^1 x dx and 2D: int lambda_1 over the reference triangle
    assert reference_monomial_integral([0, 1]) == pytest.approx(0.5)
    assert reference_monomial_integral([1, 0, 0]) == pytest.approx(1.0 / 6.0)


def test_deployed_rules_meet_minimum_degree():
    # every rule the mesh/functional layer uses is at least degree 2
    for dim in (2, 3):
        assert cell_rule(dim).degree >= 2
        assert facet_rule(dim).degree >= 2
