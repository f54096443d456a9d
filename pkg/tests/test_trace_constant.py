import json
import math

import numpy as np
import pytest

from tracelab.trace_constant import (ThresholdSpec, closed_form_p2,
                                     critical_exponent, halfspace_oracle,
                                     sphere_area, threshold)


def test_sphere_areas():
    assert sphere_area(1) == pytest.approx(2 * math.pi)
    assert sphere_area(2) == pytest.approx(4 * math.pi)
    assert sphere_area(0) == pytest.approx(2.0)


def test_closed_form_values():
    # K(3,2) = sqrt(pi): direct evaluation of the half-space extremal
    # ((1+t)^2 + |y|^2)^(-1/2) gives grad integral pi and trace integral pi
    assert closed_form_p2(3) == pytest.approx(math.sqrt(math.pi), rel=1e-14)
    # K(4,2) = (2 pi^2)^(1/3)
    assert closed_form_p2(4) == pytest.approx((2 * math.pi ** 2) ** (1 / 3),
                                              rel=1e-14)
    assert closed_form_p2(5) > 0
    with pytest.raises(ValueError):
        closed_form_p2(2)


@pytest.fixture(scope="module")
def oracle_32():
    return halfspace_oracle(3, 2.0)


def test_oracle_matches_escobar_closed_form(oracle_32):
    closed = closed_form_p2(3)
    assert abs(oracle_32.value - closed) / closed < 0.02


def test_oracle_truncation_self_consistency(oracle_32):
    assert oracle_32.truncation_sensitivity < 0.01
    assert oracle_32.converged


def test_oracle_rejects_bad_p():
    with pytest.raises(ValueError):
        halfspace_oracle(3, 3.5)
    with pytest.raises(ValueError):
        halfspace_oracle(3, 1.0)


def test_oracle_cache_roundtrip(tmp_path, oracle_32):
    cache = tmp_path / "k.json"
    first = halfspace_oracle(3, 2.0, cache_path=str(cache))
    assert cache.exists()
    doc = json.loads(cache.read_text())
    assert len(doc) == 1
    again = halfspace_oracle(3, 2.0, cache_path=str(cache))
    assert again.value == first.value
    assert first.value == oracle_32.value


def test_threshold_arithmetic():
    t1 = threshold(3, 2.0, 1, K_estimate=1.7)
    assert t1.threshold == pytest.approx(1.7)
    t4 = threshold(3, 2.0, 4, K_estimate=1.7)
    # q = 4, exponent 1 - p/q = 1/2, so m = 4 doubles the threshold
    assert t4.threshold == pytest.approx(2 * 1.7)
    assert t4.q == 4.0
    with pytest.raises(ValueError):
        threshold(3, 2.0, 0)


def test_threshold_strictly_increasing_in_m():
    specs = [threshold(3, 2.0, m, K_estimate=1.7) for m in range(1, 6)]
    vals = [s.threshold for s in specs]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_threshold_subadditivity():
    # a^(p/q) + b^(p/q) > (a+b)^(p/q): splitting mass across orbits is
    # never cheaper than the combined threshold suggests
    rng = np.random.default_rng(3)
    for _ in range(20):
        m1 = int(rng.integers(1, 10))
        m2 = int(rng.integers(1, 10))
        t1 = threshold(3, 2.0, m1, K_estimate=1.0).threshold
        t2 = threshold(3, 2.0, m2, K_estimate=1.0).threshold
        t12 = threshold(3, 2.0, m1 + m2, K_estimate=1.0).threshold
        assert t12 < t1 + t2


def test_threshold_auto_method():
    spec = threshold(3, 2.0, 2)
    assert spec.method == "closed_form"
    assert spec.K_estimate == pytest.approx(math.sqrt(math.pi))


def test_critical_exponent():
    assert critical_exponent(3, 2.0) == 4.0
    assert critical_exponent(2, 1.5) == 3.0


def test_threshold_spec_rejects_nonpositive_K():
    with pytest.raises(ValueError):
        ThresholdSpec(n=3, p=2.0, q=4.0, K_estimate=0.0, m=2, threshold=0.0,
                      method="oracle")


@pytest.mark.slow
def test_oracle_general_p_runs():
    res = halfspace_oracle(2, 1.5, resolution=16, truncation_radius=10.0)
    assert res.value > 0
    assert res.converged
