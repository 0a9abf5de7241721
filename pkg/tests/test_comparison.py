"""Comparison toolkit: cosine comparison, elementary inequalities, segment and flow averages."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from pinchcheck.comparison import (
    SampledCurveFunction,
    cosi_grid_sweep,
    cosi_inequalities,
    field_evaluator,
    geodesic_flow_average,
    run_toolkit_suite,
    segment_inequality_estimate,
    trif_bound_check,
)
from pinchcheck.manifolds import product, sample_sphere


@pytest.fixture(scope="module")
def s2():
    return sample_sphere(2, 1.0, 2000, 0)


class TestTrif:
    @pytest.mark.parametrize("r", [0.0, 0.5, 1.0, 2.0])
    def test_exact_solution_has_zero_defect(self, r):
        u = SampledCurveFunction.from_function(lambda t: 0.7 * np.cos(r * t) + (0.2 * t if r == 0 else 0.2 * np.sin(r * t) / r), 2.0)
        res = trif_bound_check(u, r)
        assert res.satisfied
        assert res.quadrature_epsilon < 1e-5

    @settings(max_examples=20, deadline=None)
    @given(r=st.floats(0.0, 3.0), amp=st.floats(-0.3, 0.3), freq=st.floats(0.1, 4.0))
    def test_perturbed_solutions_satisfy_bound(self, r, amp, freq):
        u = SampledCurveFunction.from_function(lambda t: np.cos(r * t) + amp * np.sin(freq * t) ** 2, 1.5)
        assert trif_bound_check(u, r).satisfied

    def test_claimed_epsilon_too_small_fails(self):
        u = SampledCurveFunction.from_function(lambda t: np.cos(t) + 0.3 * t ** 3, 2.0)
        assert trif_bound_check(u, 1.0).satisfied
        assert not trif_bound_check(u, 1.0, epsilon=1e-6).satisfied

    def test_input_validation(self):
        with pytest.raises(ValueError):
            SampledCurveFunction(np.array([0.0, 1.0, 0.5]), np.zeros(3))
        with pytest.raises(ValueError):
            SampledCurveFunction(np.array([0.1, 1.0]), np.zeros(2))
        u = SampledCurveFunction.from_function(np.cos, 1.0)
        with pytest.raises(ValueError):
            trif_bound_check(u, -1.0)


class TestCosi:
    def test_grid_sweep_has_no_violations(self):
        out = cosi_grid_sweep(spacing=5e-3)
        assert out["pairs"] == out["nodes"] ** 2
        for key in ("quadratic_lower", "quartic_upper", "ninth_upper", "separation"):
            assert out[f"{key}_violations"] == 0

    @given(st.floats(-10, 10), st.floats(0, np.pi), st.floats(0, np.pi))
    def test_inequalities_hold(self, t, t1, t2):
        assert cosi_inequalities(t, t1, t2).all()

    def test_domains(self):
        assert cosi_inequalities(4.0).ninth_upper is None
        assert cosi_inequalities(1.0).separation is None
        with pytest.raises(ValueError):
            cosi_inequalities(1.0, 0.5)
        with pytest.raises(ValueError):
            cosi_inequalities(1.0, 0.5, 4.0)

    def test_ninth_bound_restricted_to_half_period(self):
        assert cosi_inequalities(np.pi).ninth_upper
        # outside [-pi, pi] the bound genuinely fails, so it is not evaluated there
        assert np.cos(2 * np.pi) > 1 - (2 * np.pi) ** 2 / 9
        assert cosi_inequalities(2 * np.pi).ninth_upper is None


def test_segment_constant_ratio_is_one(s2):
    est = segment_inequality_estimate(s2, lambda Y: np.ones(len(Y)), n_pairs=300)
    assert_allclose(est.ratio, 1.0, atol=1e-12)


def test_segment_ratio_stable_across_seeds(s2):
    h = lambda Y: (Y[:, 2] > 0.5).astype(float)  # noqa: E731
    ests = [segment_inequality_estimate(s2, h, n_pairs=1500, seed=s) for s in range(3)]
    for a in ests:
        for b in ests:
            assert abs(a.ratio - b.ratio) <= 3 * np.hypot(a.ratio_sigma, b.ratio_sigma) + 1e-12
    with pytest.raises(ValueError):
        segment_inequality_estimate(s2, -np.ones(s2.size))


def test_flow_average_matches_volume_average(s2):
    res = geodesic_flow_average(s2, lambda Y: Y[:, 0] ** 2, 1.3, n_dirs=3000)
    assert res.within_3_sigma
    assert_allclose(res.volume_avg, 1 / 3, atol=0.03)
    with pytest.raises(ValueError):
        geodesic_flow_average(s2, lambda Y: Y[:, 0], 0.0)


def test_field_evaluator_nearest_sample(s2):
    ev = field_evaluator(s2, np.arange(s2.size, dtype=float))
    assert_allclose(ev(s2.points[[3, 17]]), [3.0, 17.0])
    with pytest.raises(ValueError):
        field_evaluator(s2, np.zeros(5))


@pytest.mark.parametrize("M", [
    sample_sphere(2, 1.0, 2000, 0),
    product(sample_sphere(2, 1.0, 40, 0, "lattice"), sample_sphere(2, 1.0, 40, 1, "lattice")),
], ids=["sphere", "product"])
def test_full_suite_passes(M):
    out = run_toolkit_suite(M, n_pairs=1000, n_dirs=2000)
    assert out["passed"]
    assert set(out) >= {"trif", "cosi", "segment", "flow"}
