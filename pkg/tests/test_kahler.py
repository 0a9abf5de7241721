"""Almost-Kähler defects, low-mode projection and the improved eigenvalue bound."""

from math import sqrt

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pinchcheck.kahler import (
    almost_kahler_defect,
    eigenform_gram_diagnostic,
    kahler_candidate,
    lemma_pb4_check,
    lemma_pb4_sweep,
    normalize_kahler,
    spectral_project_low_modes,
    top_power_stats,
    verify_kahler_bound,
)
from pinchcheck.manifolds import product, sample_sphere
from pinchcheck.operators import FormField, assemble_connection_laplacian, lp_norm
from pinchcheck.spectral import lowest_eigenpairs

R = 1 / sqrt(3)


@pytest.fixture(scope="module")
def kp():
    return product(sample_sphere(2, R, 30, 0, "lattice"), sample_sphere(2, R, 30, 1, "lattice"))


@pytest.fixture(scope="module")
def op2(kp):
    return assemble_connection_laplacian(kp, 2)


def _area_forms(M):
    a = np.zeros((M.size, 6))
    a[:, 0] = 1.0  # e1 ^ e2
    b = np.zeros((M.size, 6))
    b[:, 5] = 1.0  # e3 ^ e4
    return FormField(M, 2, a), FormField(M, 2, b)


class TestDefects:
    def test_product_kahler_form(self, kp, op2):
        a, b = _area_forms(kp)
        grad, j = almost_kahler_defect(kp, a + b, op2)
        assert grad < 1e-8
        assert j < 1e-12

    def test_single_factor_is_not_kahler(self, kp, op2):
        a, _ = _area_forms(kp)
        _, j = almost_kahler_defect(kp, a, op2)
        # rescaled to ||w||^2 = 2 the form is sqrt(2) e1^e2, so J^2 + Id = diag(-1, -1, 1, 1)
        # with Frobenius norm 2; divided by n/2 = 2 this gives 1
        assert_allclose(j, 1.0)

    def test_scale_invariant(self, kp, op2):
        a, b = _area_forms(kp)
        w = a + 0.3 * b
        d1 = almost_kahler_defect(kp, w, op2)
        d2 = almost_kahler_defect(kp, w * 7.5, op2)
        assert_allclose(d1, d2, rtol=1e-10, atol=1e-14)

    def test_errors(self, kp, op2):
        with pytest.raises(ValueError):
            almost_kahler_defect(kp, FormField(kp, 2, np.zeros((kp.size, 6))), op2)
        with pytest.raises(ValueError):
            almost_kahler_defect(kp, FormField(kp, 1, np.ones((kp.size, 4))))

    def test_normalization(self, kp):
        a, _ = _area_forms(kp)
        assert_allclose(lp_norm(kp, normalize_kahler(kp, a * 0.1), 2) ** 2, 2.0)


class TestProjection:
    def test_idempotent_and_orthogonal(self, kp, op2):
        spec = lowest_eigenpairs(op2, 12)
        w = FormField.from_vector(kp, 2, np.random.default_rng(0).standard_normal(kp.size * 6))
        p1 = spectral_project_low_modes(kp, w, 0.5, operator=op2, spectrum=spec)
        p2 = spectral_project_low_modes(kp, p1.omega_alpha, 0.5, operator=op2, spectrum=spec)
        assert_allclose(p2.omega_alpha.coeffs, p1.omega_alpha.coeffs, atol=1e-10)
        assert abs(p1.omega_alpha.vector @ p1.omega_beta.vector) < 1e-8
        assert p1.modes == 2

    def test_negative_cutoff_and_empty(self, kp, op2):
        a, _ = _area_forms(kp)
        spec = lowest_eigenpairs(op2, 4)
        with pytest.raises(ValueError):
            spectral_project_low_modes(kp, a, -1.0, operator=op2)
        shifted = type(spec)(spec.eigenvalues + 5.0, spec.eigenvectors, spec.residuals)
        with pytest.raises(ValueError):
            spectral_project_low_modes(kp, a, 1.0, operator=op2, spectrum=shifted)


def test_top_power(kp):
    a, b = _area_forms(kp)
    st = top_power_stats(kp, a + b)
    # normalized to ||w||^2 = 2 the form is vol1 + vol2, whose square is 2 vol
    assert_allclose(st["min_pointwise"], 2.0)
    assert st["defect"] < 1e-12
    assert top_power_stats(kp, a)["min_pointwise"] == 0.0
    odd = sample_sphere(3, 1.0, 20, 0)
    with pytest.raises(ValueError):
        top_power_stats(odd, FormField(odd, 2, np.ones((20, 3))))


def test_candidate_finds_sum_of_areas(kp):
    a, b = _area_forms(kp)
    w, c = kahler_candidate(kp, [a * (1 / lp_norm(kp, a)), b * (1 / lp_norm(kp, b))])
    assert_allclose(np.abs(c), [1 / sqrt(2)] * 2, atol=1e-4)


def test_verify_bound_equality_case(kp):
    rep = verify_kahler_bound(kp)
    assert 5.4 <= rep.lambda1 <= 6.6
    assert rep.bound == 6.0
    assert rep.j_defect <= 0.1 and rep.grad_defect <= 0.1
    assert rep.top_power_stats["defect"] <= 0.3
    assert rep.even_dim_ok
    d = rep.to_dict()
    assert "delta_at_floor" in d["meta"]


def test_verify_bound_preconditions():
    M = product(sample_sphere(2, 1.0, 12, 0), sample_sphere(2, 1.0, 12, 1))
    with pytest.raises(ValueError):
        verify_kahler_bound(M)  # Ric = 1 < n - 1
    odd = sample_sphere(3, 1.0, 400, 0, "lattice")
    rep = verify_kahler_bound(odd)
    assert not rep.even_dim_ok and rep.j_defect is None


def test_gram_diagnostic_pigeonhole(kp, op2):
    G = eigenform_gram_diagnostic(kp, 2, 7, operator=op2)
    # seven unit forms in a six-dimensional fibre cannot be pointwise orthonormal
    assert G.shape == (7, 7)
    assert np.max(np.diag(G)) > 0.1 or np.max(G - np.diag(np.diag(G))) > 0.1
    with pytest.raises(ValueError):
        eigenform_gram_diagnostic(kp, 2, 8, operator=op2)


def test_pb4_single_and_sweep(kp, op2):
    spec = lowest_eigenpairs(op2, 16)
    a, b = _area_forms(kp)
    row = lemma_pb4_check(kp, a + b, spec, op2)
    assert row["hypotheses"] and row["conclusions"]
    bad = lemma_pb4_check(kp, a, spec, op2)
    assert not bad["hypotheses"]
    sweep = lemma_pb4_sweep(kp, trials=20, operator=op2)
    assert sweep["hypotheses_held"] >= 1
    assert sweep["all_pass"]


def test_gram_diagnostic_sphere_one_forms():
    # every 1-form on S^2 vanishes somewhere, so ||  |w|^2 - 1 ||_1 stays bounded away from 0
    S = sample_sphere(2, 1.0, 600, 0, "lattice")
    G = eigenform_gram_diagnostic(S, 1, 3)
    assert np.all(np.diag(G) > 0.2)
    # three forms in a two-dimensional fibre: some entry exceeds 1/3
    assert G.max() > 1 / 3
    assert_allclose(eigenform_gram_diagnostic(S, 1, 1), G[:1, :1], atol=1e-6)
