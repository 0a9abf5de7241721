"""Pinching pipeline: eigenvalue checks, eigenfunction bundles, sphere maps and the GH map."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import special_ortho_group

from pinchcheck.harness import (
    aligned_bundle,
    almost_cosine_residual,
    bochner_reilly_residual,
    build_gh_map,
    build_sphere_map,
    choose_function,
    default_threshold,
    eigenfunction_bundle,
    gram_defect,
    level_set_and_projection,
    low_eigenforms,
    run_pinching,
    verify_main1,
)
from pinchcheck.manifolds import product, sample_sphere
from pinchcheck.operators import FormField, lp_norm


@pytest.fixture(scope="module")
def s2xs2():
    return product(sample_sphere(2, 1.0, 30, 0, "lattice"), sample_sphere(2, 1.0, 30, 1, "lattice"))


@pytest.fixture(scope="module")
def aligned(s2xs2):
    return aligned_bundle(s2xs2, 2)


@pytest.fixture(scope="module")
def s2_dense():
    return sample_sphere(2, 1.0, 3000, 0, "iid")


class TestMain1:
    def test_equality_case(self, s2xs2):
        r = verify_main1(s2xs2, 2)
        assert 1.8 <= r.lambda1 <= 2.2
        assert r.form_lambda <= 0.1
        assert r.lichnerowicz_ok
        assert r.bounds["grosjean"] == 2.0
        assert r.dual_form_lambda == r.form_lambda

    def test_no_parallel_form_on_s4(self):
        M = sample_sphere(4, 1.0, 600, 0, "lattice")
        r = verify_main1(M, 2)
        # on 2-forms of the round S^4 the Hodge bottom 6 minus the curvature term 4 leaves 2
        assert_allclose(r.form_lambda, 2.0, rtol=0.1)
        assert_allclose(r.lambda1, 4.0, rtol=0.1)
        assert r.slack > 1.5 and r.ratio is None

    def test_ricci_precondition(self, s2xs2):
        with pytest.raises(ValueError):
            verify_main1(s2xs2, 1)
        with pytest.raises(ValueError):
            verify_main1(s2xs2, 4)


class TestBundle:
    def test_normalized_and_orthogonal(self, aligned):
        bundle, omega = aligned
        assert bundle.count == 3
        bundle.check(tol=1e-8)
        assert_allclose(lp_norm(bundle.manifold, omega, 2), 1.0)
        assert_allclose(bundle.eigenvalues, 2.0, rtol=0.1)

    def test_aligned_functions_live_on_one_factor(self, aligned):
        bundle, _ = aligned
        # functions from the S^2 factor that omega does not contain have vanishing
        # gradient along the other factor
        g = bundle.gradients
        energy = np.sum(g ** 2, axis=0)  # (k, n)
        split = np.minimum(energy[:, :2].sum(1), energy[:, 2:].sum(1)) / energy.sum(1)
        assert split.max() < 1e-6

    def test_rotation_and_subset(self, aligned):
        bundle, _ = aligned
        R = special_ortho_group.rvs(3, random_state=0)
        rot = bundle.rotated(R)
        rot.check(tol=1e-8)
        assert_allclose(rot.eigenvalues.sum(), bundle.eigenvalues.sum())
        assert_allclose(rot.values @ R.T, bundle.values, atol=1e-12)
        assert bundle.subset([0, 2]).count == 2

    def test_gram_defect_and_negative_control(self, aligned):
        bundle, _ = aligned
        good = gram_defect(bundle)
        assert good.diag_l1 < 0.05 and good.offdiag_l1 < 0.05
        M = bundle.manifold
        noise = np.random.default_rng(0).standard_normal((M.size, 3))
        noise -= noise.mean(axis=0)
        Q, _ = np.linalg.qr(noise)
        bad = bundle
        for i in range(3):
            bad = bad.replaced(i, Q[:, i], 0.0)
        assert gram_defect(bad).diag_l1 > 10 * good.diag_l1


def test_low_eigenforms_product(s2xs2):
    lam, forms, all_lam = low_eigenforms(s2xs2, 2, count=4)
    assert len(forms) == 2  # the two area forms span the parallel 2-forms
    assert lam.max() <= 0.1
    for om in forms:
        assert_allclose(lp_norm(s2xs2, om, 2), 1.0)


def test_bochner_reilly_on_parallel_form(s2xs2):
    B = s2xs2.factor_manifolds[1]
    f = B.points[s2xs2.factor_index[:, 1], 2]
    f = f / lp_norm(s2xs2, f, 2)
    # area form of the second factor: e_3 ^ e_4 is the last basis 2-form
    om = np.zeros((s2xs2.size, 6))
    om[:, 5] = 1.0
    omega = FormField(s2xs2, 2, om)
    res = bochner_reilly_residual(s2xs2, f, omega, eigenvalue=2.0)
    # eta = iota(grad f) omega is a Killing field, so both sides vanish
    assert res.residual < 0.1
    assert abs(res.rhs) < 0.1
    with pytest.raises(ValueError):
        bochner_reilly_residual(s2xs2, f, omega * 2.0)


def test_sphere_map_unit_and_errors(aligned):
    bundle, _ = aligned
    sm = build_sphere_map(bundle)
    assert_allclose(np.linalg.norm(sm.psi, axis=1), 1.0)
    assert sm.psi_sup_defect < 0.2
    with pytest.raises(ValueError):
        build_sphere_map(bundle, expected=4)
    zero = bundle.replaced(0, bundle.values[:, 0], 2.0)
    zero.values[:] = 0.0
    with pytest.raises(ValueError):
        build_sphere_map(zero)


def test_choose_function_modes(aligned):
    bundle, _ = aligned
    sm = build_sphere_map(bundle)
    f, u = choose_function(bundle, sm, "peak")
    assert_allclose(np.linalg.norm(u), 1.0)
    assert_allclose(f.max(), np.linalg.norm(sm.tilde, axis=1).max())
    f1, u1 = choose_function(bundle, sm, 1)
    assert_allclose(f1, bundle.values[:, 1])
    with pytest.raises(ValueError):
        choose_function(bundle, sm, "random")
    with pytest.raises(ValueError):
        choose_function(bundle, sm, np.zeros(3))


class TestLevelSet:
    def test_height_function_is_cosine(self, s2_dense):
        f = s2_dense.points[:, 2]
        level = level_set_and_projection(s2_dense, f, default_threshold(f))
        assert level.indices.size >= 1
        assert np.all(np.abs(f[level.indices] - 1) <= level.threshold)
        assert almost_cosine_residual(s2_dense, f, level) < 0.1
        assert_allclose(almost_cosine_residual(s2_dense, f, level.indices), almost_cosine_residual(s2_dense, f, level))

    def test_negative_control(self, s2_dense):
        x, z = s2_dense.points[:, 0], s2_dense.points[:, 2]
        g = x * z
        g = g / g.max()
        level = level_set_and_projection(s2_dense, g, default_threshold(g))
        assert almost_cosine_residual(s2_dense, g, level) > 0.15

    def test_errors(self, s2_dense):
        f = s2_dense.points[:, 2]
        with pytest.raises(ValueError):
            level_set_and_projection(s2_dense, f, 0.0)
        with pytest.raises(ValueError):
            level_set_and_projection(s2_dense, 0.5 * f, 0.01)


def test_gh_map_on_product(aligned):
    bundle, _ = aligned
    gh = build_gh_map(bundle.manifold, bundle)
    assert gh.epsilon <= 0.25
    assert gh.pythagorean_residual <= 0.3
    assert gh.cosine_residual <= 0.1
    assert gh.assignment.shape == (bundle.manifold.size,)
    strict = build_gh_map(bundle.manifold, bundle, epsilon=gh.epsilon)
    assert strict.passed
    assert not build_gh_map(bundle.manifold, bundle, epsilon=0.5 * gh.epsilon).passed


def test_gh_map_rotation_invariant(aligned):
    bundle, _ = aligned
    R = special_ortho_group.rvs(3, random_state=3)
    a = build_gh_map(bundle.manifold, bundle)
    b = build_gh_map(bundle.manifold, bundle.rotated(R))
    assert_allclose(b.epsilon, a.epsilon, rtol=1e-6)
    assert_allclose(b.cosine_residual, a.cosine_residual, atol=1e-9)


def test_run_pinching_report(s2xs2):
    report, extra = run_pinching(s2xs2, 2)
    d = report.to_dict()
    assert d["delta_form"] <= 0.1
    assert d["gh_distortion"] <= 0.25
    assert 0 < d["exponents"]["eta0"] <= 1
    assert extra["bundle"].count == 3


def test_explicit_bundle_without_form(s2xs2):
    b = eigenfunction_bundle(s2xs2, 2)
    b.check(tol=1e-8)
    assert b.meta["alignment_objective"] is None
