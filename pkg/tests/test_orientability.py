"""Determinant-line orientability detector and the V and F constructions."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from pinchcheck.harness import aligned_bundle, low_eigenforms
from pinchcheck.manifolds import product, quotient_example, sample_sphere
from pinchcheck.operators import FormField, assemble_det_line_laplacian
from pinchcheck.orientability import build_F, build_V, detect_orientability, select_xi, switched_manifold
from pinchcheck.spectral import lowest_eigenpairs


@pytest.fixture(scope="module")
def s2xs2():
    return product(sample_sphere(2, 1.0, 30, 0, "lattice"), sample_sphere(2, 1.0, 30, 1, "lattice"))


@pytest.fixture(scope="module")
def s2():
    return sample_sphere(2, 1.0, 500, 0, "lattice")


def test_product_is_orientable(s2xs2):
    rep = detect_orientability(s2xs2)
    assert rep.orientable
    assert rep.lambda1 <= 0.05
    assert rep.matches_ground_truth
    assert_allclose(rep.threshold, 4 * 1 / 3)


def test_quotient_is_unorientable():
    Q = quotient_example(3, 7, 600, 0, factor_sizes=(60, 20))
    rep = detect_orientability(Q)
    assert not rep.orientable
    assert rep.lambda1 > rep.threshold - rep.margin
    assert rep.matches_ground_truth
    assert not rep.c1_certifies


def test_switching_invariance(s2):
    base = lowest_eigenpairs(assemble_det_line_laplacian(s2), 3).eigenvalues
    flip = np.random.default_rng(0).random(s2.size) < 0.5
    S = switched_manifold(s2, flip)
    S.validate()
    moved = lowest_eigenpairs(assemble_det_line_laplacian(S), 3).eigenvalues
    assert_allclose(moved, base, atol=1e-9)
    assert detect_orientability(S).orientable
    with pytest.raises(ValueError):
        switched_manifold(product(s2, s2), flip)


def test_spanning_tree_flip_conjugates_operator(s2):
    # flipping a set of vertices is a diagonal sign conjugation of the signed Laplacian
    flip = np.zeros(s2.size, dtype=bool)
    flip[::3] = True
    A = assemble_det_line_laplacian(s2).to_dense()
    B = assemble_det_line_laplacian(switched_manifold(s2, flip)).to_dense()
    D = np.where(flip, -1.0, 1.0)
    assert_allclose(B, D[:, None] * A * D[None, :], atol=1e-12)


class TestV:
    def test_orientable_product(self, s2xs2):
        bundle, omega = aligned_bundle(s2xs2, 2)
        res = build_V(s2xs2, bundle, omega)
        assert abs(res.norm_sq - 1.0) <= 0.1
        assert res.energy <= 0.1

    def test_zero_form_gives_zero(self, s2xs2):
        bundle, omega = aligned_bundle(s2xs2, 2)
        res = build_V(s2xs2, bundle, omega * 0.0)
        assert res.norm_sq == 0.0

    def test_alternating_in_functions(self, s2xs2):
        bundle, omega = aligned_bundle(s2xs2, 2)
        v = build_V(s2xs2, bundle, omega).V.coeffs
        swapped = bundle.subset([1, 0, 2])
        assert_allclose(build_V(s2xs2, swapped, omega).V.coeffs, -v, atol=1e-12)

    def test_count_mismatch(self, s2xs2):
        bundle, omega = aligned_bundle(s2xs2, 2)
        with pytest.raises(ValueError):
            build_V(s2xs2, bundle.subset([0, 1]), omega)


class TestF:
    def test_product_statistics(self, s2xs2):
        bundle, _ = aligned_bundle(s2xs2, 2)
        _, forms, _ = low_eigenforms(s2xs2, 2, count=4)
        sub = bundle.subset([0, 1])
        xi = select_xi(s2xs2, sub, forms)
        res = build_F(s2xs2, sub, xi)
        assert res.norm_defect <= 0.2
        assert res.energy_defect <= 0.2
        assert res.max_overlap <= 0.2
        assert res.minmax is not None and res.minmax <= 2 + 0.4

    def test_zero_xi(self, s2xs2):
        bundle, _ = aligned_bundle(s2xs2, 2)
        sub = bundle.subset([0, 1])
        res = build_F(s2xs2, sub, FormField(s2xs2, 2, np.zeros((s2xs2.size, 6))))
        assert res.norm_sq == 0.0 and res.minmax is None

    def test_select_xi_beats_each_candidate(self, s2xs2):
        bundle, _ = aligned_bundle(s2xs2, 2)
        _, forms, _ = low_eigenforms(s2xs2, 2, count=4)
        sub = bundle.subset([0, 1])
        best = build_F(s2xs2, sub, select_xi(s2xs2, sub, forms)).norm_sq
        for xi in forms:
            assert best >= build_F(s2xs2, sub, xi).norm_sq - 1e-10
