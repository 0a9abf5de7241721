from fractions import Fraction
from itertools import product as iproduct
from math import comb, exp, sqrt

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from pinchcheck.reference import (
    SpectrumTable,
    alpha_forms,
    bounds,
    c1_constant,
    pinching_exponents,
    point_spectrum,
    product_spectrum,
    sphere_function_spectrum,
    sphere_one_form_hodge_spectrum,
)


def _harmonic_count_bruteforce(n, k):
    # homogeneous polynomials of degree k in n+1 variables minus those of degree k-2
    def hom(d):
        return 0 if d < 0 else sum(1 for e in iproduct(range(d + 1), repeat=n + 1) if sum(e) == d)
    return hom(k) - hom(k - 2)


class TestSphereTables:
    def test_two_sphere(self):
        t = sphere_function_spectrum(2, 1.0, kmax=3)
        assert t.eigenvalues == (0.0, 2.0, 6.0, 12.0)
        assert t.multiplicities == (1, 3, 5, 7)
        assert_allclose(t.expanded(9), [0, 2, 2, 2, 6, 6, 6, 6, 6])

    @pytest.mark.parametrize("n", [1, 2, 3, 4, 6])
    def test_multiplicities_bruteforce(self, n):
        t = sphere_function_spectrum(n, 1.0, kmax=4)
        assert t.multiplicities == tuple(_harmonic_count_bruteforce(n, k) for k in range(5))

    def test_radius_scaling(self):
        a = sphere_function_spectrum(3, 1.0)
        b = sphere_function_spectrum(3, 0.5)
        assert_allclose(np.array(b.eigenvalues), 4 * np.array(a.eigenvalues))

    def test_one_forms_two_sphere(self):
        t = sphere_one_form_hodge_spectrum()
        assert t.eigenvalues[:2] == (2.0, 6.0)
        assert t.multiplicities[:2] == (6, 10)

    def test_table_validation(self):
        with pytest.raises(ValueError):
            SpectrumTable((1.0, 1.0), (1, 1))
        with pytest.raises(ValueError):
            SpectrumTable((1.0,), (0,))


class TestProductSpectrum:
    def test_against_explicit_sum(self):
        a = sphere_function_spectrum(2, 1.0, kmax=6)
        b = sphere_function_spectrum(3, sqrt(2 / 3), kmax=6)
        got = product_spectrum(a, b)
        brute = np.sort(np.add.outer(a.expanded(), b.expanded()).ravel())
        brute = brute[brute < got.ceiling]
        assert_allclose(got.expanded(), brute, rtol=1e-12)

    def test_s2xs2(self):
        t = product_spectrum(sphere_function_spectrum(2), sphere_function_spectrum(2))
        assert t.eigenvalues[:3] == (0.0, 2.0, 4.0)
        assert t.multiplicities[:3] == (1, 6, 9)

    def test_point_is_neutral(self):
        a = sphere_function_spectrum(2)
        t = product_spectrum(a, point_spectrum())
        assert t.eigenvalues == a.eigenvalues[:len(t.eigenvalues)]


class TestBounds:
    def test_values_n7_p3(self):
        b = bounds(7, 3)
        assert_allclose(b.lichnerowicz, 7 * 3 / 6)
        assert b.grosjean == 4.0
        assert b.kahler == 12.0
        assert_allclose(b.quaternionic, 22 / 15 * 6)
        assert b.flags["form_degree_in_range"]
        assert not b.flags["kahler_dimension_even"]

    def test_s2xs2(self):
        b = bounds(4, 2)
        assert b.grosjean == 2.0
        assert_allclose(b.lichnerowicz, 4 / 3)
        assert b.kahler == 6.0
        assert b.flags["quaternionic_dimension_multiple_of_4"]

    @given(st.integers(3, 40), st.data())
    def test_parallel_form_bound_improves_floor(self, n, data):
        p = data.draw(st.integers(1, n - 2))
        b = bounds(n, p)
        assert b.grosjean >= b.lichnerowicz - 1e-12
        assert_allclose(b.grosjean - b.lichnerowicz, p / (n - 1))

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            bounds(1, 0)


def test_c1_constant():
    assert_allclose(c1_constant(2, 0.0, 1.0), exp(-2))
    assert_allclose(c1_constant(3, 1.0, 2.0), 1 / (2 * 4 * exp(1 + sqrt(1 + 32))))
    assert c1_constant(7, 0.5, 3.0) < c1_constant(7, 0.0, 3.0)
    with pytest.raises(ValueError):
        c1_constant(3, -1.0, 1.0)


class TestExponents:
    def test_exact_ladder(self):
        e = pinching_exponents(0.5, 5).exponents
        assert e["eta0"] == Fraction(1, 12000 * 125)
        assert e["eta1"] == e["eta0"] / 26
        assert e["eta2"] == e["eta1"] / 78
        assert e["L"] == e["eta2"] / 150
        assert e["alpha_rate"] == e["L"] / (156 * 5)
        assert e["pythagorean_rate"] == 2 * e["alpha_rate"]

    def test_values_do_not_underflow(self):
        r = pinching_exponents(1e-300, 7)
        assert 0 < r.eta0 < 1
        assert 0 < r.alpha_rate < 1
        assert r.eta0 < r.eta1 < r.eta2 < r.L < r.alpha_rate

    def test_range_flag_and_errors(self):
        assert not pinching_exponents(0.1, 4).in_stated_range
        assert pinching_exponents(0.1, 5).in_stated_range
        assert pinching_exponents(1.0, 5).eta0 == 1.0
        for bad in (0.0, -1.0, 1.5):
            with pytest.raises(ValueError):
                pinching_exponents(bad, 5)

    def test_serializable(self):
        d = pinching_exponents(0.01, 5).to_dict()
        assert d["exponents"]["eta1"] == str(Fraction(1, 12000 * 125 * 26))


@given(st.integers(0, 20), st.data())
def test_alpha_forms(n, data):
    p = data.draw(st.integers(0, n))
    assert alpha_forms(n, p) == comb(n, p) == alpha_forms(n, n - p)
