import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from pinchcheck.spectral import (
    ConvergenceError,
    Spectrum,
    clusters,
    lowest_eigenpairs,
    minmax_bound,
    rayleigh,
    spectrum_to_csv,
)


def _path_graph(n):
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    return sp.diags([main, -np.ones(n - 1), -np.ones(n - 1)], [0, 1, -1], format="csr")


def test_diagonal_matrix():
    d = np.arange(20, 0, -1, dtype=float)
    spec = lowest_eigenpairs(np.diag(d), 4)
    assert_allclose(spec.eigenvalues, [1, 2, 3, 4])


def test_path_graph_lanczos_matches_closed_form():
    n = 800  # above the dense cutoff, so the Lanczos path runs
    spec = lowest_eigenpairs(_path_graph(n), 6, seed=3)
    exact = 2 - 2 * np.cos(np.pi * np.arange(6) / n)
    assert_allclose(spec.eigenvalues, exact, atol=1e-9)
    assert np.all(spec.residuals < 1e-7)
    V = spec.eigenvectors
    assert_allclose(V.T @ V, np.eye(6), atol=1e-8)


def test_random_sparse_against_dense():
    rng = np.random.default_rng(0)
    A = sp.random(300, 300, density=0.05, random_state=1)
    A = A + A.T + sp.diags(rng.uniform(0, 1, 300))
    ref = np.linalg.eigvalsh(A.toarray())[:5]
    got = lowest_eigenpairs(A, 5, dense_limit=10).eigenvalues
    assert_allclose(got, ref, atol=1e-7)


def test_seed_independence():
    A = _path_graph(700)
    a = lowest_eigenpairs(A, 3, seed=0).eigenvalues
    b = lowest_eigenpairs(A, 3, seed=99).eigenvalues
    assert_allclose(a, b, atol=1e-10)


def test_convergence_error_carries_partial():
    with pytest.raises(ConvergenceError) as info:
        lowest_eigenpairs(_path_graph(2000), 4, tol=1e-14, max_restarts=1, dense_limit=10)
    assert isinstance(info.value.partial, Spectrum)


def test_rayleigh_and_minmax():
    A = np.diag([1.0, 2.0, 5.0])
    assert_allclose(rayleigh(A, [0, 1, 0]), 2.0)
    assert_allclose(minmax_bound(A, np.eye(3)[:, :2]), 2.0)
    assert minmax_bound(A, np.array([[1, 0], [0, 1], [1, 1.0]])) >= 2.0
    with pytest.raises(ValueError):
        rayleigh(A, np.zeros(3))
    with pytest.raises(ValueError):
        minmax_bound(A, np.array([[1, 2], [0, 0], [0, 0.0]]))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_minmax_bounds_eigenvalue_from_above(seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((12, 12))
    A = B @ B.T
    ev = np.linalg.eigvalsh(A)
    k = int(rng.integers(1, 6))
    S = rng.standard_normal((12, k))
    assert minmax_bound(A, S) >= ev[k - 1] - 1e-9


def test_clusters():
    assert clusters([0.0, 1.0, 1.0 + 1e-9, 2.0, 2.0, 2.0]) == [[0], [1, 2], [3, 4, 5]]
    assert clusters([]) == []


def test_inertia_matches_eigenvalue_count():
    # Sylvester: the number of eigenvalues below sigma equals the negative inertia of A - sigma I
    A = _path_graph(120).toarray()
    spec = lowest_eigenpairs(A, 10)
    sigma = 0.5 * (spec.eigenvalues[6] + spec.eigenvalues[7])
    _, D, _ = __import__("scipy.linalg", fromlist=["ldl"]).ldl(A - sigma * np.eye(120))
    assert int(np.sum(np.linalg.eigvalsh(D) < 0)) == 7


def test_csv_format():
    spec = lowest_eigenpairs(np.diag([3.0, 1.0, 2.0]), 3)
    lines = spectrum_to_csv(spec).splitlines()
    assert lines[0] == "index,eigenvalue,residual"
    assert len(lines) == 4
    assert_allclose(float(lines[1].split(",")[1]), 1.0)
