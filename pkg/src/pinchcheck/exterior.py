"""Exact exterior algebra over an oriented n-dimensional inner-product space.

Forms of degree k are stored as coefficient vectors in the basis
``e^{i_1} ^ ... ^ e^{i_k}`` with ``i_1 < ... < i_k``, ordered by the
lexicographic rank of the multi-index.  With this basis the induced inner
product (the determinant convention) is the Euclidean dot product of the
coefficient vectors.

Internally indices are 0-based.  :class:`MultiIndex` exposes the 1-based
convention used when talking about ``e^1, ..., e^n``.

Every bilinear operation has a vectorized counterpart operating on the last
axis of an array, so the same code handles single vectors and per-point form
fields of shape ``(N, C(n, k))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb, factorial

import numpy as np

__all__ = [
    "MultiIndex",
    "KVector",
    "VectorValuedKForm",
    "AntisymMatrix",
    "basis",
    "rank_of",
    "wedge",
    "interior",
    "hodge_star",
    "wedge_arrays",
    "interior_arrays",
    "hodge_star_arrays",
    "wedge_with_basis",
    "interior_with_basis",
    "project_p1",
    "project_p2",
    "embed_q1",
    "embed_q2",
    "decompose_covariant",
    "decompose_covariant_arrays",
    "antisymmetrize_norm_identity",
    "derivation_matrix",
    "curvature_endomorphism_matrix",
    "curvature_endomorphism_constant_curvature",
    "compound_matrix",
    "compound_matrices",
    "j_map",
    "j_map_arrays",
    "jj_plus_id_norm",
    "wedge_power",
]


# ----------------------------------------------------------------------------
# Basis bookkeeping
# ----------------------------------------------------------------------------


@lru_cache(maxsize=None)
def basis(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    """Return the 0-based multi-indices of the degree-k basis, in rank order."""
    if not 0 <= k <= n:
        return ()
    return tuple(combinations(range(n), k))


@lru_cache(maxsize=None)
def _rank_table(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {idx: r for r, idx in enumerate(basis(n, k))}


def rank_of(indices: tuple[int, ...], n: int) -> int:
    """Lexicographic rank of a strictly increasing 0-based multi-index."""
    return _rank_table(n, len(indices))[tuple(indices)]


def _sort_sign(seq: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
    """Sign of the permutation sorting ``seq`` (0 when indices repeat)."""
    if len(set(seq)) != len(seq):
        return 0, ()
    arr = list(seq)
    sign = 1
    for i in range(len(arr)):
        for j in range(len(arr) - 1 - i):
            if arr[j] > arr[j + 1]:
                arr[j], arr[j + 1] = arr[j + 1], arr[j]
                sign = -sign
    return sign, tuple(arr)


@dataclass(frozen=True)
class MultiIndex:
    """Strictly increasing multi-index with entries in ``1..n``."""

    indices: tuple[int, ...]
    n: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if len(idx) > self.n:
            raise ValueError("multi-index longer than the dimension")
        if any(i < 1 or i > self.n for i in idx):
            raise ValueError("multi-index entries must lie in 1..n")
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise ValueError("multi-index must be strictly increasing")

    @property
    def degree(self) -> int:
        return len(self.indices)

    @property
    def rank(self) -> int:
        return rank_of(tuple(i - 1 for i in self.indices), self.n)

    @classmethod
    def from_rank(cls, rank: int, n: int, k: int) -> "MultiIndex":
        b = basis(n, k)
        if not 0 <= rank < len(b):
            raise ValueError(f"rank {rank} out of range for C({n},{k})")
        return cls(tuple(i + 1 for i in b[rank]), n)


# ----------------------------------------------------------------------------
# Structure tables
# ----------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _wedge_table(n: int, a: int, b: int):
    """Nonzero structure constants of ``Lambda^a x Lambda^b -> Lambda^(a+b)``.

    Returns integer arrays ``(ia, ib, out, sign)`` with
    ``e^I ^ e^J = sign * e^{I u J}``.
    """
    ia, ib, out, sg = [], [], [], []
    if a + b <= n:
        for r1, idx1 in enumerate(basis(n, a)):
            s1 = set(idx1)
            for r2, idx2 in enumerate(basis(n, b)):
                if s1.intersection(idx2):
                    continue
                sign, merged = _sort_sign(idx1 + idx2)
                ia.append(r1)
                ib.append(r2)
                out.append(rank_of(merged, n))
                sg.append(sign)
    return (
        np.asarray(ia, dtype=np.intp),
        np.asarray(ib, dtype=np.intp),
        np.asarray(out, dtype=np.intp),
        np.asarray(sg, dtype=float),
    )


@lru_cache(maxsize=None)
def wedge_with_basis(n: int, k: int) -> np.ndarray:
    """Matrices ``E[i]`` of ``omega -> e^i ^ omega`` from degree k to k+1.

    Shape ``(n, C(n,k+1), C(n,k))``.  The interior product with ``e_i`` is the
    transpose ``E[i].T`` (adjointness).
    """
    E = np.zeros((n, comb(n, k + 1) if k < n else 0, comb(n, k)))
    if k >= n:
        return E
    for r, idx in enumerate(basis(n, k)):
        for i in range(n):
            if i in idx:
                continue
            sign, merged = _sort_sign((i,) + idx)
            E[i, rank_of(merged, n), r] = sign
    E.setflags(write=False)
    return E


def interior_with_basis(n: int, k: int) -> np.ndarray:
    """Matrices of ``omega -> iota(e_i) omega`` from degree k to k-1."""
    if k == 0:
        return np.zeros((n, 0, 1))
    return np.ascontiguousarray(np.transpose(wedge_with_basis(n, k - 1), (0, 2, 1)))


@lru_cache(maxsize=None)
def _hodge_table(n: int, k: int):
    perm = np.zeros(comb(n, k), dtype=np.intp)
    signs = np.zeros(comb(n, k))
    for r, idx in enumerate(basis(n, k)):
        comp = tuple(i for i in range(n) if i not in idx)
        sign, _ = _sort_sign(idx + comp)
        perm[r] = rank_of(comp, n)
        signs[r] = sign
    return perm, signs


# ----------------------------------------------------------------------------
# Vectorized kernels (last axis holds coefficients)
# ----------------------------------------------------------------------------


def _check_len(arr: np.ndarray, n: int, k: int, name: str):
    if arr.shape[-1] != comb(n, k):
        raise ValueError(f"{name}: expected {comb(n, k)} coefficients for degree {k} in dimension {n}, got {arr.shape[-1]}")


def wedge_arrays(a: np.ndarray, b: np.ndarray, n: int, ka: int, kb: int) -> np.ndarray:
    """Wedge product of coefficient arrays, broadcasting leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_len(a, n, ka, "wedge")
    _check_len(b, n, kb, "wedge")
    if ka + kb > n:
        raise ValueError(f"wedge: degrees {ka}+{kb} exceed dimension {n}")
    ia, ib, out, sg = _wedge_table(n, ka, kb)
    lead = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    res = np.zeros(lead + (comb(n, ka + kb),))
    terms = a[..., ia] * b[..., ib] * sg
    terms = np.broadcast_to(terms, lead + (len(out),))
    # np.add.at along the last axis via a sparse scatter matrix
    scatter = np.zeros((len(out), res.shape[-1]))
    scatter[np.arange(len(out)), out] = 1.0
    res += terms @ scatter
    return res


def interior_arrays(alpha: np.ndarray, omega: np.ndarray, n: int, k: int) -> np.ndarray:
    """Interior product ``iota(alpha) omega`` for covector coefficient arrays."""
    alpha = np.asarray(alpha, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if alpha.shape[-1] != n:
        raise ValueError("interior: alpha must have n components")
    _check_len(omega, n, k, "interior")
    if k == 0:
        lead = np.broadcast_shapes(alpha.shape[:-1], omega.shape[:-1])
        return np.zeros(lead + (0,))
    interior_mats = interior_with_basis(n, k)  # (n, C(n,k-1), C(n,k))
    per_slot = np.einsum("iab,...b->...ia", interior_mats, omega)
    return np.einsum("...i,...ia->...a", alpha, per_slot)


def hodge_star_arrays(omega: np.ndarray, n: int, k: int, orientation_sign: int = 1) -> np.ndarray:
    """Hodge star of degree-k coefficient arrays."""
    omega = np.asarray(omega, dtype=float)
    _check_len(omega, n, k, "hodge_star")
    if orientation_sign not in (1, -1):
        raise ValueError("orientation_sign must be +1 or -1")
    perm, signs = _hodge_table(n, k)
    res = np.zeros(omega.shape)
    res[..., perm] = omega * signs * orientation_sign
    return res


# ----------------------------------------------------------------------------
# Value types
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class KVector:
    """Element of the k-th exterior power of an n-dimensional space."""

    dim_n: int
    degree_k: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if not 0 <= self.degree_k <= self.dim_n:
            raise ValueError(f"degree {self.degree_k} outside 0..{self.dim_n}")
        if c.size != comb(self.dim_n, self.degree_k):
            raise ValueError(
                f"expected {comb(self.dim_n, self.degree_k)} coefficients, got {c.size}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zero(cls, n: int, k: int) -> "KVector":
        return cls(n, k, np.zeros(comb(n, k)))

    @classmethod
    def basis_element(cls, n: int, indices) -> "KVector":
        """``e^{i_1} ^ ... ^ e^{i_k}`` from 1-based indices in any order."""
        idx = tuple(int(i) - 1 for i in indices)
        sign, merged = _sort_sign(idx)
        c = np.zeros(comb(n, len(idx)))
        if sign != 0:
            c[rank_of(merged, n)] = sign
        return cls(n, len(idx), c)

    def inner(self, other: "KVector") -> float:
        self._same_space(other)
        return float(self.coeffs @ other.coeffs)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def _same_space(self, other: "KVector"):
        if self.dim_n != other.dim_n or self.degree_k != other.degree_k:
            raise ValueError("KVectors live in different spaces")

    def __add__(self, other: "KVector") -> "KVector":
        self._same_space(other)
        return KVector(self.dim_n, self.degree_k, self.coeffs + other.coeffs)

    def __sub__(self, other: "KVector") -> "KVector":
        self._same_space(other)
        return KVector(self.dim_n, self.degree_k, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "KVector":
        return KVector(self.dim_n, self.degree_k, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "KVector":
        return self * -1.0


@dataclass(frozen=True)
class VectorValuedKForm:
    """Element of ``V (x) Lambda^k V``; row ``i`` is the component along ``e^i``."""

    dim_n: int
    degree_k: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.dim_n, comb(self.dim_n, self.degree_k)):
            raise ValueError(
                f"expected shape {(self.dim_n, comb(self.dim_n, self.degree_k))}, got {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other):
        return VectorValuedKForm(self.dim_n, self.degree_k, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return VectorValuedKForm(self.dim_n, self.degree_k, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return VectorValuedKForm(self.dim_n, self.degree_k, self.coeffs * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class AntisymMatrix:
    """Antisymmetric ``n x n`` matrix, checked to 1e-12 on construction."""

    dim_n: int
    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.shape != (self.dim_n, self.dim_n):
            raise ValueError("AntisymMatrix has the wrong shape")
        if np.max(np.abs(e + e.T), initial=0.0) > 1e-12:
            raise ValueError("matrix is not antisymmetric")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)


# ----------------------------------------------------------------------------
# Operations on value types
# ----------------------------------------------------------------------------


def wedge(a: KVector, b: KVector) -> KVector:
    """Exterior product; degree is the sum of the input degrees."""
    if a.dim_n != b.dim_n:
        raise ValueError("wedge: dimension mismatch")
    n = a.dim_n
    return KVector(n, a.degree_k + b.degree_k, wedge_arrays(a.coeffs, b.coeffs, n, a.degree_k, b.degree_k))


def interior(alpha: KVector, omega: KVector) -> KVector:
    """Interior product of a 1-vector into a k-vector (zero when k = 0)."""
    if alpha.dim_n != omega.dim_n:
        raise ValueError("interior: dimension mismatch")
    if alpha.degree_k != 1:
        raise ValueError("interior: alpha must have degree 1")
    n, k = omega.dim_n, omega.degree_k
    if k == 0:
        return KVector.zero(n, 0)
    return KVector(n, k - 1, interior_arrays(alpha.coeffs, omega.coeffs, n, k))


def hodge_star(omega: KVector, orientation_sign: int = 1) -> KVector:
    """Hodge star determined by ``<*w, eta> vol = w ^ eta``."""
    n, k = omega.dim_n, omega.degree_k
    return KVector(n, n - k, hodge_star_arrays(omega.coeffs, n, k, orientation_sign))


# ----------------------------------------------------------------------------
# Projections of V (x) Lambda^k and the covariant-derivative decomposition
# ----------------------------------------------------------------------------


def project_p1(T: np.ndarray, n: int, k: int) -> np.ndarray:
    """``P1(alpha (x) w) = (k+1)^{-1/2} alpha ^ w`` applied to arrays ``(..., n, C(n,k))``."""
    if k >= n:
        return np.zeros(T.shape[:-2] + (0,))
    E = wedge_with_basis(n, k)
    return np.einsum("iab,...ib->...a", E, T) / np.sqrt(k + 1)


def project_p2(T: np.ndarray, n: int, k: int) -> np.ndarray:
    """``P2(alpha (x) w) = (n-k+1)^{-1/2} iota(alpha) w``."""
    if k == 0:
        return np.zeros(T.shape[:-2] + (0,))
    interior_mats = interior_with_basis(n, k)
    return np.einsum("iab,...ib->...a", interior_mats, T) / np.sqrt(n - k + 1)


def embed_q1(zeta: np.ndarray, n: int, k: int) -> np.ndarray:
    """``Q1(zeta) = (k+1)^{-1/2} sum_i e^i (x) iota(e_i) zeta`` for zeta of degree k+1."""
    if k >= n:
        return np.zeros(zeta.shape[:-1] + (n, comb(n, k)))
    E = wedge_with_basis(n, k)
    return np.einsum("iab,...a->...ib", E, zeta) / np.sqrt(k + 1)


def embed_q2(eta: np.ndarray, n: int, k: int) -> np.ndarray:
    """``Q2(eta) = (n-k+1)^{-1/2} sum_i e^i (x) e^i ^ eta`` for eta of degree k-1."""
    if k == 0:
        return np.zeros(eta.shape[:-1] + (n, 1))
    E = wedge_with_basis(n, k - 1)
    return np.einsum("iab,...b->...ia", E, eta) / np.sqrt(n - k + 1)


def decompose_covariant_arrays(T: np.ndarray, n: int, k: int):
    """Array version of :func:`decompose_covariant` for shape ``(..., n, C(n,k))``.

    Returns ``(t_part, d_part, dstar_part)`` where ``d_part = sum_i e^i ^ T_i``
    and ``dstar_part = -sum_i iota(e_i) T_i``.
    """
    T = np.asarray(T, dtype=float)
    p1 = project_p1(T, n, k)
    p2 = project_p2(T, n, k)
    t_part = T - embed_q1(p1, n, k) - embed_q2(p2, n, k)
    d_part = np.sqrt(k + 1) * p1
    dstar_part = -np.sqrt(n - k + 1) * p2
    return t_part, d_part, dstar_part


def decompose_covariant(T: VectorValuedKForm):
    """Split ``T`` in ``V (x) Lambda^k`` into its trace-free part, ``d`` and ``d*`` parts.

    ``T = t + Q1(d)/sqrt(k+1) - Q2(d*)/sqrt(n-k+1)`` with the three summands
    mutually orthogonal, so
    ``|T|^2 = |t|^2 + |d|^2/(k+1) + |d*|^2/(n-k+1)``.

    Returns
    -------
    t_part : VectorValuedKForm
    d_part : KVector of degree k+1 (the zero vector of an empty space when k = n)
    dstar_part : KVector of degree k-1 (empty when k = 0)
    """
    n, k = T.dim_n, T.degree_k
    t, d, ds = decompose_covariant_arrays(T.coeffs, n, k)
    t_part = VectorValuedKForm(n, k, t)
    d_part = KVector(n, k + 1, d) if k < n else None
    dstar_part = KVector(n, k - 1, ds) if k > 0 else None
    return t_part, d_part, dstar_part


def antisymmetrize_norm_identity(alphas) -> tuple[float, float]:
    """Both sides of ``k |a_1^...^a_k|^2 = |sum_i (-1)^{i-1} a_i (x) a_1^..^a_i-hat^..^a_k|^2``.

    Parameters
    ----------
    alphas : sequence of k covectors (arrays of length n or degree-1 KVectors)
    """
    vecs = [np.asarray(a.coeffs if isinstance(a, KVector) else a, dtype=float) for a in alphas]
    k = len(vecs)
    if k < 1:
        raise ValueError("need at least one covector")
    n = vecs[0].size

    def wedge_all(vs):
        acc = np.ones(1)
        deg = 0
        for v in vs:
            acc = wedge_arrays(acc, v, n, deg, 1)
            deg += 1
        return acc

    lhs = k * float(np.sum(wedge_all(vecs) ** 2))
    tensor = np.zeros((n, comb(n, k - 1)))
    for i in range(k):
        rest = vecs[:i] + vecs[i + 1:]
        tensor += (-1) ** i * np.outer(vecs[i], wedge_all(rest))
    rhs = float(np.sum(tensor ** 2))
    return lhs, rhs


# ----------------------------------------------------------------------------
# Curvature endomorphism on forms
# ----------------------------------------------------------------------------


def derivation_matrix(C: np.ndarray, k: int) -> np.ndarray:
    """Extension of a covector endomorphism ``C`` to ``Lambda^k`` as a derivation.

    ``D(e^{m_1}^...^e^{m_k}) = sum_l e^{m_1}^..^(C e^{m_l})^..^e^{m_k}`` where
    ``C e^m = sum_r C[r, m] e^r``.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    B = basis(n, k)
    D = np.zeros((len(B), len(B)))
    for col, idx in enumerate(B):
        for pos, m in enumerate(idx):
            for r in range(n):
                if C[r, m] == 0.0:
                    continue
                new = idx[:pos] + (r,) + idx[pos + 1:]
                sign, merged = _sort_sign(new)
                if sign:
                    D[rank_of(merged, n), col] += sign * C[r, m]
    return D


def curvature_endomorphism_matrix(curvature_op, n: int, k: int) -> np.ndarray:
    """Assemble ``R_k w = -sum_{i,j} e^i ^ iota(e_j) (R(e_i, e_j) w)`` on ``Lambda^k``.

    Parameters
    ----------
    curvature_op : callable ``(i, j) -> (n, n)`` array
        Matrix ``A`` of the vector endomorphism ``Z -> R(e_i, e_j) Z`` in the
        orthonormal frame, ``A[m, r] = <R(e_i,e_j) e_r, e_m>``.
    """
    size = comb(n, k)
    if k == 0 or k > n:
        return np.zeros((size, size))
    E = wedge_with_basis(n, k - 1)  # e^i ^ : k-1 -> k
    interior_mats = interior_with_basis(n, k)  # iota(e_j) : k -> k-1
    R = np.zeros((size, size))
    for i in range(n):
        for j in range(n):
            A = np.asarray(curvature_op(i, j), dtype=float)
            # R(X,Y) acts on covectors by (R th)(Z) = -th(A Z), i.e. C = -A^T.
            D = derivation_matrix(-A.T, k)
            R -= E[i] @ interior_mats[j] @ D
    return R


def constant_curvature_operator(kappa: float, n: int):
    """``R(X,Y)Z = kappa (<Y,Z> X - <X,Z> Y)`` as a callable for the assembler."""

    def op(i, j):
        A = np.zeros((n, n))
        A[i, j] += kappa
        A[j, i] -= kappa
        return A

    return op


def curvature_endomorphism_constant_curvature(kappa: float, n: int, k: int) -> float:
    """Scalar by which the curvature endomorphism acts on ``Lambda^k`` at constant curvature.

    The value is obtained from the brute-force assembly and checked to be a
    multiple of the identity; it coincides with ``k (n - k) kappa``.
    """
    if not 0 <= k <= n:
        raise ValueError("degree outside 0..n")
    R = curvature_endomorphism_matrix(constant_curvature_operator(kappa, n), n, k)
    if R.size == 0:
        return 0.0
    scalar = float(np.trace(R) / R.shape[0])
    if not np.allclose(R, scalar * np.eye(R.shape[0]), atol=1e-12 * max(1.0, abs(kappa)) * n * n):
        raise AssertionError("constant-curvature endomorphism is not scalar")
    return scalar


# ----------------------------------------------------------------------------
# Compound matrices (action of O(n) on Lambda^k)
# ----------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _compound_index(n: int, k: int):
    B = np.asarray(basis(n, k), dtype=np.intp).reshape(comb(n, k), k)
    return B


def compound_matrices(A: np.ndarray, k: int) -> np.ndarray:
    """k-th compound of a stack of square matrices, shape ``(..., C(n,k), C(n,k))``.

    Entry ``(I, J)`` is the minor ``det A[I, J]``.  For orthogonal ``A`` mapping
    covector coordinates this is the induced map on ``Lambda^k``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    lead = A.shape[:-2]
    if k == 0:
        return np.ones(lead + (1, 1))
    if k == 1:
        return A.copy()
    if k == n:
        return np.linalg.det(A)[..., None, None]
    B = _compound_index(n, k)
    c = B.shape[0]
    sub = A[..., B[:, None, :, None], B[None, :, None, :]]  # (..., c, c, k, k)
    return np.linalg.det(sub).reshape(lead + (c, c))


def compound_matrix(A: np.ndarray, k: int) -> np.ndarray:
    """k-th compound of a single square matrix."""
    return compound_matrices(np.asarray(A, dtype=float)[None], k)[0]


# ----------------------------------------------------------------------------
# Almost complex structure attached to a 2-form
# ----------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _pair_index(n: int):
    B = basis(n, 2)
    rows = np.array([b[0] for b in B], dtype=np.intp)
    cols = np.array([b[1] for b in B], dtype=np.intp)
    return rows, cols


def j_map_arrays(omega: np.ndarray, n: int) -> np.ndarray:
    """Matrices ``J`` with ``omega(u, v) = <J u, v>`` for 2-form arrays ``(..., C(n,2))``."""
    omega = np.asarray(omega, dtype=float)
    _check_len(omega, n, 2, "j_map")
    rows, cols = _pair_index(n)
    J = np.zeros(omega.shape[:-1] + (n, n))
    # <J e_a, e_b> = J[b, a] = omega(e_a, e_b) = omega_ab for a < b
    J[..., cols, rows] = omega
    J[..., rows, cols] = -omega
    return J


def j_map(omega: KVector) -> AntisymMatrix:
    """The endomorphism ``J_omega`` defined by ``omega(u, v) = <J u, v>``."""
    if omega.degree_k != 2:
        raise ValueError("j_map needs a 2-form")
    return AntisymMatrix(omega.dim_n, j_map_arrays(omega.coeffs, omega.dim_n))


def jj_plus_id_norm(J) -> np.ndarray | float:
    """Frobenius norm of ``J^2 + Id`` (vectorized over leading axes)."""
    M = J.entries if isinstance(J, AntisymMatrix) else np.asarray(J, dtype=float)
    n = M.shape[-1]
    val = np.linalg.norm(M @ M + np.eye(n), axis=(-2, -1))
    return float(val) if np.ndim(val) == 0 else val


def wedge_power(omega: np.ndarray, n: int, k: int, m: int) -> np.ndarray:
    """``omega ^ ... ^ omega`` (m factors) for coefficient arrays of degree k."""
    omega = np.asarray(omega, dtype=float)
    if m < 1:
        raise ValueError("power must be at least 1")
    acc = omega
    deg = k
    for _ in range(m - 1):
        acc = wedge_arrays(acc, omega, n, deg, k)
        deg += k
    return acc


def top_power_norm_exact(eigs) -> float:
    """``m! |l_1 ... l_m|`` for the normal-form parameters of a 2-form."""
    eigs = np.asarray(eigs, dtype=float)
    return factorial(len(eigs)) * float(np.prod(np.abs(eigs)))
