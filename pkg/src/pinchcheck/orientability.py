"""Orientability from the determinant line, and the top-degree forms built from
eigenfunctions and an almost parallel form."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from math import comb

import numpy as np
from scipy.linalg import eigh

from . import exterior as ext
from .harness import EigenfunctionBundle
from .manifolds import SampledManifold
from .operators import (
    FormField,
    OperatorHandle,
    assemble_det_line_laplacian,
    assemble_function_laplacian,
    dirichlet_energy,
    inner_product,
    lp_norm,
)
from .reference import c1_constant
from .spectral import lowest_eigenpairs, minmax_bound

__all__ = [
    "OrientabilityReport",
    "detect_orientability",
    "VFormResult",
    "build_V",
    "FFunctionResult",
    "build_F",
    "switched_manifold",
    "select_xi",
]


@dataclass
class OrientabilityReport:
    """Det-line eigenvalue against the Ricci-normalized threshold.

    The verdict is "orientable" iff ``lambda1 < threshold - margin``.  The
    ``C_1(n, K, 2D)`` threshold is reported alongside; it certifies
    orientability only when ``lambda1`` falls below it.
    """

    lambda1: float
    threshold: float
    margin: float
    verdict: str
    c1_threshold: float
    c1_certifies: bool
    ricci_lower_bound: float
    ground_truth: bool | None
    V_norm_defect: float | None = None
    V_energy: float | None = None
    F_stats: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def orientable(self) -> bool:
        return self.verdict == "orientable"

    @property
    def matches_ground_truth(self) -> bool | None:
        return None if self.ground_truth is None else self.orientable == self.ground_truth

    def to_dict(self):
        return asdict(self)


def detect_orientability(M: SampledManifold, bandwidth=None, margin_fraction: float = 0.5, seed: int = 0,
                         operator: OperatorHandle | None = None) -> OrientabilityReport:
    """Spectral orientability test on the determinant line.

    With ``Ric >= rho g`` and ``rho = n - p - 1`` the threshold is
    ``n rho / (n - 1) = n(n-p-1)/(n-1)``; the discretization margin is
    ``margin_fraction`` of it.  The general bound ``C_1(n, K, 2D)`` uses
    ``K = max(0, -rho/(n-1))`` and the analytic diameter ``D``.

    Raises
    ------
    DisconnectedGraphError
        When the kernel graph is disconnected.
    """
    n = M.n
    op = operator or assemble_det_line_laplacian(M, bandwidth)
    lam = float(lowest_eigenpairs(op, 1, seed=seed).eigenvalues[0])
    rho = M.ricci_lower_bound
    threshold = n * rho / (n - 1)
    margin = margin_fraction * threshold
    K = max(0.0, -rho / (n - 1))
    c1 = c1_constant(n, K, 2.0 * M.diameter)
    verdict = "orientable" if lam < threshold - margin else "unorientable"
    return OrientabilityReport(
        lambda1=lam, threshold=float(threshold), margin=float(margin), verdict=verdict,
        c1_threshold=float(c1), c1_certifies=bool(lam < c1), ricci_lower_bound=float(rho),
        ground_truth=M.orientable_flag, meta={"N": M.size, "kind": M.kind, "bandwidth": bandwidth},
    )


def switched_manifold(M: SampledManifold, flip) -> SampledManifold:
    """Copy of a sphere sample with the first frame vector negated where ``flip`` is true.

    This reverses the frame orientation at those points, which conjugates
    the determinant-line operator by a diagonal sign matrix.
    """
    if M.kind != "sphere":
        raise ValueError("frame switching is provided for sphere samples")
    flip = np.asarray(flip, dtype=bool)
    F = np.array(M.frames)
    F[flip, :, 0] *= -1.0
    return replace(M, frames=F, meta=dict(M.meta, switched=int(flip.sum())))


def _wedge_gradients(grads: np.ndarray, n: int) -> np.ndarray:
    """``df_1 ^ ... ^ df_k`` from gradients ``(N, k, n)``."""
    acc = grads[:, 0]
    deg = 1
    for a in range(1, grads.shape[1]):
        acc = ext.wedge_arrays(acc, grads[:, a], n, deg, 1)
        deg += 1
    return acc


@dataclass
class VFormResult:
    V: FormField
    norm_defect: float
    energy: float
    norm_sq: float


def build_V(M: SampledManifold, bundle: EigenfunctionBundle, omega: FormField,
            operator: OperatorHandle | None = None) -> VFormResult:
    """``V = sum_i (-1)^{i-1} f_i df_1 ^ ... (omit i) ... ^ df_k ^ omega`` with ``k = n - p + 1``.

    Reports ``| ||V||_2^2 - 1 |`` and the determinant-line energy ``||grad V||_2^2``.
    """
    n = M.n
    p = omega.degree
    k = bundle.count
    if (k - 1) + p != n:
        raise ValueError(f"need n - p + 1 functions for a {p}-form in dimension {n}, got {k}")
    grads, vals = bundle.gradients, bundle.values
    acc = np.zeros((M.size, comb(n, k - 1)))
    for i in range(k):
        rest = np.delete(np.arange(k), i)
        if len(rest):
            w = _wedge_gradients(grads[:, rest], n)
        else:
            w = np.ones((M.size, 1))
        acc += (-1) ** i * vals[:, i:i + 1] * w
    V = ext.wedge_arrays(acc, omega.coeffs, n, k - 1, p)
    Vf = FormField(M, n, V)
    op = operator or assemble_det_line_laplacian(M)
    norm_sq = lp_norm(M, Vf, 2) ** 2
    return VFormResult(V=Vf, norm_defect=float(abs(norm_sq - 1.0)), energy=float(dirichlet_energy(M, op, Vf)),
                       norm_sq=float(norm_sq))


@dataclass
class FFunctionResult:
    F: np.ndarray
    norm_defect: float
    energy_defect: float
    max_overlap: float
    norm_sq: float
    energy: float
    minmax: float | None


def build_F(M: SampledManifold, bundle: EigenfunctionBundle, xi: FormField,
            operator: OperatorHandle | None = None) -> FFunctionResult:
    """``F = <df_1 ^ ... ^ df_{n-p}, xi>`` and its three normalized statistics.

    ``norm_defect = | ||F||_2^2 - 1/(n-p+1) |``,
    ``energy_defect = | ||grad F||_2^2 - (n-p)/(n-p+1) |`` (energy from the
    function Laplacian) and ``max_overlap = max_i |(1/Vol) int f_i F|``.
    ``minmax`` bounds ``lambda_{n-p+1}`` from above through
    ``span{f_1, ..., f_{n-p}, F}``.
    """
    n = M.n
    q = xi.degree
    k = bundle.count
    if k != q:
        raise ValueError(f"need {q} functions for a {q}-form, got {k}")
    W = _wedge_gradients(bundle.gradients, n)
    F = np.sum(W * xi.coeffs, axis=1)
    op = operator or assemble_function_laplacian(M)
    target = 1.0 / (q + 1)
    norm_sq = lp_norm(M, F, 2) ** 2
    energy = dirichlet_energy(M, op, F)
    overlap = max(abs(inner_product(M, bundle.values[:, i], F)) for i in range(k))
    mm = None
    if norm_sq > 1e-12:
        S = np.column_stack([bundle.values, F])
        try:
            mm = minmax_bound(op, S)
        except ValueError:
            mm = None
    return FFunctionResult(F=F, norm_defect=float(abs(norm_sq - target)),
                           energy_defect=float(abs(energy - q * target)), max_overlap=float(overlap),
                           norm_sq=float(norm_sq), energy=float(energy), minmax=mm)


def select_xi(M: SampledManifold, bundle: EigenfunctionBundle, forms: list[FormField]) -> FormField:
    """Unit combination of ``forms`` maximizing ``||<df_1 ^ ... ^ df_k, xi>||_2``.

    ``F`` is linear in ``xi``, so the maximizer is the top eigenvector of the
    Gram matrix of the candidate ``F`` functions.  This matters when the low
    eigenspace is degenerate and some of its elements pair to zero with the
    gradients.
    """
    if len(forms) == 1:
        return forms[0]
    W = _wedge_gradients(bundle.gradients, M.n)
    Fs = np.column_stack([np.sum(W * xi.coeffs, axis=1) for xi in forms])
    Cf = np.column_stack([xi.vector for xi in forms])
    G = (Fs * M.weights[:, None]).T @ Fs
    H = Cf.T @ Cf  # coefficient vectors need not be orthonormal
    _, vecs = eigh(G, H)
    c = vecs[:, -1]
    c = c * np.sign(c[np.argmax(np.abs(c))])
    xi = FormField(M, forms[0].degree, np.tensordot(c, np.stack([f.coeffs for f in forms]), axes=1))
    return xi * (1.0 / lp_norm(M, xi, 2))
