"""Almost-Kähler diagnostics for 2-forms and the improved first-eigenvalue bound
``lambda_1 >= 2(n-1)``."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import comb, factorial

import numpy as np
from scipy.optimize import minimize

from . import exterior as ext
from .harness import DELTA_FLOOR, low_eigenforms
from .manifolds import SampledManifold
from .operators import (
    FormField,
    OperatorHandle,
    assemble_connection_laplacian,
    assemble_function_laplacian,
    dirichlet_energy,
    lp_norm,
)
from .reference import alpha_forms
from .spectral import Spectrum, lowest_eigenpairs

__all__ = [
    "almost_kahler_defect",
    "normalize_kahler",
    "ProjectionResult",
    "spectral_project_low_modes",
    "top_power_stats",
    "KahlerReport",
    "kahler_candidate",
    "verify_kahler_bound",
    "eigenform_gram_diagnostic",
    "lemma_pb4_check",
    "lemma_pb4_sweep",
]


def normalize_kahler(M: SampledManifold, omega: FormField) -> FormField:
    """Rescale to ``||omega||_2^2 = n/2``, the value of a pointwise unit Kähler form."""
    nrm = lp_norm(M, omega, 2)
    if nrm == 0:
        raise ValueError("zero form")
    return omega * (np.sqrt(M.n / 2) / nrm)


def _j_defect_raw(M: SampledManifold, omega: FormField) -> float:
    J = ext.j_map_arrays(omega.coeffs, M.n)
    pointwise = ext.jj_plus_id_norm(J)
    return float(np.sum(M.weights * pointwise) / M.volume)


def almost_kahler_defect(M: SampledManifold, omega: FormField, operator: OperatorHandle | None = None):
    """``(grad_defect, j_defect)`` of a 2-form.

    ``grad_defect = ||grad omega||_2^2 / ||omega||_2^2`` uses the connection
    Laplacian energy.  ``j_defect = ||J^2 + Id||_1 / ||omega||_2^2`` is evaluated
    after rescaling to ``||omega||_2^2 = n/2``, which makes both ratios
    invariant under scaling of ``omega``.
    """
    if omega.degree != 2:
        raise ValueError("omega must be a 2-form")
    nrm2 = lp_norm(M, omega, 2) ** 2
    if nrm2 == 0:
        raise ValueError("zero form")
    op = operator or assemble_connection_laplacian(M, 2)
    grad = max(0.0, dirichlet_energy(M, op, omega) / nrm2)
    om = normalize_kahler(M, omega)
    j = _j_defect_raw(M, om) / (M.n / 2)
    return float(grad), float(j)


@dataclass
class ProjectionResult:
    omega_alpha: FormField
    omega_beta: FormField
    modes: int
    eigenvalues: np.ndarray


def _spectrum_up_to(op: OperatorHandle, cutoff: float, start: int, seed: int = 0) -> Spectrum:
    k = min(start, op.size)
    while True:
        spec = lowest_eigenpairs(op, k, seed=seed)
        if spec.eigenvalues[-1] > cutoff or k >= op.size:
            return spec
        k = min(2 * k, op.size)


def spectral_project_low_modes(M: SampledManifold, omega: FormField, cutoff: float,
                               operator: OperatorHandle | None = None, spectrum: Spectrum | None = None,
                               seed: int = 0) -> ProjectionResult:
    """Orthogonal projection onto the eigenforms with eigenvalue at most ``cutoff``.

    Raises
    ------
    ValueError
        When no eigenvalue lies at or below ``cutoff``.
    """
    if cutoff < 0:
        raise ValueError("cutoff must be non-negative")
    p = omega.degree
    if spectrum is None or spectrum.eigenvalues[-1] <= cutoff:
        op = operator or assemble_connection_laplacian(M, p)
        spectrum = _spectrum_up_to(op, cutoff, max(8, 2 * comb(M.n, p)), seed)
    sel = spectrum.eigenvalues <= cutoff
    if not np.any(sel):
        raise ValueError(f"no eigenforms with eigenvalue <= {cutoff:g}")
    V = spectrum.eigenvectors[:, sel]
    v = omega.vector
    a = V @ (V.T @ v)
    return ProjectionResult(FormField.from_vector(M, p, a), FormField.from_vector(M, p, v - a),
                            int(sel.sum()), spectrum.eigenvalues[sel])


def top_power_stats(M: SampledManifold, omega: FormField, m: int | None = None) -> dict:
    """Pointwise norms of ``omega^m`` for ``n = 2m`` after rescaling to ``||omega||_2^2 = m``.

    Returns ``defect = | ||omega^m||_2^2 - (m!)^2 |``, the minimum pointwise
    ``|omega^m|`` (nonvanishing gives an orientation) and the mean.
    """
    n = M.n
    if n % 2:
        raise ValueError("top power needs even dimension")
    m = m or n // 2
    if 2 * m != n:
        raise ValueError("m must equal n/2")
    om = normalize_kahler(M, omega)
    top = ext.wedge_power(om.coeffs, n, 2, m)
    pw = np.linalg.norm(top, axis=1)
    norm_sq = float(np.sum(M.weights * pw ** 2) / M.volume)
    return {"m": m, "norm_sq": norm_sq, "defect": abs(norm_sq - factorial(m) ** 2),
            "min_pointwise": float(pw.min()), "mean_pointwise": float(np.sum(M.weights * pw) / M.volume),
            "target": float(factorial(m))}


def kahler_candidate(M: SampledManifold, forms: list[FormField]) -> tuple[FormField, np.ndarray]:
    """Combination of the given 2-forms minimizing the J-defect.

    Nelder-Mead on the unit sphere of coefficients, started from each basis
    vector and the uniform combination.
    """
    m = len(forms)
    if m == 1:
        return forms[0], np.ones(1)
    C = np.stack([f.coeffs for f in forms], axis=0)

    def objective(c):
        nc = np.linalg.norm(c)
        if nc == 0:
            return np.inf
        om = FormField(M, 2, np.tensordot(c / nc, C, axes=1))
        return _j_defect_raw(M, normalize_kahler(M, om))

    starts = list(np.eye(m)) + [np.ones(m) / np.sqrt(m)]
    best = None
    for s in starts:
        res = minimize(objective, s, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 2000})
        if best is None or res.fun < best[0] - 1e-14:
            best = (res.fun, res.x / np.linalg.norm(res.x))
    c = best[1]
    c = c * np.sign(c[np.argmax(np.abs(c))])
    om = FormField(M, 2, np.tensordot(c, C, axes=1))
    return om * (1.0 / lp_norm(M, om, 2)), c


@dataclass
class KahlerReport:
    n: int
    even_dim_ok: bool
    grad_defect: float | None
    j_defect: float | None
    lambda1: float
    bound: float
    slack: float | None
    delta: float | None
    ratio: float | None
    top_power_stats: dict | None
    ricci_lower_bound: float
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def verify_kahler_bound(M: SampledManifold, omega: FormField | None = None, bandwidth=None, seed: int = 0,
                        window: float = 0.1) -> KahlerReport:
    """Almost-Kähler defects of ``omega`` and ``lambda_1(g)`` against ``2(n-1)``.

    ``omega`` defaults to the J-defect minimizing combination of the lowest
    2-form eigenmodes.  In odd dimension the defect and bound checks are
    skipped.  ``delta = max(grad_defect, j_defect^4)`` is the smallest value
    for which both hypotheses hold; when the slack is negative the empirical
    ratio ``-slack / delta^{1/2}`` is reported.  ``meta["delta_at_floor"]``
    flags ``delta < 1e-12``, where that ratio only measures discretization
    error in the slack.

    Raises
    ------
    ValueError
        When the model's Ricci curvature is not bounded below by ``n - 1``.
    """
    n = M.n
    rho = M.ricci_lower_bound
    if not M.factors or rho < (n - 1) * (1 - 1e-9):
        raise ValueError(f"model must satisfy Ric >= (n-1) g; lower bound is {rho:.4g}")
    lam1 = float(lowest_eigenpairs(assemble_function_laplacian(M, bandwidth), 2, seed=seed).eigenvalues[1])
    bound = 2.0 * (n - 1)
    if n % 2:
        return KahlerReport(n=n, even_dim_ok=False, grad_defect=None, j_defect=None, lambda1=lam1, bound=bound,
                            slack=None, delta=None, ratio=None, top_power_stats=None, ricci_lower_bound=rho,
                            meta={"skipped": "odd dimension"})
    op2 = assemble_connection_laplacian(M, 2, bandwidth)
    coeffs = None
    if omega is None:
        _, forms, _ = low_eigenforms(M, 2, count=max(4, comb(n, 2)), window=window, operator=op2, seed=seed)
        omega, coeffs = kahler_candidate(M, forms)
    grad, j = almost_kahler_defect(M, omega, op2)
    slack = lam1 - bound
    delta = max(grad, j ** 4)
    ratio = None
    if slack < 0:
        ratio = float(-slack / np.sqrt(delta)) if delta > 0 else float("inf")
    return KahlerReport(
        n=n, even_dim_ok=True, grad_defect=grad, j_defect=j, lambda1=lam1, bound=bound, slack=float(slack),
        delta=float(delta), ratio=ratio, top_power_stats=top_power_stats(M, omega), ricci_lower_bound=rho,
        meta={"candidate_coefficients": None if coeffs is None else coeffs.tolist(),
              "delta_at_floor": bool(delta < DELTA_FLOOR)},
    )


def eigenform_gram_diagnostic(M: SampledManifold, p: int, count: int, operator: OperatorHandle | None = None,
                              seed: int = 0) -> np.ndarray:
    """L1 Gram defects of the lowest ``count`` eigenforms normalized to ``||omega_i||_2 = 1``.

    Diagonal entries are ``|| |omega_i|^2 - 1 ||_1``, off-diagonal entries
    ``|| <omega_i, omega_j> ||_1``.  At most ``alpha(n, p)`` forms can be
    pointwise orthonormal, so ``count = alpha(n, p) + 1`` forces a visible defect.
    """
    if not 1 <= count <= alpha_forms(M.n, p) + 1:
        raise ValueError(f"count must lie in 1..{alpha_forms(M.n, p) + 1}")
    op = operator or assemble_connection_laplacian(M, p)
    spec = lowest_eigenpairs(op, count, seed=seed)
    W = np.stack([FormField.from_vector(M, p, spec.eigenvectors[:, i]).coeffs for i in range(count)], axis=1)
    W = W / np.sqrt(np.einsum("x,xkc->k", M.weights, W ** 2) / M.volume)[None, :, None]
    G = np.einsum("xic,xjc->xij", W, W)
    G = np.abs(G - np.eye(count)[None])
    return np.einsum("x,xij->ij", M.weights, G) / M.volume


def lemma_pb4_check(M: SampledManifold, omega: FormField, spectrum: Spectrum, operator: OperatorHandle) -> dict:
    """Hypotheses and conclusions of the low-mode projection lemma for one 2-form.

    ``delta = max(grad_ratio, j_ratio^4)`` makes both hypotheses hold; they
    are considered satisfied when ``delta <= 1/4``.  Conclusions checked on
    ``omega_alpha`` (projection onto modes ``<= delta^{1/2}``):
    ``grad_ratio <= 2 delta``, ``j_ratio <= 10 delta^{1/4}`` and
    ``||omega_beta||_2^2 <= delta^{1/2} ||omega||_2^2``.
    """
    grad, j = almost_kahler_defect(M, omega, operator)
    delta = max(grad, j ** 4)
    out = {"grad_ratio": grad, "j_ratio": j, "delta": delta, "hypotheses": bool(delta <= 0.25)}
    if not out["hypotheses"]:
        return out
    proj = spectral_project_low_modes(M, omega, np.sqrt(delta), operator=operator, spectrum=spectrum)
    ga, ja = almost_kahler_defect(M, proj.omega_alpha, operator)
    beta = lp_norm(M, proj.omega_beta, 2) ** 2 / lp_norm(M, omega, 2) ** 2
    out.update({
        "alpha_grad_ratio": ga, "alpha_j_ratio": ja, "beta_fraction": beta, "modes": proj.modes,
        "grad_conclusion": bool(ga <= 2 * delta * (1 + 1e-9) + 1e-14),
        "j_conclusion": bool(ja <= 10 * delta ** 0.25),
        "beta_conclusion": bool(beta <= np.sqrt(delta) * (1 + 1e-9) + 1e-14),
    })
    out["conclusions"] = out["grad_conclusion"] and out["j_conclusion"] and out["beta_conclusion"]
    return out


def lemma_pb4_sweep(M: SampledManifold, trials: int = 50, seed: int = 0, modes: int = 16,
                    operator: OperatorHandle | None = None) -> dict:
    """Run :func:`lemma_pb4_check` on randomized 2-forms.

    Each input mixes a random element of the lowest eigenspace with a random
    multiple of a random combination of the next eigenforms, so both
    near-Kähler and clearly non-Kähler inputs occur.
    """
    op = operator or assemble_connection_laplacian(M, 2)
    spec = lowest_eigenpairs(op, min(modes, op.size), seed=seed)
    low = spec.eigenvalues <= spec.eigenvalues[0] + 0.1
    L = spec.eigenvectors[:, low]
    H = spec.eigenvectors[:, ~low]
    _, forms, _ = low_eigenforms(M, 2, count=int(low.sum()) + 2, operator=op, seed=seed)
    base, _ = kahler_candidate(M, forms)
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        mix = rng.uniform(0.0, 1.0)
        low_part = (1 - mix) * base.vector + mix * (L @ rng.standard_normal(L.shape[1]))
        low_part /= np.linalg.norm(low_part)
        high = H @ rng.standard_normal(H.shape[1])
        high /= np.linalg.norm(high)
        v = low_part + rng.uniform(0.0, 0.4) * high
        rows.append(lemma_pb4_check(M, FormField.from_vector(M, 2, v), spec, op))
    held = [r for r in rows if r["hypotheses"]]
    return {"trials": trials, "hypotheses_held": len(held),
            "conclusions_held": sum(bool(r["conclusions"]) for r in held),
            "all_pass": all(r["conclusions"] for r in held), "rows": rows}
