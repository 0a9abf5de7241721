"""Eigenvalue pinching pipeline.

Computes the first Laplace eigenvalue together with the lowest
connection-Laplacian eigenvalues on forms, builds the sphere map from the
first eigenfunctions, the level set ``A_f`` and its nearest-point projection,
and measures the almost-cosine, Gram and Pythagorean residuals of the map
``x -> (Psi(x), a_f(x))``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import exterior as ext
from .gh import FiniteMetricSpace, verify_approximation_map
from .manifolds import SampledManifold
from .operators import (
    FormField,
    OperatorHandle,
    assemble_connection_laplacian,
    assemble_function_laplacian,
    covariant_derivative,
    gradient_field,
    inner_product,
    local_stencil,
    lp_norm,
    _check_invalid,
)
from .reference import bounds, pinching_exponents
from .spectral import lowest_eigenpairs

DELTA_FLOOR = 1e-12

__all__ = [
    "EigenfunctionBundle",
    "eigenfunction_bundle",
    "low_eigenforms",
    "select_aligned",
    "Main1Result",
    "verify_main1",
    "BochnerReilly",
    "bochner_reilly_residual",
    "SphereMap",
    "build_sphere_map",
    "LevelSet",
    "level_set_and_projection",
    "almost_cosine_residual",
    "GramDefect",
    "gram_defect",
    "choose_function",
    "GHMapResult",
    "build_gh_map",
    "PinchingReport",
    "run_pinching",
    "aligned_bundle",
    "combine_forms",
    "default_threshold",
]


def _gradients(M: SampledManifold, F: np.ndarray) -> np.ndarray:
    """Gradients of the columns of ``F``, shape ``(N, k, n)``."""
    return np.stack([gradient_field(M, F[:, a]).coeffs for a in range(F.shape[1])], axis=1)


def _normalized_gram(M: SampledManifold, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``(1/Vol) sum_x w_x <A_a(x), B_b(x)>`` for stacks ``(N, ka, ...)`` and ``(N, kb, ...)``."""
    a = A.reshape(A.shape[0], A.shape[1], -1)
    b = B.reshape(B.shape[0], B.shape[1], -1)
    return np.einsum("x,xai,xbi->ab", M.weights, a, b) / M.volume


# ----------------------------------------------------------------------------
# Eigenfunctions and eigenforms
# ----------------------------------------------------------------------------


@dataclass
class EigenfunctionBundle:
    """First eigenfunctions normalized to ``||f_i||_2^2 = 1/(n-p+1)``.

    Attributes
    ----------
    manifold : the sampled manifold
    p : form degree defining the normalization
    values : (N, k) function values
    eigenvalues : (k,) Rayleigh quotients of the functions
    residuals : (k,) ``||A v - lambda v||`` of the unit-norm coefficient vectors
    gradients : (N, k, n) frame components of the gradients
    """

    manifold: SampledManifold
    p: int
    values: np.ndarray
    eigenvalues: np.ndarray
    residuals: np.ndarray
    gradients: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.values.shape[1]

    @property
    def target_norm_sq(self) -> float:
        return 1.0 / (self.manifold.n - self.p + 1)

    def gram(self) -> np.ndarray:
        """Normalized L2 Gram matrix of the functions."""
        return _normalized_gram(self.manifold, self.values[:, :, None], self.values[:, :, None])

    def orthogonality_defect(self) -> float:
        G = self.gram()
        return float(np.max(np.abs(G - np.diag(np.diag(G))), initial=0.0))

    def check(self, tol: float = 1e-6) -> None:
        if self.orthogonality_defect() > tol:
            raise ValueError("eigenfunctions are not L2-orthogonal")
        if np.max(np.abs(np.diag(self.gram()) - self.target_norm_sq)) > tol:
            raise ValueError("eigenfunctions are not normalized")

    def subset(self, idx) -> "EigenfunctionBundle":
        idx = list(idx)
        return EigenfunctionBundle(self.manifold, self.p, self.values[:, idx], self.eigenvalues[idx],
                                   self.residuals[idx], self.gradients[:, idx], dict(self.meta))

    def rotated(self, R) -> "EigenfunctionBundle":
        """Bundle ``f R`` for an orthogonal ``k x k`` matrix (gradients are linear)."""
        R = np.asarray(R, dtype=float)
        lam = np.einsum("ia,i,ib->ab", R, self.eigenvalues, R)
        return EigenfunctionBundle(self.manifold, self.p, self.values @ R, np.diag(lam).copy(),
                                   np.abs(R).T @ self.residuals, np.einsum("xkn,kl->xln", self.gradients, R),
                                   dict(self.meta))

    def replaced(self, i: int, values: np.ndarray, eigenvalue: float) -> "EigenfunctionBundle":
        """Copy with function ``i`` replaced by ``values`` (rescaled to the target norm)."""
        M = self.manifold
        v = np.asarray(values, dtype=float).copy()
        v *= np.sqrt(self.target_norm_sq) / lp_norm(M, v, 2)
        vals = self.values.copy()
        vals[:, i] = v
        grads = self.gradients.copy()
        grads[:, i] = gradient_field(M, v).coeffs
        lam = self.eigenvalues.copy()
        lam[i] = eigenvalue
        return EigenfunctionBundle(M, self.p, vals, lam, self.residuals.copy(), grads, dict(self.meta))


def low_eigenforms(M: SampledManifold, p: int, count: int = 4, window: float = 0.1,
                   operator: OperatorHandle | None = None, tol: float = 1e-8, seed: int = 0):
    """Lowest eigenforms of the connection Laplacian on p-forms.

    Returns ``(eigenvalues, forms, all_eigenvalues)`` where ``forms`` holds the
    eigenforms with eigenvalue at most ``lambda_1 + window``, each normalized to
    ``||omega||_2 = 1``.
    """
    op = operator or assemble_connection_laplacian(M, p)
    spec = lowest_eigenpairs(op, min(count, op.size), tol=tol, seed=seed)
    lam = spec.eigenvalues
    keep = np.flatnonzero(lam <= lam[0] + window)
    forms = []
    for k in keep:
        om = FormField.from_vector(M, p, spec.eigenvectors[:, k])
        forms.append(om * (1.0 / lp_norm(M, om, 2)))
    return lam[keep], forms, lam


def _interior_stack(grads: np.ndarray, omega: np.ndarray, n: int, p: int) -> np.ndarray:
    """``iota(grad f_a) omega`` for gradients ``(N, k, n)`` and a form ``(N, C)``: ``(N, k, C')``."""
    return ext.interior_arrays(grads, omega[:, None, :], n, p)


def select_aligned(M: SampledManifold, grads: np.ndarray, forms: list[FormField], k: int,
                   iterations: int = 20):
    """Jointly pick a unit form in ``span(forms)`` and a k-dimensional function
    subspace minimizing ``sum_i ||iota(grad f_i) omega||_2^2``.

    ``grads`` holds the gradients of the candidate functions ``(N, K, n)``.
    Alternating minimization from each basis form as a start; the best
    objective wins.  Returns ``(form coefficients c, function rotation U (K, k),
    objective)`` with ``omega = sum_c c_c forms[c]``.
    """
    n = M.n
    p = forms[0].degree
    m, K = len(forms), grads.shape[1]
    # eta[x, a, c, :] = iota(grad f_a) omega_c
    eta = np.stack([_interior_stack(grads, om.coeffs, n, p) for om in forms], axis=2)
    T = np.einsum("x,xaci,xbdi->acbd", M.weights, eta, eta) / M.volume
    Gf = np.einsum("acbd->cdab", T)  # function Gram for each pair of forms

    def fun_step(c):
        G = np.einsum("c,d,cdab->ab", c, c, Gf)
        w, S = np.linalg.eigh(0.5 * (G + G.T))
        return S[:, :k], float(w[:k].sum())

    def form_step(U):
        H = np.einsum("ai,bi,acbd->cd", U, U, T)
        w, S = np.linalg.eigh(0.5 * (H + H.T))
        return S[:, 0]

    best = None
    for start in range(m):
        c = np.zeros(m)
        c[start] = 1.0
        U, obj = fun_step(c)
        for _ in range(iterations):
            c = form_step(U)
            U, new = fun_step(c)
            if abs(new - obj) <= 1e-14 * max(1.0, abs(obj)):
                obj = new
                break
            obj = new
        if best is None or obj < best[2] - 1e-15:
            best = (c, U, obj)
    c, U, obj = best
    # deterministic sign: largest coefficient positive
    c = c * np.sign(c[np.argmax(np.abs(c))])
    return c, U, obj


def combine_forms(M: SampledManifold, forms: list[FormField], c) -> FormField:
    coeffs = sum(ci * om.coeffs for ci, om in zip(c, forms))
    om = FormField(M, forms[0].degree, coeffs)
    return om * (1.0 / lp_norm(M, om, 2))


def eigenfunction_bundle(M: SampledManifold, p: int, count: int | None = None, omega: FormField | None = None,
                         window: float = 0.1, operator: OperatorHandle | None = None, tol: float = 1e-8,
                         seed: int = 0, extra: int = 8) -> EigenfunctionBundle:
    """First nonconstant eigenfunctions, ``count = n - p + 1`` by default.

    Candidates are the eigenfunctions with eigenvalue at most
    ``(1 + window) lambda_count``.  When ``omega`` is given, the subspace
    minimizing ``sum ||iota(grad f) omega||^2`` is selected among them.  A final
    Rayleigh-Ritz step inside the chosen span returns eigenvector estimates
    with their residuals.
    """
    k = count or M.n - p + 1
    op = operator or assemble_function_laplacian(M)
    want = min(op.size, k + 1 + extra)
    spec = lowest_eigenpairs(op, want, tol=tol, seed=seed)
    lam, vecs = spec.eigenvalues[1:], spec.eigenvectors[:, 1:]
    if len(lam) < k:
        raise ValueError("not enough eigenpairs")
    cand = np.flatnonzero(lam <= lam[k - 1] * (1 + window) + 1e-12)
    V = vecs[:, cand]
    objective = None
    if omega is not None and V.shape[1] > k:
        grads = _gradients(M, V)
        _, U, objective = select_aligned(M, grads, [omega], k)
        V = V @ U
    else:
        V = V[:, :k]
    AV = np.asarray(op.apply(V))
    H = V.T @ AV
    w, S = np.linalg.eigh(0.5 * (H + H.T))
    V = V @ S
    AV = AV @ S
    res = np.linalg.norm(AV - V * w, axis=0)
    # unit Euclidean vectors with uniform weights; rescale to the normalized target norm
    target = 1.0 / (M.n - p + 1)
    F = np.empty_like(V)
    for a in range(k):
        v = V[:, a]
        v = v * (np.sqrt(target) / lp_norm(M, v, 2))
        # deterministic sign: first entry of largest magnitude positive
        F[:, a] = v * np.sign(v[np.argmax(np.abs(v))])
    meta = {"candidates": int(len(cand)), "candidate_eigenvalues": lam[cand].tolist(),
            "alignment_objective": objective, "solver": spec.meta}
    return EigenfunctionBundle(M, p, F, w, res, _gradients(M, F), meta)


# ----------------------------------------------------------------------------
# Eigenvalue estimates
# ----------------------------------------------------------------------------


@dataclass
class Main1Result:
    n: int
    p: int
    lambda1: float
    form_lambda: float
    dual_form_lambda: float
    slack: float
    ratio: float | None
    dual_ratio: float | None
    bounds: dict
    lichnerowicz_ok: bool
    margin: float
    ricci_lower_bound: float
    delta_at_floor: bool = False

    def to_dict(self):
        return asdict(self)


def verify_main1(M: SampledManifold, p: int, margin: float = 0.1, bandwidth=None, tol: float = 1e-8,
                 seed: int = 0) -> Main1Result:
    """First eigenvalue against ``n - p`` with the connection-Laplacian defects on
    p-forms and (n-p)-forms.

    ``slack = lambda_1(g) - (n - p)``; when negative the empirical constants
    ``-slack / lambda_1(Delta_{C,p})^{1/2}`` (and for ``n - p``) are reported.
    ``delta_at_floor`` flags a form eigenvalue below ``1e-12``; the ratio is
    then dominated by discretization error in the slack, and it is ``None``
    when the eigenvalue is not positive.
    The Lichnerowicz floor ``n(n-p-1)/(n-1)`` is checked with a relative
    ``margin``.

    Raises
    ------
    ValueError
        When the model's Ricci curvature does not satisfy ``Ric >= (n-p-1) g``.
    UndersampledError
        When more than 1% of points have degenerate local neighbourhoods.
    """
    n = M.n
    if not 1 <= p <= n - 1:
        raise ValueError("need 1 <= p <= n-1")
    if M.ricci_lower_bound < (n - p - 1) - 1e-12:
        raise ValueError(f"model Ricci lower bound {M.ricci_lower_bound:.4g} is below n-p-1 = {n - p - 1}")
    if M.kind != "quotient":
        _check_invalid(local_stencil(M))
    fn = lowest_eigenpairs(assemble_function_laplacian(M, bandwidth), 2, tol=tol, seed=seed)
    lam1 = float(fn.eigenvalues[1])
    lp = float(lowest_eigenpairs(assemble_connection_laplacian(M, p, bandwidth), 1, tol=tol, seed=seed).eigenvalues[0])
    if n - p == p:
        lq = lp
    else:
        lq = float(lowest_eigenpairs(assemble_connection_laplacian(M, n - p, bandwidth), 1, tol=tol,
                                     seed=seed).eigenvalues[0])
    slack = lam1 - (n - p)

    def ratio(lam):
        if slack >= 0:
            return None
        # a non-positive form eigenvalue leaves the ratio undefined; delta_at_floor records why
        return float(-slack / np.sqrt(lam)) if lam > 0 else None

    b = bounds(n, p)
    return Main1Result(
        n=n, p=p, lambda1=lam1, form_lambda=lp, dual_form_lambda=lq, slack=float(slack),
        ratio=ratio(lp), dual_ratio=ratio(lq), bounds=b.to_dict(),
        lichnerowicz_ok=bool(lam1 >= b.lichnerowicz * (1 - margin)), margin=margin,
        ricci_lower_bound=M.ricci_lower_bound, delta_at_floor=bool(max(lp, 0.0) < DELTA_FLOOR),
    )


@dataclass(frozen=True)
class BochnerReilly:
    lhs: float
    rhs: float
    residual: float


def bochner_reilly_residual(M: SampledManifold, f, omega: FormField, eigenvalue: float | None = None,
                            operator: OperatorHandle | None = None, norm_tol: float = 1e-6) -> BochnerReilly:
    """Both sides of the Bochner-Reilly-Grosjean integral identity for a p-form.

    ``lhs = int |T(iota(grad f) omega)|^2`` and
    ``rhs = ((p-1)/p) int <iota(grad f) omega, iota(grad Delta f) omega>
    - int <iota(Ric(grad f)) omega, iota(grad f) omega>``, all normalized by
    the volume.  ``Delta f = eigenvalue * f`` when an eigenvalue is given,
    otherwise the function Laplacian is applied.
    """
    p = omega.degree
    n = M.n
    if not M.factors:
        raise ValueError("manifold carries no curvature metadata")
    if not 1 <= p <= n - 1:
        raise ValueError("form degree must lie in 1..n-1")
    if abs(lp_norm(M, omega, 2) - 1.0) > norm_tol:
        raise ValueError("omega must be normalized to ||omega||_2 = 1")
    f = np.asarray(f, dtype=float).reshape(-1)
    grad = gradient_field(M, f).coeffs
    if eigenvalue is not None:
        grad_lap = eigenvalue * grad
    else:
        op = operator or assemble_function_laplacian(M)
        grad_lap = gradient_field(M, np.asarray(op.apply(f[:, None]))[:, 0]).coeffs
    eta = ext.interior_arrays(grad, omega.coeffs, n, p)
    nabla_eta = covariant_derivative(M, FormField(M, p - 1, eta))
    t_part, _, _ = ext.decompose_covariant_arrays(nabla_eta, n, p - 1)
    lhs = lp_norm(M, t_part.reshape(M.size, -1), 2) ** 2
    ric_grad = grad * M.ricci_diag
    rhs = ((p - 1) / p) * inner_product(M, eta, ext.interior_arrays(grad_lap, omega.coeffs, n, p)) \
        - inner_product(M, ext.interior_arrays(ric_grad, omega.coeffs, n, p), eta)
    return BochnerReilly(lhs=float(lhs), rhs=float(rhs), residual=float(abs(lhs - rhs)))


# ----------------------------------------------------------------------------
# Sphere map, level sets and residuals
# ----------------------------------------------------------------------------


@dataclass
class SphereMap:
    tilde: np.ndarray
    psi: np.ndarray
    psi_sup_defect: float


def build_sphere_map(bundle: EigenfunctionBundle, expected: int | None = None) -> SphereMap:
    """``Psi~ = (f_1, ..., f_k)`` and ``Psi = Psi~/|Psi~|`` with ``max | |Psi~|^2 - 1 |``."""
    k = bundle.count
    if expected is not None and k != expected:
        raise ValueError(f"expected {expected} functions, got {k}")
    tilde = bundle.values
    r = np.linalg.norm(tilde, axis=1)
    if np.any(r <= 1e-12):
        bad = int(np.argmin(r))
        raise ValueError(f"sphere map vanishes at point {bad}")
    return SphereMap(tilde=tilde.copy(), psi=tilde / r[:, None], psi_sup_defect=float(np.max(np.abs(r ** 2 - 1))))


@dataclass
class LevelSet:
    indices: np.ndarray
    assignment: np.ndarray
    distance: np.ndarray
    threshold: float


def _nearest_in_subset(M: SampledManifold, A: np.ndarray, block: int = 512):
    assign = np.empty(M.size, dtype=np.intp)
    dist = np.empty(M.size)
    for s in range(0, M.size, block):
        rows = np.arange(s, min(s + block, M.size))
        D = M.distance_matrix(rows, A)
        k = np.argmin(D, axis=1)
        assign[rows] = A[k]
        dist[rows] = D[np.arange(len(rows)), k]
    assign[A] = A
    dist[A] = 0.0
    return assign, dist


def level_set_and_projection(M: SampledManifold, f, threshold: float) -> LevelSet:
    """``A_f = {x : |f(x) - 1| <= threshold}`` and the nearest-point map onto it.

    Ties in the nearest point are broken by the smallest sample index.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    f = np.asarray(f, dtype=float).reshape(-1)
    A = np.flatnonzero(np.abs(f - 1.0) <= threshold)
    if A.size == 0:
        raise ValueError("level set A_f is empty")
    assign, dist = _nearest_in_subset(M, A)
    return LevelSet(indices=A, assignment=assign, distance=dist, threshold=float(threshold))


def almost_cosine_residual(M: SampledManifold, f, level: LevelSet | np.ndarray) -> float:
    """``max_x |f(x) - cos d(x, A_f)|``."""
    f = np.asarray(f, dtype=float).reshape(-1)
    if isinstance(level, LevelSet):
        dist = level.distance
    else:
        A = np.asarray(level, dtype=np.intp)
        if A.size == 0:
            raise ValueError("A_f is empty")
        _, dist = _nearest_in_subset(M, A)
    return float(np.max(np.abs(f - np.cos(dist))))


@dataclass(frozen=True)
class GramDefect:
    offdiag_l1: float
    offdiag_max: float
    diag_l1: float
    diag_max: float
    matrix_l1: np.ndarray


def gram_defect(bundle: EigenfunctionBundle) -> GramDefect:
    """Pointwise ``f_i f_j + <grad f_i, grad f_j>`` against ``delta_ij``.

    Off-diagonal entries measure ``|f_i f_j + <grad f_i, grad f_j>|``, diagonal
    entries ``|f_i^2 + |grad f_i|^2 - 1|``; reported as normalized L1 averages and
    maxima over points.
    """
    M = bundle.manifold
    P = bundle.values[:, :, None] * bundle.values[:, None, :] + np.einsum("xan,xbn->xab", bundle.gradients,
                                                                         bundle.gradients)
    k = bundle.count
    P = np.abs(P - np.eye(k)[None])
    L1 = np.einsum("x,xab->ab", M.weights, P) / M.volume
    mx = P.max(axis=0)
    off = ~np.eye(k, dtype=bool)
    diag = np.eye(k, dtype=bool)
    return GramDefect(
        offdiag_l1=float(L1[off].max(initial=0.0)), offdiag_max=float(mx[off].max(initial=0.0)),
        diag_l1=float(L1[diag].max()), diag_max=float(mx[diag].max()), matrix_l1=L1,
    )


def choose_function(bundle: EigenfunctionBundle, sphere: SphereMap, f_choice="peak"):
    """Unit combination ``f = sum u_i f_i`` and the vector ``u``.

    ``"peak"`` takes ``u = Psi(x*)`` at the maximizer ``x*`` of ``|Psi~|`` so the
    maximum of ``f`` sits on a sample point; this choice is equivariant under
    rotations of the bundle.  An integer selects ``f_i``; a vector is normalized.
    """
    k = bundle.count
    if isinstance(f_choice, str):
        if f_choice != "peak":
            raise ValueError(f"unknown f_choice {f_choice!r}")
        r = np.linalg.norm(sphere.tilde, axis=1)
        u = sphere.psi[int(np.argmax(r))]
    elif np.ndim(f_choice) == 0:
        u = np.zeros(k)
        u[int(f_choice)] = 1.0
    else:
        u = np.asarray(f_choice, dtype=float)
        if u.shape != (k,) or np.linalg.norm(u) == 0:
            raise ValueError("f_choice vector must have one nonzero entry per function")
        u = u / np.linalg.norm(u)
    return sphere.tilde @ u, u


def default_threshold(f: np.ndarray, floor: float = 0.002) -> float:
    """``|1 - max f| + floor``: the tightest level set that contains the maximizer."""
    return float(abs(1.0 - np.max(f)) + floor)


def _sphere_cover_radius(psi: np.ndarray, seed: int = 0, probes: int = 4000) -> float:
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((probes, psi.shape[1]))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return float(np.max(np.arccos(np.clip(np.max(Z @ psi.T, axis=1), -1, 1))))


@dataclass
class GHMapResult:
    epsilon: float
    distortion: float
    density: float
    passed: bool
    pythagorean_residual: float
    psi_sup_defect: float
    cosine_residual: float
    level_set_size: int
    threshold: float
    target_size: int
    sphere_cover_radius: float
    u: np.ndarray
    assignment: np.ndarray
    target_index: np.ndarray

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("u", "assignment", "target_index")}
        d["u"] = self.u.tolist()
        return d


def _unique_rows(X: np.ndarray, decimals: int = 9):
    key = np.round(X, decimals)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return first, inverse.reshape(-1)


def build_gh_map(M: SampledManifold, bundle: EigenfunctionBundle, f_choice="peak", threshold: float | None = None,
                 epsilon: float | None = None, seed: int = 0) -> GHMapResult:
    """The map ``x -> (Psi(x), a_f(x))`` into the finite target ``Psi(M) x A_f``.

    The target carries ``sqrt(d_S^2 + d^2)`` with the round distance on the
    unit sphere and the manifold distance on ``A_f``.  Its measured epsilon is
    the larger of the pairwise distortion and the covering radius of the
    image.  How densely ``Psi(M)`` fills the whole sphere is reported
    separately as ``sphere_cover_radius``.
    """
    sphere = build_sphere_map(bundle)
    f, u = choose_function(bundle, sphere, f_choice)
    thr = default_threshold(f) if threshold is None else float(threshold)
    level = level_set_and_projection(M, f, thr)
    cos_res = almost_cosine_residual(M, f, level)

    first, s_of_x = _unique_rows(sphere.psi)
    S_pts = sphere.psi[first]
    DS = np.arccos(np.clip(S_pts @ S_pts.T, -1.0, 1.0))
    A = level.indices
    DA = M.distance_matrix(A, A)
    a_pos = np.searchsorted(A, level.assignment)
    nA = len(A)
    target = s_of_x * nA + a_pos

    DX = M.distance_matrix()
    X = FiniteMetricSpace(DX, validate=False)
    size = len(first) * nA
    D2 = DS[:, None, :, None] ** 2 + DA[None, :, None, :] ** 2
    Y = FiniteMetricSpace(np.sqrt(D2).reshape(size, size), validate=False)
    check = verify_approximation_map(X, Y, target, np.inf if epsilon is None else epsilon)
    eps = check.measured_epsilon

    # Pythagorean residual |d^2 - d_S^2 - d_A^2|
    dS_pairs = DS[np.ix_(s_of_x, s_of_x)]
    dA_pairs = DA[np.ix_(a_pos, a_pos)]
    pyth = float(np.max(np.abs(DX ** 2 - dS_pairs ** 2 - dA_pairs ** 2)))
    return GHMapResult(
        epsilon=float(eps), distortion=check.distortion, density=check.density,
        passed=bool(check.passed if epsilon is not None else True),
        pythagorean_residual=pyth, psi_sup_defect=sphere.psi_sup_defect, cosine_residual=cos_res,
        level_set_size=int(nA), threshold=thr, target_size=int(size),
        sphere_cover_radius=_sphere_cover_radius(sphere.psi, seed), u=u, assignment=level.assignment,
        target_index=target,
    )


# ----------------------------------------------------------------------------
# Aggregated report
# ----------------------------------------------------------------------------


@dataclass
class PinchingReport:
    """All quantities of one verification run."""

    delta_form: float
    eigenvalues: list
    bounds: dict
    residual_main1: float
    psi_sup_defect: float
    cosine_residual: float
    pythagorean_residual: float
    gh_distortion: float
    exponents: dict
    metadata: dict

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not np.isfinite(v):
                raise ValueError(f"report entry {k} is not finite")
        return d


def aligned_bundle(M: SampledManifold, p: int, seed: int = 0, bandwidth=None):
    """Lowest almost parallel ``p``-form and the ``n - p + 1`` eigenfunctions aligned with it.

    When the low form cluster is degenerate the form is chosen inside it to
    best align with the candidate eigenfunctions.
    """
    _, forms, _ = low_eigenforms(M, p, operator=assemble_connection_laplacian(M, p, bandwidth), seed=seed)
    fn_op = assemble_function_laplacian(M, bandwidth)
    omega = forms[0]
    if len(forms) > 1:
        k = M.n - p + 1
        spec = lowest_eigenpairs(fn_op, min(fn_op.size, k + 9), seed=seed)
        lam = spec.eigenvalues[1:]
        idx = np.flatnonzero(lam <= lam[k - 1] * 1.1 + 1e-12)
        grads = _gradients(M, spec.eigenvectors[:, 1:][:, idx])
        c, _, _ = select_aligned(M, grads, forms, k)
        omega = combine_forms(M, forms, c)
    bundle = eigenfunction_bundle(M, p, omega=omega, operator=fn_op, seed=seed)
    return bundle, omega


def run_pinching(M: SampledManifold, p: int, f_choice="peak", seed: int = 0, bandwidth=None) -> tuple[PinchingReport, dict]:
    """Full pipeline: eigenvalues, aligned bundle, sphere map and the map into ``S x A_f``."""
    main = verify_main1(M, p, bandwidth=bandwidth, seed=seed)
    bundle, omega = aligned_bundle(M, p, seed=seed, bandwidth=bandwidth)
    gh = build_gh_map(M, bundle, f_choice=f_choice, seed=seed)
    delta = min(max(main.form_lambda, np.finfo(float).tiny), 1.0)
    ladder = pinching_exponents(delta, M.n).to_dict()
    report = PinchingReport(
        delta_form=float(main.form_lambda),
        eigenvalues=[float(v) for v in bundle.eigenvalues],
        bounds=main.bounds,
        residual_main1=float(main.slack),
        psi_sup_defect=gh.psi_sup_defect,
        cosine_residual=gh.cosine_residual,
        pythagorean_residual=gh.pythagorean_residual,
        gh_distortion=gh.epsilon,
        exponents=ladder,
        metadata={"N": M.size, "seed": seed, "bandwidth": bandwidth, "kind": M.kind, "n": M.n, "p": p,
                  "lambda1": main.lambda1, "lichnerowicz_ok": main.lichnerowicz_ok,
                  "dual_form_lambda": main.dual_form_lambda, "ratio": main.ratio,
                  "gram": asdict(gram_defect(bundle)) | {"matrix_l1": gram_defect(bundle).matrix_l1.tolist()},
                  "level_set_size": gh.level_set_size, "threshold": gh.threshold,
                  "sphere_cover_radius": gh.sphere_cover_radius},
    )
    return report, {"main": main, "bundle": bundle, "gh": gh, "omega": omega}
