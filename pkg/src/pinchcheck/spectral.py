"""Lowest eigenpairs of symmetric positive semidefinite operators.

The workhorse is a thick-restart block Lanczos method with full
reorthogonalization and an explicit Rayleigh-Ritz step on every restart.
Working with a block of start vectors lets exact multiplicities (common on
symmetric model spaces) be resolved.  Small problems go to dense ``eigh``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = [
    "Spectrum",
    "ConvergenceError",
    "lowest_eigenpairs",
    "rayleigh",
    "minmax_bound",
    "clusters",
    "spectrum_to_csv",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 500


class ConvergenceError(RuntimeError):
    """Raised when Lanczos fails to converge; carries the best partial spectrum."""

    def __init__(self, message, partial: "Spectrum"):
        super().__init__(message)
        self.partial = partial


@dataclass
class Spectrum:
    """Ascending eigenvalues, orthonormal eigenvectors (columns) and residual norms."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.eigenvalues)

    def vector(self, i: int) -> np.ndarray:
        return self.eigenvectors[:, i]


def _apply(op, X):
    if hasattr(op, "apply"):
        return op.apply(X)
    return op @ X


def _size(op) -> int:
    if hasattr(op, "size") and not isinstance(op, np.ndarray) and not sp.issparse(op):
        return int(op.size)
    return int(op.shape[0])


def _dense(op) -> np.ndarray:
    if hasattr(op, "to_dense"):
        return op.to_dense()
    if sp.issparse(op):
        return op.toarray()
    return np.asarray(op, dtype=float)


def _orth_against(V, W, passes=2):
    for _ in range(passes):
        if V.shape[1]:
            W = W - V @ (V.T @ W)
    return W


def _new_block(V, W, rng):
    """Orthonormalize ``W`` against ``V`` and itself, refilling collapsed directions."""
    W = _orth_against(V, W)
    Q, R = np.linalg.qr(W)
    scale = max(1.0, np.max(np.abs(np.diag(R)), initial=0.0))
    bad = np.abs(np.diag(R)) < 1e-10 * scale
    if np.any(bad):
        Z = rng.standard_normal((V.shape[0], int(bad.sum())))
        Z = _orth_against(np.hstack([V, Q[:, ~bad]]), Z)
        Zq, _ = np.linalg.qr(Z)
        Q = np.hstack([Q[:, ~bad], Zq])
    return Q


def lowest_eigenpairs(op, k: int, tol: float = 1e-8, seed: int = 0, block_size: int | None = None,
                      max_basis: int | None = None, max_restarts: int = 400,
                      dense_limit: int = DENSE_LIMIT, structured: bool = True) -> Spectrum:
    """The ``k`` smallest eigenpairs of a symmetric operator.

    Parameters
    ----------
    op : object with ``apply`` and ``size`` (an :class:`~pinchcheck.operators.OperatorHandle`),
        a dense array or a scipy sparse matrix
    k : number of eigenpairs
    tol : required residual norm ``||A v - lambda v||_2`` for unit ``v``
    seed : seed for the random start block
    block_size : Lanczos block width (default ``min(max(k, 4), 12)``)
    max_basis : Krylov basis size before a restart
    structured : use the exact tensor-product eigensolver of Kronecker-sum
        operators when available instead of Lanczos

    Raises
    ------
    ConvergenceError
        When residuals stay above ``tol`` after ``max_restarts`` restarts.
    """
    n = _size(op)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}")
    if n <= dense_limit:
        A = _dense(op)
        A = 0.5 * (A + A.T)
        w, V = np.linalg.eigh(A)
        w, V = w[:k], V[:, :k]
        res = np.linalg.norm(A @ V - V * w, axis=0)
        return Spectrum(w, V, res, {"method": "dense", "size": n})

    if hasattr(op, "exact_eigenpairs") and structured:
        w, V = op.exact_eigenpairs(k)
        res = np.linalg.norm(np.asarray(_apply(op, V)) - V * w, axis=0)
        return Spectrum(w, V, res, {"method": "kronecker-exact", "size": n})

    rng = np.random.default_rng(seed)
    b = block_size or min(max(k, 4), 12)
    keep = min(n, k + max(b, k // 2 + 2))
    m = max_basis or max(keep + 4 * b, 3 * k, 60)
    m = min(m, n)
    V = _new_block(np.zeros((n, 0)), rng.standard_normal((n, b)), rng)
    AV = np.asarray(_apply(op, V))
    matvecs = b
    best = None
    for restart in range(max_restarts + 1):
        # expand the basis block by block with full reorthogonalization
        while V.shape[1] + b <= m:
            Q = _new_block(V, AV[:, -b:], rng)
            V = np.hstack([V, Q])
            AV = np.hstack([AV, np.asarray(_apply(op, Q))])
            matvecs += Q.shape[1]
        H = V.T @ AV
        H = 0.5 * (H + H.T)
        theta, S = np.linalg.eigh(H)
        Y = V @ S[:, :keep]
        AY = AV @ S[:, :keep]
        R = AY - Y * theta[:keep]
        res = np.linalg.norm(R, axis=0)
        best = Spectrum(theta[:k].copy(), Y[:, :k].copy(), res[:k].copy(),
                        {"method": "block-lanczos", "size": n, "restarts": restart, "matvecs": matvecs,
                         "block_size": b, "basis": m})
        if np.all(res[:k] <= tol):
            break
        # thick restart: keep the wanted Ritz vectors, continue with the residual block
        nxt = _new_block(Y, _orth_against(V, AV[:, -b:]), rng)
        V = np.hstack([Y, nxt])
        AV = np.hstack([AY, np.asarray(_apply(op, nxt))])
        matvecs += nxt.shape[1]
    else:
        raise ConvergenceError(f"Lanczos did not converge: max residual {best.residuals.max():.2e}", best)
    # final orthonormality clean-up of the returned vectors
    Yk = best.eigenvectors
    Qf, _ = np.linalg.qr(Yk)
    Hk = Qf.T @ np.asarray(_apply(op, Qf))
    w, Sk = np.linalg.eigh(0.5 * (Hk + Hk.T))
    Vk = Qf @ Sk
    res = np.linalg.norm(np.asarray(_apply(op, Vk)) - Vk * w, axis=0)
    best.eigenvalues, best.eigenvectors, best.residuals = w, Vk, res
    return best


def rayleigh(op, v) -> float:
    """Rayleigh quotient ``<A v, v>/<v, v>``."""
    v = np.asarray(v, dtype=float).ravel()
    nv = float(v @ v)
    if nv == 0.0:
        raise ValueError("zero vector")
    return float(np.asarray(_apply(op, v[:, None])).ravel() @ v) / nv


def minmax_bound(op, subspace) -> float:
    """Largest Rayleigh quotient over ``span(subspace columns)``.

    By the min-max principle this bounds ``lambda_dim`` (counting from the
    lowest eigenvalue as index 1) from above.
    """
    S = np.asarray(subspace, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    G = S.T @ S
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 1e-12 * max(ev[-1], 1e-300):
        raise ValueError("subspace vectors are linearly dependent")
    H = S.T @ np.asarray(_apply(op, S))
    H = 0.5 * (H + H.T)
    return float(sla.eigh(H, G, eigvals_only=True)[-1])


def clusters(eigenvalues, rel: float = 1e-6) -> list[list[int]]:
    """Group indices of eigenvalues within ``rel * (1 + |lambda|)`` of their neighbour."""
    ev = np.asarray(eigenvalues)
    out: list[list[int]] = []
    for i, v in enumerate(ev):
        if out and abs(v - ev[out[-1][-1]]) <= rel * (1.0 + abs(v)):
            out[-1].append(i)
        else:
            out.append([i])
    return out


def spectrum_to_csv(spec: Spectrum) -> str:
    """CSV text with header ``index,eigenvalue,residual``."""
    lines = ["index,eigenvalue,residual"]
    for i, (v, r) in enumerate(zip(spec.eigenvalues, spec.residuals)):
        lines.append(f"{i},{v:.12e},{r:.3e}")
    return "\n".join(lines) + "\n"
