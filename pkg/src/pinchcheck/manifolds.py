"""Sampled model manifolds: round spheres, Riemannian products and the
orientation-reversing Z2 quotient of ``S^{n-p} x S^p(a)``.

A :class:`SampledManifold` stores ambient coordinates, an orthonormal tangent
frame and a volume weight per sample point, together with the analytic data
needed by the operators: geodesic distance, parallel transport along minimal
geodesics, logarithm and exponential maps, and curvature metadata.

Frame conventions
-----------------
Each point carries an ``(D, n)`` matrix ``F`` whose columns are an orthonormal
basis of the tangent space.  Vectors and covectors are expressed by their
coordinates in this frame.  ``transport(i, j)`` returns the ``n x n`` matrix
taking frame coordinates at point ``j`` to frame coordinates at point ``i``
along the minimal geodesic; it is orthogonal and ``transport(j, i)`` is its
transpose.

Product manifolds keep a reference to their factors.  When the point set is a
full Cartesian grid the operators exploit this structure (see
:mod:`pinchcheck.operators`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import gamma, pi, sqrt
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "SampledManifold",
    "GeodesicQuery",
    "SphereFactor",
    "sphere_volume",
    "sample_sphere",
    "quasi_uniform_sphere_points",
    "product",
    "quotient_example",
    "quotient_radius",
    "geodesic_point",
    "bishop_gromov_ratio",
    "BallRatio",
    "save_manifold",
    "load_manifold",
    "manifold_to_text",
    "manifold_from_text",
]

FORMAT_VERSION = 1


def sphere_volume(n: int, r: float = 1.0) -> float:
    """Riemannian volume of ``S^n(r)``."""
    return 2.0 * pi ** ((n + 1) / 2) / gamma((n + 1) / 2) * r ** n


# ----------------------------------------------------------------------------
# Sphere primitives (vectorized over rows)
# ----------------------------------------------------------------------------


def householder_frames(points: np.ndarray, radius: float) -> np.ndarray:
    """Positively oriented orthonormal tangent frames for points on ``S^n(r)``.

    The frame ``F`` at ``x`` satisfies ``det[x/r | F] = +1``, so all frames
    induce the orientation of the sphere as the boundary of the ball.
    """
    X = np.asarray(points, dtype=float) / radius
    N, D = X.shape
    e0 = np.zeros(D)
    e0[0] = 1.0
    pos = X[:, 0] >= 0
    u = np.where(pos[:, None], X + e0, X - e0)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    # H = I - 2 u u^T ; columns 1.. of H span the tangent space at x.
    H = np.eye(D)[None] - 2.0 * u[:, :, None] * u[:, None, :]
    F = H[:, :, 1:].copy()
    # For x0 >= 0, H e0 = -x, so det[x | H[:,1:]] = -det H = +1.
    # For x0 < 0,  H e0 = +x, so det = det H = -1; flip one column.
    F[~pos, :, 0] *= -1.0
    return F


def sphere_distance(x: np.ndarray, y: np.ndarray, radius: float) -> np.ndarray:
    # the half-angle form stays accurate for nearly equal and nearly antipodal pairs
    a = np.linalg.norm(x - y, axis=-1)
    b = np.linalg.norm(x + y, axis=-1)
    return radius * 2.0 * np.arctan2(a, b)


def sphere_transport(x, y, Fx, Fy, radius):
    """Frame matrix of parallel transport from ``y`` to ``x`` along the minimal geodesic.

    Uses ``P = I - (x + y)(x + y)^T/(1 + c) + 2 x y^T`` restricted to tangent
    vectors at ``y``, which in frame coordinates becomes
    ``Fx^T Fy - (Fx^T y)(x^T Fy)/(1 + c)`` for unit ``x, y`` with ``c = x.y``.
    Undefined at antipodal pairs; there ``1 + c`` is clamped to 1e-12.
    """
    xh = x / radius
    yh = y / radius
    c = np.einsum("...d,...d->...", xh, yh)
    a = np.einsum("...di,...d->...i", Fx, yh)
    b = np.einsum("...d,...dj->...j", xh, Fy)
    base = np.einsum("...di,...dj->...ij", Fx, Fy)
    denom = np.maximum(1.0 + c, 1e-12)
    return base - a[..., :, None] * b[..., None, :] / denom[..., None, None]


def sphere_log(x, y, Fx, radius):
    """Frame coordinates at ``x`` of ``exp_x^{-1}(y)``."""
    xh = x / radius
    yh = y / radius
    c = np.clip(np.einsum("...d,...d->...", xh, yh), -1.0, 1.0)
    v = yh - c[..., None] * xh
    s = np.linalg.norm(v, axis=-1)
    theta = np.arccos(c)
    scale = np.where(s > 1e-15, radius * theta / np.maximum(s, 1e-300), 0.0)
    return np.einsum("...di,...d->...i", Fx, v) * scale[..., None]


def sphere_exp(x, Fx, u, radius):
    """``exp_x(u)`` for frame coordinates ``u`` (any length)."""
    v = np.einsum("...di,...i->...d", Fx, u)
    speed = np.linalg.norm(v, axis=-1)
    ang = speed / radius
    direction = np.where(speed[..., None] > 0, v / np.maximum(speed, 1e-300)[..., None], 0.0)
    return np.cos(ang)[..., None] * x + radius * np.sin(ang)[..., None] * direction


def _iid_sphere_points(n: int, N: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.standard_normal((N, n + 1))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def quasi_uniform_sphere_points(n: int, N: int, seed: int, symmetry: str | None = None,
                                iterations: int = 300) -> np.ndarray:
    """Well-separated points on the unit sphere ``S^n``.

    ``S^1`` uses a randomly rotated equispaced set.  For ``n >= 2`` a seeded
    i.i.d. sample is relaxed by projected gradient steps on the Riesz
    ``(n-1)``-energy, which spreads the points to near-uniform spacing.

    Parameters
    ----------
    symmetry : {None, "antipodal", "reflect0"}
        Enforce invariance of the set under ``x -> -x`` or under the
        reflection flipping the first coordinate.  ``N`` must then be even and
        point ``i + N/2`` is the image of point ``i``.  For ``"reflect0"`` the
        first half has ``x_0 > 0``.
    """
    rng = np.random.default_rng(seed)
    if symmetry is not None and N % 2:
        raise ValueError("symmetric samples need an even number of points")
    if n == 1:
        phase = rng.uniform(0, 2 * pi)
        if symmetry == "reflect0":
            h = N // 2
            th = -pi / 2 + (np.arange(h) + 0.5) * pi / h
            ang = np.concatenate([th, pi - th])
            return np.stack([np.cos(ang), np.sin(ang)], axis=1)
        ang = phase + 2 * pi * np.arange(N) / N
        P = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return P
    h = N // 2 if symmetry else N

    def mirror(Y):
        if symmetry == "antipodal":
            return -Y
        Z = Y.copy()
        Z[:, 0] *= -1
        return Z

    Y = _iid_sphere_points(n, h, rng)
    if symmetry == "reflect0":
        Y[:, 0] = np.abs(Y[:, 0])
    s = max(n - 1, 1)
    rows = np.arange(h)
    probe = slice(0, min(h, 200))
    for it in range(iterations):
        X = np.vstack([Y, mirror(Y)]) if symmetry else Y
        # |y - x|^2 = 2 - 2 <y, x> on the unit sphere; avoids an (h, N, n+1) tensor
        r = np.sqrt(np.maximum(2.0 - 2.0 * (Y @ X.T), 0.0))
        r[rows, rows] = np.inf
        r = np.maximum(r, 1e-12)
        inv = 1.0 / r
        w = inv.copy()
        for _ in range(s + 1):
            w *= inv
        force = Y * w.sum(axis=1, keepdims=True) - w @ X
        force -= np.sum(force * Y, axis=1, keepdims=True) * Y
        rp = r[probe]
        typical = np.median(rp[np.isfinite(rp) & (rp > 1e-4)])
        step = 0.1 * typical / (np.max(np.abs(force)) + 1e-300) / (1.0 + it / 30.0)
        Y = Y + step * force
        Y /= np.linalg.norm(Y, axis=1, keepdims=True)
        if symmetry == "reflect0":
            Y[:, 0] = np.maximum(np.abs(Y[:, 0]), 1e-3)
            Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    return np.vstack([Y, mirror(Y)]) if symmetry else Y


# ----------------------------------------------------------------------------
# Data types
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereFactor:
    """Description of one round-sphere factor inside an ambient embedding."""

    dim: int
    radius: float
    ambient: slice
    frame: slice

    def to_dict(self):
        return {"dim": self.dim, "radius": self.radius,
                "ambient": [self.ambient.start, self.ambient.stop],
                "frame": [self.frame.start, self.frame.stop]}


@dataclass(frozen=True)
class GeodesicQuery:
    """Base point index, unit tangent vector in the frame at that point, and time."""

    x: int
    u: np.ndarray
    t: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if abs(np.linalg.norm(u) - 1.0) > 1e-10:
            raise ValueError("geodesic direction must be a unit vector")
        object.__setattr__(self, "u", u)


@dataclass(eq=False)
class SampledManifold:
    """Point cloud with analytic Riemannian data on a model manifold.

    Attributes
    ----------
    n : intrinsic dimension
    points : (N, D) ambient coordinates
    frames : (N, D, n) orthonormal tangent frames
    weights : (N,) volume weights summing to the total volume
    factors : sphere factors making up the (cover) metric
    kind : "sphere", "product" or "quotient"
    orientable_flag : ground-truth orientability when known
    grid : for products, the factor sizes of a full Cartesian grid (or None)
    factor_index : (N, n_factors) index of each point in each factor sample
    factor_manifolds : the factor samples for products
    deck_signs : ambient sign vector of the Z2 deck transformation (quotients)
    cover : the covering product manifold (quotients)
    rep_index : indices into ``cover`` of the representatives (quotients)
    meta : construction parameters echoed into reports and files
    """

    n: int
    points: np.ndarray
    frames: np.ndarray
    weights: np.ndarray
    factors: tuple[SphereFactor, ...]
    kind: str
    orientable_flag: bool | None = None
    grid: tuple[int, ...] | None = None
    factor_index: np.ndarray | None = None
    factor_manifolds: tuple["SampledManifold", ...] = ()
    deck_signs: np.ndarray | None = None
    cover: "SampledManifold | None" = None
    rep_index: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("points", "frames", "weights"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            setattr(self, name, arr)

    # -- basic data ---------------------------------------------------------

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def volume(self) -> float:
        return float(self.weights.sum())

    @property
    def ricci_diag(self) -> np.ndarray:
        """Ricci eigenvalue per frame coordinate, ``(n_f - 1)/r_f^2`` on each factor."""
        out = np.zeros(self.n)
        for f in self.factors:
            out[f.frame] = (f.dim - 1) / f.radius ** 2
        return out

    @property
    def ricci_lower_bound(self) -> float:
        return float(np.min(self.ricci_diag))

    @property
    def sectional_blocks(self) -> list[tuple[slice, float]]:
        """Constant-curvature blocks ``(frame slice, 1/r^2)``."""
        return [(f.frame, 1.0 / f.radius ** 2) for f in self.factors]

    @property
    def diameter(self) -> float:
        """Analytic diameter of the model."""
        d2 = sum((pi * f.radius) ** 2 for f in self.factors)
        if self.kind == "quotient":
            return float(self.meta.get("diameter", sqrt(d2)))
        return sqrt(d2)

    # -- geometry between sample points ---------------------------------------

    def _cover_pair_data(self, i, j, with_frames=True):
        """Lifted ambient data for the pairs ``(i, j)``.

        For quotients the second point is replaced by the lift nearest to the
        first point; returns that lift together with the frame at the lift
        (the deck transformation applied to the frame at ``j``).
        """
        i = np.asarray(i, dtype=np.intp)
        j = np.asarray(j, dtype=np.intp)
        x = self.points[i]
        y = self.points[j]
        Fy = self.frames[j] if with_frames else None
        if self.kind != "quotient":
            return x, y, Fy
        s = self.deck_signs
        y2 = y * s
        d1 = self._cover_distance(x, y)
        d2 = self._cover_distance(x, y2)
        use = d2 < d1
        y = np.where(use[:, None], y2, y)
        if with_frames:
            Fy = np.where(use[:, None, None], Fy * s[None, :, None], Fy)
        return x, y, Fy

    def _cover_distance(self, x, y):
        d2 = np.zeros(x.shape[:-1])
        for f in self.factors:
            d2 = d2 + sphere_distance(x[..., f.ambient], y[..., f.ambient], f.radius) ** 2
        return np.sqrt(d2)

    def distances(self, i, j) -> np.ndarray:
        """Geodesic distances between sample points ``i[k]`` and ``j[k]``."""
        x, y, _ = self._cover_pair_data(np.atleast_1d(i), np.atleast_1d(j), with_frames=False)
        return self._cover_distance(x, y)

    def distance_to_points(self, i, Y: np.ndarray) -> np.ndarray:
        """Distances from sample point(s) ``i`` to ambient points ``Y``."""
        x = self.points[np.asarray(i)]
        Y = np.asarray(Y, dtype=float)
        d = self._cover_distance(x, Y)
        if self.kind == "quotient":
            d = np.minimum(d, self._cover_distance(x, Y * self.deck_signs))
        return d

    def distance_matrix(self, rows=None, cols=None) -> np.ndarray:
        """Dense matrix of geodesic distances (rows x cols, default all points)."""
        rows = np.arange(self.size) if rows is None else np.asarray(rows)
        cols = np.arange(self.size) if cols is None else np.asarray(cols)
        X = self.points[rows]
        Y = self.points[cols]
        out = self._cover_distance(X[:, None, :], Y[None, :, :])
        if self.kind == "quotient":
            out = np.minimum(out, self._cover_distance(X[:, None, :], (Y * self.deck_signs)[None, :, :]))
        return out

    def transport(self, i, j) -> np.ndarray:
        """Transport matrices from the frame at ``j[k]`` to the frame at ``i[k]``.

        Along the minimal geodesic (lift nearest to ``i`` for quotients).  For
        distant pairs the result is path-dependent and only of diagnostic use.
        """
        i = np.atleast_1d(np.asarray(i, dtype=np.intp))
        j = np.atleast_1d(np.asarray(j, dtype=np.intp))
        x, y, Fy = self._cover_pair_data(i, j)
        Fx = self.frames[i]
        out = np.zeros((len(i), self.n, self.n))
        for f in self.factors:
            out[:, f.frame, f.frame] = sphere_transport(
                x[:, f.ambient], y[:, f.ambient], Fx[:, f.ambient, f.frame], Fy[:, f.ambient, f.frame], f.radius
            )
        return out

    def log_map(self, i, j) -> np.ndarray:
        """Frame coordinates at ``i[k]`` of the initial velocity reaching ``j[k]`` at time 1."""
        i = np.atleast_1d(np.asarray(i, dtype=np.intp))
        j = np.atleast_1d(np.asarray(j, dtype=np.intp))
        x, y, _ = self._cover_pair_data(i, j, with_frames=False)
        Fx = self.frames[i]
        out = np.zeros((len(i), self.n))
        for f in self.factors:
            out[:, f.frame] = sphere_log(x[:, f.ambient], y[:, f.ambient], Fx[:, f.ambient, f.frame], f.radius)
        return out

    def exp_map(self, i, u) -> np.ndarray:
        """Ambient coordinates of ``exp_x(u)`` for frame coordinates ``u`` at point(s) ``i``."""
        i = np.atleast_1d(np.asarray(i, dtype=np.intp))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        x = self.points[i]
        Fx = self.frames[i]
        out = np.zeros(np.broadcast_shapes(x.shape, (u.shape[0], x.shape[1])))
        for f in self.factors:
            out[:, f.ambient] = sphere_exp(x[:, f.ambient], Fx[:, f.ambient, f.frame], u[:, f.frame], f.radius)
        return out

    def neighbor_pairs(self, radius: float):
        """All ordered pairs ``(i, j)``, ``i != j``, at geodesic distance below ``radius``.

        Ambient chordal distance never exceeds geodesic distance, so a k-d tree
        query on ambient coordinates (and on deck images for quotients) finds
        every candidate; exact distances then filter them.
        """
        tree = cKDTree(self.points)
        pairs = tree.query_pairs(radius, output_type="ndarray")
        cand = [pairs]
        if self.kind == "quotient":
            other = cKDTree(self.points * self.deck_signs)
            sp = other.sparse_distance_matrix(tree, radius, output_type="ndarray")
            extra = np.stack([sp["i"], sp["j"]], axis=1) if len(sp) else np.zeros((0, 2), dtype=np.intp)
            extra = extra[extra[:, 0] < extra[:, 1]]
            cand.append(extra)
        P = np.unique(np.vstack(cand), axis=0) if len(cand) > 1 else pairs
        if len(P) == 0:
            return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp), np.zeros(0)
        d = self.distances(P[:, 0], P[:, 1])
        keep = d < radius
        P = P[keep]
        d = d[keep]
        i = np.concatenate([P[:, 0], P[:, 1]])
        j = np.concatenate([P[:, 1], P[:, 0]])
        return i, j, np.concatenate([d, d])

    # -- invariants -------------------------------------------------------------

    def validate(self, tol: float = 1e-10) -> None:
        """Raise ``ValueError`` when stored data violate the manifold invariants."""
        if self.points.ndim != 2 or self.frames.shape != (self.size, self.ambient_dim, self.n):
            raise ValueError("inconsistent array shapes")
        if self.weights.shape != (self.size,) or np.any(self.weights <= 0):
            raise ValueError("weights must be positive, one per point")
        G = np.einsum("kdi,kdj->kij", self.frames, self.frames)
        if np.max(np.abs(G - np.eye(self.n))) > tol:
            raise ValueError("frames are not orthonormal")
        for f in self.factors:
            r = np.linalg.norm(self.points[:, f.ambient], axis=1)
            if np.max(np.abs(r - f.radius)) > 1e-9 * max(1.0, f.radius):
                raise ValueError("points do not lie on the model sphere")
            tang = np.einsum("kd,kdi->ki", self.points[:, f.ambient], self.frames[:, f.ambient, f.frame])
            if np.max(np.abs(tang)) > 1e-9 * max(1.0, f.radius):
                raise ValueError("frames are not tangent")


# ----------------------------------------------------------------------------
# Constructors
# ----------------------------------------------------------------------------


def _sphere_from_points(n, r, P, seed, method, symmetry=None) -> SampledManifold:
    P = np.asarray(P, dtype=float) * r
    F = householder_frames(P, r)
    N = P.shape[0]
    fac = SphereFactor(n, float(r), slice(0, n + 1), slice(0, n))
    return SampledManifold(
        n=n, points=P, frames=F, weights=np.full(N, sphere_volume(n, r) / N), factors=(fac,),
        kind="sphere", orientable_flag=True,
        meta={"kind": "sphere", "n": n, "radius": float(r), "N": N, "seed": seed, "method": method,
              "symmetry": symmetry},
    )


def sample_sphere(n: int, r: float, N: int, seed: int, method: str = "iid",
                  symmetry: str | None = None) -> SampledManifold:
    """Sample the round sphere ``S^n(r)``.

    Parameters
    ----------
    n, r, N : dimension, radius and number of points (``N >= n + 2``)
    seed : seed of the random generator
    method : {"iid", "lattice"}
        ``"iid"`` draws independent uniform points by normalizing Gaussian
        vectors.  ``"lattice"`` returns the quasi-uniform point set of
        :func:`quasi_uniform_sphere_points`.
    symmetry : optional symmetry of the lattice point set
    """
    if int(n) != n or n < 1:
        raise ValueError("sphere dimension must be a positive integer")
    if not r > 0:
        raise ValueError("radius must be positive")
    if int(N) != N or N < n + 2:
        raise ValueError("need at least n + 2 points")
    if method == "iid":
        if symmetry is not None:
            raise ValueError("symmetric samples require method='lattice'")
        P = _iid_sphere_points(n, N, np.random.default_rng(seed))
    elif method == "lattice":
        P = quasi_uniform_sphere_points(n, N, seed, symmetry=symmetry)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    return _sphere_from_points(n, r, P, seed, method, symmetry)


def _factor_list(M: SampledManifold) -> tuple[SampledManifold, ...]:
    if M.kind == "sphere":
        return (M,)
    if M.kind == "product":
        return M.factor_manifolds
    raise ValueError("products of quotients are not supported")


def product(M1: SampledManifold, M2: SampledManifold, budget: int | None = None,
            seed: int | None = None) -> SampledManifold:
    """Riemannian product with the l2 product distance.

    The point set is the full Cartesian grid (first factor index varying
    slowest), or a seeded random subset of ``budget`` grid points.
    """
    n = M1.n + M2.n
    if budget is not None and budget < n + 2:
        raise ValueError("budget must be at least n1 + n2 + 2")
    f1 = _factor_list(M1)
    f2 = _factor_list(M2)
    factors_m = f1 + f2
    if len(factors_m) != 2:
        raise ValueError("only products of two sphere factors are supported")
    A, B = factors_m
    N1, N2 = A.size, B.size
    I1, I2 = np.meshgrid(np.arange(N1), np.arange(N2), indexing="ij")
    idx = np.stack([I1.ravel(), I2.ravel()], axis=1)
    grid = (N1, N2)
    if budget is not None and budget < N1 * N2:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(N1 * N2, size=budget, replace=False))
        idx = idx[pick]
        grid = None
    D1, D2 = A.ambient_dim, B.ambient_dim
    P = np.hstack([A.points[idx[:, 0]], B.points[idx[:, 1]]])
    F = np.zeros((len(idx), D1 + D2, n))
    F[:, :D1, :A.n] = A.frames[idx[:, 0]]
    F[:, D1:, A.n:] = B.frames[idx[:, 1]]
    vol = A.volume * B.volume
    W = np.full(len(idx), vol / len(idx))
    fa, fb = A.factors[0], B.factors[0]
    factors = (
        SphereFactor(fa.dim, fa.radius, slice(0, D1), slice(0, A.n)),
        SphereFactor(fb.dim, fb.radius, slice(D1, D1 + D2), slice(A.n, n)),
    )
    meta = {"kind": "product", "n": n, "N": len(idx), "seed": seed, "budget": budget,
            "factors": [A.meta, B.meta]}
    return SampledManifold(
        n=n, points=P, frames=F, weights=W, factors=factors, kind="product",
        orientable_flag=bool(A.orientable_flag and B.orientable_flag), grid=grid, factor_index=idx,
        factor_manifolds=(A, B), meta=meta,
    )


def quotient_radius(p: int, n: int) -> float:
    """Radius ``a = sqrt((p-1)/(n-p-1))`` of the ``S^p`` factor in the quotient example."""
    return sqrt((p - 1) / (n - p - 1))


def _default_quotient_sizes(p: int, n: int, N: int) -> tuple[int, int]:
    # split the budget so that both factors have comparable spacing
    best = None
    for N2 in range(2 * (p + 2), N + 1, 2):
        if N % N2:
            continue
        h = N // N2
        if 2 * h < n - p + 2:
            continue
        spacing1 = (2 * h) ** (-1.0 / (n - p))
        spacing2 = N2 ** (-1.0 / p) * quotient_radius(p, n)
        score = abs(np.log(spacing1 / spacing2))
        if best is None or score < best[0]:
            best = (score, 2 * h, N2)
    if best is None:
        raise ValueError(f"cannot split N={N} into a symmetric grid")
    return best[1], best[2]


def quotient_example(p_odd: int, n: int, N: int, seed: int,
                     factor_sizes: tuple[int, int] | None = None) -> SampledManifold:
    """Sample the Z2 quotient of ``S^{n-p} x S^p(a)``.

    The deck transformation flips the sign of ``x_0`` and of all coordinates
    of the ``S^p`` factor.  It is free, and it reverses orientation because
    ``p`` is odd.  The cover is a Cartesian grid of a reflection-symmetric
    quasi-uniform sample of ``S^{n-p}`` and an antipodally symmetric one of
    ``S^p(a)``; representatives are the grid points with ``x_0 > 0``.

    Parameters
    ----------
    p_odd : odd integer ``p >= 3``
    n : total dimension, ``n > 2p``
    N : number of quotient points; must factor as ``(N1/2) * N2``
    factor_sizes : optional ``(N1, N2)`` with both even and ``N1 * N2 = 2N``
    """
    p = int(p_odd)
    if p < 3 or p % 2 == 0:
        raise ValueError("p must be an odd integer >= 3")
    if not n > 2 * p:
        raise ValueError("need n > 2p")
    if factor_sizes is None:
        N1, N2 = _default_quotient_sizes(p, n, N)
    else:
        N1, N2 = (int(v) for v in factor_sizes)
        if N1 % 2 or N2 % 2 or N1 * N2 != 2 * N:
            raise ValueError("factor sizes must be even with N1 * N2 = 2N")
    a = quotient_radius(p, n)
    S1 = sample_sphere(n - p, 1.0, N1, seed, method="lattice", symmetry="reflect0")
    S2 = sample_sphere(p, a, N2, seed + 1, method="lattice", symmetry="antipodal")
    return _quotient_from_factors(S1, S2, seed, p)


def _quotient_from_factors(S1: SampledManifold, S2: SampledManifold, seed, p) -> SampledManifold:
    cover = product(S1, S2, seed=seed)
    N1, N2 = cover.grid
    h = N1 // 2
    D1 = S1.ambient_dim
    signs = np.ones(cover.ambient_dim)
    signs[0] = -1.0
    signs[D1:] = -1.0
    reps = np.flatnonzero(cover.factor_index[:, 0] < h)
    n = cover.n
    a = S2.factors[0].radius
    vol = cover.volume / 2.0
    W = np.full(len(reps), vol / len(reps))
    meta = {"kind": "quotient", "n": n, "p": p, "N": len(reps), "seed": seed, "a": a,
            "factor_sizes": [N1, N2], "factors": [S1.meta, S2.meta],
            "diameter": float(sqrt(pi ** 2 + (pi * a) ** 2))}
    return SampledManifold(
        n=n, points=cover.points[reps], frames=cover.frames[reps], weights=W, factors=cover.factors,
        kind="quotient", orientable_flag=False, grid=None, factor_index=cover.factor_index[reps],
        factor_manifolds=cover.factor_manifolds, deck_signs=signs, cover=cover, rep_index=reps, meta=meta,
    )


def geodesic_point(M: SampledManifold, q: GeodesicQuery) -> np.ndarray:
    """Point ``gamma_u(t)`` of the unit-speed geodesic with ``gamma_u(0) = x``."""
    if M.kind not in ("sphere", "product", "quotient"):
        raise ValueError(f"unsupported manifold kind {M.kind!r}")
    return M.exp_map([q.x], np.asarray(q.u)[None] * q.t)[0]


@dataclass(frozen=True)
class BallRatio:
    ratio: float
    volume_fraction: float
    count: int
    undersampled: bool


def bishop_gromov_ratio(M: SampledManifold, x: int, r: float) -> BallRatio:
    """``Vol(B_r(x)) r^{-n} / Vol(M)`` estimated from the volume weights."""
    if not 0 < r <= M.diameter + 1:
        raise ValueError("radius must lie in (0, diam + 1]")
    d = M.distance_to_points(np.full(M.size, x), M.points)
    inside = d < r
    count = int(inside.sum())
    frac = float(M.weights[inside].sum() / M.volume)
    return BallRatio(ratio=frac * r ** (-M.n), volume_fraction=frac, count=count,
                     undersampled=count < M.n + 2)


# ----------------------------------------------------------------------------
# Text serialization
# ----------------------------------------------------------------------------


def _fmt(v: np.ndarray) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(v))


def manifold_to_text(M: SampledManifold) -> str:
    """Serialize as header lines ``# key: value`` followed by ``point | frame | weight`` rows."""
    header = {
        "format": "pinchcheck-manifold",
        "version": FORMAT_VERSION,
        "kind": M.kind,
        "n": M.n,
        "N": M.size,
        "ambient_dim": M.ambient_dim,
        "seed": M.meta.get("seed"),
        "factors": [f.to_dict() for f in M.factors],
        "grid": list(M.grid) if M.grid else None,
        "orientable": M.orientable_flag,
        "meta": M.meta,
    }
    if M.factor_index is not None:
        header["factor_index"] = M.factor_index.tolist()
    if M.kind == "quotient":
        header["deck_signs"] = M.deck_signs.tolist()
    lines = [f"# {k}: {json.dumps(v, sort_keys=True)}" for k, v in header.items()]
    for k in range(M.size):
        lines.append(f"{_fmt(M.points[k])} | {_fmt(M.frames[k])} | {repr(float(M.weights[k]))}")
    return "\n".join(lines) + "\n"


def _factor_sample(points, frames, weights_total, fac: SphereFactor, meta) -> SampledManifold:
    P = points[:, fac.ambient]
    F = frames[:, fac.ambient, fac.frame]
    N = P.shape[0]
    return SampledManifold(
        n=fac.dim, points=P, frames=F, weights=np.full(N, weights_total / N),
        factors=(SphereFactor(fac.dim, fac.radius, slice(0, fac.dim + 1), slice(0, fac.dim)),),
        kind="sphere", orientable_flag=True, meta=meta,
    )


def manifold_from_text(text: str) -> SampledManifold:
    """Parse :func:`manifold_to_text` output and validate the invariants."""
    header = {}
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = json.loads(val)
        else:
            rows.append(line)
    if header.get("format") != "pinchcheck-manifold":
        raise ValueError("not a manifold file")
    n = int(header["n"])
    D = int(header["ambient_dim"])
    if len(rows) != int(header["N"]):
        raise ValueError("row count does not match header")
    P = np.zeros((len(rows), D))
    F = np.zeros((len(rows), D, n))
    W = np.zeros(len(rows))
    for k, line in enumerate(rows):
        parts = line.split("|")
        if len(parts) != 3:
            raise ValueError(f"malformed row {k}")
        P[k] = np.array(parts[0].split(), dtype=float)
        F[k] = np.array(parts[1].split(), dtype=float).reshape(D, n)
        W[k] = float(parts[2])
    factors = tuple(
        SphereFactor(f["dim"], f["radius"], slice(*f["ambient"]), slice(*f["frame"])) for f in header["factors"]
    )
    kind = header["kind"]
    meta = header["meta"]
    if kind == "sphere":
        M = SampledManifold(n=n, points=P, frames=F, weights=W, factors=factors, kind="sphere",
                            orientable_flag=header["orientable"], meta=meta)
    elif kind in ("product", "quotient"):
        idx = np.asarray(header["factor_index"], dtype=np.intp)
        fac_ms = []
        sizes = idx.max(axis=0) + 1
        if kind == "quotient":
            sizes = np.asarray(meta["factor_sizes"])
        for a, fac in enumerate(factors):
            Na = int(sizes[a])
            Pa = np.zeros((Na, D))
            Fa = np.zeros((Na, D, n))
            seen = np.zeros(Na, dtype=bool)
            Pa[idx[:, a]] = P
            Fa[idx[:, a]] = F
            seen[idx[:, a]] = True
            if kind == "quotient" and not seen.all():
                # the missing half of the first factor is the mirror image
                h = Na // 2
                signs = np.asarray(header["deck_signs"])
                Pa[h:] = Pa[:h] * signs
                Fa[h:] = Fa[:h] * signs[None, :, None]
                seen[h:] = True
            if not seen.all():
                raise ValueError("factor samples cannot be recovered from the rows")
            vol = sphere_volume(fac.dim, fac.radius)
            fac_ms.append(_factor_sample(Pa, Fa, vol, fac, meta["factors"][a]))
        if kind == "product":
            M = product(fac_ms[0], fac_ms[1], seed=meta.get("seed"))
            if header["grid"] is None:
                M = _restrict(M, idx, meta)
        else:
            M = _quotient_from_factors(fac_ms[0], fac_ms[1], meta.get("seed"), meta.get("p"))
        if not (np.allclose(M.points, P, atol=1e-12) and np.allclose(M.frames, F, atol=1e-12)):
            raise ValueError("rows are inconsistent with the factor structure")
    else:
        raise ValueError(f"unknown manifold kind {kind!r}")
    if not np.allclose(M.weights, W, rtol=1e-12):
        raise ValueError("weights inconsistent with the model volume")
    M.validate()
    return M


def _restrict(M: SampledManifold, idx: np.ndarray, meta: dict) -> SampledManifold:
    N1, N2 = M.grid
    flat = idx[:, 0] * N2 + idx[:, 1]
    return SampledManifold(
        n=M.n, points=M.points[flat], frames=M.frames[flat], weights=np.full(len(flat), M.volume / len(flat)),
        factors=M.factors, kind="product", orientable_flag=M.orientable_flag, grid=None,
        factor_index=idx, factor_manifolds=M.factor_manifolds, meta=meta,
    )


def save_manifold(M: SampledManifold, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifold_to_text(M))


def load_manifold(path) -> SampledManifold:
    with open(path, encoding="utf-8") as fh:
        return manifold_from_text(fh.read())
