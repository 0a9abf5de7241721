"""Finite metric spaces, Hausdorff distances and certified Gromov-Hausdorff
upper bounds from approximation maps."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FiniteMetricSpace",
    "MetricAxiomError",
    "hausdorff_distance",
    "ApproximationCheck",
    "verify_approximation_map",
    "GluedMetric",
    "gh_upper_bound_from_map",
    "product_space",
    "map_distortion",
]

EXHAUSTIVE_LIMIT = 300
RANDOM_TRIPLES = 100_000
MAX_PRODUCT_SIZE = 8000


class MetricAxiomError(ValueError):
    """A distance matrix violates symmetry, zero diagonal or the triangle inequality."""


def _triangle_violation(D: np.ndarray, seed: int = 0, triples: int = RANDOM_TRIPLES) -> float:
    """Largest ``d(i,j) - d(i,k) - d(k,j)`` over all (small) or random (large) triples."""
    n = D.shape[0]
    if n == 0:
        return 0.0
    if n <= EXHAUSTIVE_LIMIT:
        worst = -np.inf
        for k in range(n):
            worst = max(worst, float(np.max(D - D[:, k:k + 1] - D[k:k + 1, :])))
        return worst
    rng = np.random.default_rng(seed)
    i, j, k = rng.integers(0, n, size=(3, triples))
    return float(np.max(D[i, j] - D[i, k] - D[k, j]))


class FiniteMetricSpace:
    """Symmetric distance matrix with zero diagonal, validated on construction.

    The triangle inequality is checked on all triples up to 300 points and on
    1e5 random triples above that.
    """

    def __init__(self, distances, validate: bool = True, tol: float = 1e-9, seed: int = 0):
        D = np.array(distances, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise MetricAxiomError("distance matrix must be square")
        if not np.all(np.isfinite(D)):
            raise MetricAxiomError("distances must be finite")
        if validate:
            scale = max(1.0, float(np.max(np.abs(D), initial=0.0)))
            if np.max(np.abs(D - D.T), initial=0.0) > tol * scale:
                raise MetricAxiomError("distance matrix is not symmetric")
            if np.max(np.abs(np.diag(D)), initial=0.0) > tol * scale:
                raise MetricAxiomError("diagonal must vanish")
            if np.min(D, initial=0.0) < -tol * scale:
                raise MetricAxiomError("negative distance")
            bad = _triangle_violation(D, seed)
            if bad > tol * scale:
                raise MetricAxiomError(f"triangle inequality violated by {bad:.3e}")
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
        D.setflags(write=False)
        self.distances = D

    @property
    def size(self) -> int:
        return self.distances.shape[0]

    def __len__(self):
        return self.size

    def diameter(self) -> float:
        return float(self.distances.max(initial=0.0))

    def subspace(self, idx) -> "FiniteMetricSpace":
        idx = np.asarray(idx, dtype=np.intp)
        return FiniteMetricSpace(self.distances[np.ix_(idx, idx)], validate=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, self.distances, delimiter=",", fmt="%.17g")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, validate: bool = True) -> "FiniteMetricSpace":
        D = np.loadtxt(io.StringIO(text), delimiter=",", ndmin=2)
        return cls(D, validate=validate)

    @classmethod
    def from_points(cls, X) -> "FiniteMetricSpace":
        """Euclidean distances between the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        diff = X[:, None, :] - X[None, :, :]
        return cls(np.sqrt(np.sum(diff ** 2, axis=-1)), validate=False)


def _subset(idx, size: int, name: str) -> np.ndarray:
    idx = np.unique(np.asarray(idx, dtype=np.intp).ravel())
    if idx.size == 0:
        raise ValueError(f"subset {name} is empty")
    if idx[0] < 0 or idx[-1] >= size:
        raise IndexError(f"subset {name} out of range")
    return idx


def hausdorff_distance(X: FiniteMetricSpace, A, B) -> float:
    """``max(sup_a d(a, B), sup_b d(b, A))`` for index subsets ``A``, ``B``."""
    A = _subset(A, X.size, "A")
    B = _subset(B, X.size, "B")
    D = X.distances[np.ix_(A, B)]
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def map_distortion(X: FiniteMetricSpace, Y: FiniteMetricSpace, phi, block: int = 1024):
    """Largest ``|d_X(a,b) - d_Y(phi a, phi b)|`` and a pair realizing it."""
    phi = np.asarray(phi, dtype=np.intp)
    worst, pair = 0.0, (0, 0)
    for s in range(0, X.size, block):
        rows = np.arange(s, min(s + block, X.size))
        diff = np.abs(X.distances[rows] - Y.distances[np.ix_(phi[rows], phi)])
        k = int(np.argmax(diff))
        val = float(diff.flat[k])
        if val > worst:
            worst, pair = val, (int(rows[k // X.size]), int(k % X.size))
    return worst, pair


@dataclass(frozen=True)
class ApproximationCheck:
    """Outcome of the two approximation-map conditions.

    ``measured_epsilon`` is the smallest ``epsilon`` for which both conditions
    hold in their non-strict form; on finite spaces this equals the infimum of
    admissible ``epsilon`` in the strict form.
    """

    passed: bool
    epsilon: float
    distortion: float
    distortion_pair: tuple[int, int]
    density: float
    worst_uncovered: int

    @property
    def measured_epsilon(self) -> float:
        return max(self.distortion, self.density)


def verify_approximation_map(X: FiniteMetricSpace, Y: FiniteMetricSpace, phi, epsilon: float) -> ApproximationCheck:
    """Check distortion and density of ``phi : X -> Y`` (``phi[a]`` indexes ``Y``)."""
    phi = np.asarray(phi, dtype=np.intp)
    if phi.shape != (X.size,):
        raise ValueError("map must assign a target index to every point")
    if phi.size and (phi.min() < 0 or phi.max() >= Y.size):
        raise IndexError("map target out of range")
    dist, pair = map_distortion(X, Y, phi)
    image = np.unique(phi)
    cover = Y.distances[:, image].min(axis=1)
    y = int(np.argmax(cover))
    dens = float(cover[y])
    return ApproximationCheck(
        passed=bool(dist <= epsilon and dens <= epsilon), epsilon=float(epsilon),
        distortion=dist, distortion_pair=pair, density=dens, worst_uncovered=y,
    )


@dataclass(frozen=True)
class GluedMetric:
    bound: float
    space: FiniteMetricSpace
    x_size: int
    triangle_violation: float


def gh_upper_bound_from_map(X: FiniteMetricSpace, Y: FiniteMetricSpace, phi, epsilon: float,
                            seed: int = 0, max_size: int = 3000) -> GluedMetric:
    """Certify ``d_GH(X, Y) <= 3 epsilon / 2`` by materializing the glued metric.

    On ``X`` and ``Y`` the glued metric restricts to ``d_X`` and ``d_Y``;
    between ``a in X`` and ``b in Y`` it is
    ``epsilon/2 + min_x (d_X(a, x) + d_Y(phi x, b))``.  The triangle inequality
    is validated, and fails exactly when ``epsilon`` is too small for ``phi``.

    Raises
    ------
    MetricAxiomError
        When the map is not an ``epsilon``-approximation or the glued matrix
        violates the triangle inequality.
    """
    check = verify_approximation_map(X, Y, phi, epsilon)
    if not check.passed:
        raise MetricAxiomError(
            f"map is not an {epsilon:g}-approximation (distortion {check.distortion:.4g}, density {check.density:.4g})")
    nx, ny = X.size, Y.size
    if nx + ny > max_size:
        raise ValueError(f"glued space of size {nx + ny} exceeds max_size={max_size}")
    phi = np.asarray(phi, dtype=np.intp)
    DY_phi = Y.distances[phi]  # (nx, ny): d_Y(phi x, b)
    cross = np.full((nx, ny), np.inf)
    for x in range(nx):
        np.minimum(cross, X.distances[:, x:x + 1] + DY_phi[x:x + 1, :], out=cross)
    cross += 0.5 * epsilon
    D = np.block([[X.distances, cross], [cross.T, Y.distances]])
    bad = _triangle_violation(D, seed)
    scale = max(1.0, float(D.max(initial=0.0)))
    if bad > 1e-9 * scale:
        raise MetricAxiomError(f"glued metric violates the triangle inequality by {bad:.3e}")
    return GluedMetric(bound=1.5 * float(epsilon), space=FiniteMetricSpace(D, validate=False),
                       x_size=nx, triangle_violation=float(bad))


def product_space(S: FiniteMetricSpace, X: FiniteMetricSpace, max_size: int = MAX_PRODUCT_SIZE) -> FiniteMetricSpace:
    """Cartesian product with ``d = sqrt(d_S^2 + d_X^2)``; point ``(i, j)`` has index ``i * |X| + j``."""
    size = S.size * X.size
    if size > max_size:
        raise ValueError(f"product of size {size} exceeds max_size={max_size}")
    D2 = S.distances[:, None, :, None] ** 2 + X.distances[None, :, None, :] ** 2
    return FiniteMetricSpace(np.sqrt(D2).reshape(size, size), validate=False)
