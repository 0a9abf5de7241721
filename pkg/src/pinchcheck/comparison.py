"""Numerical versions of the comparison toolkit: the cosine ODE comparison,
elementary trigonometric inequalities, the segment inequality and averaging
along the geodesic flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.spatial import cKDTree

from .manifolds import SampledManifold

__all__ = [
    "SampledCurveFunction",
    "TrifResult",
    "trif_bound_check",
    "CosiResult",
    "cosi_inequalities",
    "cosi_grid_sweep",
    "SegmentEstimate",
    "segment_inequality_estimate",
    "FlowAverage",
    "geodesic_flow_average",
    "field_evaluator",
    "run_toolkit_suite",
    "TOOLKIT_SUITES",
]

MIN_NODES = 16
_ULP = 8 * np.finfo(float).eps


@dataclass(frozen=True)
class SampledCurveFunction:
    """Values of ``u : [0, l] -> R`` on a strictly increasing grid starting at 0."""

    t: np.ndarray
    u: np.ndarray
    du: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if t.ndim != 1 or u.shape != t.shape:
            raise ValueError("t and u must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(u))):
            raise ValueError("grid and values must be finite")
        if abs(t[0]) > 0:
            raise ValueError("grid must start at 0")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "u", u)
        if self.du is not None:
            du = np.asarray(self.du, dtype=float)
            if du.shape != t.shape or not np.all(np.isfinite(du)):
                raise ValueError("derivative values must be finite and match the grid")
            object.__setattr__(self, "du", du)

    @classmethod
    def from_function(cls, fun, length: float, nodes: int = 2001, derivative=None):
        t = np.linspace(0.0, length, nodes)
        return cls(t, fun(t), None if derivative is None else derivative(t))

    @property
    def length(self) -> float:
        return float(self.t[-1])


def _sin_over_r(r, t):
    return t if r == 0 else np.sin(r * t) / r


def _sinh_over_r(r, t):
    return t if r == 0 else np.sinh(r * t) / r


@dataclass(frozen=True)
class TrifResult:
    lhs_max: float
    rhs_at_max: float
    satisfied: bool
    value_satisfied: bool
    derivative_satisfied: bool
    worst_ratio: float
    derivative_lhs_max: float
    quadrature_epsilon: float
    epsilon_used: float
    precondition_holds: bool
    safety_factor: float


def trif_bound_check(u: SampledCurveFunction, r: float, epsilon: float | None = None) -> TrifResult:
    """Check the cosine comparison bounds for a sampled function.

    With ``v(t) = u(t) - u(0) cos rt - u'(0) sin(rt)/r`` the two inequalities
    checked on the grid are ``|v(t)| <= eps sinh(rt)/r`` and
    ``|v'(t)| <= eps + max(1, r^2) int_0^t |v|``.

    The defect ``int |u'' + r^2 u|`` is estimated with central second
    differences and the trapezoidal rule.  Because the discrete defect, the
    discrete ``u'(0)`` and the quadrature all carry O(h^2) errors, the bound is
    evaluated with ``eps * (1 + h_max)`` plus the Richardson-type difference
    between estimates on the grid and on every other node; this is the safety
    factor that keeps the discrete check sound.

    Parameters
    ----------
    u : sampled function; derivative values are used when present
    r : frequency, ``r >= 0``; ``r = 0`` uses ``sin(rt)/r := t``
    epsilon : claimed bound on the defect integral; defaults to the quadrature
        estimate

    Returns
    -------
    TrifResult
    """
    if r < 0:
        raise ValueError("r must be non-negative")
    t, vals = u.t, u.u
    if len(t) < MIN_NODES:
        raise ValueError(f"grid too coarse: need at least {MIN_NODES} nodes")

    def defect(tt, uu, duu):
        d1 = duu if duu is not None else np.gradient(uu, tt, edge_order=2)
        d2 = np.gradient(d1, tt, edge_order=2)
        return trapezoid(np.abs(d2 + r * r * uu), tt), d1

    quad, du = defect(t, vals, u.du)
    coarse, du_coarse = defect(t[::2], vals[::2], None if u.du is None else u.du[::2])
    h_max = float(np.max(np.diff(t)))
    uncertainty = abs(quad - coarse) + abs(du[0] - du_coarse[0]) * float(np.max(_sinh_over_r(r, t)))
    eps_claim = quad if epsilon is None else float(epsilon)
    precondition = quad <= eps_claim * (1 + 1e-12) + 1e-15
    safety = 1.0 + h_max
    eps_used = eps_claim * safety + uncertainty

    u0, du0 = vals[0], du[0]
    v = vals - u0 * np.cos(r * t) - du0 * _sin_over_r(r, t)
    lhs = np.abs(v)
    rhs = eps_used * _sinh_over_r(r, t)
    value_ok = bool(np.all(lhs <= rhs + _ULP * (1 + np.abs(vals))))

    dv = du + r * u0 * np.sin(r * t) - du0 * np.cos(r * t)
    dlhs = np.abs(dv)
    drhs = eps_used + max(1.0, r * r) * cumulative_trapezoid(lhs, t, initial=0.0)
    deriv_ok = bool(np.all(dlhs <= drhs + _ULP * (1 + np.abs(du))))

    k = int(np.argmax(lhs))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    return TrifResult(
        lhs_max=float(lhs[k]), rhs_at_max=float(rhs[k]),
        satisfied=value_ok and deriv_ok, value_satisfied=value_ok, derivative_satisfied=deriv_ok,
        worst_ratio=float(np.max(ratios)), derivative_lhs_max=float(dlhs.max()),
        quadrature_epsilon=float(quad), epsilon_used=float(eps_used),
        precondition_holds=bool(precondition), safety_factor=float(safety),
    )


@dataclass(frozen=True)
class CosiResult:
    """Outcome of the four elementary cosine inequalities."""

    quadratic_lower: bool
    quartic_upper: bool
    ninth_upper: bool | None
    separation: bool | None

    def all(self) -> bool:
        return all(v is not False for v in (self.quadratic_lower, self.quartic_upper, self.ninth_upper, self.separation))


def _cosi_arrays(t):
    t = np.asarray(t, dtype=float)
    c = np.cos(t)
    tol = _ULP
    lower = 1 - t ** 2 / 2 <= c + tol
    upper = c <= 1 - t ** 2 / 2 + t ** 4 / 24 + tol
    ninth = np.where(np.abs(t) <= np.pi, c <= 1 - t ** 2 / 9 + tol, True)
    return lower, upper, ninth


def _separation(t1, t2):
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    # cos t1 - cos t2 via the product formula keeps full relative accuracy near 0 and pi
    gap = np.abs(2.0 * np.sin(0.5 * (t1 + t2)) * np.sin(0.5 * (t1 - t2)))
    return np.abs(t1 - t2) <= 3 * np.sqrt(gap) + _ULP


def cosi_inequalities(t: float, t1: float | None = None, t2: float | None = None) -> CosiResult:
    """Evaluate ``1 - t^2/2 <= cos t <= 1 - t^2/2 + t^4/24``, ``cos t <= 1 - t^2/9``
    (for ``|t| <= pi``) and ``|t1 - t2| <= 3 |cos t1 - cos t2|^{1/2}`` (for
    ``t1, t2`` in ``[0, pi]``).

    The ninth-power bound is ``None`` outside its domain; the separation
    inequality is ``None`` when ``t1``/``t2`` are omitted.
    """
    lower, upper, ninth = _cosi_arrays(t)
    sep = None
    if t1 is not None or t2 is not None:
        if t1 is None or t2 is None:
            raise ValueError("give both t1 and t2")
        if not (0 <= t1 <= np.pi and 0 <= t2 <= np.pi):
            raise ValueError("t1 and t2 must lie in [0, pi]")
        sep = bool(_separation(t1, t2))
    return CosiResult(bool(lower), bool(upper), bool(ninth) if abs(t) <= np.pi else None, sep)


def cosi_grid_sweep(spacing: float = 1e-3, chunk: int = 256) -> dict:
    """Count violations of the cosine inequalities on a grid of ``[0, pi]`` and ``[0, pi]^2``."""
    grid = np.arange(0.0, np.pi, spacing)
    grid = np.append(grid, np.pi)
    lower, upper, ninth = _cosi_arrays(np.concatenate([-grid[::-1], grid]))
    sep_bad = 0
    for s in range(0, len(grid), chunk):
        a = grid[s:s + chunk, None]
        sep_bad += int(np.count_nonzero(~_separation(a, grid[None, :])))
    return {
        "nodes": int(len(grid)),
        "pairs": int(len(grid) ** 2),
        "quadratic_lower_violations": int(np.count_nonzero(~lower)),
        "quartic_upper_violations": int(np.count_nonzero(~upper)),
        "ninth_upper_violations": int(np.count_nonzero(~ninth)),
        "separation_violations": sep_bad,
    }


def field_evaluator(M: SampledManifold, values) -> callable:
    """Nearest-sample interpolation of a sampled scalar field, as a function of ambient points.

    For quotients the deck images of the representatives are included so any
    lift of a point finds its nearest sample.
    """
    vals = np.asarray(values, dtype=float).reshape(-1)
    if vals.shape[0] != M.size:
        raise ValueError("field length does not match the manifold")
    pts = M.points
    if M.kind == "quotient":
        pts = np.vstack([pts, pts * M.deck_signs])
        vals = np.concatenate([vals, vals])
    tree = cKDTree(pts)

    def evaluate(Y):
        _, idx = tree.query(np.atleast_2d(Y))
        return vals[idx]

    return evaluate


def _as_function(M: SampledManifold, h):
    if callable(h):
        return h, np.asarray(h(M.points), dtype=float).reshape(-1)
    vals = np.asarray(h, dtype=float).reshape(-1)
    return field_evaluator(M, vals), vals


def _bootstrap_sigma(samples: np.ndarray, rng: np.random.Generator, reps: int = 200) -> float:
    idx = rng.integers(0, len(samples), size=(reps, len(samples)))
    return float(np.std(samples[idx].mean(axis=1), ddof=1))


@dataclass(frozen=True)
class SegmentEstimate:
    lhs: float
    rhs: float
    ratio: float
    ratio_sigma: float
    pairs: int


def segment_inequality_estimate(M: SampledManifold, h, n_pairs: int = 2000, seed: int = 0,
                                quad_nodes: int = 16) -> SegmentEstimate:
    """Monte-Carlo evaluation of both sides of the segment inequality.

    ``lhs`` averages ``(1/d) int_0^d h(gamma(s)) ds`` over random pairs of
    sample points (Gauss-Legendre in the segment parameter); ``rhs`` is the
    volume average of ``h``.  The ratio is the empirical constant, with a
    bootstrap standard error.

    Parameters
    ----------
    h : callable on ambient points, or sampled values (nearest-sample
        interpolation along the segments)
    """
    fun, vals = _as_function(M, h)
    if np.any(vals < 0):
        raise ValueError("h must be non-negative")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, M.size, n_pairs)
    j = rng.integers(0, M.size, n_pairs)
    keep = i != j
    i, j = i[keep], j[keep]
    nodes, wq = np.polynomial.legendre.leggauss(quad_nodes)
    tau = 0.5 * (nodes + 1.0)
    wq = 0.5 * wq
    v = M.log_map(i, j)
    line = np.zeros(len(i))
    for tk, wk in zip(tau, wq):
        line += wk * np.asarray(fun(M.exp_map(i, tk * v)), dtype=float).reshape(-1)
    rhs = float(np.sum(M.weights * vals) / M.volume)
    lhs = float(line.mean())
    if rhs <= 0:
        raise ValueError("h vanishes identically")
    sigma = _bootstrap_sigma(line, rng) / rhs
    return SegmentEstimate(lhs=lhs, rhs=rhs, ratio=lhs / rhs, ratio_sigma=sigma, pairs=int(len(i)))


@dataclass(frozen=True)
class FlowAverage:
    flow_avg: float
    volume_avg: float
    sigma: float
    within_3_sigma: bool


def geodesic_flow_average(M: SampledManifold, f, l: float, n_dirs: int = 4000, seed: int = 0,
                          time_nodes: int = 16) -> FlowAverage:
    """Average of ``f`` along geodesics of length ``l`` from random unit vectors,
    compared with the volume average.

    Base points are drawn from the sample with probability proportional to
    the volume weights and directions uniformly from the unit sphere of the
    tangent space.  ``sigma`` combines the bootstrap error of the flow
    average with the sampling error of the volume quadrature.
    """
    if l <= 0:
        raise ValueError("l must be positive")
    fun, vals = _as_function(M, f)
    rng = np.random.default_rng(seed)
    base = rng.choice(M.size, size=n_dirs, p=M.weights / M.volume)
    u = rng.standard_normal((n_dirs, M.n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    nodes, wq = np.polynomial.legendre.leggauss(time_nodes)
    ts = 0.5 * l * (nodes + 1.0)
    wq = 0.5 * wq
    line = np.zeros(n_dirs)
    for tk, wk in zip(ts, wq):
        line += wk * np.asarray(fun(M.exp_map(base, tk * u)), dtype=float).reshape(-1)
    flow = float(line.mean())
    vol = float(np.sum(M.weights * vals) / M.volume)
    s_flow = _bootstrap_sigma(line, rng)
    s_vol = float(np.std(vals) / np.sqrt(M.size))
    sigma = float(np.hypot(s_flow, s_vol))
    ok = abs(flow - vol) <= 3 * sigma + 1e-12 * (1 + abs(vol))
    return FlowAverage(flow_avg=flow, volume_avg=vol, sigma=sigma, within_3_sigma=bool(ok))


TOOLKIT_SUITES = ("trif", "cosi", "segment", "flow")


def _cap_indicator(center, radius):
    center = np.asarray(center, dtype=float)
    return lambda Y: (np.linalg.norm(Y - center, axis=1) < radius).astype(float)


def run_toolkit_suite(M: SampledManifold, suites=TOOLKIT_SUITES, seed: int = 0, n_pairs: int = 2000,
                      n_dirs: int = 4000) -> dict:
    """Property checks of the comparison toolkit on one sampled manifold.

    * ``trif``: exact solutions ``cos(rt)`` and perturbed ones for several ``r``
      must satisfy both comparison bounds.
    * ``cosi``: no violation on the fine grid sweep.
    * ``segment``: ``h = 1`` gives ratio 1, and the ratios of a cap indicator
      over three seeds agree within three combined standard deviations.
    * ``flow``: flow and volume averages of two smooth functions agree within
      three standard deviations.
    """
    unknown = set(suites) - set(TOOLKIT_SUITES)
    if unknown:
        raise ValueError(f"unknown toolkit suites: {sorted(unknown)}")
    out = {}
    if "trif" in suites:
        rows = []
        for r in (0.0, 0.5, 1.0, 2.0):
            for amp in (0.0, 1e-3, 1e-1):
                base = (lambda t, r=r: np.cos(r * t)) if r else (lambda t: 1.0 + 0.5 * t)
                u = SampledCurveFunction.from_function(lambda t, b=base, a=amp: b(t) + a * t ** 2, 3.0)
                res = trif_bound_check(u, r)
                rows.append({"r": r, "perturbation": amp, "satisfied": res.satisfied,
                             "worst_ratio": res.worst_ratio, "epsilon": res.quadrature_epsilon})
        out["trif"] = {"passed": all(x["satisfied"] for x in rows), "cases": rows}
    if "cosi" in suites:
        sweep = cosi_grid_sweep()
        out["cosi"] = {"passed": all(v == 0 for k, v in sweep.items() if k.endswith("violations")), **sweep}
    if "segment" in suites:
        ones = segment_inequality_estimate(M, lambda Y: np.ones(len(Y)), n_pairs=n_pairs, seed=seed)
        cap = _cap_indicator(M.points[0], 0.5 * M.diameter / 2)
        ests = [segment_inequality_estimate(M, cap, n_pairs=n_pairs, seed=seed + s) for s in range(3)]
        stable = all(abs(a.ratio - b.ratio) <= 3 * np.hypot(a.ratio_sigma, b.ratio_sigma) + 1e-12
                     for i, a in enumerate(ests) for b in ests[i + 1:])
        finite = all(np.isfinite(e.ratio) and e.rhs > 0 for e in ests)
        out["segment"] = {"passed": bool(abs(ones.ratio - 1.0) < 1e-9 and stable and finite),
                          "constant_ratio": ones.ratio, "ratios": [e.ratio for e in ests],
                          "sigmas": [e.ratio_sigma for e in ests]}
    if "flow" in suites:
        D = M.points.shape[1]
        funcs = {"coordinate": lambda Y: Y[:, D - 1], "smooth": lambda Y: np.exp(Y[:, 0]) + Y[:, 1] ** 2}
        rows = []
        for name, f in funcs.items():
            fa = geodesic_flow_average(M, f, 1.3, n_dirs=n_dirs, seed=seed)
            rows.append({"function": name, "flow_avg": fa.flow_avg, "volume_avg": fa.volume_avg,
                         "sigma": fa.sigma, "within_3_sigma": fa.within_3_sigma})
        out["flow"] = {"passed": all(x["within_3_sigma"] for x in rows), "cases": rows}
    out["passed"] = all(v["passed"] for v in out.values())
    return out
