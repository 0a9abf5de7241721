"""Closed-form reference values: model spectra, eigenvalue bounds and the
constants and exponents attached to the pinching estimates."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import comb, exp, sqrt

import numpy as np

__all__ = [
    "SpectrumTable",
    "sphere_function_spectrum",
    "sphere_one_form_hodge_spectrum",
    "product_spectrum",
    "point_spectrum",
    "Bounds",
    "bounds",
    "c1_constant",
    "PinchingExponents",
    "pinching_exponents",
    "alpha_forms",
]


@dataclass(frozen=True)
class SpectrumTable:
    """Eigenvalues with multiplicities, ascending.

    ``ceiling`` is the value below which the table is known to be complete.
    """

    eigenvalues: tuple[float, ...]
    multiplicities: tuple[int, ...]
    ceiling: float = float("inf")

    def __post_init__(self):
        ev = tuple(float(v) for v in self.eigenvalues)
        mu = tuple(int(m) for m in self.multiplicities)
        if len(ev) != len(mu):
            raise ValueError("eigenvalues and multiplicities differ in length")
        if any(m < 1 for m in mu):
            raise ValueError("multiplicities must be positive")
        if any(b <= a for a, b in zip(ev, ev[1:])):
            raise ValueError("eigenvalues must be strictly increasing")
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "multiplicities", mu)

    def expanded(self, count: int | None = None) -> np.ndarray:
        """Eigenvalues repeated by multiplicity (first ``count`` of them)."""
        vals = np.repeat(np.asarray(self.eigenvalues), self.multiplicities)
        return vals if count is None else vals[:count]

    def pairs(self):
        return list(zip(self.eigenvalues, self.multiplicities))


def _harmonic_dim(n: int, k: int) -> int:
    """Dimension of degree-k spherical harmonics on ``S^n``."""
    if k == 0:
        return 1
    return comb(n + k, n) - comb(n + k - 2, n)


def sphere_function_spectrum(n: int, r: float = 1.0, kmax: int = 4) -> SpectrumTable:
    """Laplace spectrum ``k(k+n-1)/r^2`` of ``S^n(r)`` for degrees ``0..kmax``."""
    if n < 1:
        raise ValueError("n must be positive")
    ks = range(kmax + 1)
    ev = [k * (k + n - 1) / r ** 2 for k in ks]
    mu = [_harmonic_dim(n, k) for k in ks]
    ceiling = (kmax + 1) * (kmax + n) / r ** 2
    return SpectrumTable(tuple(ev), tuple(mu), ceiling)


def sphere_one_form_hodge_spectrum(r: float = 1.0, kmax: int = 4) -> SpectrumTable:
    """Hodge spectrum on 1-forms of ``S^2(r)``: ``k(k+1)/r^2`` with multiplicity ``2(2k+1)``.

    Exact forms ``df`` and co-exact forms ``*df`` of degree-k harmonics both
    contribute; there are no harmonic 1-forms.
    """
    ks = range(1, kmax + 1)
    ev = [k * (k + 1) / r ** 2 for k in ks]
    mu = [2 * (2 * k + 1) for k in ks]
    return SpectrumTable(tuple(ev), tuple(mu), (kmax + 1) * (kmax + 2) / r ** 2)


def point_spectrum() -> SpectrumTable:
    """Spectrum of a one-point space (the neutral element of products)."""
    return SpectrumTable((0.0,), (1,))


def product_spectrum(t1: SpectrumTable, t2: SpectrumTable, ceiling: float | None = None) -> SpectrumTable:
    """Spectrum of a Riemannian product by separation of variables.

    All sums ``a + b`` with multiplicity products, merged when equal up to
    1e-12 relative, truncated to the range where both inputs are complete.
    """
    lim = min(t1.ceiling + min(t2.eigenvalues), t2.ceiling + min(t1.eigenvalues))
    if ceiling is not None:
        lim = min(lim, ceiling)
    acc: dict[float, int] = {}
    keys: list[float] = []
    for a, ma in t1.pairs():
        for b, mb in t2.pairs():
            s = a + b
            if s >= lim:
                continue
            hit = None
            for key in keys:
                if abs(key - s) <= 1e-12 * max(1.0, abs(s)):
                    hit = key
                    break
            if hit is None:
                keys.append(s)
                acc[s] = 0
                hit = s
            acc[hit] += ma * mb
    ev = sorted(acc)
    return SpectrumTable(tuple(ev), tuple(acc[v] for v in ev), lim)


@dataclass(frozen=True)
class Bounds:
    """First-eigenvalue lower bounds for dimension ``n`` and form degree ``p``."""

    n: int
    p: int
    lichnerowicz: float
    grosjean: float
    kahler: float
    quaternionic: float
    flags: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def bounds(n: int, p: int) -> Bounds:
    """Lichnerowicz-type floor, the parallel-form bound and the Kähler variants.

    ``lichnerowicz = n(n-p-1)/(n-1)`` is the floor implied by
    ``Ric >= (n-p-1)g`` alone, ``grosjean = n - p`` the improvement with a
    parallel p-form, ``kahler = 2(n-1)`` and
    ``quaternionic = (2n+8)/(n+8) (n-1)``.  ``flags`` marks bounds evaluated
    outside their range of validity.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    flags = {
        "form_degree_in_range": 2 <= p <= n / 2,
        "kahler_dimension_even": n % 2 == 0,
        "quaternionic_dimension_multiple_of_4": n % 4 == 0,
    }
    return Bounds(
        n=n, p=p,
        lichnerowicz=n * (n - p - 1) / (n - 1),
        grosjean=float(n - p),
        kahler=2.0 * (n - 1),
        quaternionic=(2 * n + 8) / (n + 8) * (n - 1),
        flags=flags,
    )


def c1_constant(n: int, K: float, D: float) -> float:
    """``1/((n-1) D^2 exp(1 + sqrt(1 + 4(n-1) K D^2)))``.

    ``K = 0`` returns the ``K -> 0+`` limit.  The orientability criterion
    evaluates it at twice the diameter.
    """
    if n < 2 or K < 0 or D <= 0:
        raise ValueError("need n >= 2, K >= 0, D > 0")
    return 1.0 / ((n - 1) * D ** 2 * exp(1.0 + sqrt(1.0 + 4.0 * (n - 1) * K * D ** 2)))


@dataclass(frozen=True)
class PinchingExponents:
    """Values of the exponent ladder at ``delta`` and their exact exponents of ``delta``."""

    delta: float
    n: int
    eta0: float
    eta1: float
    eta2: float
    L: float
    alpha_rate: float
    pythagorean_rate: float
    exponents: dict
    in_stated_range: bool

    def to_dict(self):
        d = asdict(self)
        d["exponents"] = {k: str(v) for k, v in self.exponents.items()}
        return d


def pinching_exponents(delta: float, n: int) -> PinchingExponents:
    """``eta0 = delta^{1/12000n^3}``, ``eta1 = eta0^{1/26}``, ``eta2 = eta1^{1/78}``,
    ``L = eta2^{1/150}``; the Hausdorff-approximation rate is ``L^{1/156n}`` and
    the Pythagorean rate ``L^{1/78n}``.

    Exponents are kept as exact fractions; the float values are computed as
    ``exp(e * log(delta))`` so tiny exponents never underflow.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    if n < 1:
        raise ValueError("n must be positive")
    e0 = Fraction(1, 12000 * n ** 3)
    e1 = e0 / 26
    e2 = e1 / 78
    eL = e2 / 150
    rate = eL / (156 * n)
    pyth = eL / (78 * n)
    ld = np.log(delta)

    def val(e):
        return float(np.exp(float(e) * ld))

    return PinchingExponents(
        delta=float(delta), n=n, eta0=val(e0), eta1=val(e1), eta2=val(e2), L=val(eL),
        alpha_rate=val(rate), pythagorean_rate=val(pyth),
        exponents={"eta0": e0, "eta1": e1, "eta2": e2, "L": eL, "alpha_rate": rate, "pythagorean_rate": pyth},
        in_stated_range=n >= 5,
    )


def alpha_forms(n: int, p: int) -> int:
    """``n!/(p!(n-p)!)``: the dimension of ``Lambda^p`` of an n-dimensional space."""
    if not 0 <= p <= n:
        raise ValueError("need 0 <= p <= n")
    return comb(n, p)
