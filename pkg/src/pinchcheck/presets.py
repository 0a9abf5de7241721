"""Named model manifolds used by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, fields
from math import isqrt, sqrt

from .manifolds import SampledManifold, product, quotient_example, quotient_radius, sample_sphere

__all__ = ["RunConfig", "ConfigError", "PRESETS", "SCHEMA_VERSION", "build_preset", "grid_side", "preset_echo"]

SCHEMA_VERSION = "1.0"


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


# Defaults for the named presets; the three generic kinds require explicit sizes.
PRESETS = {
    "sphere": {"kind": "sphere"},
    "product": {"kind": "product"},
    "p3e-quotient": {"kind": "quotient", "p": 3, "n": 7},
    "s2": {"kind": "sphere", "n": 2, "radius": 1.0, "points": 4000, "method": "iid", "seed": 7},
    "s2xs2": {"kind": "product", "n": 4, "p": 2, "radius": 1.0, "points": 3600},
    "kahler-product": {"kind": "product", "n": 4, "p": 2, "radius": 1 / sqrt(3), "points": 3600, "scale": 1 / sqrt(3)},
    "s4xs3": {"kind": "product", "n": 7, "p": 3, "radius": sqrt(2 / 3), "points": 6000, "sizes": (200, 30)},
    "p3e-coarse": {"kind": "quotient", "p": 3, "n": 7, "points": 1500},
}


@dataclass
class RunConfig:
    """Validated inputs of one command-line run.

    ``radius`` is the sphere radius for spheres and the radius of the
    ``S^p`` factor for products; the ``S^{n-p}`` factor has radius ``scale``.
    """

    preset: str = "sphere"
    n: int | None = None
    p: int | None = None
    radius: float | None = None
    points: int | None = None
    seed: int | None = None
    bandwidth: float | None = None
    method: str | None = None
    scale: float | None = None
    sizes: tuple | None = None
    suite: str = "all"
    k: int = 9
    trials: int = 50
    margin: float = 0.08
    manifold: str | None = None
    out: str | None = None
    format: str = "json"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**{k: v for k, v in d.items() if v is not None})
        cfg.validate()
        return cfg

    def with_preset_defaults(self) -> "RunConfig":
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        base = {k: v for k, v in PRESETS[self.preset].items() if k != "kind"}
        cur = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in base.items():
            if cur[k] is None:
                cur[k] = v
        cur["seed"] = 0 if cur["seed"] is None else cur["seed"]
        cur["scale"] = 1.0 if cur["scale"] is None else cur["scale"]
        out = RunConfig(**cur)
        out.validate()
        return out

    def validate(self) -> None:
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if self.points is not None and self.points < 2:
            raise ConfigError("points must be at least 2")
        if self.radius is not None and not self.radius > 0:
            raise ConfigError("radius must be positive")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be positive")
        if self.p is not None and self.n is not None and not 0 <= self.p <= self.n:
            raise ConfigError(f"p must lie in 0..n, got p={self.p}, n={self.n}")
        if self.k < 1 or self.trials < 1:
            raise ConfigError("k and trials must be positive")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["sizes"] = list(self.sizes) if self.sizes is not None else None
        d.pop("out")
        return d


def grid_side(points: int) -> int:
    """Per-factor size of a square product grid with about ``points`` points."""
    return max(2, isqrt(points) if isqrt(points) ** 2 == points else round(sqrt(points)))


def build_preset(cfg: RunConfig) -> SampledManifold:
    """Sample the manifold described by ``cfg`` (preset defaults already applied)."""
    kind = PRESETS[cfg.preset]["kind"]
    if cfg.points is None:
        raise ConfigError(f"preset {cfg.preset!r} needs --points")
    if kind == "sphere":
        n = cfg.n if cfg.n is not None else 2
        return sample_sphere(n, cfg.radius or 1.0, cfg.points, cfg.seed, cfg.method or "iid")
    if kind == "product":
        n = cfg.n if cfg.n is not None else 4
        p = cfg.p if cfg.p is not None else n // 2
        if not 1 <= p < n:
            raise ConfigError("product presets need 1 <= p < n")
        if cfg.sizes is not None:
            s1, s2 = cfg.sizes
        else:
            s1 = s2 = grid_side(cfg.points)
        method = cfg.method or "lattice"
        M1 = sample_sphere(n - p, cfg.scale, s1, cfg.seed, method)
        M2 = sample_sphere(p, cfg.radius or 1.0, s2, cfg.seed + 1, method)
        return product(M1, M2)
    p = cfg.p if cfg.p is not None else 3
    n = cfg.n if cfg.n is not None else 7
    if p % 2 == 0 or not 1 <= p < n:
        raise ConfigError("the quotient preset needs odd p with 1 <= p < n")
    return quotient_example(p, n, cfg.points, cfg.seed, factor_sizes=cfg.sizes)


def preset_echo(M: SampledManifold, cfg: RunConfig) -> dict:
    """Header echoed by ``build``: construction metadata plus derived radii."""
    echo = {"preset": cfg.preset, "kind": M.kind, "n": M.n, "N": M.size, "seed": cfg.seed,
            "orientable": M.orientable_flag, "meta": M.meta}
    if M.kind == "quotient":
        echo["a"] = quotient_radius(M.meta["p"], M.n)
    return echo
