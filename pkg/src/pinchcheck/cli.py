"""Command-line entry point.

Each command builds (or loads) a sampled manifold, runs one verification
suite and writes a versioned JSON report or flat CSV.  Exit codes: 0 success,
2 usage, 3 numerical failure, 4 invariant violation.

Two environment variables are read.  ``PINCHCHECK_THREADS`` caps the BLAS
thread pools when set before numpy is first imported, and
``SOURCE_DATE_EPOCH`` fixes the report timestamp so repeated runs are
byte-identical.
"""

from __future__ import annotations

import os

if os.environ.get("PINCHCHECK_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["PINCHCHECK_THREADS"])

import argparse
import datetime as _dt
import io
import json
import sys
from math import comb

import numpy as np

from .comparison import TOOLKIT_SUITES, run_toolkit_suite
from .gh import MetricAxiomError
from .harness import aligned_bundle, low_eigenforms, run_pinching
from .kahler import eigenform_gram_diagnostic, lemma_pb4_sweep, verify_kahler_bound
from .manifolds import SampledManifold, load_manifold, save_manifold
from .operators import (
    DisconnectedGraphError,
    UndersampledError,
    assemble_connection_laplacian,
    assemble_function_laplacian,
)
from .orientability import build_F, build_V, detect_orientability, select_xi
from .presets import PRESETS, SCHEMA_VERSION, ConfigError, RunConfig, build_preset, preset_echo
from .reference import pinching_exponents, product_spectrum, sphere_function_spectrum
from .spectral import ConvergenceError, lowest_eigenpairs

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_NUMERICAL", "EXIT_INVARIANT"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 2, 3, 4
COMMANDS = ("build", "spectrum", "verify-grosjean", "gh-approx", "orientability", "kahler", "compare-toolkit")


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------


def _plain(obj):
    """Recursively convert numpy objects to JSON-safe Python values; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0))
    return when.isoformat()


def _envelope(command: str, cfg: RunConfig, M: SampledManifold | None, results: dict, delta: float,
              invariants: dict) -> dict:
    n = M.n if M is not None else (cfg.n or 2)
    d = min(max(float(delta), np.finfo(float).tiny), 1.0)
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg.to_dict(),
        "manifold": None if M is None else {"kind": M.kind, "n": M.n, "N": M.size, "meta": M.meta},
        "results": results,
        "exponents": pinching_exponents(d, n).to_dict(),
        "invariants": invariants,
        "timestamp": _timestamp(),
    }


def report_to_json(report: dict) -> str:
    return json.dumps(_plain(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list) and any(isinstance(v, (dict, list)) for v in obj):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}.{i}")
    else:
        yield prefix, obj


def report_to_csv(report: dict) -> str:
    """Flat ``key,value`` rows; list values are joined with ``;``."""
    buf = io.StringIO()
    buf.write("key,value\n")
    for k, v in _flatten(_plain(report)):
        if isinstance(v, list):
            v = ";".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        v = str(v)
        if "," in v or '"' in v:
            v = '"' + v.replace('"', '""') + '"'
        buf.write(f"{k},{v}\n")
    return buf.getvalue()


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def _manifold(cfg: RunConfig) -> SampledManifold:
    if cfg.manifold:
        try:
            return load_manifold(cfg.manifold)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read manifold file {cfg.manifold}: {exc}") from exc
    return build_preset(cfg)


def _suites(cfg: RunConfig, known) -> tuple:
    if cfg.suite == "all":
        return tuple(known)
    chosen = tuple(s.strip() for s in cfg.suite.split(",") if s.strip())
    bad = [s for s in chosen if s not in known]
    if bad or not chosen:
        raise ConfigError(f"unknown suite(s) {bad}; choose from {', '.join(known)} or all")
    return chosen


def _p(cfg: RunConfig, M: SampledManifold) -> int:
    p = cfg.p if cfg.p is not None else M.meta.get("p", M.n // 2)
    if not 0 <= p <= M.n:
        raise ConfigError(f"p must lie in 0..{M.n}, got {p}")
    return p


def cmd_build(cfg: RunConfig):
    M = build_preset(cfg)
    echo = preset_echo(M, cfg)
    if cfg.out:
        save_manifold(M, cfg.out)
        echo["file"] = cfg.out
    return {"header": echo}, None


def _reference_spectrum(M: SampledManifold, p: int, count: int):
    """Analytic function eigenvalues of the model (``None`` where unavailable)."""
    if p != 0 or M.kind == "quotient":
        return None
    tables = [sphere_function_spectrum(f.dim, f.radius, kmax=12) for f in M.factors]
    table = tables[0]
    for t in tables[1:]:
        table = product_spectrum(table, t)
    ref = table.expanded()
    return ref[:count] if len(ref) >= count else None


def cmd_spectrum(cfg: RunConfig):
    M = _manifold(cfg)
    if cfg.p is not None and cfg.p > M.n:
        raise ConfigError(f"p={cfg.p} exceeds the dimension n={M.n}")
    p = cfg.p or 0
    op = assemble_function_laplacian(M, cfg.bandwidth) if p == 0 else assemble_connection_laplacian(M, p, cfg.bandwidth)
    k = min(cfg.k, op.size)
    partial = False
    try:
        spec = lowest_eigenpairs(op, k, seed=cfg.seed)
    except ConvergenceError as exc:
        spec, partial = exc.partial, True
    ref = _reference_spectrum(M, p, k)
    rows, warn = [], []
    for i, (lam, res) in enumerate(zip(spec.eigenvalues, spec.residuals)):
        row = {"index": i, "eigenvalue": float(lam), "residual": float(res), "converged": bool(res <= 1e-8 * max(1.0, abs(lam)))}
        if ref is not None:
            within = bool(abs(lam - ref[i]) <= cfg.margin * max(abs(ref[i]), 1.0))
            row.update(reference=float(ref[i]), within_margin=within)
            if not within:
                warn.append(i)
        rows.append(row)
    results = {"p": p, "rows": rows, "partial": partial,
               "warning": (f"eigenvalues {warn} outside the {cfg.margin:g} margin of the analytic values"
                           if warn else None)}
    delta = float(spec.eigenvalues[0]) if p > 0 else 0.0
    return results, M, delta, {"converged": not partial}


def spectrum_csv(results: dict) -> str:
    cols = ["index", "eigenvalue", "residual", "converged", "reference", "within_margin"]
    lines = [",".join(cols)]
    for r in results["rows"]:
        vals = []
        for c in cols:
            v = r.get(c, "")
            vals.append(f"{v:.12e}" if c == "eigenvalue" else f"{v:.3e}" if c in ("residual", "reference") else str(v))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def _finite(d) -> bool:
    flat = [v for _, v in _flatten(_plain(d))]
    return all(not (isinstance(v, str) and v in ("nan", "inf", "-inf")) for v in flat)


def cmd_grosjean(cfg: RunConfig, gh_only: bool = False):
    M = _manifold(cfg)
    p = _p(cfg, M)
    report, extra = run_pinching(M, p, seed=cfg.seed, bandwidth=cfg.bandwidth)
    bundle = extra["bundle"]
    gh = extra["gh"]
    lam = np.asarray(report.eigenvalues)
    invariants = {
        "finite": _finite(report.__dict__),
        "eigenvalues_nonnegative": bool(np.all(lam >= -1e-8)),
        "bundle_orthonormal": bool(bundle.orthogonality_defect() <= 1e-6),
    }
    if gh_only:
        results = {"p": p, "gh": gh.summary(), "gh_bound": 1.5 * gh.epsilon, "eigenvalues": report.eigenvalues,
                   "delta_form": report.delta_form}
        invariants["map_consistent"] = bool(gh.epsilon == max(gh.distortion, gh.density))
    else:
        results = {"p": p, "report": {k: v for k, v in report.to_dict().items() if k != "exponents"},
                   "main": extra["main"].to_dict()}
    return results, M, report.delta_form, invariants


def cmd_orientability(cfg: RunConfig):
    M = _manifold(cfg)
    rep = detect_orientability(M, cfg.bandwidth, seed=cfg.seed)
    results = {"report": rep.to_dict(), "orientable": rep.orientable, "matches_ground_truth": rep.matches_ground_truth}
    suites = _suites(cfg, ("detect", "V", "F"))
    if M.kind == "product" and cfg.p is not None and ("V" in suites or "F" in suites):
        p = cfg.p
        bundle, omega = aligned_bundle(M, p, seed=cfg.seed, bandwidth=cfg.bandwidth)
        if "V" in suites:
            V = build_V(M, bundle, omega)
            results["V"] = {"norm_sq": V.norm_sq, "norm_defect": V.norm_defect, "energy": V.energy}
        if "F" in suites and M.n - p >= 1:
            _, xis, _ = low_eigenforms(M, M.n - p, seed=cfg.seed)
            sub = bundle.subset(range(M.n - p))
            F = build_F(M, sub, select_xi(M, sub, xis))
            results["F"] = {k: v for k, v in F.__dict__.items() if k != "F"}
            results["F"]["targets"] = {"norm_sq": 1 / (M.n - p + 1), "energy": (M.n - p) / (M.n - p + 1),
                                       "minmax": M.n - p}
    delta = max(rep.lambda1, 0.0)
    return results, M, delta, {"finite": _finite(results)}


def cmd_kahler(cfg: RunConfig):
    M = _manifold(cfg)
    rep = verify_kahler_bound(M, bandwidth=cfg.bandwidth, seed=cfg.seed)
    results = {"report": rep.to_dict()}
    invariants = {"finite": True}
    suites = _suites(cfg, ("bound", "pb4", "gram"))
    if rep.even_dim_ok and "pb4" in suites:
        sweep = lemma_pb4_sweep(M, trials=cfg.trials, seed=cfg.seed)
        held = [r for r in sweep["rows"] if r["hypotheses"]]
        results["pb4"] = sweep
        # the gradient and tail conclusions follow from the discrete spectral decomposition
        invariants["pb4_exact_conclusions"] = all(r["grad_conclusion"] and r["beta_conclusion"] for r in held)
    if "gram" in suites:
        count = min(comb(M.n, 2) + 1, 8)
        results["gram"] = eigenform_gram_diagnostic(M, 2, count, seed=cfg.seed)
    invariants["finite"] = _finite(results)
    delta = rep.delta if rep.delta is not None else 0.0
    return results, M, delta, invariants


def cmd_toolkit(cfg: RunConfig):
    M = _manifold(cfg)
    suites = _suites(cfg, TOOLKIT_SUITES)
    res = run_toolkit_suite(M, suites, seed=cfg.seed)
    # cosi and trif are proven inequalities: a failure is a hard invariant violation
    hard = {s: res[s]["passed"] for s in ("cosi", "trif") if s in res}
    return res, M, 0.0, hard


HANDLERS = {
    "spectrum": cmd_spectrum,
    "verify-grosjean": cmd_grosjean,
    "gh-approx": lambda cfg: cmd_grosjean(cfg, gh_only=True),
    "orientability": cmd_orientability,
    "kahler": cmd_kahler,
    "compare-toolkit": cmd_toolkit,
}


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------


def _add_common(sp: argparse.ArgumentParser):
    sp.add_argument("--preset", default="sphere", choices=sorted(PRESETS), help="model manifold")
    sp.add_argument("--n", type=int, help="dimension")
    sp.add_argument("--p", type=int, help="form degree")
    sp.add_argument("--radius", type=float, help="sphere radius, or radius of the S^p factor for products")
    sp.add_argument("--points", type=int, help="number of sample points")
    sp.add_argument("--seed", type=int, help="random seed (default 0)")
    sp.add_argument("--bandwidth", type=float, help="kernel bandwidth override")
    sp.add_argument("--method", choices=("iid", "lattice"), help="sampling method")
    sp.add_argument("--suite", default="all", help="comma-separated sub-suites or 'all'")
    sp.add_argument("--manifold", help="manifold file written by 'build'")
    sp.add_argument("--k", type=int, default=9, help="number of eigenvalues (spectrum)")
    sp.add_argument("--trials", type=int, default=50, help="randomized inputs (kahler)")
    sp.add_argument("--margin", type=float, default=0.08, help="relative margin against analytic values")
    sp.add_argument("--out", help="output path (default stdout)")
    sp.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pinchcheck", description="Discrete checks of eigenvalue pinching on model manifolds.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "build": "sample a manifold and write it to --out",
        "spectrum": "lowest eigenvalues of the function or connection Laplacian",
        "verify-grosjean": "eigenvalue bound, almost parallel form and residual report",
        "gh-approx": "Hausdorff approximation map into the model product",
        "orientability": "determinant-line test and top-degree form statistics",
        "kahler": "almost-Kähler defects and the improved first-eigenvalue bound",
        "compare-toolkit": "property checks of the comparison estimates",
    }
    for name in COMMANDS:
        _add_common(sub.add_parser(name, help=helps[name], description=helps[name]))
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    d = {k: v for k, v in vars(args).items() if k != "command"}
    return RunConfig.from_dict(d).with_preset_defaults()


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "build":
            if PRESETS[cfg.preset].get("points") is None and args.points is None:
                parser.error(f"build with preset {cfg.preset!r} requires --points")
            results, _ = cmd_build(cfg)
            sys.stdout.write(json.dumps(_plain(results["header"]), sort_keys=True, indent=2) + "\n")
            return EXIT_OK
        if cfg.points is None and not cfg.manifold:
            parser.error(f"preset {cfg.preset!r} requires --points or --manifold")
        results, M, delta, invariants = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"pinchcheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, DisconnectedGraphError, UndersampledError, np.linalg.LinAlgError) as exc:
        print(f"pinchcheck: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MetricAxiomError as exc:
        print(f"pinchcheck: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:
        # precondition failures of the chosen suite (for example a Ricci bound the model lacks)
        parser.print_usage(sys.stderr)
        print(f"pinchcheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    report = _envelope(args.command, cfg, M, results, delta, invariants)
    if cfg.format == "csv":
        text = spectrum_csv(results) if args.command == "spectrum" else report_to_csv(report)
    else:
        text = report_to_json(report)
    _emit(text, cfg.out)
    if not all(invariants.values()):
        bad = [k for k, v in invariants.items() if not v]
        print(f"pinchcheck: invariant violation: {', '.join(bad)}", file=sys.stderr)
        return EXIT_INVARIANT
    if args.command == "spectrum" and results["partial"]:
        print("pinchcheck: solver did not converge; partial spectrum written", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
