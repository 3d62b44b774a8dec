"""Experiment orchestration: config parsing, dispatch, reports, manifests.

A spec file (YAML, with JSON accepted as a subset) names an experiment kind,
a walk configuration, a master seed, and kind-specific parameters. Running a
spec emits machine-readable JSON, CSV tables, a plain-text summary, and a
manifest with a sha256 digest of every result file. All randomness flows
from the master seed, so a rerun reproduces the result files byte for byte;
wall-clock timing lives in a separate timing.json, which is the only
nondeterministic output.
"""

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
import yaml

from . import __version__, asymptotics, engine, lattice_exact, transform, v_module
from .distributions import make_distribution
from .engine import PartialResultError, WalkConfig
from .geometry import in_weyl
from .transform import FeasibilityError

__all__ = [
    "ExperimentSpec",
    "RunManifest",
    "SpecError",
    "validate_spec",
    "serialize_spec",
    "run_experiment",
    "emit_report",
    "main",
]

_KINDS = (
    "exact-km", "exact-reflect", "exact-v", "estimate-v", "tail",
    "endpoint", "lclt", "transform", "hermite", "dyson-compare",
)


class SpecError(ValueError):
    """Invalid experiment spec; .errors lists every problem found."""

    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    k: int
    start: tuple
    dist_kind: str
    dist_params: dict = field(default_factory=dict)
    seed: int = 0
    params: dict = field(default_factory=dict)
    out: str = "results"

    def walk_config(self) -> WalkConfig:
        dist = make_distribution(self.dist_kind, **self.dist_params)
        return WalkConfig(k=self.k, start=self.start, dist=dist,
                          master_seed=self.seed)


@dataclass
class RunManifest:
    spec: dict
    version: str
    checks: dict
    files: dict  # name -> sha256
    passed: bool
    error: str | None = None


def validate_spec(raw: str) -> ExperimentSpec:
    """Parse and validate a spec document, collecting every error at once."""
    errors = []
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise SpecError([f"unparseable config: {exc}"])
    if not isinstance(doc, dict):
        raise SpecError(["config must be a mapping"])

    kind = doc.get("kind")
    if kind not in _KINDS:
        errors.append(f"unknown kind {kind!r}; expected one of {', '.join(_KINDS)}")

    walk = doc.get("walk") or {}
    k = walk.get("k")
    if not isinstance(k, int) or k < 2:
        errors.append(f"k must be an integer >= 2, got {k!r}")
        k = 2
    start = walk.get("start")
    if not isinstance(start, (list, tuple)) or len(start) != k:
        errors.append(f"start must list k={k} coordinates, got {start!r}")
        start = tuple(range(k))
    else:
        start = tuple(start)
        try:
            if not in_weyl(start):
                errors.append("start not strictly ordered")
        except (TypeError, ValueError):
            errors.append(f"start coordinates not numeric: {start!r}")

    dist = walk.get("dist", "rademacher")
    if isinstance(dist, str):
        dist_kind, dist_params = dist, {}
    elif isinstance(dist, dict) and "kind" in dist:
        dist_kind = dist["kind"]
        dist_params = {a: b for a, b in dist.items() if a != "kind"}
    else:
        errors.append(f"dist must be a kind name or mapping with 'kind': {dist!r}")
        dist_kind, dist_params = "rademacher", {}
    try:
        d = make_distribution(dist_kind, **dist_params)
        if d.is_lattice and not all(
                isinstance(c, int) or float(c) == int(c) for c in start):
            errors.append("lattice walks need integer start coordinates")
    except (ValueError, TypeError) as exc:
        errors.append(f"bad distribution: {exc}")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        errors.append(f"seed must be a nonnegative integer, got {seed!r}")
        seed = 0
    params = doc.get("params") or {}
    if not isinstance(params, dict):
        errors.append("params must be a mapping")
        params = {}
    for key, val in params.items():
        if isinstance(val, (int, float)) and val <= 0:
            errors.append(f"params.{key} must be positive, got {val}")
    out = doc.get("out", "results")

    if errors:
        raise SpecError(errors)
    return ExperimentSpec(kind=kind, k=k, start=start, dist_kind=dist_kind,
                          dist_params=dist_params, seed=seed, params=params,
                          out=str(out))


def serialize_spec(spec: ExperimentSpec) -> str:
    doc = {
        "kind": spec.kind,
        "walk": {
            "k": spec.k,
            "start": list(spec.start),
            "dist": spec.dist_kind if not spec.dist_params
            else {"kind": spec.dist_kind, **spec.dist_params},
        },
        "seed": spec.seed,
        "params": dict(spec.params),
        "out": spec.out,
    }
    return yaml.safe_dump(doc, sort_keys=True)


# ---------------------------------------------------------------------------
# deterministic serialization: 17 significant digits, exact fraction strings

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _to_json(obj, indent=0):
    pad = " " * indent
    inner = " " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}{json.dumps(str(key))}: {_to_json(val, indent + 1)}'
                 for key, val in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = [f"{inner}{_to_json(val, indent + 1)}" for val in seq]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(obj, Fraction):
        return json.dumps(f"{obj.numerator}/{obj.denominator}")
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    return json.dumps(str(obj))


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(_to_json(obj) + "\n")


def _write_csv(path, header, rows):
    def cell(v):
        if isinstance(v, Fraction):
            return f"{v.numerator}/{v.denominator}"
        if isinstance(v, (float, np.floating)):
            return _fmt_float(float(v))
        return str(v)

    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(v) for v in row) + "\n")


def emit_report(out_dir: str, name: str, result: dict, tables: dict | None = None):
    """Write <name>.json plus optional CSV tables; returns emitted file names."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    json_path = os.path.join(out_dir, f"{name}.json")
    try:
        _write_json(json_path, result)
    except OSError as exc:
        raise OSError(f"failed writing {json_path}: {exc}") from exc
    files.append(f"{name}.json")
    for tname, (header, rows) in (tables or {}).items():
        path = os.path.join(out_dir, f"{tname}.csv")
        try:
            _write_csv(path, header, rows)
        except OSError as exc:
            raise OSError(f"failed writing {path}: {exc}") from exc
        files.append(f"{tname}.csv")
    return files


# ---------------------------------------------------------------------------
# experiment kinds

def _report_dict(rep):
    return rep.to_dict() if hasattr(rep, "to_dict") else dict(rep)


def _run_exact_km(spec, cfg, threads):
    n = int(spec.params.get("n", 6))
    rep = lattice_exact.exact_km_check(cfg, n)
    return {"km": _report_dict(rep)}, {}, {"km_identity": rep.passed}


def _run_exact_reflect(spec, cfg, threads):
    n = int(spec.params.get("n", 4))
    ls = spec.params.get("l")
    ls = [int(ls)] if ls is not None else list(range(1, n + 1))
    reports = {}
    checks = {}
    for l in ls:
        rep = lattice_exact.exact_reflection_check(cfg, n, l)
        reports[f"l={l}"] = _report_dict(rep)
        checks[f"reflection_l{l}"] = rep.passed
    return {"reflection": reports}, {}, checks


def _run_exact_v(spec, cfg, threads):
    n = int(spec.params.get("n", 6))
    vs = lattice_exact.exact_vn(cfg, n)
    mart = lattice_exact.exact_martingale_check(cfg, n)
    harm = lattice_exact.exact_harmonicity_check(cfg, n)
    positive = all(v > 0 for v in vs)
    rows = [(i + 1, v, float(v)) for i, v in enumerate(vs)]
    return (
        {"v_values": {str(i + 1): v for i, v in enumerate(vs)},
         "martingale": _report_dict(mart),
         "harmonicity": _report_dict(harm),
         "positivity": positive},
        {"v_exact": (("n", "v_exact", "v_float"), rows)},
        {"martingale": mart.passed, "harmonicity": harm.passed,
         "positivity": positive},
    )


def _run_estimate_v(spec, cfg, threads):
    schedule = spec.params.get("schedule", [16, 32, 64, 128])
    paths = int(spec.params.get("paths", 100000))
    table = v_module._vn_over_schedule(cfg, schedule, paths, threads)
    est = v_module.estimate_v(cfg, schedule, paths, threads)
    rows = []
    prev = None
    for n, ci in table:
        diag = abs(ci.mean - prev) if prev is not None else math.nan
        rows.append((n, ci.mean, ci.stderr, diag))
        prev = ci.mean
    result = {
        "x": list(cfg.start),
        "n_used": est.n_used,
        "value": est.value.mean,
        "stderr": est.value.stderr,
        "tail_diagnostic": est.tail_diagnostic,
        "converged": est.converged,
        "positive_at_4_stderr": est.value.mean > 4 * est.value.stderr,
    }
    return (result,
            {"v_estimates": (("n", "estimate", "stderr", "diagnostic"), rows)},
            {"positivity_4sigma": result["positive_at_4_stderr"]})


def _run_tail(spec, cfg, threads):
    horizons = spec.params.get("horizons", [64, 128, 256, 512, 1024, 2048, 4096])
    paths = int(spec.params.get("paths", 1000000))
    surv = engine.batch_survival(cfg, horizons, paths, threads)
    fit = asymptotics.tail_fit(surv, sigma=math.sqrt(cfg.dist.variance))
    theory = -cfg.k * (cfg.k - 1) / 4.0
    result = {
        "exponent": fit.exponent,
        "prefactor": fit.prefactor,
        "r_squared": fit.r_squared,
        "n_range": list(fit.n_range),
        "cut_sensitivity": fit.cut_sensitivity,
        "dropped": fit.dropped,
        "theory_exponent": theory,
    }
    rows = [(n, ci.mean, ci.stderr) for n, ci in surv]
    tol = float(spec.params.get("exponent_tol", 0.15))
    return (result,
            {"survival": (("n", "p_survive", "stderr"), rows)},
            {"exponent_within_tol": abs(fit.exponent - theory) <= tol})


def _run_endpoint(spec, cfg, threads):
    n = int(spec.params.get("n", 1024))
    target = int(spec.params.get("survivors", 20000))
    max_attempts = int(spec.params.get("max_attempts", 200 * target))
    endpoints, rate = engine.conditioned_endpoints(cfg, n, target, max_attempts,
                                                   threads)
    sigma = math.sqrt(cfg.dist.variance)
    rep = asymptotics.endpoint_density_distance(endpoints, cfg.k, sigma=sigma)
    rep["acceptance_rate"] = rate
    rep["n"] = n
    rows = [tuple(row) for row in endpoints]
    header = tuple(f"y{i + 1}" for i in range(cfg.k))
    target_mean = math.sqrt(math.pi)
    mean_ok = all(
        abs(m - target_mean) <= 3 * se
        for m, se in zip(rep["gap_mean"], rep["gap_mean_stderr"])
    ) if cfg.k == 2 else True
    return (rep, {"endpoints": (header, rows)}, {"gap_mean_3sigma": mean_ok})


def _run_lclt(spec, cfg, threads):
    ns = spec.params.get("horizons", [256, 4096])
    reports = [asymptotics.local_clt_deviation(cfg.dist, int(n)) for n in ns]
    decreasing = all(a["sup_deviation"] > b["sup_deviation"]
                     for a, b in zip(reports, reports[1:]))
    threshold = float(spec.params.get("threshold", 1e-2))
    final_ok = reports[-1]["sup_deviation"] < threshold
    rows = [(r["n"], r["sup_deviation"], r["argmax_site"], r["total_mass"])
            for r in reports]
    return ({"reports": reports, "decreasing": decreasing,
             "threshold": threshold, "final_below_threshold": final_ok},
            {"lclt": (("n", "sup_deviation", "argmax_site", "total_mass"), rows)},
            {"decreasing": decreasing, "final_below_threshold": final_ok})


def _run_transform(spec, cfg, threads):
    t_steps = int(spec.params.get("t_steps", 16))
    paths = int(spec.params.get("paths", 2000))
    guard = spec.params.get("guard_m")
    res = transform.transform_paths_rejection(
        cfg, t_steps, paths, guard_m=int(guard) if guard else None,
        threads=threads)
    rows = [tuple(row) for row in res["samples"]]
    header = tuple(f"x{i + 1}" for i in range(cfg.k))
    result = {a: b for a, b in res.items() if a != "samples"}
    return (result, {"transform_samples": (header, rows)},
            {"collected": True})


def _run_hermite(spec, cfg, threads):
    if cfg.k != 2 or cfg.dist.kind != "rademacher":
        raise FeasibilityError(
            "exact transformed chain is available for k=2 rademacher only")
    n = int(spec.params.get("n", 4096))
    paths = int(spec.params.get("paths", 20000))
    y = transform.transformed_pair_paths(cfg.start, n, paths,
                                         master_seed=cfg.master_seed)
    rep = transform.hermite_distance(y / math.sqrt(n), 2)
    rep["n"] = n
    rep["exact_gap_tv"] = transform.hermite_gap_tv_exact(
        cfg.start[1] - cfg.start[0], n)
    m2_ok = abs(rep["gap_sq_mean"][0] - 6.0) <= 3 * rep["gap_sq_stderr"][0]
    return (rep, {}, {"gap_sq_mean_3sigma": m2_ok})


def _run_dyson(spec, cfg, threads):
    if cfg.k != 2 or cfg.dist.kind != "rademacher":
        raise FeasibilityError("dyson-compare runs on the k=2 rademacher chain")
    t = float(spec.params.get("t", 1.0))
    ns = spec.params.get("horizons", [256, 1024])
    paths = int(spec.params.get("paths", 50000))
    x_unit = spec.params.get("x_unit", [0, 1])
    reports = [transform.dyson_compare(tuple(x_unit), t, int(n), paths,
                                       master_seed=cfg.master_seed)
               for n in ns]
    decreasing = all(a["tv"] > b["tv"] for a, b in zip(reports, reports[1:]))
    final_ok = reports[-1]["tv"] < float(spec.params.get("tv_threshold", 0.05))
    rows = [(r["n"], r["tv"], r["ks"], r["gap_mean"]) for r in reports]
    return ({"reports": reports, "decreasing": decreasing,
             "final_below_threshold": final_ok},
            {"dyson": (("n", "tv", "ks", "gap_mean"), rows)},
            {"tv_decreasing": decreasing, "final_below_threshold": final_ok})


_RUNNERS = {
    "exact-km": _run_exact_km,
    "exact-reflect": _run_exact_reflect,
    "exact-v": _run_exact_v,
    "estimate-v": _run_estimate_v,
    "tail": _run_tail,
    "endpoint": _run_endpoint,
    "lclt": _run_lclt,
    "transform": _run_transform,
    "hermite": _run_hermite,
    "dyson-compare": _run_dyson,
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(spec: ExperimentSpec, out_dir=None, threads=None):
    """Run one experiment; returns (manifest, exit_code).

    Exit code 0: every asserted check passed. 1: a check failed or a module
    raised. 2: refusal (infeasible budget) or partial results.
    """
    out = out_dir or spec.out
    os.makedirs(out, exist_ok=True)
    name = spec.kind.replace("-", "_")
    t0 = time.monotonic()
    checks = {}
    files = []
    error = None
    code = 0
    try:
        cfg = spec.walk_config()
        result, tables, checks = _RUNNERS[spec.kind](spec, cfg, threads)
        files = emit_report(out, name, result, tables)
    except (FeasibilityError, PartialResultError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        code = 2
    except Exception as exc:  # surfaced in the manifest, nonzero exit
        error = f"{type(exc).__name__}: {exc}"
        code = 1
    wall = time.monotonic() - t0
    passed = code == 0 and all(checks.values())
    if code == 0 and not passed:
        code = 1

    summary_lines = [f"{spec.kind}: {'PASS' if passed else 'FAIL'}"]
    for cname, ok in sorted(checks.items()):
        summary_lines.append(f"  {cname}: {'pass' if ok else 'FAIL'}")
    if error:
        summary_lines.append(f"  error: {error}")
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary_lines) + "\n")
    files.append("summary.txt")

    manifest = RunManifest(
        spec=yaml.safe_load(serialize_spec(spec)),
        version=__version__,
        checks=checks,
        files={f: _sha256(os.path.join(out, f)) for f in files},
        passed=passed,
        error=error,
    )
    _write_json(os.path.join(out, "manifest.json"), asdict(manifest))
    # wall-clock isolated from the deterministic outputs
    _write_json(os.path.join(out, "timing.json"), {"wall_seconds": wall})
    return manifest, code


# ---------------------------------------------------------------------------
# command line

def _load_spec_file(path, seed=None, out=None):
    with open(path) as fh:
        spec = validate_spec(fh.read())
    if seed is not None or out is not None:
        from dataclasses import replace
        kw = {}
        if seed is not None:
            kw["seed"] = seed
        if out is not None:
            kw["out"] = out
        spec = replace(spec, **kw)
    return spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ordwalk",
        description="ordered random walks: exact identities and limit laws")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment spec")
    p_run.add_argument("spec_file")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)

    p_val = sub.add_parser("validate", help="check a spec without running it")
    p_val.add_argument("spec_file")

    p_suite = sub.add_parser("suite", help="run every spec in a directory")
    p_suite.add_argument("spec_dir")
    p_suite.add_argument("--out", default=None)
    p_suite.add_argument("--threads", type=int, default=None)
    p_suite.add_argument("--seed", type=int, default=None)

    args = parser.parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads is None and os.environ.get("ORDWALK_THREADS"):
        threads = int(os.environ["ORDWALK_THREADS"])

    if args.command == "validate":
        try:
            spec = _load_spec_file(args.spec_file)
        except SpecError as exc:
            for err in exc.errors:
                print(f"error: {err}", file=sys.stderr)
            return 1
        print(f"ok: {spec.kind} (k={spec.k}, dist={spec.dist_kind})")
        return 0

    if args.command == "run":
        try:
            spec = _load_spec_file(args.spec_file, args.seed, args.out)
        except SpecError as exc:
            for err in exc.errors:
                print(f"error: {err}", file=sys.stderr)
            return 1
        manifest, code = run_experiment(spec, threads=threads)
        out = args.out or spec.out
        with open(os.path.join(out, "summary.txt")) as fh:
            print(fh.read(), end="")
        return code

    # suite
    spec_files = sorted(
        os.path.join(args.spec_dir, f) for f in os.listdir(args.spec_dir)
        if f.endswith((".yaml", ".yml", ".json")))
    if not spec_files:
        print(f"no spec files in {args.spec_dir}", file=sys.stderr)
        return 1
    worst = 0
    for path in spec_files:
        try:
            spec = _load_spec_file(path, args.seed, None)
        except SpecError as exc:
            print(f"{os.path.basename(path)}: INVALID ({exc.errors[0]})")
            worst = max(worst, 1)
            continue
        sub_out = os.path.join(args.out or "suite-results",
                               os.path.splitext(os.path.basename(path))[0])
        manifest, code = run_experiment(spec, out_dir=sub_out, threads=threads)
        status = "PASS" if manifest.passed else (
            "REFUSED" if code == 2 else "FAIL")
        print(f"{os.path.basename(path)}: {status}")
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
