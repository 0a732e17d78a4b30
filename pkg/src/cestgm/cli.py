"""Command-line front end: validate, graph, spectrum, simulate, diagnose.

Exit codes: 0 success, 1 constraint violation or failed check, 2 unreadable
or malformed input, 3 eigensolver did not converge, 4 kernel flagged as not
Hilbert–Schmidt (override with ``--force``).
"""

from __future__ import annotations

import argparse
import datetime
import glob
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .density import (
    consistency_check,
    empirical_beta,
    mixing_bound_curve,
)
from .errors import (
    CEStGMError,
    GridCapExceeded,
    NonPositiveIterate,
    NoConvergence,
    SpecFormatError,
    UnboundedEnvelope,
    ValidationError,
)
from .kernel import HSStatus, build_kernel, hs_norm_sq
from .model import ModelSpec, ci_graph, export_dot, time_unrolled_graph, validate
from .quadrature import GridConfig, build_space, fallback_space
from .sampler import (
    GibbsConfig,
    effective_pad,
    gibbs_run,
    read_paths_csv,
    write_paths_csv,
    write_provenance,
)
from .spectral import DENSE_LIMIT, build_operator, power_iterate

EXIT_OK, EXIT_VIOLATION, EXIT_PARSE, EXIT_NOCONV, EXIT_NOT_HS = 0, 1, 2, 3, 4
MANIFEST = "manifest.json"


class _Exit(Exception):
    def __init__(self, code, message=""):
        super().__init__(message)
        self.code = code


# --- shared helpers -----------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _load_spec(path):
    try:
        text = Path(path).read_bytes()
    except OSError as exc:
        raise _Exit(EXIT_PARSE, f"cannot read {path}: {exc}") from exc
    try:
        spec = ModelSpec.from_json(text.decode())
    except SpecFormatError as exc:
        raise _Exit(EXIT_PARSE, str(exc)) from exc
    except UnicodeDecodeError as exc:
        raise _Exit(EXIT_PARSE, f"{path} is not text: {exc}") from exc
    return spec, hashlib.sha256(text).hexdigest()


def _validated(spec):
    try:
        return validate(spec)
    except ValidationError as exc:
        raise _Exit(EXIT_VIOLATION, f"{type(exc).__name__}: {exc}") from exc


def _grid_config(args) -> GridConfig:
    return GridConfig(
        grid_size=args.grid_size, grid_cap=args.grid_cap, truncation_tol=args.truncation_tol
    )


def _flags(args) -> dict:
    skip = {"func", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _out_dir(args) -> Path | None:
    if getattr(args, "out", None) is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _append_manifest(out: Path, args, spec_hash: str | None, outputs, started, extra=None, model=None):
    path = out / MANIFEST
    doc = json.loads(path.read_text()) if path.exists() else {"runs": []}
    entry = {
        "command": args.command,
        "spec_path": str(getattr(args, "spec", "")),
        "spec_sha256": spec_hash,
        "model_hash": model.model_hash() if model is not None else None,
        "flags": _flags(args),
        "tool_version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": sorted(str(o) for o in outputs),
    }
    if extra:
        entry.update(extra)
    doc["runs"].append(entry)
    path.write_text(_dump(doc))


def _violation_report(spec, exc) -> dict:
    return {
        "valid": False,
        "violations": [
            {
                "type": type(exc).__name__,
                "message": str(exc),
                "block": list(exc.block) if getattr(exc, "block", None) else None,
            }
        ],
        "neighborhoods": None,
        "hs_screening": None,
    }


def _neighborhoods(model) -> dict:
    return {str(a + 1): sorted(b + 1 for b in model.neighborhoods[a]) for a in range(model.p)}


def _write(path: Path, text: str, outputs: list):
    path.write_text(text)
    outputs.append(path.name)


def _threads() -> int:
    env = os.environ.get("CESTGM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


# --- commands -----------------------------------------------------------------


def cmd_validate(args) -> int:
    started = _now()
    spec, spec_hash = _load_spec(args.spec)
    try:
        model = validate(spec)
        report = {
            "valid": True,
            "violations": [],
            "neighborhoods": _neighborhoods(model),
            "hs_screening": model.hs_screening.to_json(),
            "model_hash": model.model_hash(),
        }
        code = EXIT_OK
    except ValidationError as exc:
        report = _violation_report(spec, exc)
        code = EXIT_VIOLATION
    text = _dump(report)
    sys.stdout.write(text)
    out = _out_dir(args)
    if out is not None:
        outputs = []
        _write(out / "validate.json", text, outputs)
        _append_manifest(out, args, spec_hash, outputs, started, {"exit_code": code})
    return code


def cmd_graph(args) -> int:
    started = _now()
    spec, spec_hash = _load_spec(args.spec)
    model = _validated(spec)
    dot = export_dot(ci_graph(model))
    unrolled = None
    if args.unroll is not None:
        unrolled = export_dot(time_unrolled_graph(model, args.unroll), name="unrolled")
    out = _out_dir(args)
    outputs = []
    if args.dot:
        dot_path = Path(args.dot)
        dot_path.write_text(dot)
        outputs.append(str(dot_path))
        if unrolled is not None:
            up = dot_path.with_name(dot_path.stem + f"_unrolled_{args.unroll}.dot")
            up.write_text(unrolled)
            outputs.append(str(up))
    elif out is not None:
        _write(out / "graph.dot", dot, outputs)
        if unrolled is not None:
            _write(out / f"graph_unrolled_{args.unroll}.dot", unrolled, outputs)
    else:
        sys.stdout.write(dot)
        if unrolled is not None:
            sys.stdout.write(unrolled)
    if out is not None:
        _append_manifest(out, args, spec_hash, outputs, started, model=model)
    return EXIT_OK


def _spectrum(model, args, cfg):
    """Space, HS diagnostics and spectral result; raises _Exit on fatal conditions."""
    envelope_error = None
    try:
        space = build_space(model, cfg)
    except UnboundedEnvelope as exc:
        envelope_error = str(exc)
        space = fallback_space(model, cfg)
    hs = hs_norm_sq(build_kernel(model), space)
    hs_info = {
        "screening": model.hs_screening.to_json(),
        "hs_norm_sq": hs.value,
        "not_hilbert_schmidt": hs.not_hilbert_schmidt,
        "probe_history": [list(h) for h in hs.history],
        "envelope_error": envelope_error,
    }
    flagged = hs.not_hilbert_schmidt or model.hs_screening.status is HSStatus.VIOLATED
    if flagged and not args.force:
        sys.stderr.write(_dump({"error": "NotHilbertSchmidt", "diagnostics": hs_info}))
        raise _Exit(EXIT_NOT_HS, "kernel flagged as not Hilbert-Schmidt; use --force to override")
    try:
        result = power_iterate(build_operator(model, space), tol=args.tol, max_iter=args.max_iter)
    except (NoConvergence, NonPositiveIterate) as exc:
        raise _Exit(EXIT_NOCONV, f"{type(exc).__name__}: {exc}") from exc
    return space, hs_info, result


def cmd_spectrum(args) -> int:
    started = _now()
    spec, spec_hash = _load_spec(args.spec)
    model = _validated(spec)
    space, hs_info, result = _spectrum(model, args, _grid_config(args))
    report = result.to_json()
    report["hs"] = hs_info
    report["forced"] = bool(args.force)
    report["model_hash"] = model.model_hash()
    text = _dump(report)
    out = _out_dir(args)
    if out is None:
        sys.stdout.write(text)
        return EXIT_OK
    outputs = []
    _write(out / "spectrum.json", text, outputs)
    pts = space.block_points.reshape(space.total_size, -1)
    cols = [f"x{k + 1}" for k in range(pts.shape[1])]
    lines = [",".join(["index", *cols, "weight", "v", "w"])]
    for i in range(space.total_size):
        vals = [repr(float(x)) for x in pts[i]]
        lines.append(
            ",".join([str(i), *vals, repr(float(space.block_weights[i])),
                      repr(float(result.v[i])), repr(float(result.w[i]))])
        )
    _write(out / "vw.csv", "\n".join(lines) + "\n", outputs)
    _append_manifest(out, args, spec_hash, outputs, started, {"forced": bool(args.force)}, model=model)
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = _now()
    spec, spec_hash = _load_spec(args.spec)
    model = _validated(spec)
    extra = {"forced": bool(args.force)}
    m = args.m
    if args.auto_pad:
        _, _, result = _spectrum(model, args, _grid_config(args))
        m = effective_pad(model, result, args.tv_target)
        extra.update({"computed_m": m, "subdominant_ratio": result.ratio})
    try:
        config = GibbsConfig(
            n=args.n, m=m, sweeps=args.sweeps, burnin=args.burnin, thin=args.thin,
            scan=args.scan, seed=args.seed,
        )
    except ValueError as exc:
        raise _Exit(EXIT_PARSE, str(exc)) from exc
    children = np.random.SeedSequence(args.seed).spawn(args.chains)

    def run(child):
        return gibbs_run(model, config, np.random.default_rng(child))

    with ThreadPoolExecutor(max_workers=min(args.chains, _threads())) as pool:
        samples = list(pool.map(run, children))

    out = _out_dir(args) or Path(".")
    outputs = []
    for k, sample in enumerate(samples):
        csv_path = out / f"paths_chain{k}.csv"
        write_paths_csv(csv_path, sample)
        outputs.append(csv_path.name)
        prov = out / f"paths_chain{k}.json"
        write_provenance(prov, sample, {"chain": k, "spec_sha256": spec_hash})
        outputs.append(prov.name)
    extra["m"] = m
    _append_manifest(out, args, spec_hash, outputs, started, extra, model=model)
    return EXIT_OK


def _batch_se(x: np.ndarray, batches: int = 20) -> float:
    """Standard error of the mean of a per-sweep series via batch means."""
    n = len(x) // batches * batches
    if n < batches * 2:
        return float(np.std(x) / math.sqrt(max(len(x), 1)))
    means = x[:n].reshape(batches, -1).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(batches))


def cmd_diagnose(args) -> int:
    started = _now()
    spec, spec_hash = _load_spec(args.spec)
    model = _validated(spec)
    files = sorted(glob.glob(str(Path(args.paths) / "paths_chain*.csv")))
    if not files:
        raise _Exit(EXIT_PARSE, f"no paths_chain*.csv files in {args.paths}")
    try:
        loaded = [read_paths_csv(f)[0] for f in files]
    except (ValueError, OSError) as exc:
        raise _Exit(EXIT_PARSE, f"cannot read paths: {exc}") from exc
    draws = np.concatenate(loaded, axis=0)  # (kept, times, p)
    kept, times, p = draws.shape

    result = None
    try:
        space = build_space(model, _grid_config(args))
        if space.total_size <= DENSE_LIMIT and model.d == 1:
            result = power_iterate(build_operator(model, space), tol=args.tol, max_iter=args.max_iter)
    except (CEStGMError, ValueError):
        result = None

    checks = []
    nodes = []
    for a in range(p):
        x = draws[:, :, a]
        per_sweep_mean = x.mean(axis=1)
        per_sweep_sq = (x**2).mean(axis=1)
        mean = float(x.mean())
        second = float(per_sweep_sq.mean())
        var = second - mean**2
        se_mean = _batch_se(per_sweep_mean)
        se_var = math.sqrt(_batch_se(per_sweep_sq) ** 2 + (2 * mean * se_mean) ** 2)
        acf = []
        xc = x - mean
        for lag in range(1, min(args.n_max, times - 1) + 1):
            acf.append(float(np.mean(xc[:, :-lag] * xc[:, lag:]) / var) if var > 0 else 0.0)
        node = {"node": a + 1, "mean": mean, "variance": var, "se_mean": se_mean,
                "se_variance": se_var, "autocorrelation": acf}
        if result is not None and model.p == 1:
            p1 = result.v * result.w * result.op.weights
            pts = result.op.space.points[:, a]
            mu = float(p1 @ pts)
            var_ref = float(p1 @ pts**2) - mu**2
            node["stationary_mean"] = mu
            node["stationary_variance"] = var_ref
            checks.append({"name": f"marginal_mean_node{a + 1}",
                           "pass": bool(abs(mean - mu) <= 3 * se_mean + 1e-12)})
            checks.append({"name": f"marginal_variance_node{a + 1}",
                           "pass": bool(abs(var - var_ref) <= 3 * se_var + 1e-12)})
        nodes.append(node)

    n_max = min(args.n_max, times - 1)
    emp = [empirical_beta(draws, k) for k in range(1, n_max + 1)]
    # plug-in beta is biased upward by sampling noise of order sqrt(cells / draws)
    allowance = 3.0 * math.sqrt(_cells(draws) / kept)
    bound = [None] * n_max
    curve_info = None
    if result is not None:
        curve = mixing_bound_curve(result, n_max)
        bound = [float(b) for b in curve.bound]
        curve_info = {"ratio": curve.ratio, "exact_beta": [float(e) for e in curve.exact]}
        below = all(e <= b + allowance for e, b in zip(emp, bound))
        checks.append({"name": "empirical_beta_below_bound", "pass": bool(below)})
        consistency = consistency_check(result, 3)
        checks.append({"name": "kolmogorov_consistency", "pass": bool(consistency < 1e-7),
                       "deviation": consistency})
    independent = all(not np.any(blk) for blk in model.spec.phi.values())
    if independent:
        checks.append({"name": "beta1_below_0.01", "pass": bool(emp[0] < 0.01)})

    report = {
        "draws": kept,
        "times": times,
        "files": [Path(f).name for f in files],
        "nodes": nodes,
        "empirical_beta": emp,
        "beta_allowance": allowance,
        "bound_curve": curve_info,
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
    }
    text = _dump(report)
    out = _out_dir(args)
    if out is None:
        sys.stdout.write(text)
    else:
        outputs = []
        _write(out / "diagnostics.json", text, outputs)
        rows = ["n_or_m,value,bound"]
        for k, (e, b) in enumerate(zip(emp, bound), start=1):
            rows.append(f"{k},{e!r},{'' if b is None else repr(b)}")
        _write(out / "curves.csv", "\n".join(rows) + "\n", outputs)
        _append_manifest(out, args, spec_hash, outputs, started, model=model)
    return EXIT_OK if report["all_pass"] else EXIT_VIOLATION


def _cells(draws: np.ndarray) -> int:
    distinct = len(np.unique(draws.reshape(-1, draws.shape[-1]), axis=0))
    return min(distinct, 8 ** draws.shape[-1]) ** 2


# --- parser -------------------------------------------------------------------


def _add_grid(p):
    p.add_argument("--grid-size", type=int, default=201)
    p.add_argument("--grid-cap", type=int, default=2**20)
    p.add_argument("--truncation-tol", type=float, default=1e-12)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cestgm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check compatibility constraints")
    p.add_argument("spec")
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("graph", help="write the conditional-independence graph as DOT")
    p.add_argument("spec")
    p.add_argument("--dot")
    p.add_argument("--unroll", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("spectrum", help="dominant eigentriple of the interaction operator")
    p.add_argument("spec")
    _add_grid(p)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("simulate", help="padded Gibbs simulation")
    p.add_argument("spec")
    _add_grid(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burnin", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--scan", choices=["systematic", "random"], default="systematic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--auto-pad", action="store_true")
    p.add_argument("--tv-target", type=float, default=1e-3)
    p.add_argument("--force", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="diagnostics for simulated paths")
    p.add_argument("paths")
    p.add_argument("spec")
    _add_grid(p)
    p.add_argument("--n-max", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except _Exit as exc:
        if str(exc):
            sys.stderr.write(f"error: {exc}\n")
        return exc.code
    except GridCapExceeded as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VIOLATION
    except CEStGMError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
