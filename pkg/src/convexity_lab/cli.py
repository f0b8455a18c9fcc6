"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 property failure, 3 divergence.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, kernels
from .config import load_config
from .data import (TeacherSpec, gen_teacher, load_csv, load_idx, load_weights, normalize_radius,
                   save_weights, teacher_params)
from .errors import (ConvexityLabError, DivergenceError, InvalidInputError, MonotonicityError,
                     NotCriticalError, ResourceError)
from .linear import critical_search, degeneracy_audit, require_wide
from .loss import LossConfig, descend, gradient
from .net import Architecture, Dataset, Params, init_params
from .plot import histogram_svg, timeseries_svg, write_svg
from .region import RegionSpec, certify, isolation_probe, audit_curvature_floor
from .report import dumps, make_report, read_trajectory_csv, trial_rows, write_trajectory_csv
from .trajectory import (SgdConfig, gradient_flow, gronwall_check, loss_change_fraction, percentile_stat,
                         sgd_train)

EXIT_OK, EXIT_USAGE, EXIT_PROPERTY, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- inputs

def _kv(text: str) -> dict:
    out = {}
    for item in filter(None, text.split(",")):
        k, sep, v = item.partition("=")
        if not sep:
            raise UsageError(f"expected key=value, got {item!r}")
        out[k.strip()] = v.strip()
    return out


def teacher_spec_from(text: str, arch: Architecture) -> TeacherSpec:
    """``teacher:N=32,noise=0,scale=1,seed=0,radius=1[,arch=2-3-1]``."""
    kv = _kv(text)
    known = {"N", "noise", "scale", "seed", "radius", "arch"}
    bad = set(kv) - known
    if bad:
        raise UsageError(f"unknown teacher keys {sorted(bad)}")
    t_arch = Architecture.parse(kv["arch"].replace("-", ",")) if "arch" in kv else arch
    if t_arch.widths[0] != arch.widths[0]:
        raise UsageError("teacher input width must match --arch")
    return TeacherSpec(t_arch, scale=float(kv.get("scale", 1.0)), noise=float(kv.get("noise", 0.0)),
                       N=int(kv.get("N", 32)), seed=int(kv.get("seed", 0)), radius=float(kv.get("radius", 1.0)))


def load_data(args, arch: Architecture):
    """Return ``(Dataset, TeacherSpec or None)`` for the ``--data`` argument."""
    text = args.data
    if text is None:
        raise UsageError("--data is required")
    spec = None
    if text.startswith("teacher:") or text == "teacher":
        spec = teacher_spec_from(text.partition(":")[2], arch)
        D = gen_teacher(spec)
    elif text.startswith("idx:"):
        parts = text[4:].split(",")
        if len(parts) < 2:
            raise UsageError("idx data needs idx:images,labels[,limit[,digit]]")
        limit = int(parts[2]) if len(parts) > 2 and parts[2] else None
        digit = int(parts[3]) if len(parts) > 3 else 0
        D = load_idx(parts[0], parts[1], limit=limit, target=digit)
    elif text.startswith("empty"):
        kv = _kv(text.partition(":")[2])
        D = Dataset.empty(arch.widths[0], radius=float(kv.get("radius", 1.0)))
    else:
        path = text[4:] if text.startswith("csv:") else text
        if not Path(path).exists():
            raise UsageError(f"data file {path} not found")
        D = load_csv(path, n0=arch.widths[0], header=args.header)
    if D.n0 != arch.widths[0]:
        raise UsageError(f"data has {D.n0} features, architecture expects {arch.widths[0]}")
    if getattr(args, "normalize", None) is not None:
        D = normalize_radius(D, args.normalize)
    if args.radius is not None:
        D = Dataset(D.inputs, D.labels, radius=args.radius)
    return D, spec


def load_start(args, arch: Architecture, spec: Optional[TeacherSpec], seed: int) -> Params:
    w = args.weights
    if w is None or w == "init":
        return init_params(arch, np.random.default_rng(seed), scale=args.init_scale)
    if w == "teacher":
        if spec is None:
            raise UsageError("--weights teacher needs teacher data")
        if spec.arch != arch:
            raise UsageError("--weights teacher needs the teacher and student architectures to match")
        return teacher_params(spec)
    if not Path(w).exists():
        raise UsageError(f"weight file {w} not found")
    return load_weights(w, arch)


def _arch(args) -> Architecture:
    if args.arch is None:
        raise UsageError("--arch is required")
    return Architecture.parse(args.arch)


def _echo(args, arch, D: Dataset) -> dict:
    keep = ("data", "lam", "theta", "seed", "weights", "init_scale", "trials", "T", "step", "log_every",
            "epochs", "batch_size", "lr", "starts", "angles", "perturb", "probe_radius", "descend")
    out = {k: getattr(args, k) for k in keep if getattr(args, k, None) is not None}
    out.update({"arch": str(arch), "radius": D.radius, "N": D.N})
    return out


def _emit(args, body: dict, t_start: float):
    env = {"tool_version": __version__, "wall_clock_seconds": time.perf_counter() - t_start,
           "backend": kernels.BACKEND}
    text = dumps(make_report(body, env))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands

def cmd_certify(args) -> int:
    t_start = time.perf_counter()
    arch = _arch(args)
    if args.lam is None or args.theta is None:
        raise UsageError("--lambda and --theta are required")
    D, spec = load_data(args, arch)
    rspec = RegionSpec(args.lam, args.theta, D.radius, arch.H)
    W = load_start(args, arch, spec, args.seed)
    cfg = LossConfig(args.lam)
    g_scale = gradient(W, D, cfg, warn=False).norm
    body = {"config": _echo(args, arch, D)}
    if args.descend:
        W, gn, conv = descend(W, D, cfg, gtol=1e-10 * (1.0 + g_scale))
        body["descent"] = {"grad_norm": gn, "converged": conv}
    cert = certify(W, D, rspec)
    body["certificate"] = cert.to_dict()
    audit = audit_curvature_floor(W, D, trials=args.trials, seed=args.seed)
    body["curvature_floor"] = {"floor": audit.floor, "trials": audit.trials, "min_second": audit.min_second,
                               "worst_slack": audit.worst_slack, "violations": audit.violations}
    ok = audit.ok
    try:
        iso = isolation_probe(W, D, rspec, n_perturb=args.perturb, radius=args.probe_radius, seed=args.seed,
                              grad_scale=g_scale, certificate=cert)
        body["isolation"] = iso.to_dict()
        ok = ok and iso.passed is not False
    except NotCriticalError as e:
        body["isolation"] = {"skipped": str(e)}
    if args.require_certified and not cert.certified:
        ok = False
    body["passed"] = ok
    if args.save_weights:
        save_weights(W, args.save_weights)
    _emit(args, body, t_start)
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_flow(args) -> int:
    t_start = time.perf_counter()
    arch = _arch(args)
    if args.lam is None:
        raise UsageError("--lambda is required")
    D, spec = load_data(args, arch)
    W0 = load_start(args, arch, spec, args.seed)
    cfg = LossConfig(args.lam)
    body = {"config": _echo(args, arch, D)}
    code = EXIT_OK
    try:
        rec = gradient_flow(W0, D, cfg, step=args.step, T=args.T, log_every=args.log_every)
    except (DivergenceError, MonotonicityError) as e:
        rec = e.record
        body["error"] = str(e)
        code = EXIT_DIVERGED
    rec.meta["seed"] = args.seed
    if args.csv:
        write_trajectory_csv(rec, args.csv)
    body["trajectory"] = rec.summary()
    body["step"] = rec.meta.get("step")
    body["loss_change_fraction"] = loss_change_fraction(rec)
    body["percentile"] = percentile_stat([rec], args.percentile).to_dict()
    if rec.t0 is not None and code == EXIT_OK:
        body["gronwall"] = gronwall_check(rec).to_dict()
    else:
        body["gronwall"] = None
    if args.save_weights and rec.final is not None:
        save_weights(rec.final, args.save_weights)
    _emit(args, body, t_start)
    return code


def _parse_lr(text: str):
    if ":" not in text:
        return float(text)
    return [(int(e), float(r)) for e, r in (item.split(":") for item in text.split(","))]


def _sgd_trial(job):
    # module-level so it pickles into worker processes
    W0, D, lam, sgdcfg = job
    try:
        rec = sgd_train(W0, D, LossConfig(lam), sgdcfg)
        err = None
    except DivergenceError as e:
        rec, err = e.record, str(e)
    rec.meta["seed"] = sgdcfg.seed
    rec.final = None
    return sgdcfg.seed, rec, err


def run_sgd_trials(W0s, D: Dataset, lam: float, sgdcfgs, jobs: int = 1):
    """Run trials (in worker processes when ``jobs > 1``); results sorted by seed."""
    work = list(zip(W0s, [D] * len(W0s), [lam] * len(W0s), sgdcfgs))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sgd_trial, work))
    else:
        results = [_sgd_trial(w) for w in work]
    return sorted(results, key=lambda r: r[0])


def cmd_sgd(args) -> int:
    t_start = time.perf_counter()
    arch = _arch(args)
    if args.lam is None:
        raise UsageError("--lambda is required")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    D, spec = load_data(args, arch)
    seeds = [args.seed + i for i in range(args.trials)]
    W0s = [load_start(args, arch, spec, s) for s in seeds]
    lr = _parse_lr(args.lr)
    cfgs = [SgdConfig(batch_size=min(args.batch_size, D.N), epochs=args.epochs, lr=lr, seed=s,
                      log_every=args.log_every) for s in seeds]
    results = run_sgd_trials(W0s, D, args.lam, cfgs, jobs=args.jobs)
    recs = [r for _, r, _ in results]
    errors = {s: e for s, _, e in results if e}
    if args.csv_dir:
        out = Path(args.csv_dir)
        out.mkdir(parents=True, exist_ok=True)
        for s, r, _ in results:
            write_trajectory_csv(r, out / f"trial_{s}.csv")
    fracs = [loss_change_fraction(r) for r in recs]
    vals = [f for f in fracs if f is not None]
    body = {
        "config": _echo(args, arch, D),
        "trials": trial_rows(recs, args.percentile),
        "t0_found": sum(r.t0 is not None for r in recs),
        "loss_change_fraction": {
            "mean": float(np.mean(vals)) if vals else None,
            "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else None,
        },
        "percentile": percentile_stat(recs, args.percentile).to_dict(),
        "diverged": {str(k): v for k, v in errors.items()},
    }
    _emit(args, body, t_start)
    return EXIT_DIVERGED if errors else EXIT_OK


def cmd_linear_audit(args) -> int:
    t_start = time.perf_counter()
    try:
        arch = _arch(args)
        require_wide(arch)
    except InvalidInputError as e:
        raise UsageError(f"{e}; the rotation audit assumes every hidden width is at least 2") from None
    if args.lam is None:
        raise UsageError("--lambda is required")
    D, spec = load_data(args, arch)
    cfg = LossConfig(args.lam)
    rep = critical_search(arch, D, cfg, starts=args.starts, seed=args.seed, gtol=args.gtol,
                          zero_tol=args.zero_tol)
    rng = np.random.default_rng([args.seed, 1])
    W = load_start(args, arch, spec, args.seed)
    angles = rng.uniform(-math.pi, math.pi, size=args.angles)
    deg = degeneracy_audit(W, D, cfg, angles, mode="linear")
    body = {"config": _echo(args, arch, D), "critical_search": rep.to_dict(), "degeneracy": deg.to_dict()}
    ok = rep.ok and (deg.all_equal or not deg.applicable)
    body["passed"] = ok
    _emit(args, body, t_start)
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_plot(args) -> int:
    t_start = time.perf_counter()
    paths = [Path(p) for p in args.inputs]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise UsageError(f"missing input files: {missing}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recs = [read_trajectory_csv(p) for p in paths]
    written = []
    for p, r in zip(paths, recs):
        written.append(str(write_svg(timeseries_svg(r, clip=args.clip, title=p.stem), out / f"{p.stem}.svg")))
    fracs = [loss_change_fraction(r) for r in recs]
    if len(recs) > 1 or args.histogram:
        written.append(str(write_svg(histogram_svg(fracs, bins=args.bins), out / "loss_fraction_hist.svg")))
    body = {"files": written, "loss_change_fractions": fracs, "clip": args.clip}
    _emit(args, body, t_start)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _common(p, data=True):
    p.add_argument("--config", help="flat key = value file supplying defaults for any flag")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=int(os.environ.get("CONVEXITY_LAB_JOBS", "1")))
    if not data:
        return
    p.add_argument("--arch", help="comma-separated widths n0,...,1")
    p.add_argument("--data", help="csv path | idx:images,labels[,limit[,digit]] | teacher:k=v,... | empty")
    p.add_argument("--header", action="store_true", help="skip the first CSV line")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--radius", type=float, help="declared input radius (>= largest input norm)")
    p.add_argument("--normalize", type=float, help="rescale inputs so the largest norm equals this")
    p.add_argument("--weights", help="npz file with W0..WH, 'teacher', or 'init' (seeded He init)")
    p.add_argument("--init-scale", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="convexity-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("certify", help="certify piecewise strong convexity at a weight")
    _common(p)
    p.add_argument("--theta", type=float)
    p.add_argument("--trials", type=int, default=1000, help="random directions for the curvature-floor audit")
    p.add_argument("--perturb", type=int, default=200)
    p.add_argument("--probe-radius", type=float, default=1e-2)
    p.add_argument("--descend", action="store_true", help="descend to a critical point first")
    p.add_argument("--require-certified", action="store_true", help="exit 2 unless the point is certified")
    p.add_argument("--save-weights")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("flow", help="gradient-flow trajectory with curvature diagnostics")
    _common(p)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--step", type=float)
    p.add_argument("--log-every", type=int, default=1)
    p.add_argument("--csv")
    p.add_argument("--percentile", type=float, default=10.0)
    p.add_argument("--save-weights")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("sgd", help="multi-trial SGD with curvature diagnostics")
    _common(p)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", default="0.05", help="rate or epoch:rate,... schedule")
    p.add_argument("--log-every", type=int, default=1)
    p.add_argument("--csv-dir")
    p.add_argument("--percentile", type=float, default=10.0)
    p.set_defaults(func=cmd_sgd)

    p = sub.add_parser("linear-audit", help="critical-point and rotation audit for linear networks")
    _common(p)
    p.add_argument("--starts", type=int, default=32)
    p.add_argument("--angles", type=int, default=100)
    p.add_argument("--gtol", type=float, default=1e-8)
    p.add_argument("--zero-tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_linear_audit)

    p = sub.add_parser("plot", help="SVG plots from trajectory CSVs")
    _common(p, data=False)
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--clip", type=float, default=10.0)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--histogram", action="store_true")
    p.set_defaults(func=cmd_plot)
    return ap


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]
    by_key = {}
    for act in sub._actions:
        for opt in act.option_strings:
            if opt.startswith("--"):
                by_key[opt[2:].replace("-", "_")] = act
    defaults = {}
    for k, v in load_config(args.config).items():
        act = by_key.get(k)
        if act is None or k == "config":
            sub.error(f"unknown config key {k!r}")
        if isinstance(act, argparse._StoreTrueAction):
            if not isinstance(v, bool):
                sub.error(f"config key {k!r} needs true or false")
            defaults[act.dest] = v
        else:
            defaults[act.dest] = act.type(str(v)) if act.type else str(v)
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, InvalidInputError, ResourceError, FileNotFoundError) as e:
        print(f"convexity-lab {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConvexityLabError as e:
        print(f"convexity-lab {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
