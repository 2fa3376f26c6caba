"""Command-line front end: simulate, attack, snr, crossing, fit, reproduce, import.

Every command is deterministic given its configuration and seed; reruns
produce byte-identical outputs. ``--threads`` only affects speed, never
results. Output directories are guarded by a lock file so two invocations
cannot interleave writes.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import repro
from .cpa import HypothesisSpace, attack
from .errors import OutputLockError, ParallabError
from .fitting import fit_decay
from .leakage import ArrayConfig
from .metrics import crossing_point, snr_curve
from .tracegen import (WeightDistribution, generate_campaign, import_external_traces,
                       load_campaign, save_campaign)

_THREADS_ENV = "CPA_PARALLAB_THREADS"


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(_THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@contextmanager
def _locked_out_dir(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".cpa-parallab.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLockError(
            f"{out} is locked by another invocation (stale? remove {lock})")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _refuse_existing(path: Path, force: bool):
    if path.exists() and not force:
        raise SystemExit(f"refusing to overwrite {path}; pass --force to replace it")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _parse_dist(text: str) -> WeightDistribution:
    if text == "uniform":
        return WeightDistribution.uniform()
    if text.startswith("normal:"):
        return WeightDistribution.normal(float(text.split(":", 1)[1]))
    if text.startswith("file:"):
        return WeightDistribution.from_file(text.split(":", 1)[1])
    raise argparse.ArgumentTypeError(
        f"unknown distribution {text!r}; use uniform, normal:SIGMA or file:PATH")


def _config_from_args(args) -> tuple[ArrayConfig, dict]:
    cfg = {}
    if args.config:
        cfg = json.loads(Path(args.config).read_text())
    merged = {
        "n_pe": args.n_pe if args.n_pe is not None else cfg.get("n_pe"),
        "n_tau": args.n_tau if args.n_tau is not None else cfg.get("n_tau", 8),
        "n_traces": args.n_traces if args.n_traces is not None else cfg.get("n_traces", 2000),
        "n_runs": args.n_runs if args.n_runs is not None else cfg.get("n_runs", 10),
        "seed": args.seed if args.seed is not None else cfg.get("seed", 0),
        "distribution": cfg.get("distribution", "uniform"),
        "noise_sigma": args.noise_sigma if args.noise_sigma is not None
        else cfg.get("noise_sigma", 0.0),
        "signed_weights": cfg.get("signed_weights", False),
        "signed_inputs": cfg.get("signed_inputs", False),
    }
    if args.dist is not None:
        merged["distribution"] = args.dist
    if args.signed_weights:
        merged["signed_weights"] = True
    if args.signed_inputs:
        merged["signed_inputs"] = True
    problems = []
    if merged["n_pe"] is None or merged["n_pe"] < 1:
        problems.append(f"n_pe must be a positive integer, got {merged['n_pe']}")
    if merged["n_tau"] < 1:
        problems.append(f"n_tau must be >= 1, got {merged['n_tau']}")
    if merged["n_traces"] < 2:
        problems.append(f"n_traces must be >= 2, got {merged['n_traces']}")
    if merged["n_runs"] < 1:
        problems.append(f"n_runs must be >= 1, got {merged['n_runs']}")
    if merged["noise_sigma"] < 0:
        problems.append(f"noise_sigma must be >= 0, got {merged['noise_sigma']}")
    if problems:
        raise SystemExit("invalid configuration:\n  " + "\n  ".join(problems))
    config = ArrayConfig(n_pe=merged["n_pe"], noise_sigma=merged["noise_sigma"],
                         signed_weights=merged["signed_weights"],
                         signed_inputs=merged["signed_inputs"])
    return config, merged


def cmd_simulate(args) -> int:
    config, merged = _config_from_args(args)
    dist = merged["distribution"]
    if isinstance(dist, str):
        dist = _parse_dist(dist)
    out = Path(args.out)
    with _locked_out_dir(out):
        target = out / "campaign.cpat"
        _refuse_existing(target, args.force)
        campaign = generate_campaign(config, dist, merged["n_tau"], merged["n_traces"],
                                     merged["n_runs"], merged["seed"],
                                     threads=_threads(args))
        save_campaign(campaign, target)
    print(f"wrote {target} (+ sidecar): n_runs={campaign.n_runs} "
          f"n_traces={campaign.n_traces_per_run} n_tau={campaign.n_tau} "
          f"n_pe={config.n_pe} seed={campaign.seed}")
    return 0


def cmd_attack(args) -> int:
    campaign = load_campaign(args.campaign)
    run = campaign.runs[args.run_index]
    if args.mode == "full":
        space = HypothesisSpace.full_enumeration(args.tau)
    else:
        if run.weights is None:
            raise SystemExit("prefix mode needs known weights (simulated campaign)")
        space = HypothesisSpace.known_prefix(run.weights[0, :args.tau])
    try:
        res = attack(run, space)
    except ParallabError as e:
        raise SystemExit(f"attack failed: {e}")
    rows = []
    for i in range(res.n_candidates):
        rows.append((i, " ".join(str(w) for w in res.candidate(i)),
                     float(res.coefficients[i]), bool(res.is_correct[i]),
                     bool(res.is_alias[i])))
    rows.sort(key=lambda r: r[2], reverse=True)
    out = Path(args.out)
    with _locked_out_dir(out):
        target = out / f"attack_tau{args.tau}_{args.mode}.csv"
        _refuse_existing(target, args.force)
        _write_csv(target, ("hypothesis_id", "weights", "abs_rho", "is_correct",
                            "is_alias"), rows)
    argmax = [tuple(res.candidate(int(i))) for i in res.argmax_set[:8]]
    print(f"wrote {target}")
    print(f"best |rho| = {res.coefficients.max():.6f} at {argmax}"
          + ("..." if res.argmax_set.size > 8 else ""))
    if res.correct_index is not None:
        print(f"correct candidate |rho| = {res.rho_correct:.6f}; "
              f"best incorrect = {res.best_incorrect:.6f}; "
              f"recovered = {res.recovered}")
    return 0


def cmd_snr(args) -> int:
    campaigns = [load_campaign(p) for p in args.campaign]
    pts = snr_curve(campaigns, args.tau)
    out = Path(args.out)
    with _locked_out_dir(out):
        target = out / f"snr_tau{args.tau}.csv"
        _refuse_existing(target, args.force)
        _write_csv(target, ("n_pe", "tau", "snr"),
                   [(p.n_pe, p.tau, p.snr) for p in pts])
    print(f"wrote {target}")
    return 0


def cmd_crossing(args) -> int:
    with open(args.curves, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise SystemExit(f"{args.curves}: no data rows")
    taus = sorted({int(r["tau"]) for r in rows})
    results = {}
    for tau in taus:
        sub = [r for r in rows if int(r["tau"]) == tau]
        n_pe = [int(r["n_pe"]) for r in sub]
        cw = [float(r["rho_correct"]) for r in sub]
        inc = [float(r["rho_best_incorrect"]) for r in sub]
        cp = crossing_point(n_pe, cw, inc, tau)
        results[tau] = {"n_pe_star": cp.n_pe_star, "confidence": cp.confidence}
    print(json.dumps(results, indent=1))
    return 0


def cmd_fit(args) -> int:
    points = []
    with open(args.input, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"n_pe", "rho"} <= set(reader.fieldnames):
            raise SystemExit(f"{args.input}: expected header with n_pe,rho columns")
        for lineno, row in enumerate(reader, start=2):
            try:
                points.append((float(row["n_pe"]), float(row["rho"])))
            except (TypeError, ValueError):
                raise SystemExit(f"{args.input}:{lineno}: malformed row {row}")
    if not points:
        raise SystemExit(f"{args.input}: no data rows")
    try:
        fit = fit_decay(points)
    except (ParallabError, ValueError) as e:
        raise SystemExit(f"fit failed: {e}")
    print(json.dumps({"a": fit.a, "b": fit.b, "c": fit.c,
                      "residual_sigma": fit.residual_sigma}, indent=1))
    return 0


def cmd_reproduce(args) -> int:
    out = Path(args.out)
    with _locked_out_dir(out):
        kwargs = {}
        if args.figure == "appendixC" and args.weights:
            kwargs["weight_file"] = args.weights
        report = repro.reproduce(args.figure, scale=args.scale, seed=args.seed,
                                 threads=_threads(args), n_runs=args.n_runs, **kwargs)
        for name, (header, rows) in report.tables.items():
            target = out / f"{args.figure}_{name}.csv"
            _refuse_existing(target, args.force)
            _write_csv(target, header, rows)
            print(f"wrote {target}")
        report_path = out / f"{args.figure}_report.json"
        _refuse_existing(report_path, args.force)
        report_path.write_text(json.dumps(
            {"figure": report.figure, "scale": report.scale,
             "passed": report.passed,
             "checks": [{"name": c.name, "passed": c.passed,
                         "value": str(c.value), "expected": c.expected}
                        for c in report.checks]}, indent=1))
        print(f"wrote {report_path}")
    for c in report.checks:
        print(c.line())
    print(f"{args.figure}: {'ALL CHECKS PASSED' if report.passed else 'CHECKS FAILED'}")
    return 0 if report.passed else 1


def cmd_import(args) -> int:
    try:
        run = import_external_traces(args.traces, args.meta)
    except ParallabError as e:
        raise SystemExit(f"import failed: {e}")
    print(f"imported {args.traces}: n_traces={run.n_traces} "
          f"n_samples={run.n_samples} n_tau={run.n_tau} "
          f"weights={'unknown' if run.weights is None else 'known'} "
          f"window={run.window}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cpa-parallab",
        description="Simulate PE-array power leakage and quantify how "
                    "parallelism degrades CPA weight recovery.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${_THREADS_ENV} or CPU count); "
                             "affects speed only, never results")
        sp.add_argument("--force", action="store_true",
                        help="overwrite existing outputs")
        if out:
            sp.add_argument("--out", default="out", help="output directory")

    sp = sub.add_parser("simulate", help="generate and store a trace campaign")
    sp.add_argument("--config", help="JSON experiment config file")
    sp.add_argument("--n-pe", dest="n_pe", type=int)
    sp.add_argument("--n-tau", dest="n_tau", type=int)
    sp.add_argument("--n-traces", dest="n_traces", type=int)
    sp.add_argument("--n-runs", dest="n_runs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dist", type=str,
                    help="uniform | normal:SIGMA | file:PATH")
    sp.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    sp.add_argument("--signed-weights", action="store_true")
    sp.add_argument("--signed-inputs", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("attack", help="rank weight hypotheses against a campaign run")
    sp.add_argument("--campaign", required=True)
    sp.add_argument("--tau", type=int, required=True)
    sp.add_argument("--mode", choices=("full", "prefix"), default="prefix")
    sp.add_argument("--run-index", dest="run_index", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("snr", help="SNR curve from per-width campaign files")
    sp.add_argument("--campaign", action="append", required=True,
                    help="campaign file; repeat for each array width")
    sp.add_argument("--tau", type=int, required=True)
    common(sp)
    sp.set_defaults(func=cmd_snr)

    sp = sub.add_parser("crossing", help="crossing points from a success-curve CSV")
    sp.add_argument("--curves", required=True,
                    help="CSV with n_pe,tau,rho_correct,rho_best_incorrect")
    common(sp, out=False)
    sp.set_defaults(func=cmd_crossing)

    sp = sub.add_parser("fit", help="fit the decay law to an n_pe,rho CSV")
    sp.add_argument("--input", required=True)
    common(sp, out=False)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("reproduce", help="regenerate a published result and check it")
    sp.add_argument("--figure", required=True, choices=repro.FIGURE_IDS)
    sp.add_argument("--scale", choices=("desk", "full"), default="desk")
    sp.add_argument("--seed", type=int, default=repro.DEFAULT_SEED)
    sp.add_argument("--n-runs", dest="n_runs", type=int, default=None,
                    help="override the scale's run count (for quick looks)")
    sp.add_argument("--weights", help="trained-layer weight file (appendixC)")
    common(sp)
    sp.set_defaults(func=cmd_reproduce)

    sp = sub.add_parser("import", help="validate externally measured traces")
    sp.add_argument("--traces", required=True)
    sp.add_argument("--meta", required=True)
    common(sp, out=False)
    sp.set_defaults(func=cmd_import)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OutputLockError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
