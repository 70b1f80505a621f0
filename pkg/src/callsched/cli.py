"""Command-line entry points: simulate, analyze, tune, replay.

Each command reads configs or logs, runs the corresponding pipeline, and
writes its artifacts (CSV logs, JSON/text reports, CSV table extracts,
PNG figures) under one output directory. Exit status is 0 only when every
requested artifact was written.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import figures
from . import report as report_mod
from .analysis import bootstrap_ci, is_value, pooled_pr
from .config import (
    AnalysisParams,
    BootstrapParams,
    ConfigError,
    config_to_dict,
    load_trial_config,
)
from .domain import (
    LogValidationError,
    export_log,
    filter_active,
    ingest_log,
    split_by_phase,
    write_dropout,
)
from .matcomp import TuningError, observations_from_log, tune_lambda
from .policy import exploit_slots, fit_per_user_exploit
from .simworld import generate_world, run_trial, write_world

DEFAULT_OUT_ENV = "CALLSCHED_OUT"


def _out_dir(arg: str | None, config_dir: str | None = None) -> Path:
    return Path(arg or config_dir or os.environ.get(DEFAULT_OUT_ENV) or "callsched_out")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_trial_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = _out_dir(args.out, cfg.output_dir)
    log_dir = out / "logs"

    per_seed = []
    for k in range(cfg.n_seeds):
        world_cfg = dataclasses.replace(cfg.world, seed=cfg.world.seed + k)
        world = generate_world(world_cfg)
        if args.dump_world:
            write_world(world, out / "worlds" / f"seed_{k:03d}")
        log = run_trial(world, cfg, seed=cfg.seed + k)
        export_log(log, log_dir / f"seed_{k:03d}_calls.csv")
        if log.dropout_day:
            write_dropout(log.dropout_day, log_dir / f"seed_{k:03d}_dropout.csv")
        rep = report_mod.build_report(
            log, cfg.baseline_days, cfg.analysis, seed=cfg.seed + 100_000 + k
        )
        per_seed.append((cfg.seed + k, rep))

    combined = report_mod.combine_reports(config_to_dict(cfg), per_seed)
    report_mod.validate_report(combined)
    _write_text(out / "report.json", report_mod.report_to_json(combined))
    _write_text(out / "report.txt", report_mod.render_combined_text(combined))
    first = per_seed[0][1]
    report_mod.write_report_csvs(first, out, prefix="seed_000_")
    if not args.no_figures:
        figures.render_report_figures(first, out, prefix="seed_000_")
    print(report_mod.render_simulation_summary(combined))
    print(f"artifacts written to {out}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    log = ingest_log(args.log, dropout_path=args.dropout)
    params = AnalysisParams(
        ttest=args.ttest,
        is_call_set=args.is_call_set,
        bootstrap=BootstrapParams(args.bootstrap_resamples, args.bootstrap_level),
    )
    rep = report_mod.build_report(log, args.baseline_days, params, seed=args.seed)
    report_mod.validate_report(rep)
    out = _out_dir(args.out)
    _write_text(out / "report.json", report_mod.report_to_json(rep))
    _write_text(out / "report.txt", report_mod.render_text(rep))
    report_mod.write_report_csvs(rep, out)
    if not args.no_figures:
        figures.render_report_figures(rep, out)
    print(report_mod.render_text(rep))
    print(f"artifacts written to {out}")
    return 0


def cmd_tune(args: argparse.Namespace) -> int:
    log = ingest_log(args.log)
    if args.baseline_days is not None:
        log, _ = split_by_phase(log, args.baseline_days)
    obs = observations_from_log(log)
    grid = [float(x) for x in args.grid.split(",") if x.strip()]
    best, scores = tune_lambda(
        obs,
        grid,
        holdout_fraction=args.holdout_fraction,
        use_weights=not args.unweighted,
    )
    print(f"{'lambda':>10}{'val_rmse':>14}")
    for lam in sorted(scores):
        marker = "  <- chosen" if lam == best else ""
        print(f"{lam:>10.4g}{scores[lam]:>14.6f}{marker}")
    if args.out:
        out = _out_dir(args.out)
        payload = {
            "best_lambda": best,
            "scores": {str(lam): scores[lam] for lam in sorted(scores)},
            "holdout_fraction": args.holdout_fraction,
            "n_observed": obs.n_observed,
        }
        _write_text(out / "tuning.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"artifacts written to {out}")
    return 0


def _read_behavior(path: str) -> dict[int, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ("slot_id", "probability"):
            raise LogValidationError(f"{path}: header must be slot_id,probability")
        return {int(row[0]): float(row[1]) for row in reader if row}


def cmd_replay(args: argparse.Namespace) -> int:
    log = ingest_log(args.log, dropout_path=args.dropout)
    if args.arm:
        log = log.for_arm(args.arm)
    active = filter_active(log)
    baseline, intervention = split_by_phase(active, args.baseline_days)
    if len(baseline) == 0 or len(intervention) == 0:
        raise ValueError("replay needs both a baseline and an intervention split")

    behavior = _read_behavior(args.behavior_file) if args.behavior_file else None
    rng = np.random.default_rng(args.seed)
    boot = args.bootstrap_resamples

    if args.target == "uniform":
        dist = behavior or {s: 1.0 / 7.0 for s in range(1, 8)}
        point = is_value(
            intervention, target_dist=dist, behavior=behavior, call_set=args.is_call_set
        )
        ci = bootstrap_ci(
            intervention,
            lambda l: is_value(l, target_dist=dist, behavior=behavior, call_set=args.is_call_set),
            n_resamples=boot,
            level=args.bootstrap_level,
            rng=rng,
        )
        ci_low, ci_high = ci.low, ci.high
    else:
        target = exploit_slots(fit_per_user_exploit(baseline))
        known = [i for i, u in enumerate(intervention.user_table) if u in target]
        evaluable = intervention.subset(np.isin(intervention.user_codes, known))
        if len(evaluable) == 0:
            raise ValueError("no intervention calls for users seen in the baseline")
        point = is_value(
            evaluable, target_slots=target, behavior=behavior, call_set=args.is_call_set
        )
        params = AnalysisParams(
            is_call_set=args.is_call_set,
            bootstrap=BootstrapParams(boot, args.bootstrap_level),
        )
        ci_low, ci_high = report_mod.bootstrap_is_value(evaluable, target, params, args.seed)
        intervention = evaluable

    pooled = pooled_pr(intervention)
    pooled_ci = bootstrap_ci(
        intervention, pooled_pr, n_resamples=boot, level=args.bootstrap_level, rng=rng
    )
    print(f"target policy:      {args.target}")
    print(f"call set:           {args.is_call_set}")
    print(f"V_q                 {point:.6f}  [{ci_low:.6f}, {ci_high:.6f}]")
    print(
        f"empirical pooled PR {pooled:.6f}  [{pooled_ci.low:.6f}, {pooled_ci.high:.6f}]"
    )
    if args.out:
        out = _out_dir(args.out)
        payload = {
            "target": args.target,
            "call_set": args.is_call_set,
            "v_q": point,
            "v_q_ci": [ci_low, ci_high],
            "empirical_pooled_pr": pooled,
            "empirical_pooled_pr_ci": [pooled_ci.low, pooled_ci.high],
            "n_resamples": boot,
            "level": args.bootstrap_level,
        }
        _write_text(out / "replay.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"artifacts written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="callsched",
        description="Collaborative-bandit call scheduling: simulate, analyze, tune, replay.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run seeded two-arm trials from a config file")
    sim.add_argument("--config", required=True, help="YAML/JSON trial config")
    sim.add_argument("--seed", type=int, default=None, help="override the config's base seed")
    sim.add_argument("--out", default=None, help=f"output dir (default ${DEFAULT_OUT_ENV})")
    sim.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    sim.add_argument(
        "--dump-world", action="store_true",
        help="also write each seed's truth matrix and factors as CSVs",
    )
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="full statistics report for an ingested log")
    ana.add_argument("--log", required=True)
    ana.add_argument("--dropout", default=None, help="dropout sidecar CSV")
    ana.add_argument("--baseline-days", type=int, default=21)
    ana.add_argument("--ttest", choices=["welch", "pooled"], default="welch")
    ana.add_argument("--is-call-set", choices=["first", "all"], default="first")
    ana.add_argument("--bootstrap-resamples", type=int, default=2000)
    ana.add_argument("--bootstrap-level", type=float, default=0.95)
    ana.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    ana.add_argument("--out", default=None)
    ana.add_argument("--no-figures", action="store_true")
    ana.set_defaults(func=cmd_analyze)

    tun = sub.add_parser("tune", help="grid-search the completion regularization on a log")
    tun.add_argument("--log", required=True)
    tun.add_argument("--grid", default="0.01,0.03,0.1,0.3,1,3,10")
    tun.add_argument("--holdout-fraction", type=float, default=0.2)
    tun.add_argument(
        "--baseline-days",
        type=int,
        default=None,
        help="restrict to days before this; default uses the whole log",
    )
    tun.add_argument("--unweighted", action="store_true", help="ignore pooled counts")
    tun.add_argument("--out", default=None)
    tun.set_defaults(func=cmd_tune)

    rep = sub.add_parser("replay", help="off-policy value of a target policy on a logged arm")
    rep.add_argument("--log", required=True)
    rep.add_argument("--dropout", default=None)
    rep.add_argument("--arm", choices=["treatment", "control"], default=None)
    rep.add_argument("--baseline-days", type=int, default=21)
    rep.add_argument("--target", choices=["exploit", "uniform"], default="exploit")
    rep.add_argument(
        "--behavior-file",
        default=None,
        help="slot_id,probability CSV; omitting asserts uniform 1/7 behavior",
    )
    rep.add_argument("--is-call-set", choices=["first", "all"], default="first")
    rep.add_argument("--bootstrap-resamples", type=int, default=2000)
    rep.add_argument("--bootstrap-level", type=float, default=0.95)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LogValidationError, TuningError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
