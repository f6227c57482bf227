"""Command line entry point: ``expertagg {run,synth,oracles,sweep}``."""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from expertagg.backtest import (
    FORMATS,
    BacktestError,
    ConfigError,
    emit_report,
    make_config,
    parse_config_text,
    report_to_table,
    report_to_text,
    run_backtest,
    run_on_dataset,
)
from expertagg.core import LossSpec
from expertagg.dataset import DatasetError, load_dataset, save_dataset
from expertagg.evaluation import activity_stats
from expertagg.oracles import (
    best_compound_expert,
    best_convex_vector,
    best_single_expert,
    partition_oracles,
    uniform_rule,
)
from expertagg.synth import ACTIVITY_MODELS, SynthSpec, synth_generate


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--data")
    p.add_argument("--loss", choices=["square", "absolute", "absolute-percentage"])
    p.add_argument("--rule", help="[meta:][op-]{ewa,specialist,fixed-share}[-grad] or an oracle name")
    p.add_argument("--eta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--block-size", type=int)
    p.add_argument("--prior", choices=["uniform", "fair"])
    p.add_argument("--groups", help="comma-separated group sizes, e.g. 15,8,1")
    p.add_argument("--grid", help="slovak-small | slovak-large | slovak-fs | comma-separated etas")
    p.add_argument("--adaptive-grid", action="store_const", const=True, default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--report")
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--bound", type=float)
    p.add_argument("--m", type=int, help="switch budget for best-compound")
    p.add_argument("--budget", type=int, help="iteration budget of the convex-vector search")


_RUN_KEYS = ("data", "loss", "rule", "eta", "alpha", "block_size", "prior", "groups", "grid",
             "adaptive_grid", "seed", "report", "format", "bound", "m", "budget")


def _config_from_args(args):
    file_values = {}
    if args.config:
        with open(args.config) as fh:
            file_values = parse_config_text(fh.read())
    return make_config(file_values, {k: getattr(args, k) for k in _RUN_KEYS})


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    report = run_backtest(cfg)
    if cfg.report:
        emit_report(report, cfg.report, cfg.format)
    else:
        sys.stdout.write(report_to_text(report) if cfg.format == "structured-text" else report_to_table(report))
    if cfg.report:
        metric = f"rmse={report.rmse:.6g}" if report.rmse is not None else f"mean_loss={report.mean_loss:.6g}"
        print(f"{cfg.rule}: T={report.T} N={report.N} {metric} -> {cfg.report}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    shifts = [int(s) for s in args.shifts.split(",")] if args.shifts else []
    sleepers = [int(s) for s in args.sleepers.split(",")] if args.sleepers else []
    spec = SynthSpec(n_experts=args.n, horizon=args.t, bound=args.bound, activity=args.activity,
                     sleepers=sleepers, sleep_period=args.sleep_period, sleep_rate=args.sleep_rate,
                     regime_shifts=shifts, period=args.period, seed=args.seed)
    save_dataset(synth_generate(spec), args.out)
    return 0


def cmd_oracles(args) -> int:
    data = load_dataset(args.data, args.bound)
    spec = LossSpec(args.loss)
    rows = [("uniform-rule", uniform_rule(data, spec))]
    j, s = best_single_expert(data, spec)
    rows.append((f"best-expert[{data.expert_names[j]}]", s))
    _, s = best_convex_vector(data, spec, args.budget, args.seed)
    rows.append(("best-convex", s))
    for m in args.m:
        if m >= data.T - 1:
            continue
        _, s = best_compound_expert(data, spec, m)
        rows.append((f"best-compound[m={m}]", s))
    _, s = best_compound_expert(data, spec, data.T - 1)
    rows.append(("prescient", s))
    K, se, sc = partition_oracles(data, spec, args.budget, args.seed)
    rows.append((f"partition-best-expert[K={K}]", se))
    rows.append((f"partition-best-convex[K={K}]", sc))
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["benchmark", "rmse" if spec.is_square else "mean_loss"])
    for name, value in rows:
        out.writerow([name, format(value, ".12g")])
    if args.activity:
        with open(args.activity, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["expert", "score", "activity"])
            for name, (sc_j, freq) in zip(data.expert_names, activity_stats(data, spec)):
                w.writerow([name, "" if np.isnan(sc_j) else format(sc_j, ".12g"), format(freq, ".12g")])
    return 0


def _sweep_one(job):
    cfg, data = job
    report = run_on_dataset(cfg, data)
    return report.rmse if report.rmse is not None else report.mean_loss


def cmd_sweep(args) -> int:
    etas = [float(s) for s in args.etas.split(",")]
    alphas = [float(s) for s in args.alphas.split(",")] if args.alphas else [None]
    jobs, keys = [], []
    for eta in etas:
        for alpha in alphas:
            args.eta, args.alpha = eta, alpha
            cfg = _config_from_args(args)
            keys.append((eta, alpha))
            jobs.append(cfg)
    data = load_dataset(jobs[0].data, jobs[0].bound)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            values = list(pool.map(_sweep_one, [(c, data) for c in jobs]))
    else:
        values = [_sweep_one((c, data)) for c in jobs]
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["eta", "alpha", "score"])
    for (eta, alpha), v in zip(keys, values):
        out.writerow([format(eta, ".12g"), "" if alpha is None else format(alpha, ".12g"), format(v, ".12g")])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="expertagg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="prequential backtest of one rule or oracle")
    _run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--t", type=int, default=1000)
    p.add_argument("--bound", type=float, default=1.0)
    p.add_argument("--activity", choices=ACTIVITY_MODELS, default="always-on")
    p.add_argument("--sleepers", help="comma-separated expert indices that may sleep")
    p.add_argument("--sleep-period", type=int, default=2)
    p.add_argument("--sleep-rate", type=float, default=0.3)
    p.add_argument("--shifts", help="comma-separated regime-shift rounds")
    p.add_argument("--period", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracles", help="table of hindsight benchmarks")
    p.add_argument("--data", required=True)
    p.add_argument("--loss", default="square")
    p.add_argument("--bound", type=float)
    p.add_argument("--m", type=int, nargs="*", default=[10, 50])
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--activity", help="also write per-expert (score, activity) pairs here")
    p.set_defaults(func=cmd_oracles)

    p = sub.add_parser("sweep", help="scores of a rule over constant parameter values")
    _run_flags(p)
    p.add_argument("--etas", required=True)
    p.add_argument("--alphas")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, BacktestError, OSError) as exc:
        print(f"expertagg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
