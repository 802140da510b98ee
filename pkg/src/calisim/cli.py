"""Command-line entry point: one subcommand per pipeline stage."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import features as feat
from . import harness
from . import simulator as sim
from .agents import BehaviorVector
from .harness import ConfigError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calisim",
                                description="Market simulation and one-shot calibration toolkit")
    p.add_argument("--config", type=Path, default=None, help="YAML config file")
    p.add_argument("--out", type=Path, required=True, help="output/run directory")
    subs = p.add_subparsers(dest="command", required=True)

    g = subs.add_parser("gen-benchmark", help="generate the synthetic benchmark")
    g.add_argument("--state-free", action="store_true",
                   help="plant a zero state-to-behavior map (control variant)")

    s = subs.add_parser("simulate", help="simulate one benchmark day")
    s.add_argument("--day", type=int, required=True)
    s.add_argument("--seed", type=int, default=None,
                   help="override the day's recorded seed")
    s.add_argument("--b-norm", type=str, default=None,
                   help="comma-separated normalized behavior coordinates "
                        "(default: the day's planted vector)")
    s.add_argument("--stream-out", type=Path, required=True,
                   help="output path prefix for the order stream")

    e = subs.add_parser("extract-features", help="feature vector of a stored stream")
    e.add_argument("--stream", type=Path, required=True, help="stream path prefix")

    subs.add_parser("train-surrogate", help="build the dataset and train the surrogate")

    t = subs.add_parser("train-metamarket", help="train the one-shot calibrator")
    t.add_argument("--w-s", type=float, default=None,
                   help="override the market-state consistency weight")
    t.add_argument("--tag", type=str, default="",
                   help="checkpoint suffix (e.g. _ws0 for the ablation arm)")

    c = subs.add_parser("calibrate", help="calibrate every test day")
    c.add_argument("--method", choices=["calisim", "randsearch", "bayesopt"],
                   required=True)
    c.add_argument("--seed", type=int, default=0, help="search seed (baselines)")
    c.add_argument("--tag", type=str, default="",
                   help="calibrator checkpoint suffix (calisim only)")

    subs.add_parser("evaluate", help="produce the evaluation report bundle")

    h = subs.add_parser("hypothesize", help="counterfactual state query")
    h.add_argument("--day", type=int, required=True)
    h.add_argument("--set", action="append", default=[], metavar="NAME=DELTA",
                   help="shift an indicator by DELTA z-units (repeatable)")
    h.add_argument("--tag", type=str, default="")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on unknown flags/usage errors; preserve that.
        return int(exc.code or 0)
    try:
        cfg = harness.load_config(args.config)
        return _dispatch(args, cfg)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args, cfg: dict) -> int:
    out: Path = args.out
    if args.command == "gen-benchmark":
        bench = harness.stage_gen_benchmark(cfg, out, state_free=args.state_free)
        print(f"benchmark: {len(bench.days)} days "
              f"({bench.n_warmup} warmup + {bench.n_train} train + {bench.n_test} test) "
              f"-> {out / 'benchmark'}")
        return 0

    if args.command == "simulate":
        bench = harness._load_benchmark(out)
        by_day = {d.day: d for d in bench.days}
        if args.day not in by_day:
            raise ConfigError(f"config field day: {args.day} not in benchmark")
        d = by_day[args.day]
        b = d.b_star
        if args.b_norm is not None:
            vals = [float(v) for v in args.b_norm.split(",")]
            if len(vals) != 5:
                raise ConfigError("config field b-norm: expected 5 coordinates")
            b = BehaviorVector.from_normalized(np.array(vals))
        seed = d.seed if args.seed is None else args.seed
        stream = sim.run_day(bench.cfg, b, d.fund, seed=seed)
        sim.write_stream(stream, args.stream_out)
        print(f"stream: {len(stream.events)} events -> {args.stream_out}.*")
        return 0

    if args.command == "extract-features":
        stream = sim.read_stream(args.stream)
        q = feat.extract(stream)
        for name, v in zip(feat.FEATURE_NAMES, q):
            print(f"{name},{v}")
        return 0

    if args.command == "train-surrogate":
        _, curves = harness.stage_train_surrogate(cfg, out)
        print(f"surrogate: val {curves.val_loss[0]:.4f} -> "
              f"{min(curves.val_loss):.4f} (best epoch {curves.best_epoch})")
        return 0

    if args.command == "train-metamarket":
        _, curves = harness.stage_train_metamarket(cfg, out, w_s=args.w_s, tag=args.tag)
        print(f"metamarket{args.tag}: recon {curves.recon[0]:.4f} -> {curves.recon[-1]:.4f}, "
              f"variation {curves.variation[0]:.5f} -> {curves.variation[-1]:.5f}")
        return 0

    if args.command == "calibrate":
        path = harness.stage_calibrate(cfg, out, args.method, seed=args.seed,
                                       metamarket_tag=args.tag)
        calls = harness.read_manifest(out)["sim_calls"]
        key = path.stem.removeprefix("calibration_")
        print(f"calibration -> {path} (simulator calls: {calls[key]['total']})")
        return 0

    if args.command == "evaluate":
        summary = harness.stage_evaluate(cfg, out)
        for source, row in summary["methods"].items():
            print(f"{source}: mean recon {row['mean_recon']:.4f}, "
                  f"median variation {row['median_variation']:.5f}, "
                  f"mean recovery {row['mean_recovery']:.4f}")
        return 0

    if args.command == "hypothesize":
        deltas = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"config field set: expected NAME=DELTA, got {item!r}")
            name, _, val = item.partition("=")
            deltas[name] = float(val)
        report = harness.stage_hypothesize(cfg, out, args.day, deltas,
                                           metamarket_tag=args.tag)
        print(f"day {report['day']}")
        for name in report["factual"]:
            print(f"{name}: {report['factual'][name]:.6g} -> "
                  f"{report['counterfactual'][name]:.6g} "
                  f"(normalized delta {report['delta_normalized'][name]:+.6g})")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
