"""Pipeline orchestration: benchmark generation, surrogate and calibrator
training, per-day calibration with every method, and the evaluation report
bundle (error CDFs, variation histograms, correlation tables, recovery,
simulator-call accounting, ablation), all rooted in one output directory
with a manifest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import baselines as bl
from . import features as feat
from . import metamarket as mm
from . import simulator as sim
from . import surrogate as sur
from .agents import BEHAVIOR_NAMES, BehaviorVector
from .benchmark import Benchmark, gen_benchmark
from .marketstate import STATE_NAMES, StateNormalizer
from .simulator import run_day

METHODS = ("calisim", "randsearch", "bayesopt")
ABLATION = "calisim_ws0"

# Reference magnitudes from the original correlation study (per-indicator
# mean absolute Pearson rho), annotated in reports for orientation only.
REFERENCE_MEAN_ABS_RHO = {
    "calisim": {"cpi": 0.2555, "trend": 0.3266},
    "bayesopt": {"cpi": 0.0447, "trend": 0.0921},
}


class ConfigError(ValueError):
    """Raised with the offending field named."""


DEFAULT_CONFIG = {
    "profile": "ci",
    "seed": 0,
    "surrogate": {"epochs": 300, "lr": 1e-3, "batch_size": 32},
    "metamarket": {"epochs": 150, "lr": 1e-3, "w_t": 5.0, "w_s": 1.0},
    "baselines": {"trials": 10, "seeds": [0, 1, 2]},
    "evaluate": {"eval_seeds": [0, 1, 2]},
}


def load_config(path: Path | None) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULT_CONFIG.items()}
    if path is not None:
        with open(path) as f:
            user = yaml.safe_load(f) or {}
        if not isinstance(user, dict):
            raise ConfigError("config root: expected a mapping")
        for key, val in user.items():
            if key not in cfg:
                raise ConfigError(f"config field {key!r}: unknown")
            if isinstance(cfg[key], dict):
                if not isinstance(val, dict):
                    raise ConfigError(f"config field {key!r}: expected a mapping")
                for sub, sv in val.items():
                    if sub not in cfg[key]:
                        raise ConfigError(f"config field {key}.{sub}: unknown")
                    cfg[key][sub] = sv
            else:
                cfg[key] = val
    if cfg["profile"] not in ("ci", "full"):
        raise ConfigError(f"config field profile: {cfg['profile']!r} not in (ci, full)")
    if int(cfg["baselines"]["trials"]) < 1:
        raise ConfigError("config field baselines.trials: must be >= 1")
    return cfg


# -- manifest ------------------------------------------------------------------------


def _manifest_path(out_dir: Path) -> Path:
    return Path(out_dir) / "manifest.yaml"


def read_manifest(out_dir: Path) -> dict:
    p = _manifest_path(out_dir)
    if not p.exists():
        return {}
    with open(p) as f:
        return yaml.safe_load(f) or {}


def update_manifest(out_dir: Path, **entries):
    man = read_manifest(out_dir)
    man.update(entries)
    with open(_manifest_path(out_dir), "w") as f:
        yaml.safe_dump(man, f, sort_keys=False)


# -- stages ----------------------------------------------------------------------------


def stage_gen_benchmark(cfg: dict, out_dir: Path, state_free: bool = False) -> Benchmark:
    out_dir = Path(out_dir)
    bench = gen_benchmark(cfg["profile"], int(cfg["seed"]), state_free=state_free)
    bench.save(out_dir / "benchmark")
    update_manifest(out_dir, config=cfg, benchmark=str(out_dir / "benchmark"),
                    state_free=state_free)
    return bench


def _load_benchmark(out_dir: Path) -> Benchmark:
    p = Path(out_dir) / "benchmark"
    if not (p / "benchmark.yaml").exists():
        raise FileNotFoundError(f"missing benchmark at {p}; run gen-benchmark first")
    return Benchmark.load(p)


def stage_train_surrogate(cfg: dict, out_dir: Path,
                          bench: Benchmark | None = None,
                          ) -> tuple[sur.SurrogateNet, sur.TrainCurves]:
    out_dir = Path(out_dir)
    bench = bench or _load_benchmark(out_dir)
    fundamentals = [d.fund for d in bench.train_days]
    ds = sur.build_dataset(bench.cfg, fundamentals,
                           per_day=bench.surrogate_per_day, seed=int(cfg["seed"]),
                           replicates=bench.surrogate_replicates)
    sur.write_dataset(ds, out_dir / "surrogate_dataset.csv")
    sc = cfg["surrogate"]
    net, curves = sur.train_surrogate(ds, epochs=int(sc["epochs"]),
                                      lr=float(sc["lr"]),
                                      batch_size=int(sc["batch_size"]),
                                      seed=int(cfg["seed"]))
    net.save(out_dir / "surrogate.ck")
    _write_curves(out_dir / "surrogate_curves.csv",
                  ["epoch", "train_loss", "val_loss"],
                  zip(range(len(curves.train_loss)), curves.train_loss, curves.val_loss))
    update_manifest(out_dir, surrogate=str(out_dir / "surrogate.ck"),
                    surrogate_best_epoch=curves.best_epoch,
                    surrogate_val0=float(curves.val_loss[0]),
                    surrogate_val_best=float(min(curves.val_loss)))
    return net, curves


def _build_corpus(bench: Benchmark, net: sur.SurrogateNet,
                  state_norm: StateNormalizer) -> list[mm.DayRecord]:
    """Meta-market training corpus over all train days (their windows reach
    back into the warmup span)."""
    records = []
    first = bench.n_warmup
    for d in bench.days[first - mm.WINDOW_DAYS + 1: first + bench.n_train]:
        q_z = net.norm.transform(d.features)
        records.append(mm.DayRecord(
            features_z=q_z,
            fund_norm=sur.normalize_fundamental(d.fund),
            state_z=(state_norm.transform(d.state_assembled)
                     if d.state_assembled is not None else np.zeros(5)),
            target_z=q_z))
    return records


def stage_train_metamarket(cfg: dict, out_dir: Path, w_s: float | None = None,
                           tag: str = "", bench: Benchmark | None = None,
                           net: sur.SurrogateNet | None = None,
                           ) -> tuple[mm.MetaMarket, mm.MetaCurves]:
    out_dir = Path(out_dir)
    bench = bench or _load_benchmark(out_dir)
    if net is None:
        ck = out_dir / "surrogate.ck"
        if not ck.exists():
            raise FileNotFoundError(f"missing surrogate checkpoint {ck}; "
                                    "run train-surrogate first")
        net = sur.SurrogateNet.load(ck)
    mc = cfg["metamarket"]
    if w_s is None:
        w_s = float(mc["w_s"])
    states = np.stack([d.state_assembled for d in bench.train_days])
    state_norm = StateNormalizer.fit(states)
    corpus = _build_corpus(bench, net, state_norm)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg["seed"]), 0x4B]))
    k = mm.MetaMarket(bench.cfg.fundamental_len, rng, net.norm, state_norm)
    curves = mm.train(k, corpus, net, w_t=float(mc["w_t"]), w_s=w_s,
                      epochs=int(mc["epochs"]), lr=float(mc["lr"]),
                      seed=int(cfg["seed"]))
    k.save(out_dir / f"metamarket{tag}.ck")
    _write_curves(out_dir / f"metamarket{tag}_curves.csv",
                  ["epoch", "recon", "variation"],
                  zip(range(len(curves.recon)), curves.recon, curves.variation))
    update_manifest(out_dir, **{f"metamarket{tag}": str(out_dir / f"metamarket{tag}.ck"),
                                f"metamarket{tag}_recon0": float(curves.recon[0]),
                                f"metamarket{tag}_recon_final": float(curves.recon[-1]),
                                f"metamarket{tag}_var0": float(curves.variation[0]),
                                f"metamarket{tag}_var_final": float(curves.variation[-1])})
    return k, curves


def calibrate_calisim(bench: Benchmark, k: mm.MetaMarket,
                      ) -> list[tuple[int, BehaviorVector]]:
    """One-shot calibration of every test day; zero simulator calls."""
    out = []
    for d in bench.test_days:
        window = k.feat_norm.transform(bench.window_features(d.day))
        x_z = k.state_norm.transform(d.state_assembled)
        out.append((d.day, k.infer(window, x_z)))
    return out


def calibrate_baseline(bench: Benchmark, method: str, net: sur.SurrogateNet,
                       trials: int, seed: int) -> list[tuple[int, BehaviorVector]]:
    search = bl.random_search if method == "randsearch" else bl.bayes_opt
    out = []
    for d in bench.test_days:
        target_z = net.norm.transform(d.features)
        day_seed = (seed << 20) ^ d.day
        b, _ = search(bench.cfg, d.fund, target_z, net.norm,
                      trials=trials, seed=day_seed)
        out.append((d.day, b))
    return out


def stage_calibrate(cfg: dict, out_dir: Path, method: str, seed: int = 0,
                    metamarket_tag: str = "", bench: Benchmark | None = None,
                    ) -> Path:
    out_dir = Path(out_dir)
    bench = bench or _load_benchmark(out_dir)
    sim.reset_sim_calls()
    if method == "calisim":
        ck = out_dir / f"metamarket{metamarket_tag}.ck"
        if not ck.exists():
            raise FileNotFoundError(f"missing calibrator checkpoint {ck}; "
                                    "run train-metamarket first")
        k = mm.MetaMarket.load(ck)
        rows = calibrate_calisim(bench, k)
        source = "calisim" + metamarket_tag
        path = out_dir / f"calibration_{source}.csv"
    elif method in ("randsearch", "bayesopt"):
        ckp = out_dir / "surrogate.ck"
        if not ckp.exists():
            raise FileNotFoundError(f"missing surrogate checkpoint {ckp}; "
                                    "run train-surrogate first")
        net = sur.SurrogateNet.load(ckp)
        rows = calibrate_baseline(bench, method, net,
                                  trials=int(cfg["baselines"]["trials"]), seed=seed)
        source = method
        path = out_dir / f"calibration_{source}_seed{seed}.csv"
    else:
        raise ConfigError(f"config field method: unknown method {method!r}")
    calls = sim.sim_call_count()
    mm.write_calibration(path, [(day, b, source) for day, b in rows])
    man = read_manifest(out_dir)
    counters = man.get("sim_calls", {})
    counters[path.stem.removeprefix("calibration_")] = {
        "total": calls, "days": len(rows),
        "per_day": calls / max(len(rows), 1)}
    update_manifest(out_dir, sim_calls=counters)
    return path


# -- evaluation ----------------------------------------------------------------------


@dataclass
class MethodEval:
    source: str
    recon: np.ndarray        # flat over (day, search seed, eval seed)
    variation: np.ndarray    # consecutive-day steps, per search seed
    recovery: np.ndarray     # ||b_hat - b*||^2 per (day, search seed)
    corr: np.ndarray         # (5 indicators, 5 behavior coords) mean |rho|


def _collect_calibrations(out_dir: Path, source: str) -> list[dict[int, BehaviorVector]]:
    """All per-seed calibration maps for one method (one map for calisim)."""
    out = []
    single = Path(out_dir) / f"calibration_{source}.csv"
    if single.exists():
        out.append(mm.read_calibration(single)[source])
    for p in sorted(Path(out_dir).glob(f"calibration_{source}_seed*.csv")):
        out.append(mm.read_calibration(p)[source])
    return out


def _eval_method(bench: Benchmark, source: str,
                 cals: list[dict[int, BehaviorVector]], net: sur.SurrogateNet,
                 eval_seeds: list[int]) -> MethodEval:
    days = bench.test_days
    recon, variation, recovery = [], [], []
    corr_stack = []
    for cal in cals:
        bs = np.array([cal[d.day].normalized() for d in days])
        variation.extend(np.sum(np.diff(bs, axis=0) ** 2, axis=1))
        recovery.extend(np.sum((bs - np.array([d.b_star.normalized() for d in days])) ** 2,
                               axis=1))
        for d in days:
            target_z = net.norm.transform(d.features)
            for es in eval_seeds:
                stream = run_day(bench.cfg, cal[d.day], d.fund,
                                 seed=(es << 24) ^ d.seed)
                recon.append(feat.reconstruction_error_z(
                    net.norm.transform(feat.extract(stream)), target_z))
        states = np.array([d.state_assembled for d in days])
        corr = np.zeros((len(STATE_NAMES), len(BEHAVIOR_NAMES)))
        for i in range(len(STATE_NAMES)):
            for j in range(len(BEHAVIOR_NAMES)):
                si, bj = states[:, i], bs[:, j]
                if si.std() == 0 or bj.std() == 0:
                    corr[i, j] = 0.0
                else:
                    corr[i, j] = abs(np.corrcoef(si, bj)[0, 1])
        corr_stack.append(corr)
    return MethodEval(source, np.array(recon), np.array(variation),
                      np.array(recovery), np.mean(corr_stack, axis=0))


def stage_evaluate(cfg: dict, out_dir: Path, bench: Benchmark | None = None) -> dict:
    out_dir = Path(out_dir)
    bench = bench or _load_benchmark(out_dir)
    ckp = out_dir / "surrogate.ck"
    if not ckp.exists():
        raise FileNotFoundError(f"missing surrogate checkpoint {ckp}")
    net = sur.SurrogateNet.load(ckp)
    eval_seeds = [int(s) for s in cfg["evaluate"]["eval_seeds"]]

    # Ground truth as a reference method: its reconstruction error is the
    # simulator's seed-to-seed feature noise floor.
    gt = {d.day: d.b_star for d in bench.test_days}
    mm.write_calibration(out_dir / "calibration_ground_truth.csv",
                         [(d.day, d.b_star, "ground_truth") for d in bench.test_days])

    evals: dict[str, MethodEval] = {}
    missing = []
    for source in (*METHODS, ABLATION, "ground_truth"):
        cals = ([gt] if source == "ground_truth"
                else _collect_calibrations(out_dir, source))
        if not cals:
            missing.append(source)
            continue
        evals[source] = _eval_method(bench, source, cals, net, eval_seeds)
    if not any(s in evals for s in METHODS):
        raise FileNotFoundError(
            f"no calibration outputs found in {out_dir}; run calibrate first "
            f"(missing: {', '.join(missing)})")

    report_dir = out_dir / "evaluation"
    report_dir.mkdir(exist_ok=True)
    _write_distribution(report_dir / "reconstruction_cdf.csv", evals, "recon")
    _write_distribution(report_dir / "variation_hist.csv", evals, "variation")
    _write_distribution(report_dir / "recovery.csv", evals, "recovery")
    _write_correlation(report_dir / "correlation_table.csv", evals)
    _emit_plot_scripts(report_dir)

    man = read_manifest(out_dir)
    summary = {
        "missing_methods": missing,
        "methods": {
            s: {"mean_recon": float(e.recon.mean()),
                "median_variation": float(np.median(e.variation)),
                "mean_recovery": float(e.recovery.mean()),
                "mean_abs_rho_per_indicator": {
                    STATE_NAMES[i]: float(e.corr[i].mean())
                    for i in range(len(STATE_NAMES))}}
            for s, e in evals.items()},
        "sim_calls": man.get("sim_calls", {}),
        "reference_mean_abs_rho": REFERENCE_MEAN_ABS_RHO,
    }
    with open(report_dir / "summary.yaml", "w") as f:
        yaml.safe_dump(summary, f, sort_keys=False)
    update_manifest(out_dir, evaluation=str(report_dir))
    return summary


def _write_distribution(path: Path, evals: dict[str, MethodEval], field: str):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["source", "value"])
        for s, e in evals.items():
            for v in getattr(e, field):
                w.writerow([s, v])


def _write_correlation(path: Path, evals: dict[str, MethodEval]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["source", "indicator", *BEHAVIOR_NAMES, "mean_abs_rho",
                    "reference"])
        for s, e in evals.items():
            for i, ind in enumerate(STATE_NAMES):
                ref = REFERENCE_MEAN_ABS_RHO.get(s, {}).get(ind, "")
                w.writerow([s, ind, *e.corr[i], e.corr[i].mean(), ref])


def _write_curves(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(list(row))


_PLOT_TEMPLATE = '''\
"""Generated plot script: {title}."""
import csv
from collections import defaultdict

import matplotlib.pyplot as plt

series = defaultdict(list)
with open("{csv_name}") as f:
    for row in csv.DictReader(f):
        series[row["source"]].append(float(row["value"]))

fig, ax = plt.subplots()
for source, values in series.items():
    {body}
ax.set_title("{title}")
ax.set_xlabel("{xlabel}")
ax.legend()
fig.savefig("{png_name}", dpi=150)
'''

_CDF_BODY = ("values = sorted(values)\n"
             "    ax.plot(values, [i / len(values) for i in range(1, len(values) + 1)], "
             "label=source)")
_HIST_BODY = "ax.hist(values, bins=30, alpha=0.5, label=source)"


def _emit_plot_scripts(report_dir: Path):
    jobs = [
        ("plot_reconstruction_cdf.py", "reconstruction_cdf.csv",
         "Order stream reproduction error (CDF)", "summed squared z-error",
         _CDF_BODY, "reconstruction_cdf.png"),
        ("plot_variation_hist.py", "variation_hist.csv",
         "Distribution of day-to-day behavior variation", "squared normalized step",
         _HIST_BODY, "variation_hist.png"),
        ("plot_recovery.py", "recovery.csv",
         "Behavior recovery error", "||b_hat - b*||^2", _CDF_BODY, "recovery.png"),
    ]
    for script, csv_name, title, xlabel, body, png in jobs:
        (report_dir / script).write_text(_PLOT_TEMPLATE.format(
            title=title, csv_name=csv_name, xlabel=xlabel, body=body, png_name=png))


def stage_hypothesize(cfg: dict, out_dir: Path, day: int,
                      deltas: dict[str, float],
                      metamarket_tag: str = "") -> dict:
    """Counterfactual query: shift the named state indicators (in z-units)
    for one test day and report the behavior delta."""
    out_dir = Path(out_dir)
    bench = _load_benchmark(out_dir)
    ck = out_dir / f"metamarket{metamarket_tag}.ck"
    if not ck.exists():
        raise FileNotFoundError(f"missing calibrator checkpoint {ck}")
    k = mm.MetaMarket.load(ck)
    by_day = {d.day: d for d in bench.days}
    if day not in by_day or by_day[day].state_assembled is None:
        raise ConfigError(f"config field day: day {day} has no assembled state")
    d = by_day[day]
    for name in deltas:
        if name not in STATE_NAMES:
            raise ConfigError(f"config field state.{name}: unknown indicator")
    window = k.feat_norm.transform(bench.window_features(day))
    x = k.state_norm.transform(d.state_assembled)
    x_mod = x.copy()
    for name, dv in deltas.items():
        x_mod[STATE_NAMES.index(name)] += float(dv)
    b_fact, b_mod, delta = k.hypothesize(window, x, x_mod)
    return {
        "day": day,
        "factual": {n: float(v) for n, v in zip(BEHAVIOR_NAMES, b_fact.as_array())},
        "counterfactual": {n: float(v) for n, v in zip(BEHAVIOR_NAMES, b_mod.as_array())},
        "delta_normalized": {n: float(v) for n, v in zip(BEHAVIOR_NAMES, delta)},
    }
