"""Command-line pipeline: ingest, label, train-sub, train-hyper, backtest, report.

Every command reads the run configuration (defaults, then ``--config``, then
``--set key.path=value`` overrides) and writes into ``--run-dir``. Stage
outputs are recorded with their SHA-256 in ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import config as cfgmod
from .backtest import (
    baseline_reports,
    run,
    table_policy,
)
from .dataset import TradingData
from .decomposition import (
    SUBSET_NAMES,
    TercileThresholds,
    build_subsets,
    decompose,
    write_labels_csv,
)
from .env import MIN_START, write_trade_log
from .errors import HFTMixError, MissingDependency
from .hyper_agent import HyperAgent, pool_q_table, scaled_context, train_hyper, write_weight_log
from .indicators import FeatureTable, Normalizer
from .manifest import RunManifest, sha256_file, write_json
from .market_data import SplitSpec, load_csv, split_indices, write_csv
from .optimal_q import OptimalQCache
from .sub_agent import SubAgent, train
from .synth import synthetic_series

log = logging.getLogger("hftmix")

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3


class Run:
    """Resolved configuration plus the run directory layout."""

    def __init__(self, cfg: dict, run_dir):
        self.cfg = cfg
        self.dir = Path(run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.hash = cfgmod.config_hash(cfg)
        self.manifest = RunManifest(self.dir)
        self.manifest.start(self.hash, cfg["seed"])
        self._series = None

    # layout
    @property
    def data_path(self) -> Path:
        return Path(self.cfg["data"]["path"])

    def sub_path(self, name: str) -> Path:
        return self.dir / "subagents" / f"{name}.ckpt"

    def sub_paths(self) -> list[Path]:
        return [self.sub_path(n) for n in SUBSET_NAMES]

    @property
    def hyper_path(self) -> Path:
        return self.dir / "hyper.ckpt"

    def require(self, *paths, stage: str):
        missing = [str(p) for p in paths if not Path(p).exists()]
        if missing:
            raise MissingDependency(f"{stage} needs outputs that do not exist yet", stage=stage, missing=missing)

    # data
    def series(self):
        if self._series is None:
            self.require(self.data_path, stage="data")
            self._series = load_csv(self.data_path)
        return self._series

    def split_spec(self) -> SplitSpec:
        d = self.cfg["data"]
        if d.get("ranges"):
            r = d["ranges"]
            return SplitSpec(tuple(r["train"]), tuple(r["validation"]), tuple(r["test"]))
        return SplitSpec.by_fraction(self.series(), d["train_fraction"], d["validation_fraction"])

    def splits(self):
        return split_indices(self.series(), self.split_spec())

    def trading_data(self) -> TradingData:
        self.require(self.dir / "normalizer.json", stage="ingest")
        norm = Normalizer.from_dict(json.loads((self.dir / "normalizer.json").read_text())["normalizer"])
        return TradingData.build(self.series(), normalizer=norm)[0]

    def thresholds(self) -> TercileThresholds:
        self.require(self.dir / "thresholds.json", stage="label")
        return TercileThresholds.from_dict(json.loads((self.dir / "thresholds.json").read_text())["thresholds"])

    def finish(self, command: str, started: float, *artifacts):
        self.manifest.record(*artifacts)
        self.manifest.timing(command, time.perf_counter() - started)
        self.manifest.save()


def _write_curve(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_val_return", "loss"])
        for e, s, l in rows:
            w.writerow([e, repr(float(s)), repr(float(l))])


def _read_curve(path):
    with open(path) as fh:
        return [(float(r["epoch"]), float(r["mean_val_return"]), float(r["loss"])) for r in csv.DictReader(fh)]


# commands

def cmd_synth_data(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(synthetic_series(args.days, args.seed), out)
    print(json.dumps({"written": str(out), "rows": args.days * 1440, "sha256": sha256_file(out)}))
    return 0


def cmd_ingest(r: Run, args) -> int:
    t0 = time.perf_counter()
    series = r.series()
    (tr_lo, tr_hi), (va_lo, va_hi), (te_lo, te_hi) = r.splits()
    table = FeatureTable.from_series(series)
    norm = table.fit_normalizer(tr_lo, tr_hi)
    r.manifest.record_input(r.data_path)
    write_json(r.dir / "normalizer.json", {"config_hash": r.hash, "normalizer": norm.to_dict()})
    write_json(r.dir / "split.json", {
        "config_hash": r.hash,
        "indices": {"train": [tr_lo, tr_hi], "validation": [va_lo, va_hi], "test": [te_lo, te_hi]},
        "timestamps": {k: [int(series.ts[lo]), int(series.ts[hi - 1]) + 1] if hi > lo else None
                       for k, (lo, hi) in zip(("train", "validation", "test"),
                                              ((tr_lo, tr_hi), (va_lo, va_hi), (te_lo, te_hi)))},
    })
    table.to_csv(r.dir / "features.csv", timestamps=series.ts)
    r.manifest.set("normalizer", norm.to_dict())
    r.finish("ingest", t0, r.dir / "normalizer.json", r.dir / "split.json", r.dir / "features.csv")
    log.info("ingested %d rows; train=%d val=%d test=%d", len(series), tr_hi - tr_lo, va_hi - va_lo, te_hi - te_lo)
    return 0


def _labelled_chunks(r: Run):
    d = r.cfg["decomposition"]
    closes = np.asarray(r.series().close, dtype=float)
    (tr_lo, tr_hi), (va_lo, va_hi), _ = r.splits()
    th = r.thresholds() if (r.dir / "thresholds.json").exists() else None
    chunks, labels, th = decompose(closes[tr_lo:tr_hi], d["l_chunk"], d["filter_window"], tr_lo, th)
    val = ([], [])
    if va_hi - va_lo >= d["l_chunk"]:
        vc, vl, _ = decompose(closes[va_lo:va_hi], d["l_chunk"], d["filter_window"], va_lo, th)
        val = (vc, vl)
    return (chunks, labels), val, th


def cmd_label(r: Run, args) -> int:
    t0 = time.perf_counter()
    r.require(r.dir / "split.json", stage="ingest")
    th_path = r.dir / "thresholds.json"
    th_path.unlink(missing_ok=True)  # always refit on the training split
    (chunks, labels), (vchunks, vlabels), th = _labelled_chunks(r)
    write_json(th_path, {"config_hash": r.hash, "thresholds": th.to_dict()})
    write_labels_csv(r.dir / "labels.csv", chunks, labels)
    write_labels_csv(r.dir / "labels_validation.csv", vchunks, vlabels)
    counts = {k: len(v) for k, v in build_subsets(chunks, labels).items()}
    r.manifest.set("thresholds", th.to_dict())
    r.manifest.set("subset_sizes", counts)
    r.finish("label", t0, th_path, r.dir / "labels.csv", r.dir / "labels_validation.csv")
    print(json.dumps({"subsets": counts, "thresholds": th.to_dict()}, sort_keys=True))
    return 0


def cmd_train_sub(r: Run, args) -> int:
    t0 = time.perf_counter()
    r.require(r.dir / "normalizer.json", r.dir / "thresholds.json", stage="label")
    data = r.trading_data()
    (chunks, labels), (vchunks, vlabels), _ = _labelled_chunks(r)
    subsets = build_subsets(chunks, labels)
    vsubsets = build_subsets(vchunks, vlabels) if vchunks else {k: [] for k in SUBSET_NAMES}
    names = SUBSET_NAMES if args.subset == "all" else [args.subset]
    (r.dir / "subagents").mkdir(exist_ok=True)
    cache = OptimalQCache(r.dir / "qcache")
    env_cfg = cfgmod.env_config(r.cfg)
    base = cfgmod.sub_agent_config(r.cfg)
    written = []
    for name in names:
        idx = SUBSET_NAMES.index(name)
        sub_cfg = type(base)(**{**base.__dict__, "seed": base.seed + idx})
        agent = SubAgent(data.n_single, data.n_context, sub_cfg, env_cfg, label=name)
        res = train(agent, data, subsets[name], vsubsets[name], q_cache=cache,
                    progress=lambda e, s, l, n=name: log.info("%s epoch %d val=%.6f loss=%.6f", n, e, s, l))
        agent.save(r.sub_path(name), {"config_hash": r.hash, "best_epoch": res.best_epoch,
                                      "best_val_return": res.best_score})
        curve = r.dir / "subagents" / f"{name}_curve.csv"
        _write_curve(curve, res.curve)
        written += [r.sub_path(name), curve]
        print(json.dumps({"subset": name, "best_epoch": res.best_epoch, "best_val_return": res.best_score}))
    r.finish(f"train-sub:{args.subset}", t0, *written)
    return 0


def _load_pool(r: Run):
    r.require(*r.sub_paths(), stage="train-sub")
    pool = [SubAgent.load(p)[0] for p in r.sub_paths()]
    return pool, [sha256_file(p) for p in r.sub_paths()]


def cmd_train_hyper(r: Run, args) -> int:
    t0 = time.perf_counter()
    pool, hashes = _load_pool(r)
    data = r.trading_data()
    (tr_lo, tr_hi), (va_lo, va_hi), _ = r.splits()
    agent = HyperAgent(data.n_single + data.n_context, len(pool), cfgmod.hyper_config(r.cfg),
                       cfgmod.env_config(r.cfg), cfgmod.memory_config(r.cfg))
    agent.attach_pool(pool, hashes)
    res = train_hyper(agent, data, (tr_lo, tr_hi - 1), (va_lo, va_hi - 1),
                      progress=lambda e, s, l: log.info("hyper epoch %d val=%.6f loss=%.6f", e, s, l))
    agent.save(r.hyper_path, {"config_hash": r.hash, "best_epoch": res.best_epoch,
                              "best_val_return": res.best_score, "sub_agents": list(SUBSET_NAMES)})
    _write_curve(r.dir / "hyper_curve.csv", res.curve)
    r.finish("train-hyper", t0, r.hyper_path, r.dir / "hyper_curve.csv")
    print(json.dumps({"best_epoch": res.best_epoch, "best_val_return": res.best_score,
                      "env_steps": res.env_steps, "memory_inserts": res.memory_inserts}))
    return 0


def cmd_backtest(r: Run, args) -> int:
    t0 = time.perf_counter()
    pool, hashes = _load_pool(r)
    r.require(r.hyper_path, stage="train-hyper")
    hyper, _ = HyperAgent.load(r.hyper_path)
    hyper.attach_pool(pool, hashes)
    series = r.series()
    data = r.trading_data()
    env_cfg = cfgmod.env_config(r.cfg)
    _, _, (te_lo, te_hi) = r.splits()
    start = max(te_lo, MIN_START, hyper.config.context_window - 1)
    end = te_hi - 1
    if end <= start:
        raise HFTMixError("test range too short for a backtest", start=start, end=end)
    out = r.dir / "backtest"
    out.mkdir(exist_ok=True)

    qsub = pool_q_table(pool, data)
    ctx = scaled_context(hyper, data.closes)
    qh, wh = hyper.q_table(data, ctx, qsub, start, end + 1)
    reports = {"hyper": run(table_policy(qh, start), data.closes, start, end, env_cfg)}
    for name, agent in zip(SUBSET_NAMES, pool):
        reports[f"sub_{name}"] = run(table_policy(agent.q_table(data, start, end + 1), start), data.closes,
                                     start, end, env_cfg)
    b = r.cfg["backtest"]
    reports.update(baseline_reports(series, start, end, env_cfg, (b["macd_fast"], b["macd_slow"], b["macd_signal"]),
                                    b["iv_threshold"]))

    written = []
    for name, rep in reports.items():
        p = out / f"trades_{name}.csv"
        write_trade_log(p, rep.transitions, data.closes, series.ts)
        written.append(p)
    hp = reports["hyper"]
    weights = wh[np.arange(len(hp.actions)), hp.positions]
    write_weight_log(out / "weights.csv", series.ts[start:end], weights, hp.actions)
    with open(out / "net_values.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts"] + list(reports))
        for i, ts in enumerate(series.ts[start:end + 1]):
            w.writerow([int(ts)] + [repr(float(rep.net_values[i])) for rep in reports.values()])
    summary = {
        "config_hash": r.hash,
        "data_sha256": sha256_file(r.data_path),
        "checkpoints": {**{f"sub_{n}": h for n, h in zip(SUBSET_NAMES, hashes)}, "hyper": sha256_file(r.hyper_path)},
        "test_range": {"start_ts": int(series.ts[start]), "end_ts": int(series.ts[end]), "steps": end - start},
        "strategies": {name: rep.summary() for name, rep in reports.items()},
    }
    jsonschema.validate(summary, cfgmod.load_schema("report.schema.json"))
    write_json(out / "backtest.json", summary)
    r.finish("backtest", t0, out / "backtest.json", out / "weights.csv", out / "net_values.csv", *written)
    print(json.dumps({k: v["TR"] for k, v in summary["strategies"].items()}, sort_keys=True))
    return 0


def cmd_report(r: Run, args) -> int:
    from . import plotting

    t0 = time.perf_counter()
    bt = r.dir / "backtest"
    r.require(bt / "backtest.json", bt / "net_values.csv", bt / "weights.csv", stage="backtest")
    summary = json.loads((bt / "backtest.json").read_text())
    jsonschema.validate(summary, cfgmod.load_schema("report.schema.json"))
    out = r.dir / "report"
    out.mkdir(exist_ok=True)
    write_json(out / "report.json", summary)

    metric_cols = ["TR", "AVOL", "MDD", "ASR", "ACR", "ASoR", "trades", "steps"]
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy"] + metric_cols)
        for name, m in summary["strategies"].items():
            w.writerow([name] + ["" if m[c] is None else repr(m[c]) for c in metric_cols])

    with open(bt / "net_values.csv") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    values = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
    plotting.plot_net_values({n: values[:, i] for i, n in enumerate(names)}, out / "net_value.png")
    with open(bt / "weights.csv") as fh:
        wrows = list(csv.reader(fh))
    weights = np.array([[float(x) for x in row[1:-1]] for row in wrows[1:]])
    plotting.plot_weights(weights, out / "weights.png", labels=list(SUBSET_NAMES))
    curves = {n: _read_curve(r.dir / "subagents" / f"{n}_curve.csv") for n in SUBSET_NAMES
              if (r.dir / "subagents" / f"{n}_curve.csv").exists()}
    if (r.dir / "hyper_curve.csv").exists():
        curves["hyper"] = _read_curve(r.dir / "hyper_curve.csv")
    plotting.plot_training_curves(curves, out / "training_curves.png")
    plotting.plot_metrics(summary["strategies"], out / "total_return.png", "TR")
    artifacts = [out / f for f in ("report.json", "metrics.csv", "net_value.png", "weights.png",
                                   "training_curves.png", "total_return.png")]
    r.finish("report", t0, *artifacts)
    print(json.dumps({"report": str(out / "report.json")}))
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all

    results = run_all(args.seed)
    for res in results:
        print(json.dumps({k: (bool(v) if isinstance(v, np.bool_) else v) for k, v in res.items()}, default=float))
    return 0 if all(res["passed"] for res in results) else EXIT_ERROR


# argument parsing

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hftmix", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_run(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--run-dir", default="run", help="directory for all artifacts (default: run)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field by dotted path, e.g. env.fee_rate=0.0005")
        return sp

    with_run(sub.add_parser("ingest", help="validate data, compute features, fit the normalizer"))
    with_run(sub.add_parser("label", help="chunk and label the training split"))
    sp = with_run(sub.add_parser("train-sub", help="train regime sub-agents"))
    sp.add_argument("--subset", default="all", choices=("all",) + SUBSET_NAMES)
    with_run(sub.add_parser("train-hyper", help="train the mixture hyper-agent"))
    with_run(sub.add_parser("backtest", help="evaluate agents and baselines on the test split"))
    with_run(sub.add_parser("report", help="render figures and the metrics table"))
    sp = sub.add_parser("synth-data", help="write a seeded synthetic market CSV")
    sp.add_argument("--days", type=int, default=30)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp = sub.add_parser("selfcheck", help="gradient, DP and metric consistency checks")
    sp.add_argument("--seed", type=int, default=0)
    return p


RUN_COMMANDS = {
    "ingest": cmd_ingest,
    "label": cmd_label,
    "train-sub": cmd_train_sub,
    "train-hyper": cmd_train_hyper,
    "backtest": cmd_backtest,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "synth-data":
            return cmd_synth_data(args)
        if args.command == "selfcheck":
            return cmd_selfcheck(args)
        cfg = cfgmod.load_config(args.config, args.overrides)
        return RUN_COMMANDS[args.command](Run(cfg, args.run_dir), args)
    except HFTMixError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True, default=str), file=sys.stderr)
        if exc.code == "ConfigInvalid":
            return EXIT_CONFIG
        if exc.code == "MissingDependency":
            return EXIT_DEPENDENCY
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
