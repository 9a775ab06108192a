"""Experiment orchestration: run directories, aggregation, traces, training.

Disk layout produced by `run_experiment`:

    out_dir/
      <mode>-s<seed>/
        manifest.json     resolved config + attack schedule (no timestamps)
        metrics.csv       one row per monitoring interval
        ledger.jsonl      committed consortium chain, one block per line
        summary.json      pooled confusion, detection latencies, final stats
      aggregate.json      per-mode statistics across seeds
      aggregate_intervals.csv   per-(mode, interval) means for plotting

`report` rebuilds the two aggregate files from the run directories alone,
so downstream tooling never needs the Python objects.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .consortium import export_chain
from .features import FEATURE_DIM, FEATURE_NAMES, SequenceRing
from .kernel import rng_stream
from .metrics import (_FLOAT_COLUMNS, Confusion, MetricsRow, Stat,
                      balanced_accuracy, median_or_inf, pooled_confusion,
                      read_metrics_csv, stat, write_metrics_csv)
from .runsim import MissionRun, RunResult, TraceRow
from .scenario import Mode, ScenarioConfig, scenario_to_dict
from .scorer import ScorerConfig, load_model, save_model, score_batch, train

TRACE_COLUMNS = ["run_id", "seed", "host", "agent", "interval_index",
                 "label"] + [f"f_{n}" for n in FEATURE_NAMES]


class ModelScorer:
    """Loaded scorer exposed as the batched callable MissionRun expects."""

    def __init__(self, params: dict[str, np.ndarray], config: ScorerConfig,
                 meta: dict) -> None:
        self.params = params
        self.config = config
        self.meta = meta

    @classmethod
    def load(cls, path) -> "ModelScorer":
        params, config, meta = load_model(path)
        return cls(params, config, meta)

    def __call__(self, x: np.ndarray, valid_len: np.ndarray) -> np.ndarray:
        return score_batch(self.params, self.config,
                           x.astype(np.float32), valid_len)


def _check_scorer_fit(scorer: ModelScorer, cfg: ScenarioConfig) -> None:
    if scorer.config.seq_len != cfg.monitoring.seq_len:
        raise ValueError(f"model window {scorer.config.seq_len} != "
                         f"scenario window {cfg.monitoring.seq_len}")
    if scorer.config.input_dim != FEATURE_DIM:
        raise ValueError(f"model expects {scorer.config.input_dim} features, "
                         f"pipeline produces {FEATURE_DIM}")


# ------------------------------------------------------------------ output


def _json_safe(obj):
    """JSON with non-finite floats mapped to null (inf has no JSON literal)."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_summary(result: RunResult, warmup_intervals: int) -> dict:
    pooled = pooled_confusion(result.confusion, warmup_intervals)
    latencies = [o.detection_latency_s for o in result.outcomes if o.detected]
    return {
        "run_id": result.run_id,
        "seed": result.seed,
        "mode": result.mode,
        "warmup_intervals": warmup_intervals,
        "confusion_post_warmup": {"tp": pooled.tp, "fp": pooled.fp,
                                  "tn": pooled.tn, "fn": pooled.fn},
        "balanced_accuracy": balanced_accuracy(pooled),
        "final_pdr": result.final_pdr,
        "final_mean_residual_energy_J": result.final_mean_residual_j,
        "events_processed": result.events_processed,
        "view_changes": result.view_changes,
        "ledger_blocks": len(result.chain),
        "enforcement_lag_intervals": result.enforcement_lag_intervals,
        "median_detection_latency_s": median_or_inf(latencies),
        "detected_count": sum(1 for o in result.outcomes if o.detected),
        "compromised_count": len(result.outcomes),
        "unresolved": result.unresolved,
        "detection": [{
            "agent": o.agent,
            "kind": o.kind,
            "activation_s": o.activation_s,
            "first_interrogation_s": o.first_interrogation_s,
            "first_constrained_s": o.first_constrained_s,
            "first_isolated_s": o.first_isolated_s,
        } for o in result.outcomes],
    }


def write_run_dir(result: RunResult, out_dir: str,
                  warmup_intervals: int) -> str:
    run_dir = os.path.join(out_dir, result.run_id)
    os.makedirs(run_dir, exist_ok=True)
    write_json(os.path.join(run_dir, "manifest.json"), result.manifest)
    write_metrics_csv(os.path.join(run_dir, "metrics.csv"), result.rows)
    export_chain(result.chain, os.path.join(run_dir, "ledger.jsonl"))
    write_json(os.path.join(run_dir, "summary.json"),
               run_summary(result, warmup_intervals))
    return run_dir


def run_once(cfg: ScenarioConfig, seed: int, out_dir: Optional[str] = None,
             run_id: Optional[str] = None,
             scorer: Optional[ModelScorer] = None) -> RunResult:
    """Execute one mission; write its run directory when out_dir is given."""
    if run_id is None:
        run_id = f"{cfg.mode.value}-s{seed}"
    if scorer is None and cfg.model_path and cfg.mode is Mode.INTERROGATOR:
        scorer = ModelScorer.load(cfg.model_path)
    if isinstance(scorer, ModelScorer):
        _check_scorer_fit(scorer, cfg)
    use_scorer = scorer if cfg.mode is Mode.INTERROGATOR else None
    result = MissionRun(cfg, seed, run_id=run_id, scorer=use_scorer).run()
    if out_dir is not None:
        write_run_dir(result, out_dir, cfg.monitoring.warmup_intervals)
    return result


# -------------------------------------------------------------- experiments


@dataclass
class RunArtifacts:
    """The on-disk view of one run; aggregation consumes only this."""
    run_id: str
    seed: int
    mode: str
    rows: list[MetricsRow]
    summary: dict


def artifacts_from_result(result: RunResult, warmup_intervals: int) -> RunArtifacts:
    # Round-trip through the JSON sanitizer and the CSV float format so
    # in-memory aggregation sees exactly what a reload from disk would.
    summary = json.loads(json.dumps(_json_safe(run_summary(result, warmup_intervals))))
    rows = [dataclasses.replace(r, **{
        col: float("%.9g" % getattr(r, col)) for col in _FLOAT_COLUMNS})
        for r in result.rows]
    return RunArtifacts(result.run_id, result.seed, result.mode,
                        rows, summary)


def collect_artifacts(in_dir: str) -> list[RunArtifacts]:
    arts = []
    for name in sorted(os.listdir(in_dir)):
        run_dir = os.path.join(in_dir, name)
        metrics_path = os.path.join(run_dir, "metrics.csv")
        summary_path = os.path.join(run_dir, "summary.json")
        if not (os.path.isfile(metrics_path) and os.path.isfile(summary_path)):
            continue
        rows = read_metrics_csv(metrics_path)
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        arts.append(RunArtifacts(name, summary["seed"], summary["mode"],
                                 rows, summary))
    if not arts:
        raise FileNotFoundError(f"no run directories under {in_dir}")
    return arts


def _confusion_from_summary(s: dict) -> Confusion:
    c = s["confusion_post_warmup"]
    return Confusion(c["tp"], c["fp"], c["tn"], c["fn"])


def build_aggregate(arts: Sequence[RunArtifacts]) -> dict:
    by_mode: dict[str, list[RunArtifacts]] = {}
    for a in arts:
        by_mode.setdefault(a.mode, []).append(a)
    static_energy = {a.seed: a.summary["final_mean_residual_energy_J"]
                     for a in by_mode.get(Mode.STATIC.value, [])}
    warmup = arts[0].summary["warmup_intervals"]

    modes: dict[str, dict] = {}
    for mode, runs in sorted(by_mode.items()):
        runs = sorted(runs, key=lambda a: a.seed)
        pooled = [_confusion_from_summary(a.summary) for a in runs]
        post = [[r for r in a.rows if r.interval_index >= warmup] for a in runs]
        latencies: list[float] = []
        detected = 0
        compromised = 0
        for a in runs:
            for d in a.summary["detection"]:
                compromised += 1
                first = d["first_interrogation_s"]
                if first is not None:
                    detected += 1
                    latencies.append(first - d["activation_s"])
        entry = {
            "runs": len(runs),
            "seeds": [a.seed for a in runs],
            "detection_accuracy": stat([balanced_accuracy(c) for c in pooled]).as_dict(),
            "accuracy": stat([np.mean([r.accuracy for r in rows]) for rows in post]).as_dict(),
            "precision": stat([np.mean([r.precision for r in rows]) for rows in post]).as_dict(),
            "recall": stat([np.mean([r.recall for r in rows]) for rows in post]).as_dict(),
            "pdr": stat([a.summary["final_pdr"] for a in runs]).as_dict(),
            "mean_residual_energy_J": stat(
                [a.summary["final_mean_residual_energy_J"] for a in runs]).as_dict(),
            "false_positives_per_interval": stat(
                [np.mean([r.false_positive_count for r in rows]) for rows in post]).as_dict(),
            "median_detection_latency_s": median_or_inf(latencies),
            "detected_fraction": (detected / compromised) if compromised else 1.0,
            "max_enforcement_lag_intervals": max(
                (lag for a in runs for lag in a.summary["enforcement_lag_intervals"]),
                default=0),
        }
        if mode != Mode.STATIC.value and static_energy:
            overheads = [1.0 - a.summary["final_mean_residual_energy_J"] / static_energy[a.seed]
                         for a in runs if a.seed in static_energy]
            if overheads:
                entry["energy_overhead_vs_static"] = stat(overheads).as_dict()
        modes[mode] = entry

    return {
        "format": "uwtrust-aggregate",
        "version": 1,
        "warmup_intervals": warmup,
        "modes": modes,
    }


INTERVAL_METRICS = ["accuracy", "precision", "recall", "pdr_cumulative",
                    "mean_residual_energy_J", "flagged_count",
                    "isolated_count", "false_positive_count"]


def build_interval_table(arts: Sequence[RunArtifacts]) -> list[dict]:
    """Per (mode, interval) mean/std of each metric across seeds."""
    cells: dict[tuple[str, int], list[MetricsRow]] = {}
    for a in arts:
        for r in a.rows:
            cells.setdefault((a.mode, r.interval_index), []).append(r)
    out = []
    for (mode, k) in sorted(cells):
        rows = cells[(mode, k)]
        rec: dict[str, object] = {"mode": mode, "interval_index": k,
                                  "n_runs": len(rows)}
        for m in INTERVAL_METRICS:
            vals = [getattr(r, m) for r in rows]
            finite = [v for v in vals if math.isfinite(float(v))]
            s = stat(finite) if finite else Stat(math.nan, math.nan, 0)
            rec[f"{m}_mean"] = s.mean
            rec[f"{m}_std"] = s.std
        out.append(rec)
    return out


def write_interval_csv(path, table: list[dict]) -> None:
    if not table:
        raise ValueError("empty interval table")
    columns = ["mode", "interval_index", "n_runs"]
    for m in INTERVAL_METRICS:
        columns += [f"{m}_mean", f"{m}_std"]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in table:
            writer.writerow([
                rec["mode"], rec["interval_index"], rec["n_runs"],
                *("%.9g" % rec[c] for c in columns[3:])])


def run_experiment(cfg: ScenarioConfig, out_dir: str, n_seeds: int = 10,
                   base_seed: int = 1000,
                   modes: Sequence[Mode] = (Mode.INTERROGATOR, Mode.BAYESIAN,
                                            Mode.STATIC),
                   scorer: Optional[ModelScorer] = None,
                   log=None) -> dict:
    """Full comparison: every mode over seeds base..base+n-1, aggregated.

    Aggregation re-reads the run directories just written, so the result
    is exactly what `report` would rebuild from the same tree.
    """
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []
    for mode in modes:
        mode_cfg = dataclasses.replace(cfg, mode=mode)
        for i in range(n_seeds):
            seed = base_seed + i
            run_id = f"{mode.value}-s{seed}"
            try:
                result = run_once(mode_cfg, seed, out_dir=out_dir,
                                  run_id=run_id, scorer=scorer)
            except Exception as exc:
                raise RuntimeError(f"run {run_id} (seed {seed}, mode "
                                   f"{mode.value}) failed: {exc}") from exc
            written.append(run_id)
            if log is not None:
                s = run_summary(result, cfg.monitoring.warmup_intervals)
                log(f"{run_id}: bal_acc={s['balanced_accuracy']:.3f} "
                    f"pdr={s['final_pdr']:.3f} blocks={s['ledger_blocks']}")
    wanted = set(written)
    arts = [a for a in collect_artifacts(out_dir) if a.run_id in wanted]
    aggregate = build_aggregate(arts)
    write_json(os.path.join(out_dir, "aggregate.json"), aggregate)
    write_interval_csv(os.path.join(out_dir, "aggregate_intervals.csv"),
                       build_interval_table(arts))
    return aggregate


def rebuild_report(in_dir: str, out_csv: Optional[str] = None) -> dict:
    """Regenerate both aggregate files from the run directories on disk."""
    arts = collect_artifacts(in_dir)
    aggregate = build_aggregate(arts)
    write_json(os.path.join(in_dir, "aggregate.json"), aggregate)
    if out_csv is None:
        out_csv = os.path.join(in_dir, "aggregate_intervals.csv")
    write_interval_csv(out_csv, build_interval_table(arts))
    return aggregate


# -------------------------------------------------------------- calibration


def calibrate_norm_volume(cfg: ScenarioConfig, seed: int = 7,
                          mission_s: float = 3600.0,
                          percentile: float = 99.0) -> float:
    """Recompute the per-interval volume normalizer from a benign mission.

    Takes the given percentile of per-(agent, interval) ground-truth
    transmission counts, with silent agent-intervals counted as zero. The
    frozen scenario.DEFAULT_NORM_VOLUME comes from this recipe on the
    default scenario (seed 7, 1 h mission, 99th percentile).
    """
    benign = dataclasses.replace(
        cfg, mode=Mode.STATIC, enforcement=False, mission_s=mission_s,
        adversary=dataclasses.replace(cfg.adversary, fraction=0.0))
    run = MissionRun(benign, seed)
    run.run()
    interval_s = benign.interval_s
    counts: dict[tuple[int, int], int] = {}
    for rec in run.world.packet_log:
        if not rec.channel_attempted:
            continue
        k = int(rec.sent_at // interval_s)
        if k < benign.n_intervals:
            counts[(rec.src, k)] = counts.get((rec.src, k), 0) + 1
    vals = [float(counts.get((aid, k), 0))
            for aid in run.world.agent_ids
            for k in range(benign.n_intervals)]
    return float(np.percentile(vals, percentile))


# ------------------------------------------------------------------- traces


def write_traces_csv(path, rows: Iterable[TraceRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in rows:
            writer.writerow([r.run_id, r.seed, r.host, r.agent,
                             r.interval_index, r.label,
                             *("%.9g" % f for f in r.features)])


def gen_traces(cfg: ScenarioConfig, out_csv: str, n_seeds: int = 8,
               base_seed: int = 5000,
               activation_window: Optional[tuple[float, float]] = None,
               log=None) -> dict:
    """Labeled feature traces for training, with enforcement disabled.

    Enforcement would change the very behavior being labeled (a throttled
    attacker looks quiet), so trace missions observe without intervening.
    An explicit activation window shifts attack onsets; drawing them after
    window history is established gives the corpus examples where the
    behavior change sits inside the scorer's view.
    """
    if cfg.adversary.fraction <= 0.0:
        raise ValueError("trace generation needs a nonzero compromise fraction: "
                         "a single-class dataset cannot train a classifier")
    adversary = cfg.adversary
    if activation_window is not None:
        adversary = dataclasses.replace(adversary,
                                        activation_window=activation_window)
    trace_cfg = dataclasses.replace(cfg, mode=Mode.INTERROGATOR,
                                    enforcement=False, model_path=None,
                                    adversary=adversary)
    all_rows: list[TraceRow] = []
    seeds = []
    for i in range(n_seeds):
        seed = base_seed + i
        seeds.append(seed)
        run = MissionRun(trace_cfg, seed, run_id=f"trace-s{seed}",
                         collect_traces=True)
        result = run.run()
        all_rows.extend(result.trace_rows)
        if log is not None:
            n_attack = sum(1 for r in result.trace_rows if r.label == 0)
            log(f"trace-s{seed}: {len(result.trace_rows)} rows, "
                f"{n_attack} attack-labeled")
    write_traces_csv(out_csv, all_rows)
    meta = {
        "format": "uwtrust-traces",
        "version": 1,
        "seeds": seeds,
        "rows": len(all_rows),
        "mission_s": trace_cfg.mission_s,
        "norm_volume": trace_cfg.monitoring.norm_volume,
        "norm_churn": trace_cfg.world.n_agents / 10.0,
        "seq_len": trace_cfg.monitoring.seq_len,
        "warmup_intervals": trace_cfg.monitoring.warmup_intervals,
        "scenario": scenario_to_dict(trace_cfg),
    }
    write_json(_meta_path(out_csv), meta)
    return meta


def _meta_path(traces_csv: str) -> str:
    return os.path.splitext(traces_csv)[0] + ".meta.json"


def read_traces_csv(path) -> list[TraceRow]:
    rows: list[TraceRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s): {', '.join(missing)}")
        for rec in reader:
            rows.append(TraceRow(
                run_id=rec["run_id"], seed=int(rec["seed"]),
                host=int(rec["host"]), agent=int(rec["agent"]),
                interval_index=int(rec["interval_index"]),
                label=int(rec["label"]),
                features=tuple(float(rec[f"f_{n}"]) for n in FEATURE_NAMES)))
    return rows


# ----------------------------------------------------------------- training


@dataclass
class Dataset:
    x: np.ndarray           # (n, seq_len, FEATURE_DIM) float32
    valid: np.ndarray       # (n,) int64
    y: np.ndarray           # (n,) float32; 1 benign, 0 attack
    run_ids: list[str]


def build_windows(rows: Sequence[TraceRow], seq_len: int,
                  warmup_intervals: int) -> Dataset:
    """Reassemble scorer windows from flat trace rows.

    Rows are grouped per (run, agent) and replayed in interval order
    through the same ring the live pipeline uses; every post-warmup
    interval yields one window labeled by that interval's row. Labels
    already carry window semantics (0 iff an attack was expressed within
    the window's span), so every row maps to exactly one example.
    """
    groups: dict[tuple[str, int], list[TraceRow]] = {}
    for r in rows:
        groups.setdefault((r.run_id, r.agent), []).append(r)

    xs, valids, ys, run_ids = [], [], [], []
    for key in sorted(groups):
        run_id, _agent = key
        seq = sorted(groups[key], key=lambda r: r.interval_index)
        ring = SequenceRing(seq_len)
        for r in seq:
            ring.push(r.interval_index, np.asarray(r.features))
            if r.interval_index < warmup_intervals:
                continue
            snap, valid = ring.snapshot()
            xs.append(snap.astype(np.float32))
            valids.append(valid)
            ys.append(float(r.label))
            run_ids.append(run_id)
    if not xs:
        raise ValueError("no usable windows in the trace set")
    return Dataset(np.stack(xs), np.array(valids, dtype=np.int64),
                   np.array(ys, dtype=np.float32), run_ids)


def split_and_balance(ds: Dataset, rng: np.random.Generator,
                      val_fraction: float = 0.2,
                      benign_per_attack: float = 2.0) -> tuple[Dataset, Dataset]:
    """Hold out whole runs for validation; rebalance the training split.

    Validation keeps its natural class mix. Training keeps every attack
    window and subsamples benign ones to the requested ratio so the
    minority class is not drowned out.
    """
    runs = sorted(set(ds.run_ids))
    if len(runs) < 2:
        raise ValueError("need at least two runs to hold one out")
    n_val = max(1, math.ceil(len(runs) * val_fraction))
    val_runs = set(runs[-n_val:])
    idx = np.arange(len(ds.y))
    in_val = np.array([rid in val_runs for rid in ds.run_ids])

    train_idx = idx[~in_val]
    attack = train_idx[ds.y[train_idx] == 0.0]
    benign = train_idx[ds.y[train_idx] == 1.0]
    keep_benign = min(len(benign), int(round(benign_per_attack * len(attack))))
    if keep_benign < len(benign):
        benign = np.sort(rng.choice(benign, size=keep_benign, replace=False))
    train_idx = np.sort(np.concatenate([attack, benign]))
    val_idx = idx[in_val]

    def take(sel: np.ndarray) -> Dataset:
        return Dataset(ds.x[sel], ds.valid[sel], ds.y[sel],
                       [ds.run_ids[i] for i in sel])
    return take(train_idx), take(val_idx)


def train_from_traces(traces_csv: str, out_model: str, *, train_seed: int = 7,
                      epochs: int = 3, batch_size: int = 64, lr: float = 3e-4,
                      benign_per_attack: float = 2.0,
                      config: Optional[ScorerConfig] = None,
                      log=None) -> dict:
    """End-to-end: traces -> windows -> split -> train -> saved model."""
    meta_path = _meta_path(traces_csv)
    trace_meta: dict = {}
    if os.path.isfile(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            trace_meta = json.load(fh)
    seq_len = int(trace_meta.get("seq_len", 64))
    warmup = int(trace_meta.get("warmup_intervals", 10))
    if config is None:
        config = ScorerConfig(seq_len=seq_len)

    rows = read_traces_csv(traces_csv)
    ds = build_windows(rows, config.seq_len, warmup)
    rng = rng_stream(train_seed, "training-init")
    train_ds, val_ds = split_and_balance(ds, rng,
                                         benign_per_attack=benign_per_attack)
    if log is not None:
        log(f"windows: {len(ds.y)} total, {len(train_ds.y)} train "
            f"({int((train_ds.y == 0).sum())} attack), {len(val_ds.y)} val")
    params, report = train(train_ds.x, train_ds.valid, train_ds.y,
                           val_ds.x, val_ds.valid, val_ds.y,
                           config, rng, epochs=epochs, batch_size=batch_size,
                           lr=lr, log=log)
    model_meta = {
        "traces": os.path.basename(traces_csv),
        "trace_meta": trace_meta,
        "train_seed": train_seed,
        "epochs": epochs,
        "batch_size": batch_size,
        "lr": lr,
        "benign_per_attack": benign_per_attack,
        "n_train": report.n_train,
        "n_val": report.n_val,
        "val_accuracy": report.val_accuracy,
        "val_precision": report.val_precision,
        "val_recall": report.val_recall,
        "epoch_losses": report.epoch_losses,
        "param_count": report.param_count,
        "val_runs": sorted(set(val_ds.run_ids)),
    }
    save_model(out_model, params, config, meta=model_meta)
    return model_meta
