"""Run directories, aggregation oracles, traces, training data assembly."""

import dataclasses
import json
import math
import os

import numpy as np
import pytest

from uwtrust.consortium import import_chain, verify_chain
from uwtrust.features import FEATURE_NAMES
from uwtrust.harness import (TRACE_COLUMNS, Dataset, ModelScorer,
                             RunArtifacts, _check_scorer_fit,
                             artifacts_from_result, build_aggregate,
                             build_interval_table, build_windows,
                             calibrate_norm_volume, collect_artifacts,
                             gen_traces, read_traces_csv, rebuild_report,
                             run_experiment, run_once, split_and_balance,
                             write_traces_csv)
from uwtrust.kernel import rng_stream
from uwtrust.metrics import MetricsRow, read_metrics_csv
from uwtrust.runsim import TraceRow
from uwtrust.scenario import DEFAULT_NORM_VOLUME, Mode, ScenarioConfig
from uwtrust.scorer import ScorerConfig, init_params, save_model


def _cfg(**kw) -> ScenarioConfig:
    return dataclasses.replace(ScenarioConfig(), **kw)


# ------------------------------------------------------------------ run dirs


def test_run_once_writes_the_run_directory(tmp_path):
    cfg = _cfg(mission_s=600.0, mode=Mode.STATIC)
    result = run_once(cfg, seed=4, out_dir=str(tmp_path))
    run_dir = tmp_path / "static-s4"
    for name in ("manifest.json", "metrics.csv", "ledger.jsonl", "summary.json"):
        assert (run_dir / name).is_file(), name
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["mode"] == "static"
    rows = read_metrics_csv(run_dir / "metrics.csv")
    assert len(rows) == len(result.rows) == cfg.n_intervals
    assert rows[-1].pdr_cumulative == pytest.approx(
        result.rows[-1].pdr_cumulative, abs=1e-8)
    assert rows[-1].mean_residual_energy_J == pytest.approx(
        result.rows[-1].mean_residual_energy_J, rel=1e-8)
    assert verify_chain(import_chain(run_dir / "ledger.jsonl")) is None
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["confusion_post_warmup"]["tn"] > 0
    assert summary["compromised_count"] == 8


def test_experiment_is_byte_identical_across_reruns(tmp_path):
    cfg = _cfg(mission_s=600.0)
    dirs = []
    for name in ("a", "b"):
        out = tmp_path / name
        run_experiment(cfg, str(out), n_seeds=1, base_seed=123,
                       modes=(Mode.STATIC, Mode.BAYESIAN))
        dirs.append(out)
    files_a = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(dirs[1]) for p in dirs[1].rglob("*") if p.is_file())
    assert files_a == files_b and files_a
    for rel in files_a:
        assert (dirs[0] / rel).read_bytes() == (dirs[1] / rel).read_bytes(), rel


def test_report_rebuilds_aggregates_from_disk(tmp_path):
    cfg = _cfg(mission_s=600.0)
    agg1 = run_experiment(cfg, str(tmp_path), n_seeds=2, base_seed=50,
                          modes=(Mode.STATIC,))
    (tmp_path / "aggregate.json").unlink()
    (tmp_path / "aggregate_intervals.csv").unlink()
    agg2 = rebuild_report(str(tmp_path))
    assert agg1 == agg2
    assert (tmp_path / "aggregate.json").is_file()
    assert (tmp_path / "aggregate_intervals.csv").is_file()


def test_collect_artifacts_requires_runs(tmp_path):
    with pytest.raises(FileNotFoundError):
        collect_artifacts(str(tmp_path))


# ------------------------------------------------------- aggregation oracle


def _summary(mode, seed, conf, energy, pdr, detections):
    return {
        "seed": seed, "mode": mode, "warmup_intervals": 1,
        "confusion_post_warmup": conf,
        "final_pdr": pdr,
        "final_mean_residual_energy_J": energy,
        "enforcement_lag_intervals": [0] * len(detections),
        "detection": detections,
    }


def _mk_rows(mode, seed, accs):
    return [MetricsRow(run_id=f"{mode}-s{seed}", seed=seed, interval_index=k,
                       mode=mode, accuracy=a, precision=1.0, recall=1.0,
                       mean_residual_energy_J=1000.0, pdr_cumulative=0.9,
                       flagged_count=0, excluded_count=0, isolated_count=0,
                       false_positive_count=0)
            for k, a in enumerate(accs)]


def test_build_aggregate_hand_values():
    det1 = [{"agent": 5, "kind": "replay", "activation_s": 100.0,
             "first_interrogation_s": 160.0},
            {"agent": 6, "kind": "replay", "activation_s": 200.0,
             "first_interrogation_s": 320.0}]
    det2 = [{"agent": 7, "kind": "replay", "activation_s": 100.0,
             "first_interrogation_s": 190.0}]
    det_none = [{"agent": 5, "kind": "replay", "activation_s": 100.0,
                 "first_interrogation_s": None}]
    arts = [
        RunArtifacts("interrogator-s1", 1, "interrogator",
                     _mk_rows("interrogator", 1, [0.5, 1.0, 1.0]),
                     _summary("interrogator", 1,
                              {"tp": 8, "fp": 0, "tn": 40, "fn": 0},
                              950.0, 0.95, det1)),
        RunArtifacts("interrogator-s2", 2, "interrogator",
                     _mk_rows("interrogator", 2, [0.5, 0.9, 1.0]),
                     _summary("interrogator", 2,
                              {"tp": 8, "fp": 0, "tn": 40, "fn": 0},
                              900.0, 0.85, det2)),
        RunArtifacts("static-s1", 1, "static",
                     _mk_rows("static", 1, [0.5, 0.8, 0.8]),
                     _summary("static", 1,
                              {"tp": 0, "fp": 0, "tn": 40, "fn": 8},
                              1000.0, 0.80, det_none)),
        RunArtifacts("static-s2", 2, "static",
                     _mk_rows("static", 2, [0.5, 0.8, 0.8]),
                     _summary("static", 2,
                              {"tp": 0, "fp": 0, "tn": 40, "fn": 8},
                              1000.0, 0.80, det_none)),
    ]
    agg = build_aggregate(arts)
    inter = agg["modes"]["interrogator"]
    static = agg["modes"]["static"]
    assert inter["detection_accuracy"]["mean"] == 1.0
    assert static["detection_accuracy"]["mean"] == 0.5
    # post-warmup rows only (warmup=1): run1 mean(1.0, 1.0)=1.0, run2 0.95
    assert inter["accuracy"]["mean"] == pytest.approx(0.975)
    assert inter["pdr"]["mean"] == pytest.approx(0.9)
    # energy overhead vs same-seed static: 1-950/1000=0.05, 1-900/1000=0.10
    ov = inter["energy_overhead_vs_static"]
    assert ov["mean"] == pytest.approx(0.075)
    assert ov["std"] == pytest.approx(math.sqrt(2 * 0.025 ** 2 / 1))
    # latencies pooled: 60, 120, 90 -> median 90
    assert inter["median_detection_latency_s"] == 90.0
    assert static["median_detection_latency_s"] == math.inf
    assert inter["detected_fraction"] == 1.0
    assert static["detected_fraction"] == 0.0
    assert "energy_overhead_vs_static" not in static


def test_interval_table_means_across_seeds():
    arts = [
        RunArtifacts("m-s1", 1, "m", _mk_rows("m", 1, [0.8, 0.8]),
                     _summary("m", 1, {"tp": 0, "fp": 0, "tn": 1, "fn": 0},
                              1.0, 0.9, [])),
        RunArtifacts("m-s2", 2, "m", _mk_rows("m", 2, [0.9, 1.0]),
                     _summary("m", 2, {"tp": 0, "fp": 0, "tn": 1, "fn": 0},
                              1.0, 0.9, [])),
    ]
    table = build_interval_table(arts)
    assert [(r["mode"], r["interval_index"], r["n_runs"]) for r in table] == \
        [("m", 0, 2), ("m", 1, 2)]
    assert table[0]["accuracy_mean"] == pytest.approx(0.85)
    assert table[1]["accuracy_mean"] == pytest.approx(0.9)
    assert table[0]["accuracy_std"] == pytest.approx(np.std([0.8, 0.9], ddof=1))


def test_json_summary_maps_inf_to_null(tmp_path):
    cfg = _cfg(mission_s=600.0, mode=Mode.STATIC)
    result = run_once(cfg, seed=8, out_dir=str(tmp_path))
    summary = json.loads((tmp_path / "static-s8" / "summary.json").read_text())
    # static mode never detects: medians and first-detection times are null
    assert summary["median_detection_latency_s"] is None
    assert all(d["first_interrogation_s"] is None for d in summary["detection"])
    art = artifacts_from_result(result, cfg.monitoring.warmup_intervals)
    assert art.summary["median_detection_latency_s"] is None


# ------------------------------------------------------------------- traces


def test_traces_round_trip(tmp_path):
    rows = [TraceRow("r1", 1, 50, 7, k, 1 if k < 3 else 0,
                     tuple(float(k + i) / 7 for i in range(7)))
            for k in range(5)]
    path = tmp_path / "t.csv"
    write_traces_csv(path, rows)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    assert header.endswith(",".join(f"f_{n}" for n in FEATURE_NAMES))
    back = read_traces_csv(path)
    assert len(back) == 5
    assert back[0].features == pytest.approx(rows[0].features)
    assert [r.label for r in back] == [1, 1, 1, 0, 0]


def test_traces_reject_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("run_id,seed\nx,1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="f_volume"):
        read_traces_csv(path)


def test_gen_traces_needs_attackers(tmp_path):
    adv = dataclasses.replace(ScenarioConfig().adversary, fraction=0.0)
    with pytest.raises(ValueError, match="single-class"):
        gen_traces(_cfg(adversary=adv), str(tmp_path / "t.csv"), n_seeds=1)


def test_gen_traces_writes_csv_and_meta(tmp_path):
    cfg = _cfg(mission_s=600.0)
    out = tmp_path / "traces.csv"
    meta = gen_traces(cfg, str(out), n_seeds=1, base_seed=77)
    assert out.is_file()
    assert json.loads((tmp_path / "traces.meta.json").read_text()) == meta
    rows = read_traces_csv(out)
    assert len(rows) == meta["rows"] == cfg.world.n_agents * cfg.n_intervals
    assert meta["norm_volume"] == DEFAULT_NORM_VOLUME
    assert {r.label for r in rows} == {0, 1}


# ------------------------------------------------------ training assembly


def _trace(run_id, agent, k, label):
    return TraceRow(run_id, 1, 50, agent, k, label,
                    (float(k), 0.0, 0.0, 0.0, 1.0, 0.0, 0.0))


def test_build_windows_warmup_and_labels():
    rows = []
    # benign agent: intervals 0..14 all label 1
    rows += [_trace("r1", 1, k, 1) for k in range(15)]
    # compromised agent: attack expressed in window spans from interval 8 on
    rows += [_trace("r1", 2, k, 1 if k < 8 else 0) for k in range(15)]
    ds = build_windows(rows, seq_len=16, warmup_intervals=10)
    # one window per post-warmup row, labeled by that row: each agent
    # contributes k=10..14, label 1 for the benign one, 0 for the other
    labels = list(ds.y)
    assert labels.count(1.0) == 5
    assert labels.count(0.0) == 5
    assert all(v == k + 1 for v, k in zip(
        ds.valid, [10, 11, 12, 13, 14, 10, 11, 12, 13, 14]))
    # ring replays history: first window of the benign agent has 11 rows
    assert ds.x.shape == (10, 16, 7)
    # front padding, then rows 0..10 with the volume feature carrying k
    w = ds.x[0]
    assert np.all(w[:5] == 0)
    assert w[5, 0] == 0.0 and w[15, 0] == 10.0


def test_split_and_balance_holds_out_runs_and_downsamples():
    n_runs, per_run = 5, 30
    xs, valid, ys, run_ids = [], [], [], []
    for r in range(n_runs):
        for i in range(per_run):
            xs.append(np.zeros((4, 7), dtype=np.float32))
            valid.append(4)
            ys.append(0.0 if i < 5 else 1.0)       # 5 attack, 25 benign per run
            run_ids.append(f"run{r}")
    ds = Dataset(np.stack(xs), np.array(valid), np.array(ys, dtype=np.float32),
                 run_ids)
    train, val = split_and_balance(ds, rng_stream(0, "training-init"))
    assert set(val.run_ids) == {"run4"}            # whole-run holdout
    assert "run4" not in set(train.run_ids)
    n_attack = int((train.y == 0).sum())
    n_benign = int((train.y == 1).sum())
    assert n_attack == 20
    assert n_benign == 40                          # 2:1 benign:attack
    # validation keeps its natural mix
    assert int((val.y == 0).sum()) == 5 and int((val.y == 1).sum()) == 25


def test_split_needs_two_runs():
    ds = Dataset(np.zeros((2, 4, 7), dtype=np.float32), np.array([4, 4]),
                 np.array([0.0, 1.0], dtype=np.float32), ["r", "r"])
    with pytest.raises(ValueError, match="two runs"):
        split_and_balance(ds, rng_stream(0, "training-init"))


# ------------------------------------------------------------- model loading


def test_model_scorer_fit_checks(tmp_path):
    cfg = ScorerConfig(layers=1, model_dim=8, heads=2, ff_dim=16,
                       input_dim=7, seq_len=16)
    params = init_params(cfg, rng_stream(0, "training-init"))
    path = tmp_path / "m.uwtm"
    save_model(path, params, cfg)
    scorer = ModelScorer.load(path)
    scenario = ScenarioConfig()                    # seq_len 64 by default
    with pytest.raises(ValueError, match="window"):
        _check_scorer_fit(scorer, scenario)
    mon = dataclasses.replace(scenario.monitoring, seq_len=16)
    _check_scorer_fit(scorer, dataclasses.replace(scenario, monitoring=mon))


# -------------------------------------------------------------- calibration


def test_norm_volume_recomputes_to_frozen_constant():
    assert calibrate_norm_volume(ScenarioConfig()) == DEFAULT_NORM_VOLUME
