"""Command-line front end.

Subcommands:
  run          simulate one mission and write its run directory
  experiment   comparative sweep across trust modes and seeds
  gen-traces   export labeled feature traces for training
  train        fit the behavioral scorer from a trace CSV
  ledger       verify an exported ledger chain
  report       rebuild aggregate outputs from run directories
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional

from .consortium import import_chain, verify_chain
from .harness import (ModelScorer, gen_traces, rebuild_report, run_experiment,
                      run_once, train_from_traces)
from .scenario import Mode, ScenarioConfig, load_scenario


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_cfg(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario) if args.scenario else ScenarioConfig()
    overrides = {}
    if getattr(args, "mode", None):
        overrides["mode"] = Mode(args.mode)
    if getattr(args, "mission_s", None) is not None:
        overrides["mission_s"] = args.mission_s
    if getattr(args, "model", None):
        overrides["model_path"] = args.model
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_cfg(args)
    result = run_once(cfg, args.seed, out_dir=args.out, run_id=args.run_id)
    last = result.rows[-1] if result.rows else None
    _log(f"{result.run_id}: {len(result.rows)} intervals, "
         f"pdr={result.final_pdr:.3f}, "
         f"ledger blocks={len(result.chain)}, "
         f"events={result.events_processed}")
    if last is not None:
        _log(f"final interval: accuracy={last.accuracy:.3f} "
             f"flagged={last.flagged_count} isolated={last.isolated_count}")
    return 0


def _parse_modes(spec: str) -> list[Mode]:
    if spec.strip() == "all":
        return [Mode.INTERROGATOR, Mode.BAYESIAN, Mode.STATIC]
    return [Mode(m.strip()) for m in spec.split(",") if m.strip()]


def _cmd_experiment(args) -> int:
    cfg = _load_cfg(args)
    scorer = ModelScorer.load(args.model) if args.model else None
    aggregate = run_experiment(cfg, args.out, n_seeds=args.runs,
                               base_seed=args.base_seed,
                               modes=_parse_modes(args.modes),
                               scorer=scorer, log=_log)
    for mode, entry in aggregate["modes"].items():
        _log(f"{mode}: detection_accuracy="
             f"{entry['detection_accuracy']['mean']:.3f} "
             f"pdr={entry['pdr']['mean']:.3f}")
    return 0


def _parse_activation(spec: Optional[str]) -> Optional[tuple[float, float]]:
    if spec is None:
        return None
    parts = spec.split(",")
    if len(parts) != 2:
        raise ValueError(f"activation window {spec!r}: expected 'lo,hi'")
    return float(parts[0]), float(parts[1])


def _cmd_gen_traces(args) -> int:
    cfg = _load_cfg(args)
    meta = gen_traces(cfg, args.out, n_seeds=args.runs,
                      base_seed=args.base_seed,
                      activation_window=_parse_activation(args.activation),
                      log=_log)
    _log(f"wrote {meta['rows']} rows to {args.out}")
    return 0


def _cmd_train(args) -> int:
    meta = train_from_traces(args.traces, args.out, train_seed=args.seed,
                             epochs=args.epochs, batch_size=args.batch,
                             lr=args.lr, benign_per_attack=args.benign_ratio,
                             log=_log)
    _log(f"val accuracy={meta['val_accuracy']:.3f} "
         f"precision={meta['val_precision']:.3f} "
         f"recall={meta['val_recall']:.3f}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_ledger(args) -> int:
    try:
        chain = import_chain(args.file)
    except (OSError, ValueError, KeyError) as exc:
        print(f"unreadable ledger: {exc}", file=sys.stderr)
        return 1
    bad = verify_chain(chain)
    if bad is None:
        print(f"ok: {len(chain)} blocks, "
              f"{sum(len(b.commits) for b in chain)} commits")
        return 0
    print(f"invalid chain: first bad block at height {bad}")
    return 1


def _cmd_report(args) -> int:
    aggregate = rebuild_report(args.in_dir, out_csv=args.out)
    for mode, entry in aggregate["modes"].items():
        _log(f"{mode}: detection_accuracy="
             f"{entry['detection_accuracy']['mean']:.3f} "
             f"pdr={entry['pdr']['mean']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwtrust",
        description="Trust-aware underwater acoustic network simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one mission")
    p.add_argument("--scenario", help="YAML scenario file; defaults when omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--run-id", default=None)
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--mission-s", type=float, default=None)
    p.add_argument("--model", help="trained scorer model file")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("experiment", help="sweep modes x seeds and aggregate")
    p.add_argument("--scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--runs", type=int, default=10,
                   help="seeds per mode (base-seed..base-seed+runs-1)")
    p.add_argument("--base-seed", type=int, default=1000)
    p.add_argument("--modes", default="all",
                   help='"all" or a comma list of trust modes')
    p.add_argument("--mission-s", type=float, default=None)
    p.add_argument("--model", help="trained scorer model file")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("gen-traces", help="export labeled feature traces")
    p.add_argument("--scenario")
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--runs", type=int, default=8)
    p.add_argument("--base-seed", type=int, default=5000)
    p.add_argument("--mission-s", type=float, default=None)
    p.add_argument("--activation", default=None,
                   help="attack onset window as 'lo,hi' mission fractions")
    p.set_defaults(func=_cmd_gen_traces)

    p = sub.add_parser("train", help="train the scorer from traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--benign-ratio", type=float, default=2.0,
                   help="benign windows kept per attack window in training")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--report", help="write the training report JSON here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ledger", help="ledger utilities")
    lsub = p.add_subparsers(dest="ledger_command", required=True)
    v = lsub.add_parser("verify", help="check an exported chain")
    v.add_argument("--file", required=True, help="ledger.jsonl path")
    v.set_defaults(func=_cmd_ledger)

    p = sub.add_parser("report", help="rebuild aggregates from run dirs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", help="aggregate interval CSV path")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
