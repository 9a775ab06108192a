#!/usr/bin/env python3
"""Run one interrogated mission and narrate what the framework saw.

Deploys the default 50-agent field (38 anchored sensors, 12 patrolling
AUVs, 2 surface gateways), compromises ~16% of the population on the
default attack cycle, and lets the interrogator hosts score behavior
with the shipped transformer model. Prints the compromise schedule, the
detection story per attacker, and the end-of-mission scoreboard.

Usage:
    python3 demos/single_mission.py [--seed N] [--mission-s S] [--model PATH]
"""

import argparse
import dataclasses
import math
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                "..", "src"))

from uwtrust.harness import ModelScorer, run_summary
from uwtrust.metrics import balanced_accuracy, pooled_confusion
from uwtrust.runsim import MissionRun
from uwtrust.scenario import Mode, ScenarioConfig

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")
DEFAULT_MODEL = os.path.join(ROOT, "models", "scorer.uwtm")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--mission-s", type=float, default=3600.0)
    ap.add_argument("--model", default=DEFAULT_MODEL)
    args = ap.parse_args()

    cfg = dataclasses.replace(ScenarioConfig(), mode=Mode.INTERROGATOR,
                              mission_s=args.mission_s,
                              model_path=args.model)
    scorer = ModelScorer.load(args.model)
    run = MissionRun(cfg, args.seed, run_id=f"demo-s{args.seed}", scorer=scorer)

    print(f"mission: {int(cfg.mission_s)} s, {cfg.n_intervals} intervals, "
          f"seed {args.seed}")
    print(f"hosts: {run.hosts} (gateways first, then lowest-id AUVs)\n")

    print("compromise schedule:")
    for aid, prof in sorted(run.assignment.profiles.items()):
        print(f"  agent {aid:2d}  {prof.kind.value:22s} activates at "
              f"{prof.activation:6.0f} s  intensity {prof.intensity}")

    result = run.run()
    summary = run_summary(result, cfg.monitoring.warmup_intervals)

    print("\ndetection outcomes:")
    for d in summary["detection"]:
        aid = d["agent"]
        if not math.isfinite(d["first_interrogation_s"]):
            acted = run.adversary.first_expression(aid)
            note = "never acted" if acted is None else "NOT FLAGGED"
            print(f"  agent {aid:2d}  {d['kind']:22s} {note}")
            continue
        lat = d["first_interrogation_s"] - d["activation_s"]
        when = (f"flagged {lat:5.0f} s after activation" if lat >= 0
                else f"pre-flagged {-lat:5.0f} s before activation")
        if math.isfinite(d["first_isolated_s"]):
            stage = "isolated"
        elif math.isfinite(d["first_constrained_s"]):
            stage = "constrained"
        else:
            stage = "under interrogation"
        print(f"  agent {aid:2d}  {d['kind']:22s} {when}, {stage}")

    pooled = pooled_confusion(result.confusion, cfg.monitoring.warmup_intervals)
    last = result.rows[-1]
    print("\nscoreboard:")
    print(f"  balanced detection accuracy  {balanced_accuracy(pooled):.3f}")
    print(f"  packet delivery ratio        {last.pdr_cumulative:.3f}")
    print(f"  mean residual energy         {last.mean_residual_energy_J:.0f} J")
    print(f"  false positives (benign)     "
          f"{sum(r.false_positive_count for r in result.rows)} agent-intervals")
    print(f"  ledger blocks committed      {summary['ledger_blocks']}")


if __name__ == "__main__":
    main()
