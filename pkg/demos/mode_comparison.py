#!/usr/bin/env python3
"""Compare the interrogator against both baselines on identical missions.

Same seeds, same world, same adversaries; only the trust machinery
changes. Static trust never revises anything, the Bayesian baseline
learns from forwarding outcomes alone, and the interrogator scores
behavioral metadata with the trained model. Writes a run directory per
(mode, seed) plus aggregate.json / aggregate_intervals.csv, then prints
the headline table.

Usage:
    python3 demos/mode_comparison.py --out /tmp/uwtrust-demo [--seeds 3]
"""

import argparse
import dataclasses
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                "..", "src"))

from uwtrust.harness import run_experiment
from uwtrust.scenario import ScenarioConfig

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="/tmp/uwtrust-demo")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--base-seed", type=int, default=1000)
    ap.add_argument("--mission-s", type=float, default=3600.0)
    ap.add_argument("--model",
                    default=os.path.join(ROOT, "models", "scorer.uwtm"))
    args = ap.parse_args()

    cfg = dataclasses.replace(ScenarioConfig(), mission_s=args.mission_s,
                              model_path=args.model)
    agg = run_experiment(cfg, args.out, n_seeds=args.seeds,
                         base_seed=args.base_seed, log=print)

    print(f"\n{'mode':>14} {'det.acc':>8} {'pdr':>7} {'latency':>9} "
          f"{'residual J':>11}")
    for mode in ("static", "bayesian", "interrogator"):
        m = agg["modes"][mode]
        lat = m["median_detection_latency_s"]
        lat_s = "none" if lat is None else f"{lat:7.0f} s"
        print(f"{mode:>14} {m['detection_accuracy']['mean']:8.3f} "
              f"{m['pdr']['mean']:7.3f} {lat_s:>9} "
              f"{m['mean_residual_energy_J']['mean']:11.0f}")
    over = agg["modes"]["interrogator"].get("energy_overhead_vs_static")
    if over:
        print(f"\ninterrogator monitoring cost: {100 * over['mean']:.2f}% "
              f"of static residual energy")
    print(f"artifacts: {os.path.join(args.out, 'aggregate.json')}")


if __name__ == "__main__":
    main()
