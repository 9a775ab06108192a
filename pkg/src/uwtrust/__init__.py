"""Deterministic simulator for behavioral trust in underwater acoustic networks.

The package is organized as a stack of small modules:

    kernel      event queue, simulation clock, labeled RNG streams
    world       agents, acoustic channel, energy accounting, mobility, routing
    adversary   compromised-agent behavior profiles
    features    per-interval behavior feature extraction
    scorer      sequence model that maps behavior windows to trust scores
    trust       trust state updates, authorization, baseline estimators
    consortium  replicated enforcement ledger and validator protocol
    scenario    scenario configuration and run manifests
    runsim      wiring of a single mission run
    metrics     detection and network metrics, aggregation
    harness     multi-run experiments, trace generation, training, reports
    cli         command line entry points
"""

__version__ = "0.1.0"

from .scenario import (DEFAULT_NORM_VOLUME, Mode, ScenarioConfig,  # noqa: E402
                       load_scenario)
from .runsim import MissionRun, RunResult  # noqa: E402
from .harness import (ModelScorer, gen_traces, run_experiment,  # noqa: E402
                      run_once, train_from_traces)

__all__ = [
    "DEFAULT_NORM_VOLUME", "Mode", "ScenarioConfig", "load_scenario",
    "MissionRun", "RunResult", "ModelScorer",
    "gen_traces", "run_experiment", "run_once", "train_from_traces",
    "__version__",
]
