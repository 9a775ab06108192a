"""Scenario configuration: typed parameters, YAML loading, run manifests.

Every knob that affects simulation output lives in one ScenarioConfig so
that a run manifest (resolved config + derived constants + the drawn
attack schedule) pins a run down completely. Manifests carry no
timestamps or host state; two runs with equal manifests and seeds must
produce byte-identical outputs.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Optional

import yaml

from .adversary import (DEFAULT_INTENSITIES, DEFAULT_PROFILE_CYCLE, AttackKind,
                        CompromiseAssignment)
from .trust import TrustParams
from .world import ChannelParams, EnergyParams, WorldParams


class Mode(Enum):
    INTERROGATOR = "interrogator"
    BAYESIAN = "bayesian"
    STATIC = "static"


# Behavioral volume normalizer: per-interval send count scale for one agent.
# Frozen from a benign 1 h calibration mission (seed 7, default world) as the
# 99th percentile of per-agent-interval transmission counts; recompute with
# harness.calibrate_norm_volume().
DEFAULT_NORM_VOLUME = 8.0


def norm_churn(n_agents: int) -> float:
    """Neighbor-churn normalizer scales with population density."""
    return n_agents / 10.0


PLACEMENTS = ("relay-targeted", "uniform")


@dataclass(frozen=True)
class AdversaryConfig:
    fraction: float = 0.15
    activation_window: tuple[float, float] = (0.2, 0.4)   # fraction of mission
    placement: str = "relay-targeted"   # transit attackers seize busy relays
    profile_cycle: tuple[AttackKind, ...] = DEFAULT_PROFILE_CYCLE
    intensities: dict[AttackKind, float] = field(
        default_factory=lambda: dict(DEFAULT_INTENSITIES))

    def __post_init__(self) -> None:
        lo, hi = self.activation_window
        if not 0.0 <= lo <= hi < 1.0:
            raise ValueError(f"activation window [{lo}, {hi}] outside [0, 1)")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement {self.placement!r} not one of {PLACEMENTS}")
        if self.fraction and not self.profile_cycle:
            raise ValueError("compromise fraction set but profile cycle empty")


@dataclass(frozen=True)
class MonitoringConfig:
    n_hosts: int = 4                 # gateways plus lowest-id AUVs
    seq_len: int = 64                # scorer input window, in intervals
    warmup_intervals: int = 10       # no scoring or enforcement while rings fill
    normal_stride: int = 4           # off-route agents scored every Nth interval
    norm_volume: float = DEFAULT_NORM_VOLUME
    e_inference_j: float = 0.45      # per-inference energy charged to the host

    def __post_init__(self) -> None:
        if self.n_hosts < 1 or self.seq_len < 1 or self.normal_stride < 1:
            raise ValueError("monitoring sizes must be positive")
        if self.norm_volume <= 0 or self.e_inference_j <= 0:
            raise ValueError("monitoring constants must be positive")


@dataclass(frozen=True)
class ConsortiumConfig:
    validators: int = 9
    period_s: float = 60.0           # batch commit cadence
    link_delay_s: float = 0.05       # surface backbone one-way latency
    timeout_s: float = 2.0           # view-change timer
    auto_recover: bool = True

    def __post_init__(self) -> None:
        if self.validators < 1:
            raise ValueError("need at least one validator")
        if min(self.period_s, self.link_delay_s, self.timeout_s) <= 0:
            raise ValueError("consortium timings must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    mode: Mode = Mode.INTERROGATOR
    mission_s: float = 7200.0
    enforcement: bool = True
    model_path: Optional[str] = None
    world: WorldParams = WorldParams()
    channel: ChannelParams = ChannelParams()
    energy: EnergyParams = EnergyParams()
    trust: TrustParams = TrustParams()
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    monitoring: MonitoringConfig = MonitoringConfig()
    consortium: ConsortiumConfig = ConsortiumConfig()

    def __post_init__(self) -> None:
        if self.mission_s < self.world.interval_s:
            raise ValueError("mission shorter than one monitoring interval")

    @property
    def interval_s(self) -> float:
        return self.world.interval_s

    @property
    def n_intervals(self) -> int:
        return int(self.mission_s // self.world.interval_s)

    def feature_norms(self) -> tuple[float, float]:
        return self.monitoring.norm_volume, norm_churn(self.world.n_agents)


# --------------------------------------------------------------- YAML input


def _coerce(f: dataclasses.Field, value: Any, path: str) -> Any:
    if isinstance(f.default, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _build(cls, data: Any, path: str, **coerced: Any):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValueError(f"{path}: unknown key(s): {', '.join(unknown)}")
    kwargs = dict(coerced)
    for f in fields(cls):
        if f.name in data and f.name not in kwargs:
            kwargs[f.name] = _coerce(f, data[f.name], f"{path}.{f.name}")
    return cls(**kwargs)


def _attack_kind(name: str, path: str) -> AttackKind:
    try:
        return AttackKind(name)
    except ValueError:
        valid = ", ".join(k.value for k in AttackKind)
        raise ValueError(f"{path}: unknown attack kind {name!r} (one of: {valid})")


def _adversary_section(data: Any) -> AdversaryConfig:
    coerced: dict[str, Any] = {}
    if isinstance(data, dict):
        if "profile_cycle" in data:
            cycle = data["profile_cycle"]
            if not isinstance(cycle, list):
                raise ValueError("adversary.profile_cycle: expected a list")
            coerced["profile_cycle"] = tuple(
                _attack_kind(k, "adversary.profile_cycle") for k in cycle)
        if "intensities" in data:
            inten = data["intensities"]
            if not isinstance(inten, dict):
                raise ValueError("adversary.intensities: expected a mapping")
            merged = dict(DEFAULT_INTENSITIES)
            for name, v in inten.items():
                merged[_attack_kind(name, "adversary.intensities")] = float(v)
            coerced["intensities"] = merged
    return _build(AdversaryConfig, data, "adversary", **coerced)


_SECTIONS = {
    "world": (WorldParams, "world"),
    "channel": (ChannelParams, "channel"),
    "energy": (EnergyParams, "energy"),
    "trust": (TrustParams, "trust"),
    "monitoring": (MonitoringConfig, "monitoring"),
    "consortium": (ConsortiumConfig, "consortium"),
}

_TOP_KEYS = {"mode", "mission_s", "enforcement", "model_path"} | set(_SECTIONS) | {"adversary"}


def scenario_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ValueError("scenario: expected a mapping at the top level")
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        raise ValueError(f"scenario: unknown key(s): {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    if "mode" in data:
        name = str(data["mode"]).lower()
        try:
            kwargs["mode"] = Mode(name)
        except ValueError:
            valid = ", ".join(m.value for m in Mode)
            raise ValueError(f"scenario.mode: unknown mode {name!r} (one of: {valid})")
    for key in ("mission_s", "enforcement", "model_path"):
        if key in data:
            kwargs[key] = data[key]
    for key, (cls, path) in _SECTIONS.items():
        if key in data:
            kwargs[key] = _build(cls, data[key], path)
    if "adversary" in data:
        kwargs["adversary"] = _adversary_section(data["adversary"])
    return ScenarioConfig(**kwargs)


def load_scenario(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return scenario_from_dict(data or {})


# ----------------------------------------------------------------- manifest


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, tuple):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {(k.value if isinstance(k, Enum) else k): _jsonable(v)
                for k, v in obj.items()}
    return obj


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """JSON-serializable form that scenario_from_dict accepts back."""
    return _jsonable(cfg)


def manifest_dict(cfg: ScenarioConfig, seed: int, run_id: str,
                  assignment: CompromiseAssignment,
                  monitor_hosts: list[int]) -> dict:
    """Everything needed to reproduce or audit one run, JSON-serializable."""
    schedule = [{
        "agent": aid,
        "kind": prof.kind.value,
        "activation_s": prof.activation,
        "intensity": prof.intensity,
        "group": prof.group,
    } for aid, prof in sorted(assignment.profiles.items())]
    return {
        "format": "uwtrust-run-manifest",
        "version": 1,
        "run_id": run_id,
        "seed": seed,
        "mode": cfg.mode.value,
        "config": _jsonable(cfg),
        "derived": {
            "interval_s": cfg.interval_s,
            "n_intervals": cfg.n_intervals,
            "norm_volume": cfg.monitoring.norm_volume,
            "norm_churn": norm_churn(cfg.world.n_agents),
            "monitor_hosts": list(monitor_hosts),
            "compromised_count": len(assignment.assigned),
        },
        "attack_schedule": schedule,
    }
