"""Trust state: exponential smoothing, authorization, baseline estimators.

A trust score lives in [0, 1]. New evidence is folded in with exponential
smoothing, so a single bad interval cannot crater an established score and
a compromised agent cannot whitewash itself with one quiet interval.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class TrustParams:
    alpha: float = 0.8             # smoothing weight on the previous score
    tau_min: float = 0.65          # authorization threshold (inclusive)
    tau_hard: float = 0.4          # immediate local-constraint threshold
    persistence_threshold: int = 3  # consecutive low intervals before escalation
    recovery_threshold: int = 5    # consecutive clean intervals before reinstatement
    initial_trust: float = 0.8

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        if not 0.0 <= self.tau_hard <= self.tau_min <= 1.0:
            raise ValueError("need 0 <= tau_hard <= tau_min <= 1")
        if self.persistence_threshold < 1 or self.recovery_threshold < 1:
            raise ValueError("thresholds must be positive")


def smooth(tau: float, raw: float, alpha: float) -> float:
    """One smoothing step: alpha*tau + (1-alpha)*raw."""
    return alpha * tau + (1.0 - alpha) * raw


def authorize(tau: float, params: TrustParams) -> bool:
    """An agent exactly at the threshold is still authorized."""
    return tau >= params.tau_min


@dataclass
class TrustRecord:
    """Smoothed trust plus the persistence counters enforcement reads.

    Counters track the updated tau relative to tau_min: each update bumps
    one streak and zeroes the other, so they are never both nonzero.
    """

    agent: int
    tau: float
    raw_score: float = 0.0
    persistence_below: int = 0
    persistence_above: int = 0


def smooth_update(record: TrustRecord, raw: float, params: TrustParams) -> TrustRecord:
    """Fold one raw score into the record, updating the persistence streaks."""
    if not 0.0 <= raw <= 1.0:
        raise ValueError(f"raw score {raw} outside [0, 1]")
    record.tau = smooth(record.tau, raw, params.alpha)
    record.raw_score = raw
    if record.tau < params.tau_min:
        record.persistence_below += 1
        record.persistence_above = 0
    else:
        record.persistence_above += 1
        record.persistence_below = 0
    return record


class TrustTable:
    """Smoothed trust scores keyed by agent id."""

    def __init__(self, params: TrustParams) -> None:
        self.params = params
        self._tau: dict[int, float] = {}

    def get(self, agent: int) -> float:
        return self._tau.get(agent, self.params.initial_trust)

    def update(self, agent: int, raw: float) -> float:
        if not 0.0 <= raw <= 1.0:
            raise ValueError(f"raw score {raw} outside [0, 1]")
        tau = smooth(self.get(agent), raw, self.params.alpha)
        self._tau[agent] = tau
        return tau

    def set(self, agent: int, tau: float) -> None:
        self._tau[agent] = tau

    def authorized(self, agent: int) -> bool:
        return authorize(self.get(agent), self.params)


@dataclass
class BetaReputation:
    """Reputation from observed forwarding outcomes.

    trust = (s + 1) / (s + f + 2), the mean of a Beta(s+1, f+1) posterior
    with a uniform prior. With no observations this is 0.5.
    """

    successes: int = 0
    failures: int = 0

    def record(self, success: bool) -> None:
        if success:
            self.successes += 1
        else:
            self.failures += 1

    def trust(self) -> float:
        return (self.successes + 1) / (self.successes + self.failures + 2)


class BetaReputationTable:
    """Per-agent outcome counters for the reputation baseline."""

    def __init__(self) -> None:
        self._rep: dict[int, BetaReputation] = {}

    def record(self, agent: int, success: bool) -> None:
        self._rep.setdefault(agent, BetaReputation()).record(success)

    def observation_count(self, agent: int) -> int:
        rep = self._rep.get(agent)
        return 0 if rep is None else rep.successes + rep.failures

    def trust(self, agent: int) -> float:
        rep = self._rep.get(agent)
        return 0.5 if rep is None else rep.trust()


class StaticTrust:
    """Degenerate baseline: every agent keeps full trust forever."""

    def get(self, agent: int) -> float:
        return 1.0

    def authorized(self, agent: int) -> bool:
        return True
