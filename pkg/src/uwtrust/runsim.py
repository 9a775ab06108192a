"""One mission, fully wired: world, adversary, monitoring, trust, ledger.

MissionRun composes the layers and owns the per-interval loop:

  window close  ->  settle forwarding outcomes
                ->  feed new log records to the host observers
                ->  close every (host, agent) feature window
                ->  score the agents due this interval, update trust
                ->  advance enforcement tiers, apply world effects
                ->  emit one metrics row

  consensus tick -> summary uplinks from AUV hosts, one ledger round

Determinism contract: given a config and a seed, every output (metrics
rows, ledger chain, manifest, trace rows) is byte-identical across
re-runs. All iteration that reaches an output goes over sorted ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .adversary import AdversaryController, assign_compromised
from .consortium import (ConsensusCluster, EnforcementState, LedgerBlock,
                         Tier, ValidatorSet, enforce_transition)
from .features import FeatureParams, HostObserver, SequenceRing
from .kernel import Engine, Event, EventKind, rng_stream
from .metrics import (Confusion, MetricsRow, accuracy, classify, precision,
                      recall)
from .scenario import Mode, ScenarioConfig, manifest_dict
from .trust import BetaReputationTable, TrustRecord, smooth_update
from .world import AgentKind, PacketKind, World

# Scores from a batched scorer: (windows, valid_lens) -> probabilities.
ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Reputation baseline: the Beta posterior replaces the initial trust only
# once enough forwarding outcomes exist for it to mean something.
MIN_BAYES_OBSERVATIONS = 5

# Settling time after the mission for the final consensus round to land.
CONSENSUS_GRACE_S = 6.0


@dataclass
class DetectionOutcome:
    """Per compromised agent: when each enforcement stage first engaged."""
    agent: int
    kind: str
    activation_s: float
    first_interrogation_s: float = math.inf
    first_constrained_s: float = math.inf
    first_isolated_s: float = math.inf

    @property
    def detected(self) -> bool:
        return math.isfinite(self.first_interrogation_s)

    @property
    def detection_latency_s(self) -> float:
        return self.first_interrogation_s - self.activation_s


@dataclass(frozen=True)
class TraceRow:
    """One observed agent-interval from its primary host's viewpoint."""
    run_id: str
    seed: int
    host: int
    agent: int
    interval_index: int
    label: int                  # 0 iff an attack was expressed in the window span
    features: tuple[float, ...]


@dataclass
class RunResult:
    run_id: str
    seed: int
    mode: str
    rows: list[MetricsRow]
    confusion: list[Confusion]
    outcomes: list[DetectionOutcome]
    chain: list[LedgerBlock]
    manifest: dict
    final_pdr: float
    final_mean_residual_j: float
    events_processed: int
    view_changes: int
    enforcement_lag_intervals: list[int]
    unresolved: dict[str, int]
    trace_rows: list[TraceRow] = field(default_factory=list)


def select_hosts(world: World, n_hosts: int) -> list[int]:
    """Gateways first, then the lowest-id AUVs, up to n_hosts."""
    hosts = list(world.gateway_ids[:n_hosts])
    auvs = sorted(a for a in world.agent_ids
                  if world.agents[a].kind is AgentKind.AUV)
    need = n_hosts - len(hosts)
    if need > len(auvs):
        raise ValueError(f"cannot staff {n_hosts} hosts: "
                         f"{len(world.gateway_ids)} gateways, {len(auvs)} AUVs")
    hosts.extend(auvs[:need])
    return hosts


class MissionRun:
    """Builds a wired mission; `run()` executes it and returns the result."""

    def __init__(self, cfg: ScenarioConfig, seed: int, run_id: str = "run",
                 scorer: Optional[ScoreFn] = None,
                 collect_traces: bool = False) -> None:
        self.cfg = cfg
        self.seed = seed
        self.run_id = run_id
        self.scorer = scorer
        self.collect_traces = collect_traces

        self.engine = Engine()
        self.world = World(cfg.world, cfg.channel, cfg.energy, self.engine,
                           rng_stream(seed, "deploy"),
                           rng_stream(seed, "mobility"),
                           rng_stream(seed, "channel"),
                           rng_stream(seed, "traffic"))
        self.hosts = select_hosts(self.world, cfg.monitoring.n_hosts)
        # Monitoring stays on in every mode so the channel stream is drawn
        # identically; baselines just never look at the observations.
        self.world.set_monitoring(self.hosts)

        eligible = set(self.world.agent_ids) - set(self.hosts)
        paths = None
        if cfg.adversary.placement == "relay-targeted":
            # Transit attackers want relays whose duty persists; AUVs wander
            # off their deploy-time paths, so only sensor relays are kept.
            paths = {aid: tuple(r for r in relays
                                if self.world.agents[r].kind is AgentKind.SENSOR)
                     for aid, relays in self.world.relay_paths().items()}
        self.assignment = assign_compromised(
            cfg.world.n_agents, eligible, cfg.adversary.fraction,
            cfg.mission_s, rng_stream(seed, "adversary"),
            activation_frac=cfg.adversary.activation_window,
            profile_cycle=cfg.adversary.profile_cycle,
            intensities=cfg.adversary.intensities,
            relay_paths=paths)
        self.adversary = AdversaryController(
            self.assignment, rng_stream(seed, "adversary-runtime"),
            ticks_per_interval=cfg.world.interval_s / cfg.world.duty_tick_s)
        self.world.adversary = self.adversary
        for aid in self.assignment.assigned:
            self.world.agents[aid].compromised = True

        self.cluster = ConsensusCluster(
            self.engine, ValidatorSet(cfg.consortium.validators),
            link_delay_s=cfg.consortium.link_delay_s,
            timeout_s=cfg.consortium.timeout_s)

        self._needs_features = (cfg.mode is Mode.INTERROGATOR) or collect_traces
        fparams = FeatureParams(*cfg.feature_norms())
        self.observers: dict[int, HostObserver] = {}
        self.rings: dict[int, dict[int, SequenceRing]] = {}
        if self._needs_features:
            for slot, host in enumerate(self.hosts):
                self.observers[host] = HostObserver(slot, cfg.interval_s, fparams)
                self.rings[host] = {aid: SequenceRing(cfg.monitoring.seq_len)
                                    for aid in self.world.agent_ids}

        init = 1.0 if cfg.mode is Mode.STATIC else cfg.trust.initial_trust
        self.records = {aid: TrustRecord(aid, init) for aid in self.world.agent_ids}
        self.enforcement = {aid: EnforcementState(aid) for aid in self.world.agent_ids}
        self.beta = BetaReputationTable()

        self.outcomes = {
            aid: DetectionOutcome(aid, prof.kind.value, prof.activation)
            for aid, prof in sorted(self.assignment.profiles.items())}
        self.rows: list[MetricsRow] = []
        self.confusion: list[Confusion] = []
        self.trace_rows: list[TraceRow] = []
        self.enforcement_lags: list[int] = []
        self._plog_ptr = 0
        self._churn_ptr = 0
        self._relays_by_interval: dict[int, set[int]] = {}
        self._last_vec: dict[tuple[int, int], np.ndarray] = {}

        self.manifest = manifest_dict(cfg, seed, run_id, self.assignment, self.hosts)

        for k in range(cfg.n_intervals):
            self.engine.schedule((k + 1) * cfg.interval_s,
                                 EventKind.WINDOW_CLOSE, {"interval": k})
        if cfg.mode is not Mode.STATIC:
            t = cfg.consortium.period_s
            while t <= cfg.mission_s:
                self.engine.schedule(t, EventKind.CONSENSUS_TICK, {})
                t += cfg.consortium.period_s
        self.engine.subscribe(EventKind.WINDOW_CLOSE, self._on_window_close)
        self.engine.subscribe(EventKind.CONSENSUS_TICK, self._on_consensus_tick)
        self.world.start(cfg.mission_s)

    # ------------------------------------------------------------------

    def run(self) -> RunResult:
        self.engine.run(until=self.cfg.mission_s)
        final_pdr = self.world.pdr()
        final_energy = self.world.mean_residual_energy()
        unresolved = self.world.unresolved_summary()
        # Let an in-flight ledger round land; no new windows or commits occur.
        self.engine.run(until=self.cfg.mission_s + CONSENSUS_GRACE_S)
        return RunResult(
            run_id=self.run_id, seed=self.seed, mode=self.cfg.mode.value,
            rows=self.rows, confusion=self.confusion,
            outcomes=[self.outcomes[aid] for aid in sorted(self.outcomes)],
            chain=self.cluster.chain, manifest=self.manifest,
            final_pdr=final_pdr if final_pdr is not None else math.nan,
            final_mean_residual_j=final_energy,
            events_processed=self.engine.events_processed,
            view_changes=self.cluster.view_changes,
            enforcement_lag_intervals=self.enforcement_lags,
            unresolved=unresolved, trace_rows=self.trace_rows)

    # ------------------------------------------------------------------
    # per-interval pipeline

    def _attack_active(self, aid: int, interval_index: int) -> bool:
        """Detection ground truth at window close: sticky campaign membership."""
        return self.adversary.campaign_active(
            aid, (interval_index + 1) * self.cfg.interval_s)

    def _on_window_close(self, engine: Engine, ev: Event) -> None:
        k: int = ev.data["interval"]
        now = engine.now
        settled = self.world.settle_outcomes(now)
        if self.cfg.mode is Mode.BAYESIAN:
            for relay, _deadline, success in settled:
                self.beta.record(relay, success)
        critical = self._feed_observers(k)
        if self._needs_features:
            for host in self.hosts:
                obs = self.observers[host]
                ringmap = self.rings[host]
                for aid in self.world.agent_ids:
                    vec = obs.close_window(aid, k)
                    ringmap[aid].push(k, vec)
                    self._last_vec[(host, aid)] = vec
        if self.collect_traces:
            self._collect_trace_rows(k)
        if self.cfg.enforcement:
            if self.cfg.mode is Mode.INTERROGATOR:
                self._score_interval(k, now, critical)
            elif self.cfg.mode is Mode.BAYESIAN:
                self._bayes_interval(k, now)
        self._emit_metrics(k)

    def _feed_observers(self, interval_index: int) -> set[int]:
        """Push new log entries into the observers; return this interval's
        mission-critical relays (agents that forwarded sensor data)."""
        log = self.world.packet_log
        interval_s = self.cfg.interval_s
        observers = list(self.observers.values())
        while self._plog_ptr < len(log):
            rec = log[self._plog_ptr]
            self._plog_ptr += 1
            for obs in observers:
                obs.on_record(rec)
            if (rec.kind is PacketKind.SENSOR_DATA and not rec.is_origination
                    and rec.channel_attempted):
                kk = int(rec.sent_at // interval_s)
                self._relays_by_interval.setdefault(kk, set()).add(rec.src)
        churn = self.world.churn_log
        while self._churn_ptr < len(churn):
            aid, t, count = churn[self._churn_ptr]
            self._churn_ptr += 1
            for obs in observers:
                obs.on_churn(aid, t, count)
        return self._relays_by_interval.pop(interval_index, set())

    # ------------------------------------------------------------------
    # interrogator path

    def _alive_hosts(self) -> list[int]:
        return [h for h in self.hosts if self.world.agents[h].alive]

    def _rank_hosts(self, aid: int, alive: list[int]) -> list[int]:
        pos = self.world.agents[aid].position
        return sorted(alive, key=lambda h: (
            float(np.linalg.norm(self.world.agents[h].position - pos)), h))

    def _score_batch_for_host(self, host: int, batch: list[int]) -> dict[int, float]:
        ringmap = self.rings[host]
        snaps = [ringmap[aid].snapshot() for aid in batch]
        x = np.stack([s[0] for s in snaps])
        valid = np.array([s[1] for s in snaps], dtype=np.int64)
        scores = self.scorer(x, valid)
        self.world.agents[host].consume(
            len(batch) * self.cfg.monitoring.e_inference_j, "interrogation")
        return {aid: float(np.clip(s, 0.0, 1.0)) for aid, s in zip(batch, scores)}

    def _score_interval(self, k: int, now: float, critical: set[int]) -> None:
        mon = self.cfg.monitoring
        if self.scorer is None or k < mon.warmup_intervals:
            return
        due: list[int] = []
        for aid in self.world.agent_ids:
            tier = self.enforcement[aid].tier
            if tier is Tier.ISOLATED:
                continue            # cut off: no fresh behavior to score
            if (tier is not Tier.NORMAL or aid in critical
                    or (k - aid) % mon.normal_stride == 0):
                due.append(aid)
        alive = self._alive_hosts()
        if not alive or not due:
            return
        primary: dict[int, int] = {}
        secondary: dict[int, Optional[int]] = {}
        for aid in due:
            ranked = self._rank_hosts(aid, alive)
            primary[aid] = ranked[0]
            secondary[aid] = ranked[1] if len(ranked) > 1 else None

        raw_primary: dict[int, float] = {}
        for host in self.hosts:
            batch = [aid for aid in due if primary[aid] == host]
            if batch:
                raw_primary.update(self._score_batch_for_host(host, batch))

        # Elevated tiers get an independent second opinion from the
        # next-nearest host's own observation stream.
        raw_secondary: dict[int, float] = {}
        for host in self.hosts:
            batch = [aid for aid in due
                     if self.enforcement[aid].tier is not Tier.NORMAL
                     and secondary[aid] == host]
            if batch:
                raw_secondary.update(self._score_batch_for_host(host, batch))

        for aid in due:
            rec = self.records[aid]
            tau_prev = rec.tau
            smooth_update(rec, raw_primary[aid], self.cfg.trust)
            self._enforce(aid, k, now, rec, raw_secondary.get(aid),
                          reporter=primary[aid], tau_delta=rec.tau - tau_prev)

    # ------------------------------------------------------------------
    # reputation baseline path

    def _bayes_interval(self, k: int, now: float) -> None:
        if k < self.cfg.monitoring.warmup_intervals:
            return
        params = self.cfg.trust
        for aid in self.world.agent_ids:
            if self.enforcement[aid].tier is Tier.ISOLATED:
                continue            # no new outcomes arrive for a cut-off agent
            if self.beta.observation_count(aid) < MIN_BAYES_OBSERVATIONS:
                continue
            rec = self.records[aid]
            tau_prev = rec.tau
            raw = self.beta.trust(aid)
            rec.tau = raw               # the posterior already carries history
            rec.raw_score = raw
            if rec.tau < params.tau_min:
                rec.persistence_below += 1
                rec.persistence_above = 0
            else:
                rec.persistence_above += 1
                rec.persistence_below = 0
            # No second observer exists in this baseline; the cross check
            # degenerates to trusting the single estimate.
            self._enforce(aid, k, now, rec, secondary_raw=raw,
                          reporter=-1, tau_delta=rec.tau - tau_prev)

    # ------------------------------------------------------------------
    # enforcement and bookkeeping

    def _enforce(self, aid: int, k: int, now: float, rec: TrustRecord,
                 secondary_raw: Optional[float], reporter: int,
                 tau_delta: float) -> None:
        state = self.enforcement[aid]
        old = state.tier
        enforce_transition(state, rec, self.cfg.trust, self.cluster,
                           secondary_raw=secondary_raw, interval_index=k,
                           reporter=reporter, tau_delta=tau_delta, now=now,
                           auto_recover=self.cfg.consortium.auto_recover)
        new = state.tier
        if new is old:
            return
        outcome = self.outcomes.get(aid)
        if new is Tier.INTERROGATION:
            if outcome and not math.isfinite(outcome.first_interrogation_s):
                outcome.first_interrogation_s = now
        elif new is Tier.LOCALLY_CONSTRAINED:
            self.world.exclude(aid)
            self.world.throttle(aid, state.throttle_factor)
            # Constraint lands in the same window close that decided it.
            self.enforcement_lags.append(0)
            if outcome and not math.isfinite(outcome.first_constrained_s):
                outcome.first_constrained_s = now
        elif new is Tier.ISOLATED:
            self.world.isolate(aid, now)
            if outcome and not math.isfinite(outcome.first_isolated_s):
                outcome.first_isolated_s = now
        elif new is Tier.RECOVERED and old in (Tier.LOCALLY_CONSTRAINED,
                                               Tier.ISOLATED):
            self.world.reinstate(aid)

    def _collect_trace_rows(self, k: int) -> None:
        alive = self._alive_hosts()
        if not alive:
            return
        # A window is an attack example iff the profile visibly acted within
        # the window's time span: labels assert evidence, not intent. A
        # dormant attacker's window is genuinely benign-looking and
        # labelling it hostile would only teach the scorer noise.
        interval_s = self.cfg.interval_s
        span_start = max(0.0, (k + 1 - self.cfg.monitoring.seq_len) * interval_s)
        span_end = (k + 1) * interval_s
        for aid in self.world.agent_ids:
            host = self._rank_hosts(aid, alive)[0]
            vec = self._last_vec[(host, aid)]
            label = 0 if self.adversary.expressed_in(aid, span_start, span_end) else 1
            self.trace_rows.append(TraceRow(
                self.run_id, self.seed, host, aid, k, label,
                tuple(float(v) for v in vec)))

    def _emit_metrics(self, k: int) -> None:
        tau_min = self.cfg.trust.tau_min
        population = self.world.agent_ids
        # Predicted-attack means currently distrusted: low smoothed trust or
        # an engaged containment tier. A quarantined agent stays predicted
        # even though no fresh evidence arrives from it.
        predicted = [aid for aid in population
                     if self.records[aid].tau < tau_min
                     or self.enforcement[aid].tier in (Tier.LOCALLY_CONSTRAINED,
                                                       Tier.ISOLATED)]
        actual = [aid for aid in population if self._attack_active(aid, k)]
        conf = classify(predicted, actual, population)
        self.confusion.append(conf)
        flagged = sum(1 for aid in population
                      if self.enforcement[aid].tier in
                      (Tier.LOCALLY_CONSTRAINED, Tier.ISOLATED))
        pdr = self.world.pdr()
        self.rows.append(MetricsRow(
            run_id=self.run_id, seed=self.seed, interval_index=k,
            mode=self.cfg.mode.value,
            accuracy=accuracy(conf), precision=precision(conf),
            recall=recall(conf),
            mean_residual_energy_J=self.world.mean_residual_energy(),
            pdr_cumulative=pdr if pdr is not None else math.nan,
            flagged_count=flagged,
            excluded_count=len(self.world.routing_exclusions),
            isolated_count=len(self.world.isolated),
            false_positive_count=conf.fp))

    def _on_consensus_tick(self, engine: Engine, ev: Event) -> None:
        if self.cfg.mode is Mode.STATIC:
            return
        for host in self.hosts:
            if self.world.agents[host].kind is not AgentKind.GATEWAY:
                self.world.send_summary(host, engine.now)
        self.cluster.begin_round()
