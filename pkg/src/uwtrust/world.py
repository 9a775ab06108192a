"""Physical and operational model of the underwater network.

Agents are static seafloor sensors, mobile AUV relays, and surface gateways.
Packets travel hop by hop over a lossy acoustic channel toward a gateway;
routing is greedy geographic with a progress requirement. Energy is metered
per transmission and per decision. All randomness comes from labeled RNG
streams owned by the caller, so runs replay exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .kernel import Engine, EventKind, SimTime


class AgentKind(Enum):
    SENSOR = "static-sensor"
    AUV = "mobile-auv"
    GATEWAY = "surface-gateway"


class PacketKind(Enum):
    SENSOR_DATA = "sensor-data"
    ROUTING_CONTROL = "routing-control"   # reserved; control plane is abstracted
    TRUST_SUMMARY = "trust-summary"
    ACK = "ack"                           # reserved; outcomes use overhearing

class DropReason(Enum):
    OUT_OF_RANGE = "out-of-range"
    CHANNEL_LOSS = "channel-loss"
    EXPIRED = "expired"
    MALICIOUS_DROP = "malicious-drop"
    HOP_LIMIT = "hop-limit"
    IGNORED = "ignored"
    DEAD = "dead"


@dataclass(frozen=True)
class ChannelParams:
    rate_bps: int = 15000              # acoustic modem rate, within [10k, 20k]
    prop_delay_s_per_km: float = 0.67
    base_loss_prob: float = 0.05
    loss_per_km: float = 0.05
    comm_range_m: float = 300.0        # short enough that relaying is the norm

    def __post_init__(self) -> None:
        if not 10_000 <= self.rate_bps <= 20_000:
            raise ValueError(f"rate_bps {self.rate_bps} outside [10000, 20000]")
        if not 0.0 <= self.base_loss_prob <= 1.0:
            raise ValueError("base_loss_prob outside [0, 1]")
        if self.loss_per_km < 0 or self.comm_range_m <= 0 or self.prop_delay_s_per_km < 0:
            raise ValueError("channel parameters must be non-negative")


@dataclass(frozen=True)
class EnergyParams:
    e_elec: float = 5e-8     # J/bit electronics cost
    eps_amp: float = 1e-10   # J/bit/m^k amplifier cost
    k: float = 1.5           # spreading exponent
    e_sense: float = 1e-4    # J per sensing event
    e_compute: float = 2e-4  # J per local decision

    def __post_init__(self) -> None:
        if min(self.e_elec, self.eps_amp, self.e_sense, self.e_compute) <= 0:
            raise ValueError("energy parameters must be strictly positive")
        if self.k < 1:
            raise ValueError(f"path-loss exponent {self.k} below 1")


def propagation_delay(distance_m: float, ch: ChannelParams) -> SimTime:
    if distance_m < 0:
        raise ValueError(f"negative distance {distance_m}")
    return (distance_m / 1000.0) * ch.prop_delay_s_per_km


def transmission_delay(size_bits: int, ch: ChannelParams) -> SimTime:
    if size_bits <= 0:
        raise ValueError(f"non-positive packet size {size_bits}")
    return size_bits / ch.rate_bps


def loss_probability(distance_m: float, ch: ChannelParams) -> float:
    """Distance-linear Bernoulli loss, clamped to 0.95.

    A base loss of exactly 1 models a fully jammed channel and is not
    clamped, so saturation tests can force every transmission to fail.
    """
    if distance_m < 0:
        raise ValueError(f"negative distance {distance_m}")
    if ch.base_loss_prob >= 1.0:
        return 1.0
    p = ch.base_loss_prob + ch.loss_per_km * (distance_m / 1000.0)
    return min(0.95, max(0.0, p))


def tx_energy(size_bits: int, distance_m: float, ep: EnergyParams) -> float:
    if size_bits < 0 or distance_m < 0:
        raise ValueError("size and distance must be non-negative")
    return size_bits * ep.e_elec + size_bits * ep.eps_amp * distance_m**ep.k


@dataclass
class AgentState:
    agent_id: int
    kind: AgentKind
    position: np.ndarray               # (x, y, z) meters, z = depth
    residual_energy: float
    initial_energy: float
    duty_cycle: float = 1.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    neighbor_table: dict[int, SimTime] = field(default_factory=dict)
    compromised: bool = False
    alive: bool = True
    waypoint: Optional[np.ndarray] = None
    speed: float = 0.0
    spent_by_category: dict[str, float] = field(default_factory=dict)

    def consume(self, joules: float, category: str) -> float:
        """Deduct energy, clamping at zero. Depletion kills the agent."""
        if joules < 0:
            raise ValueError("negative consumption")
        if not self.alive:
            return 0.0
        applied = min(joules, self.residual_energy)
        self.residual_energy -= applied
        self.spent_by_category[category] = self.spent_by_category.get(category, 0.0) + applied
        if self.residual_energy <= 0.0:
            self.residual_energy = 0.0
            self.alive = False
        return applied


@dataclass
class PacketRecord:
    packet_id: int                     # unique per record in honest operation
    src: int
    dst: int                           # next hop
    origin: int
    final_dst: int
    size_bits: int
    kind: PacketKind
    sent_at: SimTime
    origin_packet_id: int              # id of the origination record of this chain
    hop_index: int = 0
    delivered_at: Optional[SimTime] = None
    retransmission_of: Optional[int] = None
    dropped_reason: Optional[DropReason] = None
    is_origination: bool = False
    channel_attempted: bool = True     # False for ghost records (silent drops etc.)
    observed_by: int = 0               # bitmask over interrogator host slots

    def resolved(self) -> bool:
        return self.delivered_at is not None or self.dropped_reason is not None


@dataclass(frozen=True)
class WorldParams:
    n_agents: int = 50
    auv_fraction: float = 0.24
    area_m: tuple[float, float] = (1000.0, 1000.0)
    sensor_depth_m: tuple[float, float] = (50.0, 200.0)
    auv_depth_m: tuple[float, float] = (10.0, 200.0)
    auv_speed_ms: tuple[float, float] = (0.5, 2.0)
    n_gateways: int = 2
    sensor_battery_j: float = 500.0
    auv_battery_j: float = 5000.0
    gateway_battery_j: float = 1e9
    data_bits: int = 2000
    summary_bits: int = 512
    interval_s: float = 30.0                # monitoring interval the rates refer to
    sensor_rate_per_interval: float = 1.0   # expected originations per interval
    auv_rate_per_interval: float = 0.5
    duty_tick_s: float = 6.0
    mobility_tick_s: float = 5.0
    max_retries: int = 2
    retry_backoff_s: float = 2.0
    buffer_expiry_s: float = 120.0
    max_hops: int = 20
    monitor_range_m: Optional[float] = None  # None: hosts can overhear anything

    def __post_init__(self) -> None:
        if self.n_agents < 2 or self.n_gateways < 1:
            raise ValueError("need at least 2 agents and 1 gateway")
        if not 0.0 <= self.auv_fraction < 1.0:
            raise ValueError("auv_fraction outside [0, 1)")


class World:
    """Owns agents, the channel, the packet log, and all transport mechanics.

    Enforcement state (exclusions, throttles, isolation) is plain data set
    by the governance layer; the world only consults it. Adversarial behavior
    is injected through the `adversary` hook, which is consulted at traffic
    generation and at every forwarding decision.
    """

    def __init__(self, params: WorldParams, channel: ChannelParams,
                 energy: EnergyParams, engine: Engine,
                 rng_deploy: np.random.Generator,
                 rng_mobility: np.random.Generator,
                 rng_channel: np.random.Generator,
                 rng_traffic: np.random.Generator) -> None:
        self.params = params
        self.channel = channel
        self.energy = energy
        self.engine = engine
        self.rng_mobility = rng_mobility
        self.rng_channel = rng_channel
        self.rng_traffic = rng_traffic

        self.agents: dict[int, AgentState] = {}
        self.gateway_ids: list[int] = []
        self.agent_ids: list[int] = []          # underwater agents, excludes gateways
        self.monitor_hosts: list[int] = []       # interrogator host ids, slot order
        self.monitoring_enabled = False

        self.routing_exclusions: set[int] = set()   # not chosen as relays
        self.throttled: dict[int, float] = {}       # origination admission factor
        self.isolated: set[int] = set()             # cut off entirely
        self.adversary = None                       # duck-typed controller hook

        self.packet_log: list[PacketRecord] = []
        self.churn_log: list[tuple[int, SimTime, int]] = []
        self._next_packet_id = 0
        self._buffers: dict[int, list[tuple[PacketRecord, SimTime]]] = {}
        self._chain_path: dict[int, list[int]] = {}    # origin pkt id -> relay path
        self._origin_pids: set[int] = set()     # real origination chain ids
        self._origin_delivered: set[int] = set()
        self.originated_data: int = 0
        self._forward_emissions: dict[tuple[int, int], SimTime] = {}
        self._pending_outcomes: list[tuple[int, int, SimTime]] = []
        self.outcome_log: list[tuple[int, SimTime, bool]] = []   # relay, time, success

        self._deploy(rng_deploy)
        engine.subscribe(EventKind.DUTY_CYCLE_TICK, self._on_duty_tick)
        engine.subscribe(EventKind.MOBILITY_TICK, self._on_mobility_tick)
        engine.subscribe(EventKind.PACKET_ARRIVAL, self._on_arrival)
        engine.subscribe(EventKind.RETRY, self._on_retry)

    # ------------------------------------------------------------------
    # deployment and schedule

    def _deploy(self, rng: np.random.Generator) -> None:
        p = self.params
        n_auv = int(round(p.auv_fraction * p.n_agents))
        ax, ay = p.area_m
        for i in range(p.n_agents):
            if i < n_auv:
                kind, battery = AgentKind.AUV, p.auv_battery_j
                depth_lo, depth_hi = p.auv_depth_m
            else:
                kind, battery = AgentKind.SENSOR, p.sensor_battery_j
                depth_lo, depth_hi = p.sensor_depth_m
            pos = np.array([rng.uniform(0, ax), rng.uniform(0, ay),
                            rng.uniform(depth_lo, depth_hi)])
            self.agents[i] = AgentState(i, kind, pos, battery, battery)
            self.agent_ids.append(i)
        # Gateways sit on the surface, evenly spaced along the centerline.
        for g in range(p.n_gateways):
            gid = p.n_agents + g
            x = ax * (2 * g + 1) / (2 * p.n_gateways)
            pos = np.array([x, ay / 2.0, 0.0])
            self.agents[gid] = AgentState(gid, AgentKind.GATEWAY, pos,
                                          p.gateway_battery_j, p.gateway_battery_j)
            self.gateway_ids.append(gid)
        for a in self.agents.values():
            if a.kind is AgentKind.AUV:
                self._draw_waypoint(a)
        self.refresh_neighbors(at=0.0, log_churn=False)

    def start(self, mission_duration_s: float) -> None:
        t = self.params.duty_tick_s
        while t <= mission_duration_s:
            self.engine.schedule(t, EventKind.DUTY_CYCLE_TICK, {})
            t += self.params.duty_tick_s
        t = self.params.mobility_tick_s
        while t <= mission_duration_s:
            self.engine.schedule(t, EventKind.MOBILITY_TICK, {})
            t += self.params.mobility_tick_s

    def set_monitoring(self, host_ids: list[int]) -> None:
        if len(host_ids) != len(set(host_ids)):
            raise ValueError("duplicate monitor hosts")
        self.monitor_hosts = list(host_ids)
        self.monitoring_enabled = bool(host_ids)

    # ------------------------------------------------------------------
    # mobility and neighbor maintenance

    def _draw_waypoint(self, agent: AgentState) -> None:
        p = self.params
        agent.waypoint = np.array([
            self.rng_mobility.uniform(0, p.area_m[0]),
            self.rng_mobility.uniform(0, p.area_m[1]),
            self.rng_mobility.uniform(*p.auv_depth_m)])
        agent.speed = self.rng_mobility.uniform(*p.auv_speed_ms)

    def move_agents(self, dt: SimTime) -> None:
        if dt <= 0:
            raise ValueError(f"non-positive dt {dt}")
        for aid in self.agent_ids:
            agent = self.agents[aid]
            if agent.kind is not AgentKind.AUV or not agent.alive:
                continue
            delta = agent.waypoint - agent.position
            dist = float(np.linalg.norm(delta))
            step = agent.speed * dt
            if dist <= step:
                # Arrival consumes the tick; next leg starts from the waypoint.
                agent.position = agent.waypoint.copy()
                agent.velocity = np.zeros(3)
                self._draw_waypoint(agent)
            else:
                direction = delta / dist
                agent.position = agent.position + direction * step
                agent.velocity = direction * agent.speed

    def refresh_neighbors(self, at: SimTime, log_churn: bool = True) -> None:
        ids = [i for i, a in self.agents.items()
               if a.alive and i not in self.isolated]
        pos = np.array([self.agents[i].position for i in ids])
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        within = dist <= self.channel.comm_range_m
        for row, i in enumerate(ids):
            new = {ids[col] for col in np.nonzero(within[row])[0] if ids[col] != i}
            agent = self.agents[i]
            old = set(agent.neighbor_table)
            changes = len(new - old) + len(old - new)
            agent.neighbor_table = {n: at for n in new}
            if log_churn and changes:
                self.churn_log.append((i, at, changes))
        for i, a in self.agents.items():
            if i not in ids and a.neighbor_table:
                if log_churn:
                    self.churn_log.append((i, at, len(a.neighbor_table)))
                a.neighbor_table = {}

    def _on_mobility_tick(self, engine: Engine, ev) -> None:
        self.move_agents(self.params.mobility_tick_s)
        self.refresh_neighbors(at=engine.now)
        self._drain_buffers(engine.now)

    # ------------------------------------------------------------------
    # traffic generation

    def _on_duty_tick(self, engine: Engine, ev) -> None:
        p = self.params
        ticks_per_interval = p.interval_s / p.duty_tick_s
        for aid in self.agent_ids:
            agent = self.agents[aid]
            if not agent.alive or aid in self.isolated:
                continue
            rate = (p.sensor_rate_per_interval if agent.kind is AgentKind.SENSOR
                    else p.auv_rate_per_interval)
            prob = rate * agent.duty_cycle / ticks_per_interval
            if self.adversary is not None:
                prob *= self.adversary.rate_multiplier(aid, engine.now)
            prob *= self.throttled.get(aid, 1.0)
            if self.rng_traffic.random() < min(1.0, prob):
                self.originate(aid, engine.now)
            if self.adversary is not None:
                for stale in self.adversary.replay_ids(aid, engine.now):
                    self._emit_replay(aid, stale, engine.now)

    def nearest_gateway(self, aid: int) -> int:
        pos = self.agents[aid].position
        return min(self.gateway_ids,
                   key=lambda g: (float(np.linalg.norm(self.agents[g].position - pos)), g))

    def relay_paths(self) -> dict[int, tuple[int, ...]]:
        """Greedy path (intermediate relays only) per agent, as deployed.

        For each agent, follow next hops toward its nearest gateway at
        current positions. The paths expose how much forwarding duty the
        topology hands each relay and which relays share traffic.
        """
        paths: dict[int, tuple[int, ...]] = {}
        for aid in self.agent_ids:
            agent = self.agents[aid]
            if not agent.alive or aid in self.isolated:
                paths[aid] = ()
                continue
            gw = self.nearest_gateway(aid)
            exclusions = set(self.routing_exclusions)
            exclusions.discard(gw)
            cur, hops, relays = aid, 0, []
            while cur != gw and hops < self.params.max_hops:
                nxt = self.route_next_hop(cur, gw, exclusions)
                if nxt is None:
                    break
                if nxt != gw:
                    relays.append(nxt)
                cur, hops = nxt, hops + 1
            paths[aid] = tuple(relays)
        return paths

    def relay_census(self) -> dict[int, int]:
        """Transit counts per agent over all deploy-time greedy paths."""
        census = {aid: 0 for aid in self.agent_ids}
        for relays in self.relay_paths().values():
            for r in relays:
                census[r] += 1
        return census

    def originate(self, aid: int, now: SimTime) -> Optional[PacketRecord]:
        agent = self.agents[aid]
        gw = self.nearest_gateway(aid)
        agent.consume(self.energy.e_sense * agent.duty_cycle, "sense")
        agent.consume(self.energy.e_compute, "compute")
        if not agent.alive:
            return None
        pid = self._fresh_packet_id()
        rec = PacketRecord(packet_id=pid, src=aid, dst=-1, origin=aid, final_dst=gw,
                           size_bits=self.params.data_bits, kind=PacketKind.SENSOR_DATA,
                           sent_at=now, origin_packet_id=pid, is_origination=True)
        self.originated_data += 1
        self._origin_pids.add(pid)
        self._chain_path[pid] = [aid]
        if self.adversary is not None:
            self.adversary.note_origination(aid, now)
        self._dispatch(rec, now)
        return rec

    def send_summary(self, host: int, now: SimTime) -> Optional[PacketRecord]:
        """Trust summary uplink from an interrogator host toward its gateway."""
        agent = self.agents[host]
        if not agent.alive:
            return None
        if agent.kind is AgentKind.GATEWAY:
            return None                     # already on the surface backbone
        gw = self.nearest_gateway(host)
        agent.consume(self.energy.e_compute, "compute")
        pid = self._fresh_packet_id()
        rec = PacketRecord(packet_id=pid, src=host, dst=-1, origin=host, final_dst=gw,
                           size_bits=self.params.summary_bits,
                           kind=PacketKind.TRUST_SUMMARY, sent_at=now,
                           origin_packet_id=pid, is_origination=True)
        self._chain_path[pid] = [host]
        self._dispatch(rec, now)
        return rec

    def _emit_replay(self, aid: int, stale_packet_id: int, now: SimTime) -> None:
        """Re-send a previously handled packet id verbatim (protocol violation)."""
        agent = self.agents[aid]
        gw = self.nearest_gateway(aid)
        rec = PacketRecord(packet_id=stale_packet_id, src=aid, dst=-1, origin=aid,
                           final_dst=gw, size_bits=self.params.data_bits,
                           kind=PacketKind.SENSOR_DATA, sent_at=now,
                           origin_packet_id=stale_packet_id)
        agent.consume(self.energy.e_compute, "compute")
        self._dispatch(rec, now)

    # ------------------------------------------------------------------
    # routing

    def route_next_hop(self, aid: int, final_dst: int,
                       exclusions: set[int]) -> Optional[int]:
        agent = self.agents[aid]
        if not agent.alive:
            raise ValueError(f"routing for dead agent {aid}")
        target = self.agents[final_dst].position
        own = float(np.linalg.norm(agent.position - target))
        best: Optional[int] = None
        best_d = own                      # progress required: strictly closer
        for nid in sorted(agent.neighbor_table):
            if nid in exclusions or nid == aid:
                continue
            nb = self.agents[nid]
            if not nb.alive or nid in self.isolated:
                continue
            d = float(np.linalg.norm(nb.position - target))
            if d < best_d:                # sorted ids make ties pick the lowest
                best, best_d = nid, d
        return best

    def _choose_hop(self, aid: int, rec: PacketRecord, now: SimTime) -> Optional[int]:
        exclusions = set(self.routing_exclusions)
        exclusions.discard(rec.final_dst)
        hop = self.route_next_hop(aid, rec.final_dst, exclusions)
        if self.adversary is not None and hop is not None:
            hop = self.adversary.override_next_hop(aid, rec, hop, now, self)
        return hop

    def _dispatch(self, rec: PacketRecord, now: SimTime) -> None:
        """Pick a next hop for a fresh record and transmit or buffer it."""
        hop = self._choose_hop(rec.src, rec, now)
        if hop is None:
            self._buffers.setdefault(rec.src, []).append((rec, now))
            rec.channel_attempted = False
            return
        rec.dst = hop
        self.transmit(rec, now, attempt=0)

    def _drain_buffers(self, now: SimTime) -> None:
        for aid in sorted(self._buffers):
            agent = self.agents[aid]
            remaining: list[tuple[PacketRecord, SimTime]] = []
            for rec, buffered_at in self._buffers[aid]:
                if not agent.alive or aid in self.isolated:
                    rec.dropped_reason = DropReason.DEAD if not agent.alive else DropReason.IGNORED
                    self.packet_log.append(rec)
                    continue
                if now - buffered_at > self.params.buffer_expiry_s:
                    rec.dropped_reason = DropReason.EXPIRED
                    self.packet_log.append(rec)
                    continue
                hop = self._choose_hop(aid, rec, now)
                if hop is None:
                    remaining.append((rec, buffered_at))
                else:
                    rec.dst = hop
                    rec.sent_at = now
                    rec.channel_attempted = True
                    self.transmit(rec, now, attempt=0)
            if remaining:
                self._buffers[aid] = remaining
            else:
                del self._buffers[aid]

    # ------------------------------------------------------------------
    # transmission

    def _fresh_packet_id(self) -> int:
        pid = self._next_packet_id
        self._next_packet_id += 1
        return pid

    def _observe(self, rec: PacketRecord, src_pos: np.ndarray) -> int:
        """Which interrogator hosts overhear this transmission.

        Overhearing suffers the same distance-dependent loss as reception,
        so distinct hosts genuinely see different samples of the traffic.
        Draw order is fixed (host slot order) for replay determinism.
        """
        if not self.monitoring_enabled:
            return 0
        mask = 0
        for slot, hid in enumerate(self.monitor_hosts):
            if hid == rec.src:
                mask |= 1 << slot
                continue
            host = self.agents[hid]
            if not host.alive:
                continue
            d = float(np.linalg.norm(host.position - src_pos))
            if self.params.monitor_range_m is not None and d > self.params.monitor_range_m:
                continue
            if self.rng_channel.random() >= loss_probability(d, self.channel):
                mask |= 1 << slot
        return mask

    def transmit(self, rec: PacketRecord, now: SimTime, attempt: int) -> None:
        src = self.agents[rec.src]
        if not src.alive:
            rec.dropped_reason = DropReason.DEAD
            rec.channel_attempted = False
            self.packet_log.append(rec)
            return
        dst = self.agents[rec.dst]
        d = float(np.linalg.norm(dst.position - src.position))
        rec.sent_at = now
        rec.observed_by = self._observe(rec, src.position)
        self.packet_log.append(rec)
        self._note_forward_emission(rec, now)
        if self.adversary is not None:
            self.adversary.note_send(rec.src, rec.packet_id)
        # The radio fires whatever happens next: energy goes first.
        demand = tx_energy(rec.size_bits, d, self.energy)
        applied = src.consume(demand, "tx")
        if applied < demand:
            rec.dropped_reason = DropReason.DEAD
            return
        if not dst.alive:
            rec.dropped_reason = DropReason.DEAD
            return
        if d > self.channel.comm_range_m:
            rec.dropped_reason = DropReason.OUT_OF_RANGE
            return
        lost = self.rng_channel.random() < loss_probability(d, self.channel)
        if lost:
            rec.dropped_reason = DropReason.CHANNEL_LOSS
            if attempt < self.params.max_retries:
                self.engine.schedule(now + self.params.retry_backoff_s, EventKind.RETRY,
                                     {"rec": rec, "attempt": attempt + 1})
            return
        delay = transmission_delay(rec.size_bits, self.channel) + \
            propagation_delay(d, self.channel)
        self.engine.schedule(now + delay, EventKind.PACKET_ARRIVAL, {"rec": rec})

    def _note_forward_emission(self, rec: PacketRecord, now: SimTime) -> None:
        if rec.kind is not PacketKind.SENSOR_DATA or rec.is_origination:
            return
        key = (rec.src, rec.origin_packet_id)
        self._forward_emissions.setdefault(key, now)

    def _on_retry(self, engine: Engine, ev) -> None:
        prev: PacketRecord = ev.data["rec"]
        attempt: int = ev.data["attempt"]
        src = self.agents[prev.src]
        if not src.alive or prev.src in self.isolated:
            return
        first = prev.retransmission_of if prev.retransmission_of is not None else prev.packet_id
        rec = PacketRecord(packet_id=self._fresh_packet_id(), src=prev.src, dst=prev.dst,
                           origin=prev.origin, final_dst=prev.final_dst,
                           size_bits=prev.size_bits, kind=prev.kind, sent_at=engine.now,
                           origin_packet_id=prev.origin_packet_id,
                           hop_index=prev.hop_index, retransmission_of=first,
                           is_origination=prev.is_origination)
        self.transmit(rec, engine.now, attempt=attempt)

    # ------------------------------------------------------------------
    # reception and forwarding

    def _on_arrival(self, engine: Engine, ev) -> None:
        rec: PacketRecord = ev.data["rec"]
        receiver = self.agents[rec.dst]
        if not receiver.alive:
            rec.dropped_reason = DropReason.DEAD
            return
        if rec.dst in self.isolated:
            rec.dropped_reason = DropReason.IGNORED
            return
        rec.delivered_at = engine.now
        if rec.kind is PacketKind.SENSOR_DATA:
            path = self._chain_path.setdefault(rec.origin_packet_id, [])
            if rec.dst not in path:
                path.append(rec.dst)
        if rec.dst == rec.final_dst:
            # Replayed stale ids can reference forward records, not chains;
            # only genuine originations count toward delivery.
            if rec.kind is PacketKind.SENSOR_DATA \
                    and rec.origin_packet_id in self._origin_pids:
                self._origin_delivered.add(rec.origin_packet_id)
            return
        self._forward(rec, engine.now)

    def _expected_hop_delay(self) -> float:
        return (transmission_delay(self.params.data_bits, self.channel) +
                propagation_delay(self.channel.comm_range_m, self.channel))

    def _forward(self, rec: PacketRecord, now: SimTime) -> None:
        relay_id = rec.dst
        relay = self.agents[relay_id]
        if rec.kind is PacketKind.SENSOR_DATA:
            self._pending_outcomes.append(
                (relay_id, rec.origin_packet_id, now + 3.0 * self._expected_hop_delay()))
        if rec.hop_index + 1 > self.params.max_hops:
            ghost = self._ghost(rec, relay_id, now, DropReason.HOP_LIMIT)
            self.packet_log.append(ghost)
            return
        relay.consume(self.energy.e_compute, "compute")
        if not relay.alive:
            return
        if self.adversary is not None and \
                self.adversary.drops_packet(relay_id, rec, now, self):
            ghost = self._ghost(rec, relay_id, now, DropReason.MALICIOUS_DROP)
            self.packet_log.append(ghost)
            return
        fwd = PacketRecord(packet_id=self._fresh_packet_id(), src=relay_id, dst=-1,
                           origin=rec.origin, final_dst=rec.final_dst,
                           size_bits=rec.size_bits, kind=rec.kind, sent_at=now,
                           origin_packet_id=rec.origin_packet_id,
                           hop_index=rec.hop_index + 1)
        self._dispatch(fwd, now)

    def _ghost(self, rec: PacketRecord, holder: int, now: SimTime,
               reason: DropReason) -> PacketRecord:
        """Record a packet that died inside a node without ever being sent."""
        return PacketRecord(packet_id=self._fresh_packet_id(), src=holder, dst=rec.final_dst,
                            origin=rec.origin, final_dst=rec.final_dst,
                            size_bits=rec.size_bits, kind=rec.kind, sent_at=now,
                            origin_packet_id=rec.origin_packet_id,
                            hop_index=rec.hop_index + 1, dropped_reason=reason,
                            channel_attempted=False)

    # ------------------------------------------------------------------
    # outcome bookkeeping (consumed by the reputation baseline)

    def settle_outcomes(self, now: SimTime) -> list[tuple[int, SimTime, bool]]:
        """Resolve forwarding outcomes whose observation deadline passed.

        An entrusted packet counts as a success when the relay emitted a
        forward of the same chain (overheard attempt, delivered or not)
        before the deadline.
        """
        due = [(r, opid, dl) for (r, opid, dl) in self._pending_outcomes if dl <= now]
        if not due:
            return []
        self._pending_outcomes = [(r, opid, dl) for (r, opid, dl)
                                  in self._pending_outcomes if dl > now]
        settled = []
        for relay, opid, deadline in due:
            emitted = self._forward_emissions.get((relay, opid))
            success = emitted is not None and emitted <= deadline
            entry = (relay, deadline, success)
            settled.append(entry)
            self.outcome_log.append(entry)
        return settled

    # ------------------------------------------------------------------
    # governance hooks

    def exclude(self, aid: int) -> None:
        self.routing_exclusions.add(aid)

    def throttle(self, aid: int, factor: float) -> None:
        self.throttled[aid] = factor

    def isolate(self, aid: int, now: SimTime) -> None:
        self.isolated.add(aid)
        self.routing_exclusions.add(aid)
        for agent in self.agents.values():
            agent.neighbor_table.pop(aid, None)
        self.agents[aid].neighbor_table = {}

    def reinstate(self, aid: int) -> None:
        self.isolated.discard(aid)
        self.routing_exclusions.discard(aid)
        self.throttled.pop(aid, None)

    # ------------------------------------------------------------------
    # summary queries

    def pdr(self) -> Optional[float]:
        if self.originated_data == 0:
            return None
        return len(self._origin_delivered) / self.originated_data

    def unresolved_summary(self) -> dict[str, int]:
        """Packets neither delivered nor dropped when the mission ended."""
        buffered = sum(len(v) for v in self._buffers.values())
        in_flight = sum(1 for r in self.packet_log
                        if r.channel_attempted and not r.resolved())
        return {"buffered": buffered, "in_flight": in_flight}

    def mean_residual_energy(self) -> float:
        vals = [self.agents[i].residual_energy for i in self.agent_ids]
        return float(np.mean(vals))

    def energy_books_balance(self, rel_tol: float = 1e-9) -> bool:
        for aid in self.agent_ids:
            a = self.agents[aid]
            spent = sum(a.spent_by_category.values())
            drawn = a.initial_energy - a.residual_energy
            if not math.isclose(spent, drawn, rel_tol=rel_tol, abs_tol=1e-12):
                return False
        return True
