"""Compromised-agent behavior profiles and their injection hooks.

A compromised agent runs the exact benign code path until its activation
time; afterwards the controller perturbs traffic generation, forwarding,
and routing decisions according to the agent's profile. Ground-truth
labels live here and are visible only to trace generation and metrics,
never to trust inference.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .kernel import SimTime
from .world import PacketRecord, World


class AttackKind(Enum):
    SELECTIVE_DROP = "selective-drop"
    ROUTE_MANIPULATION = "route-manipulation"
    TRANSMISSION_BURST = "transmission-burst"
    REPLAY = "replay"
    COORDINATED_INSIDER = "coordinated-insider"


DEFAULT_INTENSITIES: dict[AttackKind, float] = {
    AttackKind.SELECTIVE_DROP: 0.85,     # drop probability per relayed packet
    AttackKind.ROUTE_MANIPULATION: 0.7,  # probability of anti-greedy next hop
    AttackKind.TRANSMISSION_BURST: 4.0,  # traffic rate multiplier
    AttackKind.REPLAY: 1.0,              # replayed packets per interval
    AttackKind.COORDINATED_INSIDER: 0.85,  # drop probability when coordinated
}

# Profile cycle for default assignments; drop-type attackers lead because
# they drive the delivery-ratio story, and insiders come in pairs so the
# coordination condition can actually be met.
DEFAULT_PROFILE_CYCLE: tuple[AttackKind, ...] = (
    AttackKind.SELECTIVE_DROP,
    AttackKind.TRANSMISSION_BURST,
    AttackKind.REPLAY,
    AttackKind.ROUTE_MANIPULATION,
    AttackKind.SELECTIVE_DROP,
    AttackKind.COORDINATED_INSIDER,
    AttackKind.COORDINATED_INSIDER,
    AttackKind.SELECTIVE_DROP,
)

# Kinds that act on transit traffic. They are inert on an agent nobody
# routes through, so targeted placement gives them the busiest relay spots.
TRANSIT_KINDS = frozenset({AttackKind.SELECTIVE_DROP,
                           AttackKind.ROUTE_MANIPULATION,
                           AttackKind.COORDINATED_INSIDER})

# Busiest spots go to plain droppers first: an insider only fires when a
# peer shares the path, so it wastes a prime position more often than not.
_TRANSIT_PRIORITY = {AttackKind.SELECTIVE_DROP: 0,
                     AttackKind.ROUTE_MANIPULATION: 1,
                     AttackKind.COORDINATED_INSIDER: 2}


@dataclass(frozen=True)
class AttackProfile:
    kind: AttackKind
    activation: SimTime
    intensity: float
    group: Optional[int] = None

    def __post_init__(self) -> None:
        if self.activation < 0:
            raise ValueError("activation before mission start")
        if self.kind is AttackKind.TRANSMISSION_BURST:
            if self.intensity < 1.0:
                raise ValueError("burst multiplier below 1 is not a burst")
        elif self.kind is AttackKind.REPLAY:
            if self.intensity < 0:
                raise ValueError("negative replay rate")
        elif not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"{self.kind.value} intensity outside [0, 1]")
        if self.kind is AttackKind.COORDINATED_INSIDER and self.group is None:
            raise ValueError("insider profile needs a group id")


@dataclass
class CompromiseAssignment:
    fraction: float
    assigned: frozenset[int]
    profiles: dict[int, AttackProfile]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _targeted_pairs(kinds: list[AttackKind], eligible: set[int],
                    relay_paths: Mapping[int, Sequence[int]],
                    rng: np.random.Generator) -> list[tuple[int, AttackKind]]:
    """Place transit kinds on the busiest relays, roaming kinds uniformly.

    Insiders are placed pairwise on the two relays sharing the most origin
    paths, so the coordination condition fires on real traffic: the
    upstream member relays honestly, the downstream member sees its
    partner on the chain path and kills the packet. With no shared-path
    pair they fall back to rank order and stay behaviorally inert, which
    the ground truth then reflects.
    """
    census: dict[int, int] = {}
    for relays in relay_paths.values():
        for r in relays:
            if r in eligible:
                census[r] = census.get(r, 0) + 1
    transit = sorted((k for k in kinds if k in TRANSIT_KINDS),
                     key=lambda k: _TRANSIT_PRIORITY[k])
    insiders = [k for k in transit if k is AttackKind.COORDINATED_INSIDER]
    solo = [k for k in transit if k is not AttackKind.COORDINATED_INSIDER]
    roaming = [k for k in kinds if k not in TRANSIT_KINDS]
    ranked = sorted(eligible, key=lambda a: (-census.get(a, 0), a))
    pairs: list[tuple[int, AttackKind]] = []
    used: set[int] = set()

    def next_ranked() -> int:
        return next(a for a in ranked if a not in used)

    def place(aid: int, kind: AttackKind) -> None:
        pairs.append((aid, kind))
        used.add(aid)

    # The pair must be reserved before the rank walk: co-occurring relays
    # are rare and tend to also hold the top census slots.
    if len(insiders) >= 2:
        co: dict[tuple[int, int], int] = {}
        for relays in relay_paths.values():
            rs = [r for r in relays if r in eligible]
            for i in range(len(rs)):
                for j in range(i + 1, len(rs)):
                    if rs[i] != rs[j]:
                        key = (rs[i], rs[j])
                        co[key] = co.get(key, 0) + 1
        if co:
            (a, b), _ = max(co.items(),
                            key=lambda kv: (kv[1], -kv[0][0], -kv[0][1]))
            place(a, insiders.pop())
            place(b, insiders.pop())
    for kind in solo:
        place(next_ranked(), kind)
    for kind in insiders:
        anchors = {a for a, k in pairs
                   if k is AttackKind.COORDINATED_INSIDER}
        cands: set[int] = set()
        for relays in relay_paths.values():
            on = set(relays)
            if on & anchors:
                cands |= on
        cands = (cands & eligible) - used
        place(max(cands, key=lambda a: (census.get(a, 0), -a))
              if cands else next_ranked(), kind)
    rest = sorted(eligible - used)
    roamers = [int(a) for a in rng.choice(rest, size=len(roaming),
                                          replace=False)] if roaming else []
    return pairs + list(zip(roamers, roaming))


def assign_compromised(n_agents: int, eligible: set[int], fraction: float,
                       mission_duration_s: float, rng: np.random.Generator,
                       activation_frac: tuple[float, float] = (0.2, 0.4),
                       profile_cycle: tuple[AttackKind, ...] = DEFAULT_PROFILE_CYCLE,
                       intensities: Optional[dict[AttackKind, float]] = None,
                       relay_paths: Optional[Mapping[int, Sequence[int]]] = None,
                       ) -> CompromiseAssignment:
    """Pick which agents are compromised and what each one will do.

    With deploy-time transit paths (agent -> relays on its greedy route),
    transit attack kinds land on the busiest targetable relays and the
    remaining kinds on uniformly drawn agents: an adversary who bothers to
    compromise forwarding behavior picks nodes that actually forward.
    Without paths every pick is uniform.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1)")
    count = round_half_up(fraction * n_agents)
    if count > len(eligible):
        raise ValueError(f"cannot compromise {count} of {len(eligible)} eligible agents")
    inten = dict(DEFAULT_INTENSITIES)
    if intensities:
        inten.update(intensities)
    if count == 0:
        return CompromiseAssignment(fraction, frozenset(), {})
    kinds = [profile_cycle[i % len(profile_cycle)] for i in range(count)]
    if relay_paths is None:
        chosen = [int(a) for a in rng.choice(sorted(eligible), size=count,
                                             replace=False)]
        pairs = list(zip(chosen, kinds))
    else:
        pairs = _targeted_pairs(kinds, set(eligible), relay_paths, rng)
    profiles: dict[int, AttackProfile] = {}
    for aid, kind in pairs:
        activation = rng.uniform(*activation_frac) * mission_duration_s
        group = 0 if kind is AttackKind.COORDINATED_INSIDER else None
        profiles[aid] = AttackProfile(kind, activation, inten[kind], group)
    return CompromiseAssignment(fraction, frozenset(profiles), profiles)


class AdversaryController:
    """Consulted by the world at traffic, forwarding, and routing points.

    Hooks return benign answers before activation, so a compromised agent
    is byte-for-byte indistinguishable from a benign one until it turns.
    """

    def __init__(self, assignment: CompromiseAssignment,
                 rng: np.random.Generator, ticks_per_interval: float) -> None:
        self.assignment = assignment
        self.rng = rng
        self.ticks_per_interval = ticks_per_interval
        self._sent_memory: dict[int, deque[int]] = {
            aid: deque(maxlen=256) for aid in assignment.profiles}
        self.drop_log: list[tuple[int, SimTime]] = []
        # Expressed actions, per agent in time order: moments the profile
        # visibly changed behavior (drop fired, replay emitted, override
        # changed a hop, burst origination). Ground truth for labels.
        self.expressed: dict[int, list[SimTime]] = {
            aid: [] for aid in assignment.profiles}
        self._insiders: dict[int, list[int]] = {}
        for aid, prof in assignment.profiles.items():
            if prof.kind is AttackKind.COORDINATED_INSIDER:
                self._insiders.setdefault(prof.group, []).append(aid)

    def _active(self, aid: int, now: SimTime) -> Optional[AttackProfile]:
        prof = self.assignment.profiles.get(aid)
        if prof is not None and now >= prof.activation:
            return prof
        return None

    # -- world hooks ----------------------------------------------------

    def note_send(self, aid: int, packet_id: int) -> None:
        mem = self._sent_memory.get(aid)
        if mem is not None:
            mem.append(packet_id)

    def note_origination(self, aid: int, now: SimTime) -> None:
        """Called when an agent originates data; bursts express through it."""
        prof = self._active(aid, now)
        if prof is not None and prof.kind is AttackKind.TRANSMISSION_BURST:
            self.expressed[aid].append(now)

    def rate_multiplier(self, aid: int, now: SimTime) -> float:
        prof = self._active(aid, now)
        if prof is not None and prof.kind is AttackKind.TRANSMISSION_BURST:
            return prof.intensity
        return 1.0

    def replay_ids(self, aid: int, now: SimTime) -> list[int]:
        prof = self._active(aid, now)
        if prof is None or prof.kind is not AttackKind.REPLAY:
            return []
        mem = self._sent_memory[aid]
        if not mem:
            return []
        if self.rng.random() < prof.intensity / self.ticks_per_interval:
            self.expressed[aid].append(now)
            return [mem[int(self.rng.integers(len(mem)))]]
        return []

    def drops_packet(self, relay: int, rec: PacketRecord, now: SimTime,
                     world: World) -> bool:
        prof = self._active(relay, now)
        if prof is None:
            return False
        if prof.kind is AttackKind.SELECTIVE_DROP:
            if self.rng.random() < prof.intensity:
                self.drop_log.append((relay, now))
                self.expressed[relay].append(now)
                return True
            return False
        if prof.kind is AttackKind.COORDINATED_INSIDER:
            members = set(self._insiders.get(prof.group, ()))
            on_route = set(world._chain_path.get(rec.origin_packet_id, ())) | {relay}
            if len(members & on_route) >= 2:
                if self.rng.random() < prof.intensity:
                    self.drop_log.append((relay, now))
                    self.expressed[relay].append(now)
                    return True
            return False
        return False

    def override_next_hop(self, aid: int, rec: PacketRecord, greedy: int,
                          now: SimTime, world: World) -> int:
        prof = self._active(aid, now)
        if prof is None or prof.kind is not AttackKind.ROUTE_MANIPULATION:
            return greedy
        if self.rng.random() >= prof.intensity:
            return greedy
        agent = world.agents[aid]
        target = world.agents[rec.final_dst].position
        worst, worst_d = greedy, -1.0
        for nid in sorted(agent.neighbor_table):
            nb = world.agents[nid]
            if nid == aid or not nb.alive or nid in world.isolated:
                continue
            d = float(np.linalg.norm(nb.position - target))
            if d > worst_d:
                worst, worst_d = nid, d
        if worst != greedy:
            self.expressed[aid].append(now)
        return worst

    # -- ground truth for labels and metrics ----------------------------

    def attack_active(self, aid: int, interval_start: SimTime,
                      interval_end: SimTime) -> bool:
        """Whether the agent misbehaved (or stood ready to) in the interval.

        Unconditional profiles count from activation. Insiders count only
        in intervals where the coordination condition actually fired, since
        an insider without a coordinating peer is behaviorally benign.
        """
        prof = self.assignment.profiles.get(aid)
        if prof is None or prof.activation > interval_start:
            return False
        if prof.kind is AttackKind.COORDINATED_INSIDER:
            return self.expressed_in(aid, interval_start, interval_end)
        return True

    def expressed_in(self, aid: int, t0: SimTime, t1: SimTime) -> bool:
        """Any expressed action in [t0, t1). Times are append-ordered."""
        times = self.expressed.get(aid)
        if not times:
            return False
        i = bisect_left(times, t0)
        return i < len(times) and times[i] < t1

    def first_expression(self, aid: int) -> Optional[SimTime]:
        times = self.expressed.get(aid)
        return times[0] if times else None

    def campaign_active(self, aid: int, t_end: SimTime) -> bool:
        """Sticky detection ground truth as of time t_end.

        An unconditional attacker counts from activation onward; containing
        it does not make it retroactively trustworthy. An insider counts
        from its first coordinated drop, and never counts if coordination
        never fired: a lone insider is behaviorally indistinguishable from
        a benign relay.
        """
        prof = self.assignment.profiles.get(aid)
        if prof is None:
            return False
        if prof.kind is AttackKind.COORDINATED_INSIDER:
            first = self.first_expression(aid)
            return first is not None and first < t_end
        return prof.activation < t_end

    def activation_time(self, aid: int) -> Optional[SimTime]:
        prof = self.assignment.profiles.get(aid)
        return None if prof is None else prof.activation
