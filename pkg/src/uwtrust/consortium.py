"""Surface consortium: PBFT validators, hash-chained trust ledger, enforcement.

Validators live on surface infrastructure and exchange messages over
reliable 50 ms links inside the same event loop as the acoustic network.
Consensus carries only aggregated trust deltas and security events, never
raw feature sequences. Underwater forwarding decisions read local
enforcement state only; they never wait on a consensus round.

Canonical block serialization (all little-endian, hashed with SHA-256):

    block  := u64 height | 32B prev_hash | f64 timestamp
              | u32 n_commits | commit*
    commit := i32 agent | i64 interval_index | f64 tau_delta
              | u8 event_code | i32 reporter
    event_code: 0 none, 1 Flagged, 2 Excluded, 3 Isolated, 4 Reinstated

The genesis block's prev_hash is 32 zero bytes. `verify_chain` recomputes
every digest and link and reports the first height that fails.

The PBFT round is the standard three-phase exchange (pre-prepare, prepare,
commit) with quorum ceil((n+f+1)/2); the block travels inside the
pre-prepare, so a validator that reaches commit quorum has the content.
View change is deliberately simple: a round timer fires, the primary
rotates, and the new primary re-proposes the pending batch. There are no
new-view certificates, which is sound for the fault modes injected here
(silent validators and an equivocating primary) because commit messages
from honest validators always reach everyone.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .kernel import Engine, Event, EventKind, SimTime

GENESIS_PREV = b"\x00" * 32


@dataclass(frozen=True)
class ValidatorSet:
    n: int = 9

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("need at least one validator")

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    @property
    def quorum(self) -> int:
        return math.ceil((self.n + self.f + 1) / 2)


class CommitEvent(Enum):
    FLAGGED = 1
    EXCLUDED = 2
    ISOLATED = 3
    REINSTATED = 4


@dataclass(frozen=True)
class TrustCommit:
    agent: int
    interval_index: int
    tau_delta: float
    event: Optional[CommitEvent] = None
    reporter: int = -1

    def __post_init__(self) -> None:
        if not -1.0 <= self.tau_delta <= 1.0:
            raise ValueError(f"tau_delta {self.tau_delta} outside [-1, 1]")

    def canonical_bytes(self) -> bytes:
        code = 0 if self.event is None else self.event.value
        return struct.pack("<iqdBi", self.agent, self.interval_index,
                           self.tau_delta, code, self.reporter)


@dataclass(frozen=True)
class LedgerBlock:
    height: int
    prev_hash: bytes
    timestamp: SimTime
    commits: tuple[TrustCommit, ...]
    block_hash: bytes

    def canonical_bytes(self) -> bytes:
        return block_bytes(self.height, self.prev_hash, self.timestamp, self.commits)


def block_bytes(height: int, prev_hash: bytes, timestamp: float,
                commits: tuple[TrustCommit, ...]) -> bytes:
    head = struct.pack("<Q", height) + prev_hash + struct.pack("<dI", timestamp,
                                                               len(commits))
    return head + b"".join(c.canonical_bytes() for c in commits)


def make_block(height: int, prev_hash: bytes, timestamp: float,
               commits: tuple[TrustCommit, ...]) -> LedgerBlock:
    if len(prev_hash) != 32:
        raise ValueError("prev_hash must be 32 bytes")
    digest = hashlib.sha256(block_bytes(height, prev_hash, timestamp, commits)).digest()
    return LedgerBlock(height, prev_hash, timestamp, tuple(commits), digest)


def verify_chain(blocks: list[LedgerBlock]) -> Optional[int]:
    """None for a valid chain, else the first height that fails a check."""
    for i, blk in enumerate(blocks):
        if blk.height != i:
            return i
        expect_prev = GENESIS_PREV if i == 0 else blocks[i - 1].block_hash
        if blk.prev_hash != expect_prev:
            return i
        if hashlib.sha256(blk.canonical_bytes()).digest() != blk.block_hash:
            return i
    return None


# ----------------------------------------------------------- jsonl export


def export_chain(blocks: list[LedgerBlock], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for blk in blocks:
            fh.write(json.dumps({
                "height": blk.height,
                "prev_hash": blk.prev_hash.hex(),
                "timestamp": blk.timestamp,
                "commits": [{
                    "agent": c.agent,
                    "interval_index": c.interval_index,
                    "tau_delta": c.tau_delta,
                    "event": c.event.name if c.event else None,
                    "reporter": c.reporter,
                } for c in blk.commits],
                "block_hash": blk.block_hash.hex(),
            }, sort_keys=True) + "\n")


def import_chain(path) -> list[LedgerBlock]:
    """Strict inverse of export_chain.

    Every line must byte-match its canonical JSON re-encoding; otherwise a
    mutation could alias the text without changing the decoded chain (for
    example uppercasing a hex digit) and slip past hash verification.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    pieces = raw.split(b"\n")
    if pieces and pieces[-1] == b"":
        pieces.pop()
    blocks = []
    for i, line in enumerate(pieces):
        try:
            row = json.loads(line.decode("utf-8"))
            canonical = json.dumps(row, sort_keys=True).encode("utf-8")
            if canonical != line:
                raise ValueError("non-canonical block encoding")
            for field in ("prev_hash", "block_hash"):
                if bytes.fromhex(row[field]).hex() != row[field]:
                    raise ValueError(f"non-canonical hex in {field}")
            commits = tuple(TrustCommit(
                agent=c["agent"], interval_index=c["interval_index"],
                tau_delta=c["tau_delta"],
                event=CommitEvent[c["event"]] if c["event"] else None,
                reporter=c["reporter"]) for c in row["commits"])
            blocks.append(LedgerBlock(
                height=row["height"], prev_hash=bytes.fromhex(row["prev_hash"]),
                timestamp=row["timestamp"], commits=commits,
                block_hash=bytes.fromhex(row["block_hash"])))
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise ValueError(f"ledger line {i}: {exc}") from exc
    return blocks


# ------------------------------------------------------------------- pbft


class ByzantineMode(Enum):
    SILENT = "silent"            # sends nothing, ever
    EQUIVOCATE = "equivocate"    # as primary, proposes two different blocks


class _Replica:
    __slots__ = ("chain", "accepted", "prepares", "commits", "sent_commit",
                 "appended")

    def __init__(self) -> None:
        self.chain: list[LedgerBlock] = []
        self.accepted: dict[tuple[int, int], LedgerBlock] = {}    # (view, h) -> block
        self.prepares: dict[tuple[int, int, bytes], set[int]] = {}
        self.commits: dict[tuple[int, int, bytes], set[int]] = {}
        self.sent_commit: set[tuple[int, int, bytes]] = set()
        self.appended: set[int] = set()


class ConsensusCluster:
    """Nine-ish validators reaching agreement on batches of trust commits.

    `submit` queues commits; `begin_round` (driven by the 60 s consensus
    tick) proposes everything pending as one block. The canonical chain is
    the first honest validator's replica; honest replicas are asserted
    identical by the safety tests, not by construction.
    """

    def __init__(self, engine: Engine, vset: ValidatorSet = ValidatorSet(),
                 link_delay_s: float = 0.05, timeout_s: float = 2.0,
                 byzantine: Optional[dict[int, ByzantineMode]] = None) -> None:
        self.engine = engine
        self.vset = vset
        self.link_delay_s = link_delay_s
        self.timeout_s = timeout_s
        self.byzantine = dict(byzantine or {})
        if len(self.byzantine) > vset.f:
            raise ValueError(f"at most f={vset.f} byzantine validators supported")
        self.replicas = [_Replica() for _ in range(vset.n)]
        self.pending: list[TrustCommit] = []
        self.view = 0
        self.round_active = False
        self.rounds_started = 0
        self.view_changes = 0
        self._timer: Optional[Event] = None
        self._batch: tuple[TrustCommit, ...] = ()
        engine.subscribe(EventKind.CONSENSUS_MSG, self._on_msg)
        engine.subscribe(EventKind.CONSENSUS_TIMEOUT, self._on_timeout)

    # -- public surface ----------------------------------------------------

    def submit(self, commits: list[TrustCommit]) -> None:
        self.pending.extend(commits)

    @property
    def honest_ids(self) -> list[int]:
        return [v for v in range(self.vset.n) if v not in self.byzantine]

    @property
    def chain(self) -> list[LedgerBlock]:
        return self.replicas[self.honest_ids[0]].chain

    def committed_event(self, agent: int, event: CommitEvent,
                        min_interval: int = 0) -> bool:
        for blk in self.chain:
            for c in blk.commits:
                if c.agent == agent and c.event is event \
                        and c.interval_index >= min_interval:
                    return True
        return False

    def begin_round(self) -> bool:
        """Propose the pending batch. Returns False when there is nothing to do."""
        if self.round_active or not self.pending:
            return False
        self.round_active = True
        self.rounds_started += 1
        self._batch = tuple(self.pending)
        self._propose()
        return True

    # -- internals ----------------------------------------------------------

    def _height(self) -> int:
        return len(self.chain)

    def _primary(self, height: int) -> int:
        return (height + self.view) % self.vset.n

    def _send(self, recipient: int, payload: dict) -> None:
        self.engine.schedule_in(self.link_delay_s, EventKind.CONSENSUS_MSG,
                                {"to": recipient, **payload})

    def _broadcast(self, payload: dict) -> None:
        for v in range(self.vset.n):
            self._send(v, payload)

    def _propose(self) -> None:
        height = self._height()
        primary = self._primary(height)
        self._arm_timer(height)
        mode = self.byzantine.get(primary)
        if mode is ByzantineMode.SILENT:
            return                          # primary never speaks; timer rotates it
        prev = GENESIS_PREV if height == 0 else self.chain[-1].block_hash
        block = make_block(height, prev, self.engine.now, self._batch)
        if mode is ByzantineMode.EQUIVOCATE:
            # a conflicting twin differing only in timestamp, split by parity
            twin = make_block(height, prev, self.engine.now + 1e-9, self._batch)
            for v in range(self.vset.n):
                chosen = block if v % 2 == 0 else twin
                self._send(v, {"phase": "pre-prepare", "view": self.view,
                               "height": height, "block": chosen, "sender": primary})
            return
        for v in range(self.vset.n):
            self._send(v, {"phase": "pre-prepare", "view": self.view,
                           "height": height, "block": block, "sender": primary})

    def _arm_timer(self, height: int) -> None:
        if self._timer is not None:
            self._timer.cancel()
        self._timer = self.engine.schedule_in(
            self.timeout_s, EventKind.CONSENSUS_TIMEOUT,
            {"view": self.view, "height": height})

    def _on_timeout(self, engine: Engine, ev: Event) -> None:
        if ev.data["view"] != self.view or not self.round_active:
            return
        if self._height() > ev.data["height"]:
            return                           # already committed
        self.view += 1
        self.view_changes += 1
        self._propose()

    def _on_msg(self, engine: Engine, ev: Event) -> None:
        d = ev.data
        vid = d["to"]
        if vid in self.byzantine:
            return                           # silent; equivocator acts only as primary
        replica = self.replicas[vid]
        phase, view, height = d["phase"], d["view"], d["height"]
        if view != self.view:
            return                           # stale view
        if phase == "pre-prepare":
            if height in replica.appended or height != len(replica.chain):
                return
            if d["sender"] != self._primary(height):
                return
            block = d["block"]
            if not self._valid_block(replica, block, height):
                return
            key = (view, height)
            if key in replica.accepted:
                return                       # refuse a second proposal this view
            replica.accepted[key] = block
            self._broadcast({"phase": "prepare", "view": view, "height": height,
                             "hash": block.block_hash, "sender": vid})
        elif phase == "prepare":
            key = (view, height, d["hash"])
            replica.prepares.setdefault(key, set()).add(d["sender"])
            accepted = replica.accepted.get((view, height))
            if accepted is None or accepted.block_hash != d["hash"]:
                return
            if len(replica.prepares[key]) >= self.vset.quorum \
                    and key not in replica.sent_commit:
                replica.sent_commit.add(key)
                self._broadcast({"phase": "commit", "view": view, "height": height,
                                 "hash": d["hash"], "sender": vid})
        elif phase == "commit":
            key = (view, height, d["hash"])
            replica.commits.setdefault(key, set()).add(d["sender"])
            accepted = replica.accepted.get((view, height))
            if accepted is None or accepted.block_hash != d["hash"]:
                return
            if len(replica.commits[key]) >= self.vset.quorum \
                    and height not in replica.appended:
                replica.appended.add(height)
                replica.chain.append(accepted)
                self._finish_if_committed(height)

    def _valid_block(self, replica: _Replica, block: LedgerBlock, height: int) -> bool:
        prev = GENESIS_PREV if height == 0 else replica.chain[-1].block_hash
        if block.height != height or block.prev_hash != prev:
            return False
        recomputed = hashlib.sha256(block.canonical_bytes()).digest()
        return recomputed == block.block_hash

    def _finish_if_committed(self, height: int) -> None:
        if all(height in self.replicas[v].appended for v in self.honest_ids):
            if self._timer is not None:
                self._timer.cancel()
                self._timer = None
            committed = set(self.chain[height].commits)
            self.pending = [c for c in self.pending if c not in committed]
            self._batch = ()
            self.round_active = False


# ------------------------------------------------------------- enforcement


class Tier(Enum):
    NORMAL = "normal"
    INTERROGATION = "interrogation"
    LOCALLY_CONSTRAINED = "locally-constrained"
    ISOLATED = "isolated"
    RECOVERED = "recovered"


THROTTLE_FACTOR = 0.25


@dataclass
class EnforcementState:
    agent: int
    tier: Tier = Tier.NORMAL
    since: SimTime = 0.0
    throttle_factor: float = 1.0
    constrained_streak: int = 0     # low intervals while locally constrained
    clean_intervals: int = 0        # clean intervals while recovered
    deferred_count: int = 0         # escalations postponed for lack of a 2nd score
    flagged_interval: int = -1
    pending_isolate: bool = False
    pending_reinstate: bool = False


def cross_validate(primary_score: float, secondary_score: float,
                   params) -> bool:
    """Agreement iff both raw scores fall on the same side of tau_min."""
    return (primary_score < params.tau_min) == (secondary_score < params.tau_min)


def enforce_transition(state: EnforcementState, record, params, consortium, *,
                       secondary_raw: Optional[float] = None,
                       interval_index: int = 0, reporter: int = -1,
                       tau_delta: float = 0.0, now: SimTime = 0.0,
                       auto_recover: bool = True) -> EnforcementState:
    """Advance one agent's enforcement tier for one monitoring interval.

    Local constraints (routing exclusion, throttling) engage the moment the
    tier says so; isolation and reinstatement of an isolated agent
    additionally wait for the matching event to commit on the ledger.
    The caller applies world-level effects by diffing `state.tier`.
    """
    below = record.tau < params.tau_min

    def queue(event: Optional[CommitEvent]) -> None:
        consortium.submit([TrustCommit(agent=state.agent,
                                       interval_index=interval_index,
                                       tau_delta=max(-1.0, min(1.0, tau_delta)),
                                       event=event, reporter=reporter)])

    def enter(tier: Tier) -> None:
        state.tier = tier
        state.since = now

    if state.tier is Tier.NORMAL:
        if below:
            enter(Tier.INTERROGATION)

    elif state.tier is Tier.INTERROGATION:
        if record.persistence_above >= params.recovery_threshold:
            state.clean_intervals = 0
            enter(Tier.RECOVERED)
        else:
            hard = record.tau < params.tau_hard
            wants_soft = (record.persistence_below >= params.persistence_threshold
                          and record.raw_score < params.tau_min)
            soft = False
            if wants_soft:
                if secondary_raw is None:
                    state.deferred_count += 1
                else:
                    soft = secondary_raw < params.tau_min
            if hard or soft:
                state.throttle_factor = THROTTLE_FACTOR
                state.constrained_streak = 0
                state.flagged_interval = interval_index
                state.pending_isolate = False
                queue(CommitEvent.FLAGGED)
                enter(Tier.LOCALLY_CONSTRAINED)

    elif state.tier is Tier.LOCALLY_CONSTRAINED:
        if record.persistence_above >= params.recovery_threshold:
            state.throttle_factor = 1.0
            state.pending_isolate = False
            state.clean_intervals = 0
            queue(CommitEvent.REINSTATED)
            enter(Tier.RECOVERED)
        elif state.pending_isolate and consortium.committed_event(
                state.agent, CommitEvent.ISOLATED, state.flagged_interval):
            enter(Tier.ISOLATED)
        elif below:
            state.constrained_streak += 1
            if state.constrained_streak >= params.persistence_threshold \
                    and not state.pending_isolate:
                state.pending_isolate = True
                queue(CommitEvent.ISOLATED)
        else:
            state.constrained_streak = 0

    elif state.tier is Tier.ISOLATED:
        if auto_recover and record.persistence_above >= params.recovery_threshold:
            if not state.pending_reinstate:
                state.pending_reinstate = True
                queue(CommitEvent.REINSTATED)
            elif consortium.committed_event(state.agent, CommitEvent.REINSTATED,
                                            state.flagged_interval):
                state.throttle_factor = 1.0
                state.pending_isolate = False
                state.pending_reinstate = False
                state.clean_intervals = 0
                enter(Tier.RECOVERED)

    elif state.tier is Tier.RECOVERED:
        if below:
            enter(Tier.INTERROGATION)
        else:
            state.clean_intervals += 1
            if state.clean_intervals >= 1:
                enter(Tier.NORMAL)

    return state
