"""Behavior features from passively observed communication metadata.

Each interrogator host keeps a per-agent view of the transmissions it
overheard, closes a feature vector per 30 s interval, and maintains a
fixed-length ring of past vectors as the scorer input. Payloads are never
part of the input: an observation is (time, packet id, retransmission
marker, staleness, destination pair) and nothing else.

Protocol deviations cover two observable violations: re-announcing an
already-seen packet id without a retransmission marker (replay), and a
relay obligation left unfulfilled (an overheard data packet addressed
through an agent that is never followed by that agent's forward of the
same chain within the grace period). The second one is what separates a
dropping relay from an honest relay with the same traffic volume; volume
and timing alone cannot tell them apart.

`brute_force_features` recomputes any vector from the raw packet log with
no incremental state; streaming and brute force share `compute_features`,
so any disagreement indicates broken bookkeeping, not a changed definition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .world import PacketKind, PacketRecord

FEATURE_DIM = 7
FEATURE_NAMES = ("volume", "gap_mean", "gap_var", "retx_rate",
                 "stability", "churn", "deviation")
QUIET_VECTOR = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])


class SendObs(NamedTuple):
    """One overheard transmission, reduced to scoring-relevant metadata."""
    t: float
    stale: bool          # packet id already seen without a retransmission marker
    retx: bool
    final_dst: int
    next_hop: int


@dataclass(frozen=True)
class FeatureParams:
    norm_volume: float          # scenario-calibrated per-interval send count scale
    norm_churn: float           # neighbor-table change scale, n_agents / 10
    obligation_grace_s: float = 5.0   # > one retry backoff + hop delay

    def __post_init__(self) -> None:
        if self.norm_volume <= 0 or self.norm_churn <= 0:
            raise ValueError("normalization constants must be positive")
        if self.obligation_grace_s <= 0:
            raise ValueError("obligation grace must be positive")


def compute_features(sends: Sequence[SendObs], churn_count: int,
                     params: FeatureParams,
                     expired_obligations: int = 0) -> np.ndarray:
    """Feature vector for one agent-interval from its observed sends.

    Order: volume, gap mean, gap variance, retransmission rate, routing
    stability, neighbor churn, protocol deviation rate. Deviations are
    stale replays plus expired relay obligations per transmission, capped
    at 1. A silent interval with no expired obligations yields the quiet
    vector (stability defaults to 1); a silent interval that still owed
    forwards does not, because total silence is how a full drop looks.
    """
    n = len(sends)
    if n == 0 and expired_obligations == 0:
        return QUIET_VECTOR.copy()
    times = np.array([s.t for s in sends])
    gaps = np.diff(times)
    gap_mean = float(gaps.mean()) if gaps.size else 0.0
    gap_var = float(gaps.var()) if gaps.size else 0.0
    retx = sum(1 for s in sends if s.retx)
    stale = sum(1 for s in sends if s.stale)
    decisions = [s for s in sends if not s.retx]
    changes = 0
    last_hop: dict[int, int] = {}
    for s in decisions:
        prev = last_hop.get(s.final_dst)
        if prev is not None and prev != s.next_hop:
            changes += 1
        last_hop[s.final_dst] = s.next_hop
    stability = 1.0 - changes / max(1, len(decisions))
    return np.array([
        n / params.norm_volume,
        gap_mean,
        gap_var,
        retx / max(1, n),
        stability,
        churn_count / params.norm_churn,
        min(1.0, (stale + expired_obligations) / max(1, n)),
    ])


class HostObserver:
    """Streaming per-host feature pipeline.

    Records arrive in log order; vectors are closed one interval at a time
    per agent. Staleness state (packet ids already seen by this host) spans
    the whole mission, exactly as the brute-force path replays it.

    Every overheard data transmission addressed *through* an agent opens a
    relay obligation [sent_at, sent_at + grace]; an overheard forward of
    the same chain by that agent inside the window fulfills it. An
    obligation is judged once, at the close of the interval its deadline
    falls in, so the verdict never depends on feed batching.
    """

    def __init__(self, slot: int, interval_s: float, params: FeatureParams) -> None:
        self.slot = slot
        self.interval_s = interval_s
        self.params = params
        self._seen_ids: set[int] = set()
        self._buckets: dict[tuple[int, int], list[SendObs]] = {}
        self._churn: dict[tuple[int, int], int] = {}
        self._closed: dict[int, int] = {}
        # agent -> [create_t, deadline, origin_packet_id, fulfilled]
        self._pending: dict[int, list[list]] = {}

    def on_record(self, rec: PacketRecord) -> None:
        if not rec.channel_attempted or not (rec.observed_by >> self.slot) & 1:
            return
        stale = rec.packet_id in self._seen_ids and rec.retransmission_of is None
        self._seen_ids.add(rec.packet_id)
        k = int(rec.sent_at // self.interval_s)
        self._buckets.setdefault((rec.src, k), []).append(
            SendObs(rec.sent_at, stale, rec.retransmission_of is not None,
                    rec.final_dst, rec.dst))
        if rec.kind is PacketKind.SENSOR_DATA:
            for e in self._pending.get(rec.src, ()):
                if e[2] == rec.origin_packet_id and e[0] <= rec.sent_at <= e[1]:
                    e[3] = True
            if rec.dst != rec.final_dst and rec.dst >= 0:
                self._pending.setdefault(rec.dst, []).append(
                    [rec.sent_at, rec.sent_at + self.params.obligation_grace_s,
                     rec.origin_packet_id, False])

    def on_churn(self, agent: int, t: float, count: int) -> None:
        k = int(t // self.interval_s)
        key = (agent, k)
        self._churn[key] = self._churn.get(key, 0) + count

    def close_window(self, agent: int, interval_index: int) -> np.ndarray:
        prev = self._closed.get(agent)
        if prev is not None and interval_index <= prev:
            raise ValueError(
                f"interval {interval_index} for agent {agent} already closed")
        self._closed[agent] = interval_index
        sends = self._buckets.pop((agent, interval_index), [])
        churn = self._churn.pop((agent, interval_index), 0)
        boundary = (interval_index + 1) * self.interval_s
        expired = 0
        entries = self._pending.get(agent)
        if entries:
            keep = []
            for e in entries:
                if e[1] < boundary:
                    expired += not e[3]
                else:
                    keep.append(e)
            self._pending[agent] = keep
        return compute_features(sends, churn, self.params, expired)


class SequenceRing:
    """Fixed-length history of feature vectors, oldest first, front-padded."""

    def __init__(self, seq_len: int = 64, dim: int = FEATURE_DIM) -> None:
        self.seq_len = seq_len
        self.dim = dim
        self._rows: list[np.ndarray] = []
        self._last_interval: Optional[int] = None

    @property
    def valid_len(self) -> int:
        return len(self._rows)

    def push(self, interval_index: int, vec: np.ndarray) -> None:
        if vec.shape != (self.dim,):
            raise ValueError(f"expected ({self.dim},) vector, got {vec.shape}")
        if self._last_interval is not None and interval_index <= self._last_interval:
            raise ValueError(f"duplicate push for interval {interval_index}")
        self._last_interval = interval_index
        self._rows.append(np.asarray(vec, dtype=np.float64))
        if len(self._rows) > self.seq_len:
            self._rows.pop(0)

    def snapshot(self) -> tuple[np.ndarray, int]:
        """(seq_len, dim) array with zero padding before the valid rows."""
        out = np.zeros((self.seq_len, self.dim))
        if self._rows:
            out[self.seq_len - len(self._rows):] = np.stack(self._rows)
        return out, len(self._rows)


def brute_force_features(packet_log: Iterable[PacketRecord],
                         churn_log: Iterable[tuple[int, float, int]],
                         slot: int, agent: int, interval_index: int,
                         interval_s: float, params: FeatureParams) -> np.ndarray:
    """Stateless recomputation of one agent-interval vector from raw logs."""
    seen: set[int] = set()
    sends: list[SendObs] = []
    obligations: list[list] = []    # [create_t, deadline, origin_pid, fulfilled]
    for rec in packet_log:
        if not rec.channel_attempted or not (rec.observed_by >> slot) & 1:
            continue
        stale = rec.packet_id in seen and rec.retransmission_of is None
        seen.add(rec.packet_id)
        if rec.src == agent and int(rec.sent_at // interval_s) == interval_index:
            sends.append(SendObs(rec.sent_at, stale,
                                 rec.retransmission_of is not None,
                                 rec.final_dst, rec.dst))
        if rec.kind is PacketKind.SENSOR_DATA:
            if rec.src == agent:
                for e in obligations:
                    if e[2] == rec.origin_packet_id and e[0] <= rec.sent_at <= e[1]:
                        e[3] = True
            if rec.dst == agent and rec.dst != rec.final_dst:
                obligations.append(
                    [rec.sent_at, rec.sent_at + params.obligation_grace_s,
                     rec.origin_packet_id, False])
    expired = sum(1 for e in obligations
                  if not e[3] and int(e[1] // interval_s) == interval_index)
    churn = sum(c for a, t, c in churn_log
                if a == agent and int(t // interval_s) == interval_index)
    return compute_features(sends, churn, params, expired)
