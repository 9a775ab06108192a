from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from uwtrust.adversary import (
    AdversaryController,
    AttackKind,
    AttackProfile,
    CompromiseAssignment,
)
from uwtrust.features import (
    FEATURE_DIM,
    QUIET_VECTOR,
    FeatureParams,
    HostObserver,
    SendObs,
    SequenceRing,
    brute_force_features,
    compute_features,
)
from uwtrust.kernel import Engine, rng_stream
from uwtrust.world import ChannelParams, EnergyParams, World, WorldParams

PARAMS = FeatureParams(norm_volume=10.0, norm_churn=5.0)


def make_world(seed=42, channel=None, params=None):
    eng = Engine()
    w = World(params or WorldParams(), channel or ChannelParams(), EnergyParams(),
              eng,
              rng_deploy=rng_stream(seed, "deploy"),
              rng_mobility=rng_stream(seed, "mobility"),
              rng_channel=rng_stream(seed, "channel"),
              rng_traffic=rng_stream(seed, "traffic"))
    return w, eng


def obs(t, stale=False, retx=False, final_dst=50, next_hop=3):
    return SendObs(t, stale, retx, final_dst, next_hop)


# ------------------------------------------------------------ pure function


def test_regular_gaps_hand_count():
    # four sends exactly 7 s apart: mean gap 7, zero variance
    sends = [obs(10.0), obs(17.0), obs(24.0), obs(31.0)]
    v = compute_features(sends, 0, PARAMS)
    assert v.shape == (FEATURE_DIM,)
    assert v[0] == pytest.approx(0.4)      # 4 sends / norm 10
    assert v[1] == pytest.approx(7.0)
    assert v[2] == pytest.approx(0.0)
    assert v[3] == 0.0 and v[6] == 0.0
    assert v[4] == 1.0


def test_retx_and_stale_rates_hand_count():
    # 10 transmissions, 3 retransmissions, 2 replayed stale ids
    sends = [obs(float(i)) for i in range(5)]
    sends += [obs(float(5 + i), retx=True) for i in range(3)]
    sends += [obs(8.5, stale=True), obs(9.0, stale=True)]
    v = compute_features(sends, 0, PARAMS)
    assert v[3] == pytest.approx(0.3)
    assert v[6] == pytest.approx(0.2)


def test_quiet_interval_is_canonical_vector():
    v = compute_features([], 4, PARAMS)
    assert np.array_equal(v, QUIET_VECTOR)
    assert v[4] == 1.0 and v.sum() == 1.0


def test_single_send_has_zero_gap_stats():
    v = compute_features([obs(3.0)], 0, PARAMS)
    assert v[1] == 0.0 and v[2] == 0.0
    assert v[0] == pytest.approx(0.1)


def test_gap_variance_is_population_variance():
    sends = [obs(0.0), obs(5.0), obs(15.0), obs(30.0)]    # gaps 5, 10, 15
    v = compute_features(sends, 0, PARAMS)
    assert v[1] == pytest.approx(10.0)
    assert v[2] == pytest.approx(50.0 / 3.0)


def test_routing_stability_tracks_changes_per_destination():
    # toward dst 50 the hop flips twice in four decisions; dst 51 is steady
    sends = [obs(0.0, next_hop=2), obs(1.0, next_hop=2),
             obs(2.0, next_hop=3), obs(3.0, next_hop=2),
             obs(4.0, final_dst=51, next_hop=9),
             obs(5.0, final_dst=51, next_hop=9),
             obs(6.0, retx=True, next_hop=7)]    # retransmission: not a decision
    v = compute_features(sends, 0, PARAMS)
    assert v[4] == pytest.approx(1.0 - 2.0 / 6.0)


def test_churn_normalization():
    v = compute_features([obs(0.0)], 4, PARAMS)
    assert v[5] == pytest.approx(0.8)


def test_params_validation():
    with pytest.raises(ValueError):
        FeatureParams(norm_volume=0.0, norm_churn=5.0)
    with pytest.raises(ValueError):
        FeatureParams(norm_volume=10.0, norm_churn=-1.0)


# ------------------------------------------------------------ sequence ring


def test_ring_front_padding_and_valid_len():
    ring = SequenceRing(seq_len=8, dim=3)
    ring.push(0, np.array([1.0, 2.0, 3.0]))
    ring.push(1, np.array([4.0, 5.0, 6.0]))
    arr, n = ring.snapshot()
    assert arr.shape == (8, 3) and n == 2
    assert np.all(arr[:6] == 0.0)
    assert np.array_equal(arr[6], [1.0, 2.0, 3.0])
    assert np.array_equal(arr[7], [4.0, 5.0, 6.0])


def test_ring_evicts_oldest_beyond_capacity():
    ring = SequenceRing(seq_len=4, dim=1)
    for k in range(9):
        ring.push(k, np.array([float(k)]))
    arr, n = ring.snapshot()
    assert n == 4
    assert np.array_equal(arr[:, 0], [5.0, 6.0, 7.0, 8.0])


def test_ring_rejects_duplicate_interval_and_bad_shape():
    ring = SequenceRing(seq_len=4, dim=2)
    ring.push(3, np.zeros(2))
    with pytest.raises(ValueError):
        ring.push(3, np.ones(2))
    with pytest.raises(ValueError):
        ring.push(2, np.ones(2))
    with pytest.raises(ValueError):
        ring.push(4, np.zeros(3))


def test_observer_rejects_reclosing_interval():
    host = HostObserver(slot=0, interval_s=30.0, params=PARAMS)
    v = host.close_window(5, 0)
    assert np.array_equal(v, QUIET_VECTOR)
    with pytest.raises(ValueError):
        host.close_window(5, 0)


# -------------------------------------------------- streaming == brute force


def run_monitored_mission(duration=300.0, seed=42, adversary=None):
    w, eng = make_world(seed=seed)
    hosts = list(w.gateway_ids) + [0, 1]
    w.set_monitoring(hosts)
    if adversary is not None:
        w.adversary = adversary
    w.start(duration)
    eng.run(until=duration)
    return w, hosts


def test_streaming_features_match_brute_force_recomputation():
    w, hosts = run_monitored_mission()
    fp = FeatureParams(norm_volume=3.0, norm_churn=5.0)
    observers = {slot: HostObserver(slot, 30.0, fp) for slot in (0, 2)}
    for rec in w.packet_log:
        for ob in observers.values():
            ob.on_record(rec)
    for agent, t, count in w.churn_log:
        for ob in observers.values():
            ob.on_churn(agent, t, count)

    agents = sorted(w.agents)
    streamed = {}
    for k in range(10):
        for slot, ob in observers.items():
            for a in agents:
                streamed[(slot, a, k)] = ob.close_window(a, k)

    checked = 0
    for slot in (0, 2):
        for a in agents:
            for k in (0, 3, 7, 9):
                expect = brute_force_features(w.packet_log, w.churn_log, slot,
                                              a, k, 30.0, fp)
                assert np.array_equal(streamed[(slot, a, k)], expect), (slot, a, k)
                checked += 1
    assert checked == len(agents) * 8
    assert any(v[0] > 0 for v in streamed.values())


def test_features_are_payload_blind():
    w, _ = run_monitored_mission(duration=120.0)
    mutated = [dataclasses.replace(r, size_bits=r.size_bits * 3 + 1)
               for r in w.packet_log]
    fp = FeatureParams(norm_volume=3.0, norm_churn=5.0)
    for a in (0, 20, 40):
        for k in range(4):
            base = brute_force_features(w.packet_log, w.churn_log, 0, a, k, 30.0, fp)
            alt = brute_force_features(mutated, w.churn_log, 0, a, k, 30.0, fp)
            assert np.array_equal(base, alt)


def test_benign_features_stay_in_sane_ranges():
    w, _ = run_monitored_mission(duration=600.0)
    fp = FeatureParams(norm_volume=3.0, norm_churn=5.0)
    deviations = []
    for a in (13, 25, 37):
        for k in range(20):
            v = brute_force_features(w.packet_log, w.churn_log, 1, a, k, 30.0, fp)
            assert np.all(np.isfinite(v))
            assert 0.0 <= v[3] <= 1.0
            assert 0.0 <= v[4] <= 1.0
            assert 0.0 <= v[6] <= 1.0
            deviations.append(v[6])
    assert np.mean(deviations) < 0.05    # benign traffic emits no stale ids


def test_replay_attacker_raises_deviation_rate():
    target = 20
    profile = AttackProfile(AttackKind.REPLAY, activation=0.0, intensity=5.0)
    assignment = CompromiseAssignment(0.02, frozenset([target]), {target: profile})
    ctl = AdversaryController(assignment, rng_stream(9, "adversary"),
                              ticks_per_interval=5.0)
    w, hosts = run_monitored_mission(duration=600.0, adversary=ctl)
    fp = FeatureParams(norm_volume=3.0, norm_churn=5.0)
    rates = [brute_force_features(w.packet_log, w.churn_log, 0, target,
                                  k, 30.0, fp)[6] for k in range(20)]
    assert max(rates) > 0.0
    benign = [brute_force_features(w.packet_log, w.churn_log, 0, 21,
                                   k, 30.0, fp)[6] for k in range(20)]
    assert np.mean(rates) > np.mean(benign)
