from __future__ import annotations

import numpy as np
import pytest

from uwtrust.kernel import Engine, rng_stream
from uwtrust.world import (
    AgentKind,
    AgentState,
    ChannelParams,
    DropReason,
    EnergyParams,
    PacketKind,
    World,
    WorldParams,
    loss_probability,
    propagation_delay,
    transmission_delay,
    tx_energy,
)


def make_world(seed: int = 42, *, params: WorldParams | None = None,
               channel: ChannelParams | None = None) -> tuple[World, Engine]:
    eng = Engine()
    w = World(params or WorldParams(), channel or ChannelParams(),
              EnergyParams(), eng,
              rng_deploy=rng_stream(seed, "deploy"),
              rng_mobility=rng_stream(seed, "mobility"),
              rng_channel=rng_stream(seed, "channel"),
              rng_traffic=rng_stream(seed, "traffic"))
    return w, eng


# ---------------------------------------------------------------- channel


def test_propagation_delay_values():
    ch = ChannelParams()
    assert propagation_delay(1000.0, ch) == pytest.approx(0.67)
    assert propagation_delay(0.0, ch) == 0.0
    assert propagation_delay(1500.0, ch) == pytest.approx(1.005)
    with pytest.raises(ValueError):
        propagation_delay(-1.0, ch)


def test_transmission_delay_values():
    ch10 = ChannelParams(rate_bps=10_000)
    ch20 = ChannelParams(rate_bps=20_000)
    assert transmission_delay(10_000, ch10) == pytest.approx(1.0)
    assert transmission_delay(10_000, ch20) == pytest.approx(0.5)
    assert transmission_delay(1, ch10) == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        transmission_delay(0, ch10)


def test_channel_params_validation():
    with pytest.raises(ValueError):
        ChannelParams(rate_bps=9_999)
    with pytest.raises(ValueError):
        ChannelParams(rate_bps=20_001)
    with pytest.raises(ValueError):
        ChannelParams(base_loss_prob=1.5)


def test_loss_probability_clamps_and_saturates():
    ch = ChannelParams(base_loss_prob=0.9, loss_per_km=0.5)
    assert loss_probability(0.0, ch) == pytest.approx(0.9)
    assert loss_probability(1000.0, ch) == pytest.approx(0.95)  # clamp
    jammed = ChannelParams(base_loss_prob=1.0)
    assert loss_probability(10.0, jammed) == 1.0


def test_tx_energy_values():
    ep = EnergyParams()
    assert tx_energy(0, 500.0, ep) == 0.0
    assert tx_energy(1000, 0.0, ep) == pytest.approx(5e-5)
    # l=1000, d=1000: 5e-5 + 1e-7 * 1000**1.5
    assert tx_energy(1000, 1000.0, ep) == pytest.approx(5e-5 + 1e-7 * 1000**1.5)
    assert tx_energy(1000, 1000.0, ep) == pytest.approx(3.2123e-3, rel=1e-4)


def test_energy_params_validation():
    with pytest.raises(ValueError):
        EnergyParams(e_elec=0.0)
    with pytest.raises(ValueError):
        EnergyParams(k=0.5)


# ---------------------------------------------------------------- agents


def test_consume_clamps_and_kills():
    a = AgentState(0, AgentKind.SENSOR, np.zeros(3), 1e-4, 1e-4)
    applied = a.consume(6e-4, "tx")
    assert applied == pytest.approx(1e-4)
    assert a.residual_energy == 0.0
    assert not a.alive
    assert a.consume(1.0, "tx") == 0.0  # dead agents spend nothing


def test_step_energy_sum():
    # sense + compute + tx with duty 1 adds up plainly
    a = AgentState(0, AgentKind.SENSOR, np.zeros(3), 1.0, 1.0)
    a.consume(1e-4 * a.duty_cycle, "sense")
    a.consume(2e-4, "compute")
    a.consume(3e-4, "tx")
    assert 1.0 - a.residual_energy == pytest.approx(6e-4)
    assert sum(a.spent_by_category.values()) == pytest.approx(6e-4)


# ---------------------------------------------------------------- deployment


def test_deployment_counts_and_bounds():
    w, _ = make_world()
    kinds = [w.agents[i].kind for i in w.agent_ids]
    assert len(w.agent_ids) == 50
    assert kinds.count(AgentKind.AUV) == 12
    assert kinds.count(AgentKind.SENSOR) == 38
    assert len(w.gateway_ids) == 2
    for i, a in w.agents.items():
        x, y, z = a.position
        assert 0 <= x <= 1000 and 0 <= y <= 1000
        if a.kind is AgentKind.SENSOR:
            assert 50 <= z <= 200
        elif a.kind is AgentKind.AUV:
            assert 10 <= z <= 200
        else:
            assert z == 0.0
    assert w.agents[w.gateway_ids[0]].position[0] == pytest.approx(250.0)
    assert w.agents[w.gateway_ids[1]].position[0] == pytest.approx(750.0)


def test_deployment_is_deterministic():
    w1, _ = make_world(seed=9)
    w2, _ = make_world(seed=9)
    for i in w1.agents:
        assert np.array_equal(w1.agents[i].position, w2.agents[i].position)


# ---------------------------------------------------------------- mobility


def test_sensors_never_move():
    w, _ = make_world()
    before = {i: w.agents[i].position.copy() for i in w.agent_ids
              if w.agents[i].kind is AgentKind.SENSOR}
    w.move_agents(100.0)
    for i, pos in before.items():
        assert np.array_equal(w.agents[i].position, pos)


def test_auv_kinematics_toward_waypoint():
    w, _ = make_world()
    auv = next(w.agents[i] for i in w.agent_ids if w.agents[i].kind is AgentKind.AUV)
    auv.position = np.array([0.0, 0.0, 100.0])
    auv.waypoint = np.array([100.0, 0.0, 100.0])
    auv.speed = 2.0
    w.move_agents(10.0)
    assert np.allclose(auv.position, [20.0, 0.0, 100.0])


def test_auv_arrival_draws_new_waypoint():
    w, _ = make_world()
    auv = next(w.agents[i] for i in w.agent_ids if w.agents[i].kind is AgentKind.AUV)
    auv.position = np.array([500.0, 500.0, 100.0])
    auv.waypoint = np.array([500.0, 500.0, 101.0])
    auv.speed = 2.0
    w.move_agents(10.0)
    assert np.allclose(auv.position, [500.0, 500.0, 101.0])
    assert not np.allclose(auv.waypoint, [500.0, 500.0, 101.0])
    assert 0.5 <= auv.speed <= 2.0


def test_positions_stay_in_footprint_over_time():
    w, eng = make_world()
    w.start(600.0)
    eng.run(until=600.0)
    for i in w.agent_ids:
        x, y, z = w.agents[i].position
        assert -1e-9 <= x <= 1000 + 1e-9
        assert -1e-9 <= y <= 1000 + 1e-9
        assert 0 <= z <= 200 + 1e-9


# ---------------------------------------------------------------- routing


def test_route_prefers_closest_to_destination():
    w, _ = make_world()
    a, b, c = w.agent_ids[:3]
    gw = w.gateway_ids[0]
    w.agents[a].position = np.array([500.0, 500.0, 100.0])
    w.agents[b].position = np.array([400.0, 500.0, 50.0])
    w.agents[c].position = np.array([480.0, 500.0, 100.0])
    w.agents[gw].position = np.array([250.0, 500.0, 0.0])
    w.agents[a].neighbor_table = {b: 0.0, c: 0.0}
    assert w.route_next_hop(a, gw, set()) == b


def test_route_direct_delivery_and_tie_break():
    w, _ = make_world()
    a, b, c = w.agent_ids[:3]
    gw = w.gateway_ids[0]
    w.agents[a].position = np.array([300.0, 500.0, 50.0])
    w.agents[a].neighbor_table = {gw: 0.0}
    assert w.route_next_hop(a, gw, set()) == gw
    # two neighbors exactly equidistant: lowest id wins
    w.agents[b].position = np.array([400.0, 500.0, 100.0])
    w.agents[c].position = np.array([100.0, 500.0, 100.0])
    w.agents[gw].position = np.array([250.0, 500.0, 0.0])
    w.agents[a].position = np.array([250.0, 100.0, 100.0])
    w.agents[a].neighbor_table = {c: 0.0, b: 0.0}
    d_b = np.linalg.norm(w.agents[b].position - w.agents[gw].position)
    d_c = np.linalg.norm(w.agents[c].position - w.agents[gw].position)
    assert d_b == pytest.approx(d_c)
    assert w.route_next_hop(a, gw, set()) == min(b, c)


def test_route_honors_exclusions_and_progress():
    w, _ = make_world()
    a, b = w.agent_ids[:2]
    gw = w.gateway_ids[0]
    w.agents[a].position = np.array([500.0, 500.0, 100.0])
    w.agents[b].position = np.array([400.0, 500.0, 50.0])
    w.agents[gw].position = np.array([250.0, 500.0, 0.0])
    w.agents[a].neighbor_table = {b: 0.0}
    assert w.route_next_hop(a, gw, {b}) is None
    # a neighbor farther from the destination than self is no progress
    w.agents[b].position = np.array([900.0, 500.0, 50.0])
    assert w.route_next_hop(a, gw, set()) is None


# ---------------------------------------------------------------- transport


def lossless(rate=10_000):
    return ChannelParams(rate_bps=rate, base_loss_prob=0.0, loss_per_km=0.0,
                         comm_range_m=1500.0)


def test_delay_composition_on_delivery():
    # 1 km hop, 2000 bits at 10 kbps: arrival now + 0.2 + 0.67
    w, eng = make_world(params=WorldParams(n_gateways=1), channel=lossless())
    a = w.agent_ids[0]
    gw = w.gateway_ids[0]
    w.agents[a].position = np.array([250.0, 500.0, 0.0])
    w.agents[gw].position = np.array([1250.0, 500.0, 0.0])
    w.refresh_neighbors(at=0.0, log_churn=False)
    rec = w.originate(a, 0.0)
    assert rec.dst == gw
    eng.run()
    assert rec.delivered_at == pytest.approx(0.87)


def test_lossless_connected_always_delivers():
    w, eng = make_world(channel=lossless(rate=15_000))
    w.start(600.0)
    eng.run()  # drain in-flight arrivals past the last tick
    w.settle_outcomes(1e9)
    assert w.originated_data > 0
    assert w.pdr() == 1.0


def test_saturated_loss_drops_and_logs_retries():
    jam = ChannelParams(base_loss_prob=1.0, comm_range_m=1500.0)
    w, eng = make_world(channel=jam)
    a = w.agent_ids[0]
    rec = w.originate(a, 0.0)
    assert rec is not None and rec.channel_attempted
    eng.run()
    mine = [r for r in w.packet_log if r.src == a]
    assert len(mine) == 3  # original + max_retries
    assert all(r.dropped_reason is DropReason.CHANNEL_LOSS for r in mine)
    retx = [r for r in mine if r.retransmission_of is not None]
    assert len(retx) == 2
    assert all(r.retransmission_of == rec.packet_id for r in retx)
    assert w.pdr() == 0.0


def test_out_of_range_is_immediate_drop():
    w, _ = make_world(channel=ChannelParams(comm_range_m=400.0))
    a = w.agent_ids[0]
    gw = w.gateway_ids[0]
    w.agents[a].position = np.array([0.0, 0.0, 100.0])
    w.agents[gw].position = np.array([900.0, 900.0, 0.0])
    # stale neighbor entry: the gateway moved out of range since refresh
    w.agents[a].neighbor_table = {gw: 0.0}
    rec = w.originate(a, 0.0)
    assert rec.dropped_reason is DropReason.OUT_OF_RANGE
    energy = w.agents[a].spent_by_category
    assert energy["tx"] > 0  # the radio fired anyway


def test_buffered_packet_is_retried_then_expires():
    w, _ = make_world(channel=lossless())
    a = w.agent_ids[0]
    w.agents[a].neighbor_table = {}
    rec = w.originate(a, 0.0)
    assert rec is not None and not rec.channel_attempted
    assert w.unresolved_summary()["buffered"] == 1
    w.agents[a].neighbor_table = {}
    w._drain_buffers(60.0)      # still unroutable, still within expiry
    assert rec.dropped_reason is None
    w.agents[a].neighbor_table = {}
    w._drain_buffers(130.0)     # past the 120 s horizon
    assert rec.dropped_reason is DropReason.EXPIRED
    assert w.unresolved_summary()["buffered"] == 0


def test_buffered_packet_sends_when_route_appears():
    w, eng = make_world(params=WorldParams(n_gateways=1), channel=lossless())
    a = w.agent_ids[0]
    gw = w.gateway_ids[0]
    w.agents[a].neighbor_table = {}
    rec = w.originate(a, 0.0)
    assert not rec.channel_attempted
    w.agents[a].neighbor_table = {gw: 30.0}
    w._drain_buffers(30.0)
    assert rec.channel_attempted and rec.dst == gw
    eng.run()
    assert rec.delivered_at is not None


def test_resolution_is_exclusive():
    w, eng = make_world()
    w.start(900.0)
    eng.run(until=900.0)
    for r in w.packet_log:
        assert not (r.delivered_at is not None and r.dropped_reason is not None)
        if r.delivered_at is not None:
            assert r.delivered_at >= r.sent_at


def test_energy_books_balance_after_run():
    w, eng = make_world()
    w.start(900.0)
    eng.run(until=900.0)
    assert w.energy_books_balance()


def test_isolation_cuts_agent_out():
    w, eng = make_world(channel=lossless(rate=15_000))
    victim = w.agent_ids[5]
    w.isolate(victim, 0.0)
    for a in w.agents.values():
        assert victim not in a.neighbor_table
    w.start(300.0)
    eng.run(until=300.0)
    assert all(r.src != victim for r in w.packet_log if r.channel_attempted)
    w.reinstate(victim)
    assert victim not in w.isolated


def test_throttle_reduces_origination_rate():
    w1, e1 = make_world(seed=3, channel=lossless(rate=15_000))
    w2, e2 = make_world(seed=3, channel=lossless(rate=15_000))
    target = w1.agent_ids[10]
    w2.throttle(target, 0.25)
    for w, e in ((w1, e1), (w2, e2)):
        w.start(3600.0)
        e.run(until=3600.0)
    n1 = sum(1 for r in w1.packet_log if r.src == target and r.is_origination)
    n2 = sum(1 for r in w2.packet_log if r.src == target and r.is_origination)
    assert n2 < n1 * 0.6


def test_summary_uplink_reaches_gateway():
    w, eng = make_world(channel=lossless(rate=15_000))
    host = w.agent_ids[0]
    rec = w.send_summary(host, 0.0)
    assert rec is not None
    assert rec.kind is PacketKind.TRUST_SUMMARY
    eng.run()
    assert w.pdr() is None  # summaries are not mission data


def test_observation_masks_only_with_monitoring():
    w, eng = make_world(channel=lossless(rate=15_000))
    w.start(120.0)
    eng.run(until=120.0)
    assert all(r.observed_by == 0 for r in w.packet_log)
    w2, eng2 = make_world(channel=lossless(rate=15_000))
    w2.set_monitoring([w2.gateway_ids[0], w2.gateway_ids[1]])
    w2.start(120.0)
    eng2.run(until=120.0)
    sent = [r for r in w2.packet_log if r.channel_attempted]
    assert any(r.observed_by for r in sent)


def test_observer_bit_always_set_for_own_sends():
    w, eng = make_world(channel=lossless(rate=15_000))
    host = w.agent_ids[0]
    w.set_monitoring([host])
    w.start(600.0)
    eng.run(until=600.0)
    for r in w.packet_log:
        if r.src == host and r.channel_attempted:
            assert r.observed_by & 1
