import numpy as np
import pytest

from qkdsim.engine import Copy, EntoQueue, PacketRecord, simulate
from qkdsim.keying import KeySpec
from qkdsim.policy import BackpressureMode, MultilevelMode, SingleQueueMode, TandemMode
from qkdsim.topology import EdgeSpec, build_graph, erdos_renyi
from qkdsim.traffic import Bernoulli, Broadcast, TrafficClass, TruncatedPoisson, Unicast


def _single_link():
    return build_graph(2, [EdgeSpec(0, 1, gamma=1, eta=0.5, directed=True)])


def _counterexample_classes(rate=0.45):
    return [TrafficClass(0, 0, Unicast(1), Bernoulli(rate))]


AMPLE_KEYS = KeySpec(kind="deterministic", value=10)


# ---------------------------------------------------------------------------
# basics

def test_zero_arrivals_leave_everything_empty():
    r = simulate(_single_link(), _counterexample_classes(0.0), TandemMode(), horizon=500, seed=1)
    assert r.total_arrivals == 0
    assert r.mean_delay() is None
    assert r.final_backlog == 0.0
    assert (r.series["x_sum"] == 0).all() and (r.series["y_sum"] == 0).all()


def test_single_link_tandem_delivers_offered_load():
    r = simulate(_single_link(), _counterexample_classes(), TandemMode(), horizon=30_000, seed=3)
    assert abs(r.delivered_rate(0) - 0.45) < 0.015


def test_single_link_singlequeue_saturates_below_offered_load():
    r = simulate(_single_link(), _counterexample_classes(), SingleQueueMode(), horizon=30_000, seed=3)
    assert r.delivered_rate(0) < 0.42
    # backlog keeps climbing
    backlog = r.series["backlog_sum"]
    assert backlog[-1] > backlog[len(backlog) // 2] > backlog[len(backlog) // 4]


def test_same_seed_gives_identical_bytes():
    a = simulate(_single_link(), _counterexample_classes(), TandemMode(), horizon=2000, seed=9)
    b = simulate(_single_link(), _counterexample_classes(), TandemMode(), horizon=2000, seed=9)
    assert a.to_json_bytes() == b.to_json_bytes()
    assert a.to_csv_bytes() == b.to_csv_bytes()
    c = simulate(_single_link(), _counterexample_classes(), TandemMode(), horizon=2000, seed=10)
    assert a.to_json_bytes() != c.to_json_bytes()


def test_one_hop_delay_zero_with_ample_keys():
    r = simulate(
        _single_link(), [TrafficClass(0, 0, Unicast(1), Bernoulli(0.3))],
        TandemMode(), keys=AMPLE_KEYS, horizon=5000, seed=4,
    )
    assert r.mean_delay(0) == 0.0
    assert r.delivered_rate(0) == r.total_arrivals / 5000


# ---------------------------------------------------------------------------
# scheduling

def test_ento_orders_by_hops_traversed():
    q = EntoQueue()
    for hops, pid in ((2, 0), (0, 1), (1, 2)):
        rec = PacketRecord(pid, 0, 0, 1)
        q.push(Copy(rec, None, 0, hops, -1))
    order = [q.pop_eligible(5).hops for _ in range(3)]
    assert order == [0, 1, 2]


def test_ento_ties_break_by_packet_id():
    q = EntoQueue()
    for pid in (7, 3, 5):
        q.push(Copy(PacketRecord(pid, 0, 0, 1), None, 0, 1, -1))
    assert [q.pop_eligible(5).record.id for _ in range(3)] == [3, 5, 7]


def test_ento_defers_same_slot_arrivals():
    q = EntoQueue()
    old = Copy(PacketRecord(0, 0, 0, 1), None, 0, 5, -1)
    fresh = Copy(PacketRecord(1, 0, 0, 1), None, 0, 0, 3)  # moved this slot
    q.push(old)
    q.push(fresh)
    assert q.pop_eligible(3) is old
    assert q.pop_eligible(3) is None
    q.flush_deferred()
    assert q.pop_eligible(4) is fresh


def test_ento_scheduler_runs_end_to_end():
    g = erdos_renyi(8, 0.5, seed=2)
    classes = [TrafficClass(0, 0, Unicast(5), Bernoulli(0.2))]
    r = simulate(g, classes, TandemMode(), scheduler="ento", horizon=4000, seed=5,
                 check_invariants=True)
    assert r.class_delivered[0] > 0


# ---------------------------------------------------------------------------
# trees

def test_broadcast_forks_and_counts_single_delivery():
    # star around node 0, broadcast from leaf 1: one fork at the hub
    g = build_graph(4, [EdgeSpec(0, 1), EdgeSpec(0, 2), EdgeSpec(0, 3)])
    classes = [TrafficClass(0, 1, Broadcast(), Bernoulli(1.0))]
    r = simulate(g, classes, TandemMode(), keys=AMPLE_KEYS, horizon=2000, seed=6,
                 check_invariants=True)
    # every arrival eventually delivered exactly once (to all three nodes)
    assert r.total_arrivals == 2000
    assert r.class_delivered[0] >= 1995
    # hub hop crossed in the arrival slot, leaves one slot later
    assert r.mean_delay(0) == 1.0


def test_broadcast_delivery_rate_tracks_arrivals_at_interior_load():
    g = erdos_renyi(6, 0.6, seed=8)
    classes = [TrafficClass(0, 0, Broadcast(), Bernoulli(0.15))]
    r = simulate(g, classes, TandemMode(), horizon=20_000, seed=7)
    assert abs(r.delivered_rate(0) - 0.15) < 0.01


def test_multicast_and_anycast_end_to_end():
    from qkdsim.traffic import Anycast, Multicast

    g = erdos_renyi(7, 0.5, seed=9)
    classes = [
        TrafficClass(0, 0, Multicast((2, 5)), Bernoulli(0.1)),
        TrafficClass(1, 3, Anycast((0, 6)), Bernoulli(0.15)),
    ]
    r = simulate(g, classes, TandemMode(), horizon=15_000, seed=22, check_invariants=True)
    assert abs(r.delivered_rate(0) - 0.1) < 0.01
    assert abs(r.delivered_rate(1) - 0.15) < 0.01


def test_per_edge_key_override_changes_service():
    # starve the lone link through an override despite a generous default
    g = _single_link()
    classes = [TrafficClass(0, 0, Unicast(1), Bernoulli(0.5))]
    starved = KeySpec(kind="deterministic", value=10,
                      overrides=(((0, 1), KeySpec(kind="deterministic", value=0)),))
    r = simulate(g, classes, TandemMode(), keys=starved, horizon=500, seed=23)
    assert r.total_delivered == 0
    r2 = simulate(g, classes, TandemMode(), keys=KeySpec(kind="deterministic", value=10),
                  horizon=500, seed=23)
    assert r2.total_delivered > 0


# ---------------------------------------------------------------------------
# invariants and conservation

def test_instrumented_run_passes_invariants():
    g = erdos_renyi(6, 0.6, seed=1)
    classes = [
        TrafficClass(0, 0, Unicast(4), Bernoulli(0.25)),
        TrafficClass(1, 2, Broadcast(), Bernoulli(0.1)),
    ]
    r = simulate(g, classes, TandemMode(), horizon=3000, seed=11, check_invariants=True)
    assert r.total_arrivals == r.total_delivered + r.total_dropped + r.in_flight


def test_conservation_holds_with_drops():
    g = build_graph(3, [EdgeSpec(0, 1, eta=0.4), EdgeSpec(1, 2, eta=0.4)])
    classes = [TrafficClass(0, 0, Unicast(2), TruncatedPoisson(2.0, cap=8))]
    r = simulate(g, classes, TandemMode(), horizon=3000, seed=12, queue_cap=5,
                 check_invariants=True)
    assert r.total_dropped > 0
    assert r.total_arrivals == r.total_delivered + r.total_dropped + r.in_flight


def test_no_storage_discards_residual_keys():
    r = simulate(_single_link(), _counterexample_classes(0.1), TandemMode(key_storage=False),
                 horizon=4000, seed=13, check_invariants=True)
    assert (r.series["keys_sum"] == 0).all()
    assert r.mean_residual_keys == 0.0
    r2 = simulate(_single_link(), _counterexample_classes(0.1), TandemMode(key_storage=True),
                  horizon=4000, seed=13)
    assert r2.mean_residual_keys > 100  # surplus rate 0.4/slot accumulates


def test_storage_beats_no_storage_on_delay():
    g = erdos_renyi(8, 0.5, seed=3)
    classes = [TrafficClass(0, 1, Unicast(6), Bernoulli(0.2))]
    store = simulate(g, classes, TandemMode(True), horizon=20_000, seed=14)
    nostore = simulate(g, classes, TandemMode(False), horizon=20_000, seed=14)
    assert store.mean_delay(0) < nostore.mean_delay(0)


# ---------------------------------------------------------------------------
# virtual-queue trace replay (miniature of the acceptance check)

def test_trace_matches_scalar_replay():
    g = erdos_renyi(5, 0.6, seed=4)
    classes = [
        TrafficClass(0, 0, Unicast(3), Bernoulli(0.4)),
        TrafficClass(1, 2, Unicast(0), TruncatedPoisson(0.5, cap=4)),
    ]
    r = simulate(g, classes, TandemMode(), horizon=300, seed=15, trace=True)
    a = r.trace["arrivals"]
    kappa = r.trace["kappa"]
    x = np.zeros(g.m)
    y = np.zeros(g.m)
    gamma = np.array([e.gamma for e in g.edges])
    for t in range(300):
        x = np.maximum(0, x + a[t] - kappa[t])
        y = np.maximum(0, y + a[t] - gamma)
        assert (x == r.trace["x_tilde"][t]).all()
        assert (y == r.trace["y_tilde"][t]).all()


# ---------------------------------------------------------------------------
# multilevel mode

def _mixed_line():
    # QKD backbone 0-1-2 plus plain shortcut 0-2
    return build_graph(
        3,
        [EdgeSpec(0, 1, eta=0.6), EdgeSpec(1, 2, eta=0.6), EdgeSpec(0, 2, eta=1.0, has_qkd=False)],
    )


def test_multilevel_classical_skips_encryption():
    g = _mixed_line()
    classes = [
        TrafficClass(0, 0, Unicast(2), Bernoulli(0.3), security="quantum"),
        TrafficClass(1, 0, Unicast(2), Bernoulli(0.3), security="classical"),
    ]
    r = simulate(g, classes, MultilevelMode(), horizon=20_000, seed=16, check_invariants=True)
    assert r.mean_delay(1) < r.mean_delay(0)
    # plain class rides the shortcut, so it never waits for keys at all
    assert r.mean_delay(1) == 0.0


def test_multilevel_classical_on_qkd_edge_uses_no_keys():
    # the only 0->1 link is key-equipped; plain traffic crosses it keyless
    g = _mixed_line()
    classes = [TrafficClass(0, 0, Unicast(1), Bernoulli(0.4), security="classical")]
    r = simulate(g, classes, MultilevelMode(), horizon=10_000, seed=21, check_invariants=True)
    assert r.mean_delay(0) == 0.0
    assert abs(r.delivered_rate(0) - 0.4) < 0.02


def test_multilevel_priorities_order_encryption():
    g = build_graph(2, [EdgeSpec(0, 1, gamma=5, eta=0.45, directed=True)])
    classes = [
        TrafficClass(0, 0, Unicast(1), Bernoulli(0.2), security="quantum", priority=1),
        TrafficClass(1, 0, Unicast(1), Bernoulli(0.2), security="quantum", priority=0),
    ]
    r = simulate(g, classes, MultilevelMode(), horizon=30_000, seed=17, check_invariants=True)
    assert r.mean_delay(0) < r.mean_delay(1)


def test_multilevel_rejects_nothing_but_tandem_rejects_mixed():
    g = _mixed_line()
    classes = [TrafficClass(0, 0, Unicast(2), Bernoulli(0.1), security="classical")]
    with pytest.raises(ValueError):
        simulate(g, classes, TandemMode(), horizon=10, seed=0)
    r = simulate(g, classes, MultilevelMode(), horizon=10, seed=0)
    assert r.policy == "multilevel-store"


# ---------------------------------------------------------------------------
# baseline engines

def test_backpressure_rejects_broadcast():
    g = _single_link()
    classes = [TrafficClass(0, 0, Broadcast(), Bernoulli(0.1))]
    with pytest.raises(ValueError, match="unicast"):
        simulate(g, classes, BackpressureMode(), horizon=10, seed=0)


def test_backpressure_caps_key_banks():
    g = build_graph(3, [EdgeSpec(0, 1, eta=1.0), EdgeSpec(1, 2, eta=1.0)])
    classes = [TrafficClass(0, 0, Unicast(2), Bernoulli(0.1))]
    r = simulate(g, classes, BackpressureMode(key_cap=10), horizon=5000, seed=18)
    assert r.series["keys_sum"].max() <= 10 * g.m
    assert r.class_delivered[0] > 0


def test_backpressure_delivers_on_two_path_network():
    g = build_graph(4, [EdgeSpec(0, 1, eta=0.9), EdgeSpec(1, 3, eta=0.9),
                        EdgeSpec(0, 2, eta=0.9), EdgeSpec(2, 3, eta=0.9)])
    classes = [TrafficClass(0, 0, Unicast(3), Bernoulli(0.3))]
    r = simulate(g, classes, BackpressureMode(), horizon=20_000, seed=19)
    assert r.delivered_rate(0) > 0.25
    assert r.total_arrivals == r.total_delivered + r.total_dropped + r.in_flight


def test_single_queue_multi_hop():
    g = build_graph(3, [EdgeSpec(0, 1, eta=2.0), EdgeSpec(1, 2, eta=2.0)])
    classes = [TrafficClass(0, 0, Unicast(2), Bernoulli(0.3))]
    r = simulate(g, classes, SingleQueueMode(), horizon=20_000, seed=20)
    assert abs(r.delivered_rate(0) - 0.3) < 0.02


def test_engine_argument_validation():
    g = _single_link()
    with pytest.raises(ValueError):
        simulate(g, _counterexample_classes(), TandemMode(), horizon=0, seed=0)
    with pytest.raises(ValueError):
        simulate(g, [], TandemMode(), horizon=10, seed=0)
    with pytest.raises(ValueError):
        simulate(g, _counterexample_classes(), TandemMode(), scheduler="lifo", horizon=10, seed=0)
