import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdsim.policy import (
    VirtualQueues,
    assign_weights,
    backpressure_activations,
    drift_bound,
    lyapunov,
    multilevel_select_routes,
    select_routes,
    single_queue_service,
    virtual_update,
)
from qkdsim.routing import TreeRoute, UnreachableError
from qkdsim.topology import EdgeSpec, build_graph
from qkdsim.traffic import Bernoulli, Broadcast, TrafficClass, Unicast


# ---------------------------------------------------------------------------
# weights

def test_assign_weights_zero():
    assert assign_weights(VirtualQueues.zeros(3)) == [0.0, 0.0, 0.0]


def test_assign_weights_sum():
    vq = VirtualQueues([3.0, 1.0], [4.0, 0.5])
    assert assign_weights(vq) == [7.0, 1.5]


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=20))
@settings(max_examples=100, deadline=None)
def test_assign_weights_elementwise_oracle(pairs):
    vq = VirtualQueues([float(a) for a, _ in pairs], [float(b) for _, b in pairs])
    got = assign_weights(vq)
    for i, (a, b) in enumerate(pairs):
        assert got[i] == a + b


# ---------------------------------------------------------------------------
# recursions

def test_virtual_update_clamps_at_zero():
    vq = VirtualQueues([0.0], [0.0])
    out = virtual_update(vq, {0: 2}, kappa=[5], gamma=[1])
    assert out.x_tilde == [0.0]
    assert out.y_tilde == [1.0]


def test_virtual_update_arithmetic():
    vq = VirtualQueues([3.0], [2.0])
    out = virtual_update(vq, {0: 1}, kappa=[2], gamma=[1])
    assert out.x_tilde == [2.0]
    assert out.y_tilde == [2.0]


@given(
    st.integers(1, 6),
    st.lists(
        st.tuples(
            st.lists(st.integers(0, 4), min_size=6, max_size=6),
            st.lists(st.integers(0, 5), min_size=6, max_size=6),
        ),
        min_size=1,
        max_size=60,
    ),
)
@settings(max_examples=60, deadline=None)
def test_virtual_update_matches_scalar_replay(m, steps):
    vq = VirtualQueues.zeros(m)
    gamma = [1] * m
    # independent replay with plain integers
    x_ref = [0] * m
    y_ref = [0] * m
    for arrivals, kappa in steps:
        vq = virtual_update(vq, arrivals[:m], kappa[:m], gamma)
        for e in range(m):
            x_ref[e] = max(0, x_ref[e] + arrivals[e] - kappa[e])
            y_ref[e] = max(0, y_ref[e] + arrivals[e] - gamma[e])
        assert vq.x_tilde == [float(v) for v in x_ref]
        assert vq.y_tilde == [float(v) for v in y_ref]


def test_lyapunov_values():
    assert lyapunov(VirtualQueues.zeros(4)) == 0.0
    assert lyapunov(VirtualQueues([3.0], [4.0])) == 25.0


def test_drift_bound_single_edge():
    g = build_graph(2, [EdgeSpec(0, 1, gamma=1, eta=0.5, directed=True)])
    assert drift_bound(g, a_max=1, k_max=20) == 403.0


# ---------------------------------------------------------------------------
# single-queue baseline

def test_single_queue_service_rules():
    assert single_queue_service(queue_len=5, gamma=1, fresh_keys=0) == 0
    assert single_queue_service(queue_len=3, gamma=2, fresh_keys=1) == 1
    assert single_queue_service(queue_len=0, gamma=3, fresh_keys=9) == 0


def test_single_queue_saturation_rate():
    # saturated queue served at E min(1, K) with K ~ Poisson(1/2)
    rng = np.random.default_rng(0)
    keys = np.minimum(rng.poisson(0.5, 100_000), 20)
    served = sum(single_queue_service(10, 1, int(k)) for k in keys)
    assert abs(served / len(keys) - (1 - math.exp(-0.5))) < 0.01


# ---------------------------------------------------------------------------
# backpressure kernel

def _line_graph():
    return build_graph(3, [EdgeSpec(0, 1), EdgeSpec(1, 2)])


def test_backpressure_no_transmission_on_equal_backlog():
    g = _line_graph()
    lens = [[5], [5], [0]]
    acts = backpressure_activations(lens, g, kappa=[9] * g.m, class_ids=[0])
    assert all(g.edges[e].u != 0 or g.edges[e].v != 1 for e, _, _ in acts)


def test_backpressure_forwards_downhill():
    g = _line_graph()
    lens = [[10], [0], [0]]
    acts = backpressure_activations(lens, g, kappa=[9] * g.m, class_ids=[0])
    assert (g.edge_between(0, 1), 0, 1) in acts


def test_backpressure_respects_gamma_and_keys():
    g = build_graph(2, [EdgeSpec(0, 1, gamma=3)])
    lens = [[10], [0]]
    acts = backpressure_activations(lens, g, kappa=[2, 2], class_ids=[0])
    assert acts == [(g.edge_between(0, 1), 0, 2)]


def test_backpressure_commodity_choice_exhaustive():
    # two commodities: max differential wins, ties to the lower class id
    g = build_graph(2, [EdgeSpec(0, 1, gamma=1, eta=1.0, directed=True)])
    for q0 in range(4):
        for q1 in range(4):
            lens = [[q0, q1], [0, 0]]
            acts = backpressure_activations(lens, g, kappa=[5], class_ids=[0, 1])
            expect_cls = None
            if q0 or q1:
                expect_cls = 0 if q0 >= q1 else 1
            if expect_cls is None:
                assert acts == []
            else:
                assert acts == [(0, expect_cls, 1)]


# ---------------------------------------------------------------------------
# route selection

def _diamond():
    g = build_graph(4, [EdgeSpec(0, 1), EdgeSpec(1, 3), EdgeSpec(0, 2), EdgeSpec(2, 3)])
    return g


def test_select_routes_empty_without_arrivals():
    g = _diamond()
    classes = [TrafficClass(0, 0, Unicast(3), Bernoulli(0.5))]
    assert select_routes(g, [0.0] * g.m, {}, classes) == {}
    assert select_routes(g, [0.0] * g.m, {0: 0}, classes) == {}


def test_select_routes_avoids_congested_path():
    g = _diamond()
    classes = [TrafficClass(0, 0, Unicast(3), Bernoulli(0.5))]
    w = [0.0] * g.m
    w[g.edge_between(0, 1)] = 9.0  # congest the upper path
    routes = select_routes(g, w, {0: 1}, classes)
    assert routes[0].nodes == (0, 2, 3)


def test_select_routes_broadcast_returns_tree():
    g = _diamond()
    classes = [TrafficClass(0, 0, Broadcast(), Bernoulli(0.5))]
    routes = select_routes(g, [1.0] * g.m, {0: 2}, classes)
    assert isinstance(routes[0], TreeRoute)
    assert routes[0].terminals == frozenset({1, 2, 3})


@given(seed=st.integers(0, 2000), scale=st.floats(0.01, 50.0))
@settings(max_examples=40, deadline=None)
def test_selected_routes_invariant_under_scaling(seed, scale):
    g = _diamond()
    rng = np.random.default_rng(seed)
    classes = [TrafficClass(0, 0, Unicast(3), Bernoulli(0.5))]
    vq = VirtualQueues([float(v) for v in rng.integers(0, 20, g.m)],
                       [float(v) for v in rng.integers(0, 20, g.m)])
    w = assign_weights(vq)
    a = select_routes(g, w, {0: 1}, classes)
    b = select_routes(g, [scale * x for x in w], {0: 1}, classes)
    assert a == b


# ---------------------------------------------------------------------------
# multilevel route selection

def _mixed_graph():
    # 0-1-2 all QKD, plus a plain shortcut 0-2
    return build_graph(
        3,
        [
            EdgeSpec(0, 1, eta=0.8),
            EdgeSpec(1, 2, eta=0.8),
            EdgeSpec(0, 2, eta=1.0, has_qkd=False),
        ],
    )


def test_multilevel_reduces_to_plain_selection_on_full_qkd():
    g = _diamond()
    classes = [TrafficClass(0, 0, Unicast(3), Bernoulli(0.5), security="quantum")]
    vq = VirtualQueues([1.0] * g.m, [2.0] * g.m)
    plain = select_routes(g, assign_weights(vq), {0: 1}, classes)
    multi = multilevel_select_routes(g, vq, {0: 1}, classes)
    assert plain == multi


def test_multilevel_quantum_confined_to_qkd_subgraph():
    g = _mixed_graph()
    classes = [TrafficClass(0, 0, Unicast(2), Bernoulli(0.5), security="quantum")]
    routes = multilevel_select_routes(g, VirtualQueues.zeros(g.m), {0: 1}, classes)
    assert routes[0].nodes == (0, 1, 2)  # may not use the plain shortcut


def test_multilevel_classical_ignores_encryption_backlog():
    g = _mixed_graph()
    classes = [TrafficClass(0, 0, Unicast(2), Bernoulli(0.5), security="classical")]
    vq = VirtualQueues.zeros(g.m)
    # huge encryption backlog on the shortcut must not deter a plain class
    vq.x_tilde[g.edge_between(0, 2)] = 1000.0
    routes = multilevel_select_routes(g, vq, {0: 1}, classes)
    assert routes[0].nodes == (0, 2)
    # but transmission backlog does
    vq.y_tilde[g.edge_between(0, 2)] = 50.0
    routes = multilevel_select_routes(g, vq, {0: 1}, classes)
    assert routes[0].nodes == (0, 1, 2)


def test_multilevel_quantum_unreachable_inside_qkd_subgraph():
    g = build_graph(3, [EdgeSpec(0, 1, eta=0.5), EdgeSpec(1, 2, eta=1.0, has_qkd=False)])
    classes = [TrafficClass(0, 0, Unicast(2), Bernoulli(0.5), security="quantum")]
    with pytest.raises(UnreachableError):
        multilevel_select_routes(g, VirtualQueues.zeros(g.m), {0: 1}, classes)
