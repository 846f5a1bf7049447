"""Routing policies over the virtual-queue state.

The tandem policy keeps two counters per edge: one for packets notionally
waiting for keys, one for packets notionally waiting for link capacity.
Edge weights are the sum of the two, routes are minimum-weight routes of
the class's kind, and both counters evolve by clamped (Lindley) recursions
driven by the same per-slot arrival counts.  Baselines: a single-queue
policy that only ever spends freshly generated keys, and a differential-
backlog (backpressure) policy with a capped key bank.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

from .routing import (
    Route,
    anycast_route,
    min_weight_path,
    min_weight_spanning_tree,
    steiner_tree_approx,
)
from .topology import NetworkGraph
from .traffic import Anycast, Broadcast, Multicast, TrafficClass, Unicast

__all__ = [
    "VirtualQueues",
    "TandemMode",
    "SingleQueueMode",
    "BackpressureMode",
    "MultilevelMode",
    "PolicyMode",
    "assign_weights",
    "virtual_update",
    "lyapunov",
    "drift_bound",
    "select_routes",
    "multilevel_select_routes",
    "single_queue_service",
    "backpressure_activations",
]


# ---------------------------------------------------------------------------
# policy modes

@dataclass(frozen=True)
class TandemMode:
    key_storage: bool = True

    @property
    def label(self) -> str:
        return "tandem-store" if self.key_storage else "tandem-nostore"


@dataclass(frozen=True)
class SingleQueueMode:
    label = "single-queue"


@dataclass(frozen=True)
class BackpressureMode:
    key_cap: int = 50

    label = "backpressure"


@dataclass(frozen=True)
class MultilevelMode:
    """Mixed security levels: only some links generate keys, only some
    classes require key encryption; the rest skip the encryption queue."""

    key_storage: bool = True

    @property
    def label(self) -> str:
        return "multilevel-store" if self.key_storage else "multilevel-nostore"


PolicyMode = Union[TandemMode, SingleQueueMode, BackpressureMode, MultilevelMode]


# ---------------------------------------------------------------------------
# virtual queues

@dataclass
class VirtualQueues:
    x_tilde: list[float]
    y_tilde: list[float]

    @classmethod
    def zeros(cls, m: int) -> "VirtualQueues":
        return cls([0.0] * m, [0.0] * m)


def assign_weights(vq: VirtualQueues) -> list[float]:
    """Per-edge weight: sum of both virtual queues."""
    return [x + y for x, y in zip(vq.x_tilde, vq.y_tilde)]


def virtual_update(
    vq: VirtualQueues,
    arrivals: Mapping[int, int] | Sequence[int],
    kappa: Sequence[int],
    gamma: Sequence[int],
) -> VirtualQueues:
    """One clamped-recursion step; pure, returns a new state.

    ``arrivals`` holds per-edge virtual arrival counts (a packet counts on
    every edge of its assigned route), ``kappa`` the keys available this
    slot, ``gamma`` the link capacities.
    """
    m = len(vq.x_tilde)
    get = arrivals.get if isinstance(arrivals, dict) else lambda e, _d=0: arrivals[e]
    x_new = [0.0] * m
    y_new = [0.0] * m
    for e in range(m):
        a = get(e, 0)
        x_new[e] = max(0.0, vq.x_tilde[e] + a - kappa[e])
        y_new[e] = max(0.0, vq.y_tilde[e] + a - gamma[e])
    return VirtualQueues(x_new, y_new)


def lyapunov(vq: VirtualQueues) -> float:
    """Sum of squared virtual queue lengths."""
    return sum(x * x for x in vq.x_tilde) + sum(y * y for y in vq.y_tilde)


def drift_bound(g: NetworkGraph, a_max: int, k_max: int) -> float:
    """Constant upper-bound term of the one-step quadratic drift."""
    gamma_max = max(e.gamma for e in g.edges)
    return g.m * (2.0 * a_max**2 + float(k_max) ** 2 + float(gamma_max) ** 2)


# ---------------------------------------------------------------------------
# route selection

def _route_for_class(
    g: NetworkGraph,
    weights: Sequence[float],
    cls: TrafficClass,
    allowed: Sequence[bool] | None,
) -> Route:
    kind = cls.kind
    if isinstance(kind, Unicast):
        return min_weight_path(g, weights, cls.source, kind.destination, allowed)
    if isinstance(kind, Broadcast):
        return min_weight_spanning_tree(g, weights, cls.source, allowed)
    if isinstance(kind, Multicast):
        return steiner_tree_approx(g, weights, cls.source, kind.destinations, allowed)
    if isinstance(kind, Anycast):
        return anycast_route(g, weights, cls.source, kind.candidates, allowed)
    raise TypeError(f"unknown traffic kind {kind!r}")


def select_routes(
    g: NetworkGraph,
    weights: Sequence[float],
    arrivals: Mapping[int, int],
    classes: Sequence[TrafficClass],
    allowed: Sequence[bool] | None = None,
) -> dict[int, Route]:
    """Minimum-weight route per class that has at least one arrival.

    All packets of a class arriving in the same slot share one route.
    """
    by_id = {c.id: c for c in classes}
    routes: dict[int, Route] = {}
    for cid in sorted(arrivals):
        if arrivals[cid] >= 1:
            routes[cid] = _route_for_class(g, weights, by_id[cid], allowed)
    return routes


def multilevel_select_routes(
    g: NetworkGraph,
    vq: VirtualQueues,
    arrivals: Mapping[int, int],
    classes: Sequence[TrafficClass],
) -> dict[int, Route]:
    """Route selection under mixed security levels.

    Key-encrypted classes are confined to the key-equipped subgraph and see
    both queue counters; plain classes roam the whole graph but only the
    transmission counter matters to them (they skip the encryption stage).
    """
    qkd_mask = [e.has_qkd for e in g.edges]
    w_quantum = assign_weights(vq)
    w_classical = list(vq.y_tilde)
    by_id = {c.id: c for c in classes}
    routes: dict[int, Route] = {}
    for cid in sorted(arrivals):
        if arrivals[cid] < 1:
            continue
        cls = by_id[cid]
        if cls.security == "quantum":
            routes[cid] = _route_for_class(g, w_quantum, cls, qkd_mask)
        else:
            routes[cid] = _route_for_class(g, w_classical, cls, None)
    return routes


# ---------------------------------------------------------------------------
# baselines

def single_queue_service(queue_len: int, gamma: int, fresh_keys: int) -> int:
    """Packets served this slot when only fresh keys may be spent."""
    return min(queue_len, gamma, fresh_keys)


def backpressure_activations(
    queue_lens: Sequence[Sequence[int]],
    g: NetworkGraph,
    kappa: Sequence[int],
    class_ids: Sequence[int],
    edge_order: Sequence[int] | None = None,
) -> list[tuple[int, int, int]]:
    """Per-link service decisions from differential backlogs.

    ``queue_lens[node][class]`` is a start-of-slot snapshot.  Each link
    picks the commodity with the largest positive backlog differential
    (ties to the lower class id) and serves up to min(gamma, kappa) of it.
    Returns (edge id, class id, count) activations.
    """
    order = range(g.m) if edge_order is None else edge_order
    cids = sorted(class_ids)
    acts: list[tuple[int, int, int]] = []
    for eid in order:
        e = g.edges[eid]
        best_c = -1
        best_diff = 0
        for c in cids:
            diff = queue_lens[e.u][c] - queue_lens[e.v][c]
            if diff > best_diff:
                best_diff = diff
                best_c = c
        if best_c < 0:
            continue
        n = min(e.gamma, kappa[eid], queue_lens[e.u][best_c])
        if n > 0:
            acts.append((eid, best_c, n))
    return acts
