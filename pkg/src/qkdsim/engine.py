"""Slotted-time simulation loop: physical queues, encryption, forwarding.

Each slot runs the same phase sequence: route assignment for fresh
arrivals, key generation, encryption (unencrypted queue -> encrypted
queue, one key per packet), link transmission, delivery bookkeeping, and
the virtual-queue update.  A packet may pass straight through an edge
(arrive, encrypt, transmit) within one slot, but a forwarded packet only
becomes serviceable at the next hop from the following slot.

Key banks are debited by the virtual unencrypted demand each slot; debited
keys are held per link ("escrow") until a physical packet consumes them at
encryption.  This is what keeps the bank residual and the virtual backlog
from being positive at the same time, exactly, slot by slot.
"""

from __future__ import annotations

import heapq
import io
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .keying import KeyBank, KeySpec, make_key_sampler
from .policy import (
    BackpressureMode,
    MultilevelMode,
    PolicyMode,
    SingleQueueMode,
    TandemMode,
    VirtualQueues,
    multilevel_select_routes,
    select_routes,
)
from .routing import PathRoute, UnreachableError, anycast_route, min_weight_path
from .topology import NetworkGraph
from .traffic import Anycast, Broadcast, Multicast, TrafficClass, Unicast, make_sampler

__all__ = ["MetricsRecord", "simulate", "InvariantViolation"]


class InvariantViolation(AssertionError):
    pass


# ---------------------------------------------------------------------------
# packets

class PacketRecord:
    __slots__ = ("id", "cls_id", "birth", "remaining", "dead", "delivered_slot")

    def __init__(self, pid: int, cls_id: int, birth: int, remaining: int):
        self.id = pid
        self.cls_id = cls_id
        self.birth = birth
        self.remaining = remaining
        self.dead = False
        self.delivered_slot: int | None = None


class Copy:
    """One physical instance of a packet sitting at (or crossing) an edge."""

    __slots__ = ("record", "route", "pos", "hops", "moved_at")

    def __init__(self, record: PacketRecord, route, pos: int, hops: int, moved_at: int):
        self.record = record
        self.route = route
        self.pos = pos  # path: index into route.edges; tree: current edge id
        self.hops = hops
        self.moved_at = moved_at


class FifoQueue:
    __slots__ = ("items",)

    def __init__(self):
        self.items = deque()

    def push(self, copy: Copy) -> None:
        self.items.append(copy)

    def pop_eligible(self, slot: int) -> Copy | None:
        items = self.items
        while items:
            head = items[0]
            if head.record.dead:
                items.popleft()
                continue
            if head.moved_at == slot:
                return None  # everything behind arrived this slot too
            return items.popleft()
        return None

    def flush_deferred(self) -> None:
        pass

    def __len__(self) -> int:
        return len(self.items)


class EntoQueue:
    """Serve the copy that has traversed the fewest hops; ties by packet id."""

    __slots__ = ("heap", "_seq", "_deferred")

    def __init__(self):
        self.heap: list[tuple[int, int, int, Copy]] = []
        self._seq = 0
        self._deferred: list[tuple[int, int, int, Copy]] = []

    def push(self, copy: Copy) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (copy.hops, copy.record.id, self._seq, copy))

    def pop_eligible(self, slot: int) -> Copy | None:
        while self.heap:
            entry = heapq.heappop(self.heap)
            copy = entry[3]
            if copy.record.dead:
                continue
            if copy.moved_at == slot:
                self._deferred.append(entry)
                continue
            return copy
        return None

    def flush_deferred(self) -> None:
        for entry in self._deferred:
            heapq.heappush(self.heap, entry)
        self._deferred.clear()

    def __len__(self) -> int:
        return len(self.heap) + len(self._deferred)


def _make_queue(scheduler: str):
    if scheduler == "fifo":
        return FifoQueue()
    if scheduler == "ento":
        return EntoQueue()
    raise ValueError(f"unknown scheduler {scheduler!r}; expected 'fifo' or 'ento'")


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsRecord:
    """Aggregates plus optional per-slot series for one simulation run."""

    policy: str
    scheduler: str
    horizon: int
    seed: int
    nodes: int
    edge_count: int
    class_arrivals: dict[int, int]
    class_delivered: dict[int, int]
    class_dropped: dict[int, int]
    class_delay_sum: dict[int, int]
    in_flight: int
    mean_residual_keys: float
    mean_backlog: float
    final_backlog: float
    series: dict[str, np.ndarray] | None = None
    trace: dict[str, np.ndarray] | None = field(default=None, repr=False)

    @property
    def total_arrivals(self) -> int:
        return sum(self.class_arrivals.values())

    @property
    def total_delivered(self) -> int:
        return sum(self.class_delivered.values())

    @property
    def total_dropped(self) -> int:
        return sum(self.class_dropped.values())

    def delivered_rate(self, cls_id: int | None = None) -> float:
        if cls_id is None:
            return self.total_delivered / self.horizon
        return self.class_delivered[cls_id] / self.horizon

    def mean_delay(self, cls_id: int | None = None) -> float | None:
        """Mean delivery delay in slots; None when nothing was delivered."""
        if cls_id is None:
            delivered = self.total_delivered
            delay = sum(self.class_delay_sum.values())
        else:
            delivered = self.class_delivered[cls_id]
            delay = self.class_delay_sum[cls_id]
        return delay / delivered if delivered else None

    def to_json_dict(self) -> dict:
        per_class = {
            str(cid): {
                "arrivals": self.class_arrivals[cid],
                "delivered": self.class_delivered[cid],
                "dropped": self.class_dropped[cid],
                "delay_sum": self.class_delay_sum[cid],
                "delivered_rate": self.class_delivered[cid] / self.horizon,
                "mean_delay": self.mean_delay(cid),
            }
            for cid in sorted(self.class_arrivals)
        }
        return {
            "policy": self.policy,
            "scheduler": self.scheduler,
            "horizon": self.horizon,
            "seed": self.seed,
            "nodes": self.nodes,
            "edge_count": self.edge_count,
            "classes": per_class,
            "totals": {
                "arrivals": self.total_arrivals,
                "delivered": self.total_delivered,
                "dropped": self.total_dropped,
                "in_flight": self.in_flight,
                "delivered_rate": self.total_delivered / self.horizon,
                "mean_delay": self.mean_delay(),
            },
            "mean_residual_keys": self.mean_residual_keys,
            "mean_backlog": self.mean_backlog,
            "final_backlog": self.final_backlog,
        }

    def to_json_bytes(self) -> bytes:
        return (json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n").encode()

    def to_csv_bytes(self) -> bytes:
        if self.series is None:
            raise ValueError("run was executed without per-slot series recording")
        cols = list(self.series)
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        arrays = [self.series[c] for c in cols]
        for row in zip(*arrays):
            buf.write(",".join(repr(v.item()) if hasattr(v, "item") else repr(v) for v in row) + "\n")
        return buf.getvalue().encode()


# ---------------------------------------------------------------------------
# shared helpers

def _reachable(g: NetworkGraph, s: int, allowed: Sequence[bool] | None) -> set[int]:
    seen = {s}
    stack = [s]
    while stack:
        u = stack.pop()
        for eid in g.out_edges[u]:
            if allowed is not None and not allowed[eid]:
                continue
            v = g.edges[eid].v
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _check_routability(g: NetworkGraph, classes: Sequence[TrafficClass], quantum_only: bool) -> None:
    mask = [e.has_qkd for e in g.edges] if quantum_only else None
    for cls in classes:
        if quantum_only and cls.security != "quantum":
            continue
        reach = _reachable(g, cls.source, mask)
        kind = cls.kind
        if isinstance(kind, Unicast) and kind.destination not in reach:
            raise UnreachableError(f"class {cls.id}: destination unreachable on its allowed subgraph")
        if isinstance(kind, Broadcast) and len(reach) != g.n:
            raise UnreachableError(f"class {cls.id}: broadcast cannot reach every node on its allowed subgraph")
        if isinstance(kind, Multicast) and not set(kind.destinations) <= reach:
            raise UnreachableError(f"class {cls.id}: a multicast terminal is unreachable on its allowed subgraph")
        if isinstance(kind, Anycast) and not set(kind.candidates) & reach:
            raise UnreachableError(f"class {cls.id}: no anycast candidate reachable on its allowed subgraph")


def _spawn_streams(seed: int, n_classes: int, m: int):
    children = np.random.SeedSequence(seed).spawn(n_classes + m + 1)
    class_rngs = [np.random.default_rng(s) for s in children[:n_classes]]
    edge_rngs = [np.random.default_rng(s) for s in children[n_classes : n_classes + m]]
    misc_rng = np.random.default_rng(children[-1])
    return class_rngs, edge_rngs, misc_rng


class _SeriesBuffer:
    def __init__(self, record_series: bool, stride: int, drift: bool):
        self.enabled = record_series
        self.stride = max(1, stride)
        self.drift = drift
        self.cols: dict[str, list] = {
            k: []
            for k in (
                "slot",
                "arrivals_cum",
                "delivered_cum",
                "dropped_cum",
                "backlog_sum",
                "vq_sum",
                "x_sum",
                "y_sum",
                "keys_sum",
            )
        }
        if drift:
            self.cols["lyapunov"] = []
            self.cols["drift"] = []

    def append(self, slot, arrivals, delivered, dropped, backlog, vq, x, y, keys, lyap=None, drift=None):
        if not self.enabled or slot % self.stride:
            return
        c = self.cols
        c["slot"].append(slot)
        c["arrivals_cum"].append(arrivals)
        c["delivered_cum"].append(delivered)
        c["dropped_cum"].append(dropped)
        c["backlog_sum"].append(backlog)
        c["vq_sum"].append(vq)
        c["x_sum"].append(x)
        c["y_sum"].append(y)
        c["keys_sum"].append(keys)
        if self.drift:
            c["lyapunov"].append(lyap)
            c["drift"].append(drift)

    def arrays(self) -> dict[str, np.ndarray] | None:
        if not self.enabled:
            return None
        out = {}
        for k, v in self.cols.items():
            kind = float if k in ("backlog_sum", "vq_sum", "lyapunov", "drift") else np.int64
            out[k] = np.asarray(v, dtype=kind)
        return out


# ---------------------------------------------------------------------------
# tandem engine (plain and multilevel)

class _TandemEngine:
    def __init__(
        self,
        g: NetworkGraph,
        classes: Sequence[TrafficClass],
        mode: TandemMode | MultilevelMode,
        keys: KeySpec,
        scheduler: str,
        horizon: int,
        seed: int,
        queue_cap: int,
        record_series: bool,
        series_stride: int,
        check_invariants: bool,
        trace: bool,
        record_drift: bool,
    ):
        self.g = g
        self.classes = sorted(classes, key=lambda c: c.id)
        self.mode = mode
        self.multilevel = isinstance(mode, MultilevelMode)
        self.storage = mode.key_storage
        self.horizon = horizon
        self.seed = seed
        self.queue_cap = queue_cap
        self.check = check_invariants
        self.trace_on = trace

        if not self.multilevel:
            if any(not e.has_qkd for e in g.edges):
                raise ValueError("tandem mode needs key generation on every edge; use multilevel mode")
            if any(c.security != "quantum" for c in self.classes):
                raise ValueError("tandem mode carries key-encrypted traffic only; use multilevel mode")
        _check_routability(g, self.classes, quantum_only=True)

        m = g.m
        class_rngs, edge_rngs, self.misc_rng = _spawn_streams(seed, len(self.classes), m)
        self.arr = {
            cls.id: make_sampler(cls.arrival, class_rngs[i]).sample_batch(horizon).tolist()
            for i, cls in enumerate(self.classes)
        }
        self.qkd_ids = list(g.qkd_edge_ids())
        self.keys_fresh = {
            e: make_key_sampler(keys.process_for_edge(g.edges[e].u, g.edges[e].v, g.edges[e].eta), edge_rngs[e]).sample_batch(horizon).tolist()
            for e in self.qkd_ids
        }
        self.banks: list[KeyBank | None] = [KeyBank() if g.edges[e].has_qkd else None for e in range(m)]
        self.escrow = [0] * m
        self.reserved_total = [0] * m
        self.moved_total = [0] * m
        self.transmitted_total = [0] * m
        self.transmitted_quantum = [0] * m

        prios = sorted({c.priority for c in self.classes}, reverse=True)
        self.prio_rank = {p: i for i, p in enumerate(prios)}
        self.n_prio = len(prios)
        self.x_q: list[list] = [[deque() for _ in range(self.n_prio)] for _ in range(m)]
        self.x_len = [0] * m
        self.y_q = [_make_queue(scheduler) for _ in range(m)]
        self.scheduler = scheduler
        self.active_y: set[int] = set()

        self.x_tilde = [0.0] * m
        self.y_tilde = [0.0] * m
        self.active_vq: set[int] = set()
        self.kappa_now = [0] * m
        self.gamma = [e.gamma for e in g.edges]

        ids = [c.id for c in self.classes]
        self.class_arrivals = dict.fromkeys(ids, 0)
        self.class_delivered = dict.fromkeys(ids, 0)
        self.class_dropped = dict.fromkeys(ids, 0)
        self.class_delay = dict.fromkeys(ids, 0)
        self.live = dict.fromkeys(ids, 0)
        self.by_id = {c.id: c for c in self.classes}
        self.security = {c.id: c.security for c in self.classes}
        self.terminal_count = {
            c.id: len(c.destination_nodes(g.n)) if not isinstance(c.kind, (Unicast, Anycast)) else 1
            for c in self.classes
        }

        self.next_pid = 0
        self.keys_total = 0  # residual + escrow across edges
        self.keys_running = 0.0
        self.backlog_running = 0.0
        self.x_total = 0
        self.y_total = 0
        self.vq_total = 0.0
        self.lyap = 0.0
        self.lyap_prev = 0.0
        self.series = _SeriesBuffer(record_series, series_stride, record_drift)
        self.record_drift = record_drift
        if trace:
            self.trace_a = np.zeros((horizon, m), dtype=np.int64)
            self.trace_kappa = np.zeros((horizon, m), dtype=np.int64)
            self.trace_x = np.zeros((horizon, m), dtype=np.float64)
            self.trace_y = np.zeros((horizon, m), dtype=np.float64)

    # -- admission ---------------------------------------------------------

    def _admit(self, cls: TrafficClass, route, n: int, slot: int) -> None:
        quantum = self.security[cls.id] == "quantum"
        for _ in range(n):
            rec = PacketRecord(self.next_pid, cls.id, slot, self.terminal_count[cls.id])
            self.next_pid += 1
            self.live[cls.id] += 1
            if isinstance(route, PathRoute):
                first = route.edges[0]
                copy = Copy(rec, route, 0, 0, -1)
                self._place(copy, first, quantum, slot)
            else:
                for child in route.children.get(route.root, ()):
                    copy = Copy(rec, route, child, 0, -1)
                    if not self._place(copy, child, quantum, slot):
                        break

    def _place(self, copy: Copy, eid: int, quantum: bool, slot: int) -> bool:
        """Enqueue a copy at an edge; drops the packet when the queue is full."""
        if quantum:
            if self.x_len[eid] >= self.queue_cap:
                self._drop(copy.record)
                return False
            self.x_q[eid][self.prio_rank[self.by_id[copy.record.cls_id].priority]].append(copy)
            self.x_len[eid] += 1
            self.x_total += 1
        else:
            if len(self.y_q[eid]) >= self.queue_cap:
                self._drop(copy.record)
                return False
            self.y_q[eid].push(copy)
            self.y_total += 1
            self.active_y.add(eid)
        return True

    def _drop(self, rec: PacketRecord) -> None:
        if rec.dead or rec.delivered_slot is not None:
            return
        rec.dead = True
        self.class_dropped[rec.cls_id] += 1
        self.live[rec.cls_id] -= 1

    def _deliver(self, rec: PacketRecord, slot: int) -> None:
        rec.delivered_slot = slot
        self.class_delivered[rec.cls_id] += 1
        self.class_delay[rec.cls_id] += slot - rec.birth
        self.live[rec.cls_id] -= 1

    # -- phases -------------------------------------------------------------

    def _encrypt(self, eid: int, budget: int) -> int:
        """Move up to ``budget`` waiting copies into the encrypted queue."""
        moved = 0
        for level in self.x_q[eid]:
            while level and moved < budget:
                copy = level.popleft()
                self.x_len[eid] -= 1
                self.x_total -= 1
                if copy.record.dead:
                    continue
                self.y_q[eid].push(copy)
                self.y_total += 1
                moved += 1
            if moved >= budget:
                break
        if moved and len(self.y_q[eid]):
            self.active_y.add(eid)
        return moved

    def _arrive(self, copy: Copy, eid: int, slot: int) -> None:
        rec = copy.record
        v = self.g.edges[eid].v
        copy.hops += 1
        copy.moved_at = slot
        quantum = self.security[rec.cls_id] == "quantum"
        route = copy.route
        if isinstance(route, PathRoute):
            if copy.pos + 1 == len(route.edges):
                rec.remaining -= 1
                if rec.remaining == 0:
                    self._deliver(rec, slot)
                return
            copy.pos += 1
            self._place(copy, route.edges[copy.pos], quantum, slot)
            return
        if v in route.terminals:
            rec.remaining -= 1
            if rec.remaining == 0:
                self._deliver(rec, slot)
        for child in route.children.get(v, ()):
            fork = Copy(rec, route, child, copy.hops, slot)
            if not self._place(fork, child, quantum, slot):
                break

    # -- main loop ----------------------------------------------------------

    def run(self) -> MetricsRecord:
        g = self.g
        horizon = self.horizon
        a_q: dict[int, int] = {}
        a_c: dict[int, int] = {}
        arrivals_cum = 0
        x_post_enc = [0] * g.m if self.check else None

        for t in range(horizon):
            a_q.clear()
            a_c.clear()

            # route assignment for this slot's arrivals
            counts = {cid: row[t] for cid, row in self.arr.items() if row[t] > 0}
            if counts:
                if self.multilevel:
                    routes = multilevel_select_routes(
                        g, VirtualQueues(self.x_tilde, self.y_tilde), counts, self.classes
                    )
                else:
                    w = [x + y for x, y in zip(self.x_tilde, self.y_tilde)]
                    routes = select_routes(g, w, counts, self.classes)
                for cid, n in counts.items():
                    route = routes[cid]
                    self.class_arrivals[cid] += n
                    arrivals_cum += n
                    tgt = a_q if self.security[cid] == "quantum" else a_c
                    for e in route.edges:
                        tgt[e] = tgt.get(e, 0) + n
                    self._admit(self.by_id[cid], route, n, t)

            # key generation, reservation, encryption
            for e in self.qkd_ids:
                bank = self.banks[e]
                fresh = self.keys_fresh[e][t]
                bank.deposit(fresh)
                self.keys_total += fresh
                self.kappa_now[e] = bank.residual
                if self.storage:
                    demand = int(self.x_tilde[e]) + a_q.get(e, 0)
                    got = bank.withdraw(demand)
                    self.escrow[e] += got
                    self.reserved_total[e] += got
                    avail = self.escrow[e]
                else:
                    avail = bank.residual
                if avail and self.x_len[e]:
                    moved = self._encrypt(e, avail)
                    if self.storage:
                        self.escrow[e] -= moved
                    else:
                        bank.withdraw(moved)
                    self.moved_total[e] += moved
                    self.keys_total -= moved
                if self.check:
                    x_post_enc[e] = sum(
                        0 if c.record.dead else 1 for level in self.x_q[e] for c in level
                    )
                if not self.storage:
                    self.keys_total -= bank.discard_residual()

            # transmission
            for e in sorted(self.active_y):
                q = self.y_q[e]
                budget = self.gamma[e]
                while budget:
                    copy = q.pop_eligible(t)
                    if copy is None:
                        break
                    budget -= 1
                    self.y_total -= 1
                    self.transmitted_total[e] += 1
                    if self.security[copy.record.cls_id] == "quantum":
                        self.transmitted_quantum[e] += 1
                    self._arrive(copy, e, t)
                q.flush_deferred()
                if not len(q):
                    self.active_y.discard(e)

            # virtual update
            touched = self.active_vq | set(a_q) | set(a_c)
            for e in touched:
                aq = a_q.get(e, 0)
                a_all = aq + a_c.get(e, 0)
                x_old = self.x_tilde[e]
                y_old = self.y_tilde[e]
                x_new = max(0.0, x_old + aq - self.kappa_now[e]) if self.banks[e] is not None else x_old
                y_new = max(0.0, y_old + a_all - self.gamma[e])
                self.x_tilde[e] = x_new
                self.y_tilde[e] = y_new
                self.vq_total += (x_new - x_old) + (y_new - y_old)
                if self.record_drift:
                    self.lyap += x_new * x_new - x_old * x_old + y_new * y_new - y_old * y_old
                if x_new or y_new:
                    self.active_vq.add(e)
                else:
                    self.active_vq.discard(e)

            if self.trace_on:
                for e in range(g.m):
                    self.trace_a[t, e] = a_q.get(e, 0) + a_c.get(e, 0)
                self.trace_kappa[t] = self.kappa_now
                self.trace_x[t] = self.x_tilde
                self.trace_y[t] = self.y_tilde

            self.keys_running += self.keys_total
            self.backlog_running += self.vq_total
            if self.series.enabled:
                delivered_cum = sum(self.class_delivered.values())
                dropped_cum = sum(self.class_dropped.values())
                self.series.append(
                    t,
                    arrivals_cum,
                    delivered_cum,
                    dropped_cum,
                    self.vq_total,
                    self.vq_total,
                    self.x_total,
                    self.y_total,
                    self.keys_total,
                    self.lyap,
                    self.lyap - self.lyap_prev,
                )
            self.lyap_prev = self.lyap
            if self.check:
                self._check_invariants(t, x_post_enc)

        series = self.series.arrays()
        trace = None
        if self.trace_on:
            trace = {
                "arrivals": self.trace_a,
                "kappa": self.trace_kappa,
                "x_tilde": self.trace_x,
                "y_tilde": self.trace_y,
            }
        return MetricsRecord(
            policy=self.mode.label,
            scheduler=self.scheduler,
            horizon=horizon,
            seed=self.seed,
            nodes=g.n,
            edge_count=g.m,
            class_arrivals=self.class_arrivals,
            class_delivered=self.class_delivered,
            class_dropped=self.class_dropped,
            class_delay_sum=self.class_delay,
            in_flight=sum(self.live.values()),
            mean_residual_keys=self.keys_running / horizon,
            mean_backlog=self.backlog_running / horizon,
            final_backlog=self.vq_total,
            series=series,
            trace=trace,
        )

    # -- invariants ----------------------------------------------------------

    def _check_invariants(self, t: int, x_post_enc) -> None:
        live_by_class = dict.fromkeys(self.class_arrivals, 0)
        seen: set[int] = set()

        def visit(copy: Copy):
            rec = copy.record
            if rec.dead or rec.delivered_slot is not None or rec.id in seen:
                return
            seen.add(rec.id)
            live_by_class[rec.cls_id] += 1

        for e in range(self.g.m):
            for level in self.x_q[e]:
                for c in level:
                    visit(c)
            q = self.y_q[e]
            entries = q.items if isinstance(q, FifoQueue) else [x[3] for x in q.heap] + [x[3] for x in q._deferred]
            for c in entries:
                visit(c)

        for cid in self.class_arrivals:
            total = self.class_delivered[cid] + self.class_dropped[cid] + live_by_class[cid]
            if total != self.class_arrivals[cid]:
                raise InvariantViolation(
                    f"slot {t}: class {cid} conservation broke: "
                    f"{self.class_arrivals[cid]} arrivals vs {total} accounted"
                )
            if live_by_class[cid] != self.live[cid]:
                raise InvariantViolation(f"slot {t}: class {cid} live-count mismatch")

        for e in self.qkd_ids:
            bank = self.banks[e]
            bank.check_ledger()
            if self.transmitted_quantum[e] > self.moved_total[e]:
                raise InvariantViolation(f"slot {t}: edge {e} transmitted more than was encrypted")
            if self.storage:
                if self.escrow[e] != self.reserved_total[e] - self.moved_total[e]:
                    raise InvariantViolation(f"slot {t}: edge {e} escrow ledger broke")
                if self.x_tilde[e] > 0 and bank.residual > 0:
                    raise InvariantViolation(
                        f"slot {t}: edge {e} has virtual backlog {self.x_tilde[e]} "
                        f"with {bank.residual} idle banked keys"
                    )
                if x_post_enc[e] > self.x_tilde[e]:
                    raise InvariantViolation(
                        f"slot {t}: edge {e} physical backlog {x_post_enc[e]} "
                        f"exceeds virtual {self.x_tilde[e]}"
                    )


# ---------------------------------------------------------------------------
# single-queue baseline

class _SingleQueueEngine:
    def __init__(self, g, classes, mode, keys, scheduler, horizon, seed, queue_cap,
                 record_series, series_stride):
        self.g = g
        self.classes = sorted(classes, key=lambda c: c.id)
        for cls in self.classes:
            if not isinstance(cls.kind, (Unicast, Anycast)):
                raise ValueError("single-queue baseline supports unicast/anycast classes only")
        if any(not e.has_qkd for e in g.edges):
            raise ValueError("single-queue baseline needs key generation on every edge")
        _check_routability(g, self.classes, quantum_only=True)
        self.horizon = horizon
        self.seed = seed
        self.queue_cap = queue_cap
        class_rngs, edge_rngs, _ = _spawn_streams(seed, len(self.classes), g.m)
        self.arr = {
            cls.id: make_sampler(cls.arrival, class_rngs[i]).sample_batch(horizon).tolist()
            for i, cls in enumerate(self.classes)
        }
        self.keys_fresh = {
            e: make_key_sampler(keys.process_for_edge(g.edges[e].u, g.edges[e].v, g.edges[e].eta), edge_rngs[e]).sample_batch(horizon).tolist()
            for e in range(g.m)
        }
        hop_w = [1.0] * g.m
        self.routes = {}
        for cls in self.classes:
            if isinstance(cls.kind, Unicast):
                self.routes[cls.id] = min_weight_path(g, hop_w, cls.source, cls.kind.destination)
            else:
                self.routes[cls.id] = anycast_route(g, hop_w, cls.source, cls.kind.candidates)
        self.queues = [deque() for _ in range(g.m)]
        ids = [c.id for c in self.classes]
        self.class_arrivals = dict.fromkeys(ids, 0)
        self.class_delivered = dict.fromkeys(ids, 0)
        self.class_dropped = dict.fromkeys(ids, 0)
        self.class_delay = dict.fromkeys(ids, 0)
        self.next_pid = 0
        self.phys_total = 0
        self.backlog_running = 0.0
        self.series = _SeriesBuffer(record_series, series_stride, drift=False)

    def run(self) -> MetricsRecord:
        g = self.g
        arrivals_cum = 0
        for t in range(self.horizon):
            for cls in self.classes:
                n = self.arr[cls.id][t]
                if not n:
                    continue
                self.class_arrivals[cls.id] += n
                arrivals_cum += n
                route = self.routes[cls.id]
                for _ in range(n):
                    rec = PacketRecord(self.next_pid, cls.id, t, 1)
                    self.next_pid += 1
                    first = route.edges[0]
                    if len(self.queues[first]) >= self.queue_cap:
                        self.class_dropped[cls.id] += 1
                        continue
                    self.queues[first].append(Copy(rec, route, 0, 0, -1))
                    self.phys_total += 1
            # fresh keys only; unused keys evaporate at slot end
            for e in range(g.m):
                q = self.queues[e]
                budget = min(g.edges[e].gamma, self.keys_fresh[e][t])
                while budget and q:
                    if q[0].moved_at == t:
                        break
                    copy = q.popleft()
                    self.phys_total -= 1
                    budget -= 1
                    copy.moved_at = t
                    if copy.pos + 1 == len(copy.route.edges):
                        self.class_delivered[copy.record.cls_id] += 1
                        self.class_delay[copy.record.cls_id] += t - copy.record.birth
                    else:
                        copy.pos += 1
                        nxt = copy.route.edges[copy.pos]
                        if len(self.queues[nxt]) >= self.queue_cap:
                            self.class_dropped[copy.record.cls_id] += 1
                        else:
                            self.queues[nxt].append(copy)
                            self.phys_total += 1
            self.backlog_running += self.phys_total
            if self.series.enabled:
                self.series.append(
                    t,
                    arrivals_cum,
                    sum(self.class_delivered.values()),
                    sum(self.class_dropped.values()),
                    float(self.phys_total),
                    0.0,
                    self.phys_total,
                    0,
                    0,
                )
        return MetricsRecord(
            policy="single-queue",
            scheduler="fifo",
            horizon=self.horizon,
            seed=self.seed,
            nodes=g.n,
            edge_count=g.m,
            class_arrivals=self.class_arrivals,
            class_delivered=self.class_delivered,
            class_dropped=self.class_dropped,
            class_delay_sum=self.class_delay,
            in_flight=self.phys_total,
            mean_residual_keys=0.0,
            mean_backlog=self.backlog_running / self.horizon,
            final_backlog=float(self.phys_total),
            series=self.series.arrays(),
        )


# ---------------------------------------------------------------------------
# backpressure baseline

class _BackpressureEngine:
    def __init__(self, g, classes, mode: BackpressureMode, keys, scheduler, horizon, seed,
                 queue_cap, record_series, series_stride):
        self.g = g
        self.classes = sorted(classes, key=lambda c: c.id)
        for cls in self.classes:
            if not isinstance(cls.kind, Unicast):
                raise ValueError("backpressure baseline supports unicast classes only")
        if any(not e.has_qkd for e in g.edges):
            raise ValueError("backpressure baseline needs key generation on every edge")
        _check_routability(g, self.classes, quantum_only=True)
        self.horizon = horizon
        self.seed = seed
        self.queue_cap = queue_cap
        self.key_cap = mode.key_cap
        class_rngs, edge_rngs, self.misc_rng = _spawn_streams(seed, len(self.classes), g.m)
        self.arr = {
            cls.id: make_sampler(cls.arrival, class_rngs[i]).sample_batch(horizon).tolist()
            for i, cls in enumerate(self.classes)
        }
        self.keys_fresh = {
            e: make_key_sampler(keys.process_for_edge(g.edges[e].u, g.edges[e].v, g.edges[e].eta), edge_rngs[e]).sample_batch(horizon).tolist()
            for e in range(g.m)
        }
        self.banks = [KeyBank() for _ in range(g.m)]
        self.dest = {c.id: c.kind.destination for c in self.classes}
        self.ids = [c.id for c in self.classes]
        self.q = {(v, c): deque() for v in range(g.n) for c in self.ids}
        self.lens = [[0] * (max(self.ids) + 1) for _ in range(g.n)]
        self.class_arrivals = dict.fromkeys(self.ids, 0)
        self.class_delivered = dict.fromkeys(self.ids, 0)
        self.class_dropped = dict.fromkeys(self.ids, 0)
        self.class_delay = dict.fromkeys(self.ids, 0)
        self.phys_total = 0
        self.keys_total = 0
        self.keys_running = 0.0
        self.backlog_running = 0.0
        self.series = _SeriesBuffer(record_series, series_stride, drift=False)

    def run(self) -> MetricsRecord:
        g = self.g
        arrivals_cum = 0
        for t in range(self.horizon):
            for cls in self.classes:
                n = self.arr[cls.id][t]
                if not n:
                    continue
                self.class_arrivals[cls.id] += n
                arrivals_cum += n
                dq = self.q[(cls.source, cls.id)]
                for _ in range(n):
                    if self.lens[cls.source][cls.id] >= self.queue_cap:
                        self.class_dropped[cls.id] += 1
                        continue
                    dq.append(t)
                    self.lens[cls.source][cls.id] += 1
                    self.phys_total += 1
            for e in range(g.m):
                bank = self.banks[e]
                fresh = self.keys_fresh[e][t]
                bank.deposit(fresh)
                self.keys_total += fresh
                over = bank.residual - self.key_cap
                if over > 0:
                    bank.residual -= over
                    bank.discarded_total += over
                    self.keys_total -= over
            snapshot = [row[:] for row in self.lens]
            order = self.misc_rng.permutation(g.m)
            for eid in order:
                e = g.edges[eid]
                best_c, best_diff = -1, 0
                for c in self.ids:
                    diff = snapshot[e.u][c] - snapshot[e.v][c]
                    if diff > best_diff:
                        best_diff, best_c = diff, c
                if best_c < 0:
                    continue
                bank = self.banks[eid]
                n = min(e.gamma, bank.residual, self.lens[e.u][best_c])
                if n <= 0:
                    continue
                bank.withdraw(n)
                self.keys_total -= n
                src = self.q[(e.u, best_c)]
                for _ in range(n):
                    birth = src.popleft()
                    self.lens[e.u][best_c] -= 1
                    if e.v == self.dest[best_c]:
                        self.class_delivered[best_c] += 1
                        self.class_delay[best_c] += t - birth
                        self.phys_total -= 1
                    elif self.lens[e.v][best_c] >= self.queue_cap:
                        self.class_dropped[best_c] += 1
                        self.phys_total -= 1
                    else:
                        self.q[(e.v, best_c)].append(birth)
                        self.lens[e.v][best_c] += 1
            self.keys_running += self.keys_total
            self.backlog_running += self.phys_total
            if self.series.enabled:
                self.series.append(
                    t,
                    arrivals_cum,
                    sum(self.class_delivered.values()),
                    sum(self.class_dropped.values()),
                    float(self.phys_total),
                    0.0,
                    self.phys_total,
                    0,
                    self.keys_total,
                )
        return MetricsRecord(
            policy="backpressure",
            scheduler="fifo",
            horizon=self.horizon,
            seed=self.seed,
            nodes=g.n,
            edge_count=g.m,
            class_arrivals=self.class_arrivals,
            class_delivered=self.class_delivered,
            class_dropped=self.class_dropped,
            class_delay_sum=self.class_delay,
            in_flight=self.phys_total,
            mean_residual_keys=self.keys_running / self.horizon,
            mean_backlog=self.backlog_running / self.horizon,
            final_backlog=float(self.phys_total),
            series=self.series.arrays(),
        )


# ---------------------------------------------------------------------------
# entry point

def simulate(
    g: NetworkGraph,
    classes: Sequence[TrafficClass],
    mode: PolicyMode,
    *,
    keys: KeySpec | None = None,
    scheduler: str = "fifo",
    horizon: int = 10_000,
    seed: int = 0,
    queue_cap: int = 10_000,
    record_series: bool = True,
    series_stride: int = 1,
    check_invariants: bool = False,
    trace: bool = False,
    record_drift: bool = False,
) -> MetricsRecord:
    """Run one seeded simulation and return its metrics.

    Runs are deterministic: identical arguments yield identical records,
    including series bytes.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not classes:
        raise ValueError("at least one traffic class is required")
    keys = keys or KeySpec()
    if isinstance(mode, (TandemMode, MultilevelMode)):
        return _TandemEngine(
            g, classes, mode, keys, scheduler, horizon, seed, queue_cap,
            record_series, series_stride, check_invariants, trace, record_drift,
        ).run()
    if isinstance(mode, SingleQueueMode):
        return _SingleQueueEngine(
            g, classes, mode, keys, scheduler, horizon, seed, queue_cap,
            record_series, series_stride,
        ).run()
    if isinstance(mode, BackpressureMode):
        return _BackpressureEngine(
            g, classes, mode, keys, scheduler, horizon, seed, queue_cap,
            record_series, series_stride,
        ).run()
    raise TypeError(f"unknown policy mode {mode!r}")
