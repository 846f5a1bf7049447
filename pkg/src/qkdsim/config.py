"""Experiment configuration: JSON schema, validation, and scenario presets.

A config describes a sweep: one graph, a set of traffic classes, one or
more policies, a list of arrival-rate scales, and a list of seeds.  Each
(policy, scale, seed) cell is one simulation.  Parsing is strict; every
validation error names the offending field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .keying import KeySpec
from .policy import BackpressureMode, MultilevelMode, PolicyMode, SingleQueueMode, TandemMode
from .topology import EdgeSpec, NetworkGraph, build_graph, graph_from_dict, load_graph_file
from .traffic import (
    Anycast,
    Bernoulli,
    Broadcast,
    Multicast,
    PPBP,
    TrafficClass,
    TruncatedPoisson,
    Unicast,
)

__all__ = ["ConfigError", "ExperimentConfig", "PRESETS", "preset_config"]


class ConfigError(ValueError):
    pass


def _require(doc: dict, key: str, ctx: str) -> Any:
    if key not in doc:
        raise ConfigError(f"{ctx}.{key}: required field is missing")
    return doc[key]


# ---------------------------------------------------------------------------
# sub-configs

@dataclass(frozen=True)
class GraphConfig:
    kind: str  # "inline" | "file" | "erdos_renyi"
    nodes: int = 0
    edges: tuple[dict, ...] = ()
    path: str = ""
    p: float = 0.3
    gamma: int = 1
    eta_range: tuple[float, float] = (0.2, 1.0)
    graph_seed: int = 0
    qkd_fraction: float = 1.0

    def to_dict(self) -> dict:
        if self.kind == "inline":
            return {"kind": "inline", "nodes": self.nodes, "edges": list(self.edges)}
        if self.kind == "file":
            return {"kind": "file", "path": self.path}
        return {
            "kind": "erdos_renyi",
            "nodes": self.nodes,
            "p": self.p,
            "gamma": self.gamma,
            "eta_range": list(self.eta_range),
            "graph_seed": self.graph_seed,
            "qkd_fraction": self.qkd_fraction,
        }

    @classmethod
    def from_dict(cls, doc: dict, ctx: str = "graph") -> "GraphConfig":
        kind = _require(doc, "kind", ctx)
        if kind == "inline":
            return cls(
                kind="inline",
                nodes=int(_require(doc, "nodes", ctx)),
                edges=tuple(_require(doc, "edges", ctx)),
            )
        if kind == "file":
            return cls(kind="file", path=str(_require(doc, "path", ctx)))
        if kind == "erdos_renyi":
            eta = doc.get("eta_range", [0.2, 1.0])
            return cls(
                kind="erdos_renyi",
                nodes=int(_require(doc, "nodes", ctx)),
                p=float(_require(doc, "p", ctx)),
                gamma=int(doc.get("gamma", 1)),
                eta_range=(float(eta[0]), float(eta[1])),
                graph_seed=int(doc.get("graph_seed", 0)),
                qkd_fraction=float(doc.get("qkd_fraction", 1.0)),
            )
        raise ConfigError(f"{ctx}.kind: unknown graph kind {kind!r}")

    def build(self) -> NetworkGraph:
        if self.kind == "inline":
            return graph_from_dict({"nodes": self.nodes, "edges": list(self.edges)})
        if self.kind == "file":
            return load_graph_file(self.path)
        from .topology import erdos_renyi

        g = erdos_renyi(self.nodes, self.p, self.gamma, self.eta_range, self.graph_seed)
        if self.qkd_fraction >= 1.0:
            return g
        return _strip_qkd(g, self.qkd_fraction, self.graph_seed)


def _strip_qkd(g: NetworkGraph, fraction: float, seed: int) -> NetworkGraph:
    """Keep key generation on a connected fraction of the links.

    A random spanning tree stays key-equipped so encrypted traffic remains
    routable end to end; extra links are added up to the target fraction.
    """
    rng = np.random.default_rng(seed + 1)
    n_pairs = len(g.specs)
    order = list(rng.permutation(n_pairs))
    parent = list(range(g.n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    keep: set[int] = set()
    for i in order:
        s = g.specs[i]
        ra, rb = find(s.u), find(s.v)
        if ra != rb:
            parent[ra] = rb
            keep.add(i)
    target = max(len(keep), int(round(fraction * n_pairs)))
    for i in order:
        if len(keep) >= target:
            break
        keep.add(i)
    specs = [
        EdgeSpec(s.u, s.v, s.gamma, s.eta, has_qkd=(i in keep), directed=s.directed)
        for i, s in enumerate(g.specs)
    ]
    return build_graph(g.n, specs)


@dataclass(frozen=True)
class ClassConfig:
    id: int
    source: int
    kind: str  # "unicast" | "broadcast" | "multicast" | "anycast"
    destinations: tuple[int, ...] = ()
    process: str = "bernoulli"
    rate: float = 0.1
    cap: int = 4
    ppbp: dict | None = None
    security: str = "quantum"
    priority: int = 0

    def to_dict(self) -> dict:
        arrival: dict[str, Any] = {"process": self.process}
        if self.process == "ppbp":
            arrival.update(self.ppbp or {})
        else:
            arrival["rate"] = self.rate
            if self.process == "truncated_poisson":
                arrival["cap"] = self.cap
        return {
            "id": self.id,
            "source": self.source,
            "kind": self.kind,
            "destinations": list(self.destinations),
            "arrival": arrival,
            "security": self.security,
            "priority": self.priority,
        }

    @classmethod
    def from_dict(cls, doc: dict, ctx: str) -> "ClassConfig":
        kind = str(_require(doc, "kind", ctx))
        if kind not in ("unicast", "broadcast", "multicast", "anycast"):
            raise ConfigError(f"{ctx}.kind: unknown traffic kind {kind!r}")
        arrival = _require(doc, "arrival", ctx)
        process = str(_require(arrival, "process", f"{ctx}.arrival"))
        rate, cap, ppbp = 0.0, 4, None
        if process == "bernoulli":
            rate = float(_require(arrival, "rate", f"{ctx}.arrival"))
        elif process == "truncated_poisson":
            rate = float(_require(arrival, "rate", f"{ctx}.arrival"))
            cap = int(arrival.get("cap", 4))
        elif process == "ppbp":
            ppbp = {k: v for k, v in arrival.items() if k != "process"}
        else:
            raise ConfigError(f"{ctx}.arrival.process: unknown process {process!r}")
        dests = tuple(int(d) for d in doc.get("destinations", ()))
        if kind != "broadcast" and not dests:
            raise ConfigError(f"{ctx}.destinations: required for {kind} classes")
        return cls(
            id=int(_require(doc, "id", ctx)),
            source=int(_require(doc, "source", ctx)),
            kind=kind,
            destinations=dests,
            process=process,
            rate=rate,
            cap=cap,
            ppbp=ppbp,
            security=str(doc.get("security", "quantum")),
            priority=int(doc.get("priority", 0)),
        )

    def build(self, scale: float) -> TrafficClass:
        if self.kind == "unicast":
            kind = Unicast(self.destinations[0])
        elif self.kind == "broadcast":
            kind = Broadcast()
        elif self.kind == "multicast":
            kind = Multicast(self.destinations)
        else:
            kind = Anycast(self.destinations)
        if self.process == "bernoulli":
            arrival = Bernoulli(self.rate * scale)
        elif self.process == "truncated_poisson":
            arrival = TruncatedPoisson(self.rate * scale, self.cap)
        else:
            if scale != 1.0:
                raise ConfigError(
                    f"classes[{self.id}]: rate scaling is not defined for ppbp arrivals"
                )
            arrival = PPBP(**(self.ppbp or {}))
        return TrafficClass(
            id=self.id,
            source=self.source,
            kind=kind,
            arrival=arrival,
            security=self.security,
            priority=self.priority,
        )


@dataclass(frozen=True)
class PolicyConfig:
    mode: str  # "tandem" | "single_queue" | "backpressure" | "multilevel"
    key_storage: bool = True
    key_cap: int = 50

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"mode": self.mode}
        if self.mode in ("tandem", "multilevel"):
            doc["key_storage"] = self.key_storage
        if self.mode == "backpressure":
            doc["key_cap"] = self.key_cap
        return doc

    @classmethod
    def from_dict(cls, doc: dict, ctx: str) -> "PolicyConfig":
        mode = str(_require(doc, "mode", ctx))
        if mode not in ("tandem", "single_queue", "backpressure", "multilevel"):
            raise ConfigError(f"{ctx}.mode: unknown policy mode {mode!r}")
        return cls(
            mode=mode,
            key_storage=bool(doc.get("key_storage", True)),
            key_cap=int(doc.get("key_cap", 50)),
        )

    def build(self) -> PolicyMode:
        if self.mode == "tandem":
            return TandemMode(key_storage=self.key_storage)
        if self.mode == "single_queue":
            return SingleQueueMode()
        if self.mode == "backpressure":
            return BackpressureMode(key_cap=self.key_cap)
        return MultilevelMode(key_storage=self.key_storage)

    @property
    def label(self) -> str:
        return self.build().label


@dataclass(frozen=True)
class KeysConfig:
    process: str = "truncated_poisson"
    k_max: int = 20
    value: int | None = None
    photons: int = 8
    eavesdrop_prob: float = 0.0
    check_fraction: float = 0.0
    overrides: tuple["tuple[int, int, KeysConfig]", ...] = ()

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {"process": self.process, "k_max": self.k_max}
        if self.process == "deterministic":
            doc["value"] = self.value
        if self.process == "bb84":
            doc.update(
                photons=self.photons,
                eavesdrop_prob=self.eavesdrop_prob,
                check_fraction=self.check_fraction,
            )
        if self.overrides:
            doc["overrides"] = [{"u": u, "v": v, **sub.to_dict()} for u, v, sub in self.overrides]
        return doc

    @classmethod
    def from_dict(cls, doc: dict, ctx: str = "keys") -> "KeysConfig":
        process = str(doc.get("process", "truncated_poisson"))
        if process not in ("truncated_poisson", "deterministic", "bb84"):
            raise ConfigError(f"{ctx}.process: unknown key process {process!r}")
        overrides = []
        for i, sub in enumerate(doc.get("overrides", ())):
            octx = f"{ctx}.overrides[{i}]"
            u, v = int(_require(sub, "u", octx)), int(_require(sub, "v", octx))
            inner = {k: w for k, w in sub.items() if k not in ("u", "v")}
            overrides.append((u, v, cls.from_dict(inner, octx)))
        return cls(
            process=process,
            k_max=int(doc.get("k_max", 20)),
            value=None if doc.get("value") is None else int(doc["value"]),
            photons=int(doc.get("photons", 8)),
            eavesdrop_prob=float(doc.get("eavesdrop_prob", 0.0)),
            check_fraction=float(doc.get("check_fraction", 0.0)),
            overrides=tuple(overrides),
        )

    def build(self) -> KeySpec:
        return KeySpec(
            kind=self.process,
            k_max=self.k_max,
            value=self.value,
            photons=self.photons,
            eavesdrop_prob=self.eavesdrop_prob,
            check_fraction=self.check_fraction,
            overrides=tuple(((u, v), sub.build()) for u, v, sub in self.overrides),
        )


# ---------------------------------------------------------------------------
# experiment config

@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    graph: GraphConfig
    classes: tuple[ClassConfig, ...]
    policies: tuple[PolicyConfig, ...]
    keys: KeysConfig = KeysConfig()
    scheduler: str = "fifo"
    horizon: int = 10_000
    seeds: tuple[int, ...] = (1,)
    queue_cap: int = 10_000
    rate_scales: tuple[float, ...] = (1.0,)
    record_series: bool = True
    series_stride: int = 1
    record_drift: bool = False

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "graph": self.graph.to_dict(),
            "classes": [c.to_dict() for c in self.classes],
            "policies": [p.to_dict() for p in self.policies],
            "keys": self.keys.to_dict(),
            "scheduler": self.scheduler,
            "horizon": self.horizon,
            "seeds": list(self.seeds),
            "queue_cap": self.queue_cap,
            "rate_scales": list(self.rate_scales),
            "metrics": {
                "series": self.record_series,
                "stride": self.series_stride,
                "drift": self.record_drift,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        name = str(_require(doc, "name", "config"))
        graph = GraphConfig.from_dict(_require(doc, "graph", "config"))
        raw_classes = _require(doc, "classes", "config")
        if not raw_classes:
            raise ConfigError("config.classes: at least one traffic class is required")
        classes = tuple(
            ClassConfig.from_dict(c, f"classes[{i}]") for i, c in enumerate(raw_classes)
        )
        if len({c.id for c in classes}) != len(classes):
            raise ConfigError("config.classes: class ids must be unique")
        raw_pol = _require(doc, "policies", "config")
        if not raw_pol:
            raise ConfigError("config.policies: at least one policy is required")
        policies = tuple(
            PolicyConfig.from_dict(p, f"policies[{i}]") for i, p in enumerate(raw_pol)
        )
        scheduler = str(doc.get("scheduler", "fifo"))
        if scheduler not in ("fifo", "ento"):
            raise ConfigError(f"config.scheduler: unknown scheduler {scheduler!r}")
        horizon = int(_require(doc, "horizon", "config"))
        if horizon < 1:
            raise ConfigError("config.horizon: must be >= 1")
        seeds = tuple(int(s) for s in doc.get("seeds", [1]))
        if not seeds:
            raise ConfigError("config.seeds: must not be empty")
        metrics = doc.get("metrics", {})
        return cls(
            name=name,
            graph=graph,
            classes=classes,
            policies=policies,
            keys=KeysConfig.from_dict(doc.get("keys", {})),
            scheduler=scheduler,
            horizon=horizon,
            seeds=seeds,
            queue_cap=int(doc.get("queue_cap", 10_000)),
            rate_scales=tuple(float(s) for s in doc.get("rate_scales", [1.0])),
            record_series=bool(metrics.get("series", True)),
            series_stride=int(metrics.get("stride", 1)),
            record_drift=bool(metrics.get("drift", False)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        return cls.from_dict(doc)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def build_classes(self, scale: float = 1.0) -> list[TrafficClass]:
        return [c.build(scale) for c in self.classes]

    def cells(self) -> list[tuple[PolicyConfig, float, int]]:
        return [
            (pol, scale, seed)
            for pol in self.policies
            for scale in self.rate_scales
            for seed in self.seeds
        ]


# ---------------------------------------------------------------------------
# presets

def _two_node_link() -> GraphConfig:
    return GraphConfig(
        kind="inline",
        nodes=2,
        edges=({"u": 0, "v": 1, "gamma": 1, "eta": 0.5, "has_qkd": True, "directed": True},),
    )


def preset_counterexample() -> ExperimentConfig:
    """Single saturated link: fresh-keys-only service versus the tandem policy."""
    return ExperimentConfig(
        name="counterexample",
        graph=_two_node_link(),
        classes=(
            ClassConfig(id=0, source=0, kind="unicast", destinations=(1,),
                        process="bernoulli", rate=0.45),
        ),
        policies=(
            PolicyConfig(mode="single_queue"),
            PolicyConfig(mode="tandem", key_storage=True),
            PolicyConfig(mode="tandem", key_storage=False),
        ),
        horizon=100_000,
        seeds=(1,),
        series_stride=10,
    )


def _desk_unicast_classes(
    n: int, count: int, seed: int, security: str = "quantum"
) -> list[tuple[int, int]]:
    rng = np.random.default_rng(seed + 1000)
    pairs: list[tuple[int, int]] = []
    while len(pairs) < count:
        s, d = int(rng.integers(n)), int(rng.integers(n))
        if s != d and (s, d) not in pairs:
            pairs.append((s, d))
    return pairs


def _sweep_config(
    name: str,
    policies: tuple[PolicyConfig, ...],
    n: int = 20,
    p: float = 0.3,
    graph_seed: int = 7,
    n_classes: int = 6,
    rate_scales: tuple[float, ...] = (0.3, 0.5, 0.7),
    horizon: int = 10_000,
    seeds: tuple[int, ...] = (1, 2, 3),
) -> ExperimentConfig:
    from .analysis import constructed_uniform_boundary

    gcfg = GraphConfig(kind="erdos_renyi", nodes=n, p=p, graph_seed=graph_seed)
    g = gcfg.build()
    pairs = _desk_unicast_classes(n, n_classes, graph_seed)
    probe = [
        TrafficClass(id=i, source=s, kind=Unicast(d), arrival=Bernoulli(0.1))
        for i, (s, d) in enumerate(pairs)
    ]
    boundary, _ = constructed_uniform_boundary(g, probe)
    base_rate = min(boundary, 1.0)
    classes = tuple(
        ClassConfig(id=i, source=s, kind="unicast", destinations=(d,),
                    process="bernoulli", rate=base_rate)
        for i, (s, d) in enumerate(pairs)
    )
    return ExperimentConfig(
        name=name,
        graph=gcfg,
        classes=classes,
        policies=policies,
        horizon=horizon,
        seeds=seeds,
        rate_scales=rate_scales,
        series_stride=10,
    )


def preset_unicast_sweep() -> ExperimentConfig:
    """Delay-versus-load comparison across policies at desk scale (N=20)."""
    return _sweep_config(
        "unicast-sweep",
        policies=(
            PolicyConfig(mode="tandem", key_storage=True),
            PolicyConfig(mode="tandem", key_storage=False),
            PolicyConfig(mode="backpressure"),
        ),
    )


def preset_residual_keys_sweep() -> ExperimentConfig:
    """In-network residual keys versus load, tandem against backpressure."""
    return _sweep_config(
        "residual-keys-sweep",
        policies=(
            PolicyConfig(mode="tandem", key_storage=True),
            PolicyConfig(mode="backpressure"),
        ),
    )


def preset_broadcast_sweep() -> ExperimentConfig:
    """Broadcast delay for the two tandem storage variants on a small net."""
    gcfg = GraphConfig(kind="erdos_renyi", nodes=8, p=0.45, graph_seed=11)
    classes = (
        ClassConfig(id=0, source=0, kind="broadcast", process="bernoulli", rate=0.10,
                    destinations=()),
        ClassConfig(id=1, source=3, kind="broadcast", process="bernoulli", rate=0.10,
                    destinations=()),
    )
    return ExperimentConfig(
        name="broadcast-sweep",
        graph=gcfg,
        classes=classes,
        policies=(
            PolicyConfig(mode="tandem", key_storage=True),
            PolicyConfig(mode="tandem", key_storage=False),
        ),
        horizon=10_000,
        seeds=(1, 2, 3),
        rate_scales=(0.4, 0.7, 1.0),
        series_stride=10,
    )


def preset_mixed_security() -> ExperimentConfig:
    """Mixed security levels: plain, encrypted-high, encrypted-low traffic.

    The three groups share origin-destination pairs so their delays differ
    only through the encryption stage, not through topology luck.
    """
    gcfg = GraphConfig(kind="erdos_renyi", nodes=16, p=0.35, graph_seed=14, qkd_fraction=0.7)
    g = gcfg.build()
    if not g.connected(set(g.qkd_edge_ids())):
        raise ConfigError("mixed-security preset graph lost key-level connectivity")
    rng = np.random.default_rng(99)
    ods: list[tuple[int, int]] = []
    while len(ods) < 2:
        s, d = int(rng.integers(g.n)), int(rng.integers(g.n))
        if s != d and (s, d) not in ods:
            ods.append((s, d))
    classes = []
    cid = 0
    for s, d in ods:
        for sec, prio in (("classical", 0), ("quantum", 1), ("quantum", 0)):
            classes.append(
                ClassConfig(id=cid, source=s, kind="unicast", destinations=(d,),
                            process="bernoulli", rate=0.15, security=sec, priority=prio)
            )
            cid += 1
    return ExperimentConfig(
        name="mixed-security",
        graph=gcfg,
        classes=tuple(classes),
        policies=(PolicyConfig(mode="multilevel", key_storage=True),),
        horizon=10_000,
        seeds=(1, 2, 3, 4, 5),
        rate_scales=(1.0,),
        series_stride=10,
    )


def preset_unicast_full() -> ExperimentConfig:
    """Full-scale run (N=150, bursty arrivals); expect minutes, not seconds."""
    gcfg = GraphConfig(kind="erdos_renyi", nodes=150, p=0.3, graph_seed=42)
    pairs = _desk_unicast_classes(150, 15, 42)
    classes = tuple(
        ClassConfig(
            id=i, source=s, kind="unicast", destinations=(d,),
            process="ppbp",
            ppbp={"sources": 2, "burst_rate": 1, "hurst": 0.8, "mean_burst_slots": 5.0,
                  "mean_sleep_slots": 25.0, "max_packets_per_burst": 5000},
        )
        for i, (s, d) in enumerate(pairs)
    )
    return ExperimentConfig(
        name="unicast-full",
        graph=gcfg,
        classes=classes,
        policies=(
            PolicyConfig(mode="tandem", key_storage=True),
            PolicyConfig(mode="tandem", key_storage=False),
            PolicyConfig(mode="backpressure"),
        ),
        horizon=100_000,
        seeds=(1,),
        rate_scales=(1.0,),
        series_stride=100,
    )


PRESETS = {
    "counterexample": preset_counterexample,
    "unicast-sweep": preset_unicast_sweep,
    "residual-keys-sweep": preset_residual_keys_sweep,
    "broadcast-sweep": preset_broadcast_sweep,
    "mixed-security": preset_mixed_security,
    "unicast-full": preset_unicast_full,
}


def preset_config(name: str) -> ExperimentConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None
    return factory()
