"""Experiment configuration: one YAML or JSON document, unknown fields rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from ..simnet import TABLE1, ConfigurationError, FailureEvent, LatencyMatrix, NodeId
from ..topology import ShardPlacement, Topology, default_placement

THREE_DC_NAMES = ["Hangzhou", "San Francisco", "Frankfurt"]


def _take(cls, data: dict, where: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"{where}: unknown field(s) {', '.join(unknown)}")
    return dict(data)


@dataclass
class ShardConfig:
    replicas: list
    leader: Any


@dataclass
class TopologyConfig:
    datacenters: list = field(default_factory=lambda: list(THREE_DC_NAMES))
    rtt_ms: Optional[list] = None          # defaults to the measured WAN table
    shards: Optional[list] = None          # list of ShardConfig; default one per dc
    replicas_per_shard: Optional[int] = None

    def matrix(self) -> LatencyMatrix:
        if self.rtt_ms is None:
            return TABLE1.subset(self.datacenters)
        return LatencyMatrix(self.datacenters, self.rtt_ms)

    def build(self) -> Topology:
        m = self.matrix()
        if self.shards is None:
            return Topology(m, default_placement(m, self.replicas_per_shard))
        placements = []
        for i, s in enumerate(self.shards):
            reps = tuple(m.index(r) for r in s.replicas)
            placements.append(ShardPlacement(i, reps, m.index(s.leader)))
        return Topology(m, placements)


@dataclass
class WorkloadConfig:
    kind: str = "retwis"                   # retwis | ycsbt | longread | fixed
    zipf_theta: float = 0.0
    clients: int = 1
    clients_per_dc: Any = None             # {dc: n} or [n0, n1, ...]
    txn_limit: Optional[int] = None        # total across clients
    duration_ms: Optional[float] = None
    read_optimization: Optional[bool] = None
    retry_limit: int = 10
    keys_per_shard: int = 100_000
    starvation_free: bool = True
    disjoint_keys: bool = False
    long_read_keys: int = 50
    txns: Optional[list] = None            # fixed: [{reads: [...], writes: [...]}]

    def placement(self, dcs: list) -> list:
        """Datacenter index of every client, in client-id order."""
        if self.clients_per_dc is None:
            return [i % len(dcs) for i in range(self.clients)]
        out = []
        if isinstance(self.clients_per_dc, dict):
            for name, n in self.clients_per_dc.items():
                dc = dcs.index(name) if isinstance(name, str) else int(name)
                out.extend([dc] * int(n))
        else:
            if len(self.clients_per_dc) != len(dcs):
                raise ConfigurationError("clients_per_dc list needs one count per datacenter")
            for dc, n in enumerate(self.clients_per_dc):
                out.extend([dc] * int(n))
        return out


@dataclass
class FailureConfig:
    time_ms: float
    action: str
    node: Optional[str] = None             # label such as "cocoord:0@Frankfurt"
    shard: Optional[int] = None
    new_dc: Any = None
    drop_outbox: bool = False

    def event(self, names) -> FailureEvent:
        node = NodeId.parse(self.node, names) if self.node else NodeId("replica", 0, self.shard or 0)
        new_dc = None
        if self.new_dc is not None:
            new_dc = names.index(self.new_dc) if isinstance(self.new_dc, str) else int(self.new_dc)
        return FailureEvent(self.time_ms, node, self.action, self.shard, new_dc, self.drop_outbox)


@dataclass
class ExperimentConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    protocol: str = "d2pc"
    cc: str = "occ"
    read_opt: bool = False
    coordinator_groups: int = 1
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    failures: list = field(default_factory=list)
    seed: int = 0
    processing_delay_ms: float = 0.0
    local_notify_ms: Optional[float] = 0.0
    recovery_timeout_ms: Optional[float] = None
    injected_abort_rate: float = 0.0
    trace: str = "none"
    max_time_ms: float = 3_600_000.0

    def __post_init__(self):
        if self.protocol not in ("d2pc", "layered"):
            raise ConfigurationError(f"protocol must be d2pc or layered, got {self.protocol!r}")
        if self.cc not in ("occ", "2pl"):
            raise ConfigurationError(f"cc must be occ or 2pl, got {self.cc!r}")
        if self.coordinator_groups < 1:
            raise ConfigurationError("coordinator_groups must be >= 1")
        if self.workload.kind not in ("retwis", "ycsbt", "longread", "fixed"):
            raise ConfigurationError(f"unknown workload kind {self.workload.kind!r}")
        if self.workload.kind == "fixed" and not self.workload.txns:
            raise ConfigurationError("fixed workload needs a txns list")
        ro = self.workload.read_optimization
        if ro is not None and ro != self.read_opt:
            if self.read_opt:
                raise ConfigurationError("read_opt and workload.read_optimization disagree")
            self.read_opt = bool(ro)
        if not 0 <= self.injected_abort_rate <= 1:
            raise ConfigurationError("injected_abort_rate must be within [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = _take(cls, data or {}, "config")
        if "topology" in data:
            topo = _take(TopologyConfig, data["topology"], "topology")
            if topo.get("shards") is not None:
                topo["shards"] = [ShardConfig(**_take(ShardConfig, s, f"topology.shards[{i}]"))
                                  for i, s in enumerate(topo["shards"])]
            data["topology"] = TopologyConfig(**topo)
        if "workload" in data:
            data["workload"] = WorkloadConfig(**_take(WorkloadConfig, data["workload"], "workload"))
        if "failures" in data:
            data["failures"] = [FailureConfig(**_take(FailureConfig, f, f"failures[{i}]"))
                                for i, f in enumerate(data["failures"] or [])]
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigurationError(str(e)) from None

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    return ExperimentConfig.from_dict(data)


def set_path(data: dict, dotted: str, value) -> dict:
    """Assign ``value`` at a dotted key path inside a nested dict (for sweeps)."""
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return data
