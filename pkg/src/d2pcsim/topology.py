"""Shard placement and the shared leader directory."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .replication import quorum_size
from .simnet import ConfigurationError, LatencyMatrix, NodeId, replica_id


@dataclass(frozen=True)
class ShardPlacement:
    shard: int
    replicas: tuple   # datacenter indices
    leader: int

    @property
    def f(self) -> int:
        return (len(self.replicas) - 1) // 2


@dataclass
class Topology:
    matrix: LatencyMatrix
    shards: list

    def __post_init__(self):
        for i, p in enumerate(self.shards):
            if p.shard != i:
                raise ConfigurationError("shards must be numbered 0..S-1")
            if len(set(p.replicas)) != len(p.replicas):
                raise ConfigurationError(f"shard {i}: replicas must sit in distinct datacenters")
            for dc in p.replicas:
                self.matrix.index(dc)
            quorum_size(len(p.replicas))
            if p.leader not in p.replicas:
                raise ConfigurationError(f"shard {i}: leader dc {p.leader} holds no replica")

    @property
    def num_shards(self) -> int:
        return len(self.shards)

    @property
    def dcs(self) -> range:
        return range(len(self.matrix))

    def shard_of(self, key: int) -> int:
        return key % len(self.shards)

    def shard_led_at(self, dc: int) -> int:
        for p in self.shards:
            if p.leader == dc:
                return p.shard
        raise ConfigurationError(f"no shard is led from {self.matrix.names[dc]}")


def default_placement(matrix: LatencyMatrix, replicas: Optional[int] = None) -> list:
    """One shard per datacenter, led locally, replicated to the nearest peers.

    Without an explicit count every datacenter holds a replica when there are
    at most three of them, otherwise three replicas per shard.
    """
    n = len(matrix)
    if replicas is None:
        replicas = n if n <= 3 else 3
    if replicas > n:
        raise ConfigurationError("more replicas than datacenters")
    shards = []
    for dc in range(n):
        others = sorted((d for d in range(n) if d != dc), key=lambda d: (matrix.rtt(dc, d), d))
        shards.append(ShardPlacement(dc, tuple([dc] + others[:replicas - 1]), dc))
    return shards


class Directory:
    """Oracle view of current shard leaders, shared by every node.

    Leadership only changes through scheduled reassign_leader events, so
    all nodes agree on it at every instant.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self.leader_dc = {p.shard: p.leader for p in topology.shards}

    def leader(self, shard: int) -> NodeId:
        return replica_id(self.leader_dc[shard], shard)

    def placement(self, shard: int) -> ShardPlacement:
        return self.topology.shards[shard]

    def replicas(self, shard: int) -> list:
        return [replica_id(dc, shard) for dc in self.topology.shards[shard].replicas]

    def f(self, shard: int) -> int:
        return self.topology.shards[shard].f

    def local_replica(self, shard: int, dc: int) -> Optional[NodeId]:
        return replica_id(dc, shard) if dc in self.topology.shards[shard].replicas else None
