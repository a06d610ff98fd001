"""Wiring: build every process of a deployment onto one Simulator."""
from __future__ import annotations

import random
from typing import Callable, Iterable, Optional

from .client import Client
from .context import Context
from .d2pc import CoCoordinator
from .server import ShardServer
from .simnet import (ConfigurationError, FailureEvent, Simulator, Trace, client_id, cocoord_id,
                     replica_id, us)
from .topology import Directory, Topology


class Cluster:

    def __init__(self, topology: Topology, *, protocol: str = "d2pc", cc: str = "occ",
                 read_opt: bool = False, groups: int = 1, seed: int = 0,
                 processing_delay_ms: float = 0.0, local_notify_ms: Optional[float] = 0.0,
                 recovery_timeout_ms: Optional[float] = None, injected_abort_rate: float = 0.0,
                 trace_level: str = "history"):
        self.topology = topology
        self.trace = Trace(trace_level, topology.matrix.names)
        self.sim = Simulator(topology.matrix, processing_delay_ms=processing_delay_ms,
                             local_notify_ms=local_notify_ms, trace=self.trace)
        self.directory = Directory(topology)
        self.ctx = Context(self.sim, self.directory, protocol, cc, read_opt, groups,
                           None if recovery_timeout_ms is None else us(recovery_timeout_ms),
                           injected_abort_rate, seed)
        self.seed = seed
        self.servers: dict = {}
        for p in topology.shards:
            for dc in p.replicas:
                nid = replica_id(dc, p.shard)
                self.servers[nid] = ShardServer(nid, self.ctx)
        self.cocoords: dict = {}
        if protocol == "d2pc":
            for dc in topology.dcs:
                for g in range(groups):
                    nid = cocoord_id(dc, g)
                    self.cocoords[nid] = CoCoordinator(nid, self.ctx)
        self.clients: list = []
        self.sim.failure_hooks["reassign_leader"] = self._reassign

    def add_client(self, dc: int, source, *, txn_limit: Optional[int] = None,
                   stop_ms: Optional[float] = None, retry_limit: int = 10,
                   starvation_free: bool = True, start_ms: float = 0.0,
                   sink: Optional[Callable] = None) -> Client:
        cid = len(self.clients)
        rng = random.Random(f"{self.seed}:{cid}")
        c = Client(client_id(dc, cid), self.ctx, source=source, rng=rng, txn_limit=txn_limit,
                   stop_us=None if stop_ms is None else us(stop_ms), retry_limit=retry_limit,
                   starvation_free=starvation_free, start_us=us(start_ms), sink=sink)
        self.clients.append(c)
        return c

    def schedule(self, failures: Iterable[FailureEvent]) -> None:
        self.sim.schedule_failures(failures)

    def run(self, max_time_ms: Optional[float] = None) -> float:
        end = self.sim.run(None if max_time_ms is None else us(max_time_ms))
        return end / 1000.0

    def leader_node(self, shard: int) -> ShardServer:
        return self.servers[self.directory.leader(shard)]

    def _reassign(self, e: FailureEvent) -> None:
        shard, new_dc = e.shard, e.new_dc
        placement = self.topology.shards[shard]
        if new_dc not in placement.replicas:
            raise ConfigurationError(f"shard {shard} has no replica in dc {new_dc}")
        new = self.servers[replica_id(new_dc, shard)]
        if not new.alive:
            raise ConfigurationError(f"cannot hand shard {shard} to a crashed replica")
        old = self.leader_node(shard)
        peers = [self.servers[replica_id(dc, shard)] for dc in placement.replicas]
        alive = [p for p in peers if p.alive]
        # the most complete surviving log wins, as a real election would ensure
        donor = max(alive, key=lambda p: (p.log.applied, p is new))
        for entry in donor.log.suffix(new.log.applied + 1):
            new.log.receive(entry)
        for idx in new.log.entries:
            new.log.acks[idx] = {p.dc for p in alive if p.log.applied >= idx}
        self.directory.leader_dc[shard] = new_dc
        if old is not new and old.alive:
            old.on_crash()   # demoted: drops leader-only volatile state
        new.become_leader()
