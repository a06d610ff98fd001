"""Run-wide settings and out-of-band sinks shared by every node."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional

from .simnet import Simulator, cocoord_id
from .topology import Directory


@dataclass
class Context:
    sim: Simulator
    directory: Directory
    protocol: str = "d2pc"          # "d2pc" | "layered"
    cc: str = "occ"                 # "occ" | "2pl"
    read_opt: bool = False
    groups: int = 1
    recovery_timeout_us: Optional[int] = None
    injected_abort_rate: float = 0.0
    seed: int = 0
    ccp: list = field(default_factory=list)   # (tid, shard, dc, ccp_us)
    on_outcome: Optional[Callable] = None

    def __post_init__(self):
        if self.protocol not in ("d2pc", "layered"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.groups < 1:
            raise ValueError("coordinator_groups must be >= 1")
        if self.recovery_timeout_us is None:
            self.recovery_timeout_us = 4 * self.sim.matrix.max_one_way_us()

    @property
    def trace(self):
        return self.sim.trace

    def group_of(self, tid) -> int:
        return route_to_group(tid, self.groups)

    def correspondent(self, coord_dc: int, group: int):
        return cocoord_id(coord_dc, group)

    def record_ccp(self, tid, shard: int, dc: int, ccp_us: int) -> None:
        self.ccp.append((tid, shard, dc, ccp_us))

    def injected_abort(self, tid, shard: int) -> bool:
        if self.injected_abort_rate <= 0:
            return False
        h = hashlib.blake2b(f"{self.seed}:{tid[0]}:{tid[1]}:{shard}".encode(), digest_size=8)
        return int.from_bytes(h.digest(), "big") / 2.0**64 < self.injected_abort_rate


def route_to_group(tid, groups: int) -> int:
    """Co-coordinator group of a transaction: its counter modulo N."""
    if groups < 1:
        raise ValueError("group count must be >= 1")
    return tid[1] % groups
