"""Leader-based quorum log per shard.

The leader appends locally (instantly, counting toward the quorum) and ships
entries to its followers; followers apply entries strictly in index order,
buffering anything that arrives ahead of a gap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .messages import LogEntry


class ReplicationError(AssertionError):
    pass


def quorum_size(replicas: int) -> int:
    if replicas < 1 or replicas % 2 == 0:
        raise ValueError(f"replica count must be odd and positive, got {replicas}")
    return replicas // 2 + 1


def quorum_check(acks: Iterable, replicas: int) -> bool:
    """True once the ack set (leader included) holds F+1 of 2F+1 replicas."""
    return len(set(acks)) >= quorum_size(replicas)


def replication_plan(replica_dcs: Sequence[int], leader_dc: int,
                     all_dcs: Iterable[int]) -> tuple[list[int], list[int]]:
    """Followers to ship an entry to, and datacenters that get the vote directly."""
    if leader_dc not in replica_dcs:
        raise ReplicationError(f"leader dc {leader_dc} holds no replica")
    followers = [dc for dc in replica_dcs if dc != leader_dc]
    direct = [dc for dc in all_dcs if dc not in replica_dcs]
    return followers, direct


@dataclass
class ReplicaLog:
    shard: int
    replicas: int
    entries: dict = field(default_factory=dict)   # index -> LogEntry
    acks: dict = field(default_factory=dict)      # index -> set of dcs
    by_tid: dict = field(default_factory=dict)    # tid -> index
    applied: int = 0                              # entries 1..applied are present
    pending: dict = field(default_factory=dict)   # out-of-order buffer

    @property
    def quorum(self) -> int:
        return quorum_size(self.replicas)

    def next_index(self) -> int:
        return self.applied + 1

    def append_local(self, entry: LogEntry, self_dc: int) -> LogEntry:
        if entry.index != self.next_index():
            raise ReplicationError(
                f"shard {self.shard}: leader appended index {entry.index}, expected {self.next_index()}")
        self._store(entry)
        self.acks.setdefault(entry.index, set()).add(self_dc)
        return entry

    def ack(self, index: int, dc: int) -> bool:
        """Record an ack; True exactly when this ack completes the quorum."""
        if index not in self.entries:
            raise ReplicationError(f"shard {self.shard}: ack for unknown index {index}")
        acks = self.acks.setdefault(index, set())
        before = len(acks) >= self.quorum
        acks.add(dc)
        return not before and len(acks) >= self.quorum

    def has_quorum(self, index: int) -> bool:
        return len(self.acks.get(index, ())) >= self.quorum

    def entry_for(self, tid) -> Optional[LogEntry]:
        idx = self.by_tid.get(tid)
        return None if idx is None else self.entries[idx]

    def receive(self, entry: LogEntry) -> list[LogEntry]:
        """Follower side: returns entries newly applied, in index order."""
        if entry.index <= self.applied:
            known = self.entries[entry.index]
            if known.tid != entry.tid:
                raise ReplicationError(
                    f"shard {self.shard}: conflicting entries at index {entry.index}")
            return []
        self.pending[entry.index] = entry
        out = []
        while self.applied + 1 in self.pending:
            e = self.pending.pop(self.applied + 1)
            self._store(e)
            out.append(e)
        return out

    def _store(self, entry: LogEntry) -> None:
        self.entries[entry.index] = entry
        self.by_tid[entry.tid] = entry.index
        self.applied = entry.index

    def suffix(self, from_index: int) -> list[LogEntry]:
        return [self.entries[i] for i in range(max(1, from_index), self.applied + 1)]

    def dump(self) -> list[dict]:
        return [{"index": e.index, "tid": str(e.tid), "vote": e.vote.value.value,
                 "acks": sorted(self.acks.get(e.index, ()))}
                for _, e in sorted(self.entries.items())]
