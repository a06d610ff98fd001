"""Protocol message schema shared by the commit protocols.

Every message is an immutable record. Classes with ``local_notification``
set are the notifications exchanged between a co-coordinator (or a layered
coordinator) and the processes in its own datacenter.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NamedTuple, Optional

from .simnet import NodeId


class TransactionId(NamedTuple):
    client_id: int
    counter: int

    def __str__(self) -> str:
        return f"T{self.client_id}.{self.counter}"


class Outcome(str, Enum):
    COMMIT = "commit"
    ABORT = "abort"


COMMIT = Outcome.COMMIT
ABORT = Outcome.ABORT


@dataclass(frozen=True, slots=True)
class Vote:
    value: Outcome
    shard: int
    tid: TransactionId
    reason: Optional[str] = None


class ReadEntry(NamedTuple):
    key: int
    version: int
    writer: Optional[TransactionId]  # None for the initial version


@dataclass(frozen=True, slots=True)
class LogEntry:
    index: int
    tid: TransactionId
    rset: tuple
    wset: tuple
    vote: Vote
    shard_list: tuple
    coord_dc: int
    group: int
    client: NodeId
    ts: tuple = ()


# --- client <-> data store -------------------------------------------------

@dataclass(frozen=True, slots=True)
class ReadRequest:
    tid: TransactionId
    key: int
    ts: tuple
    lock: bool = False
    follower: bool = False


@dataclass(frozen=True, slots=True)
class ReadReply:
    tid: TransactionId
    key: int
    value: Any = None
    version: int = 0
    writer: Optional[TransactionId] = None
    died: bool = False
    reason: Optional[str] = None


@dataclass(frozen=True, slots=True)
class ClientAbort:
    tid: TransactionId


@dataclass(frozen=True, slots=True)
class RetryNotice:
    """The transactions that made ``tid`` die under wait-die have released."""
    tid: TransactionId


@dataclass(frozen=True, slots=True)
class Prepare:
    tid: TransactionId
    shard: int
    rset: tuple
    wset: tuple
    shard_list: tuple
    client: NodeId
    coord_dc: int
    group: int
    ts: tuple
    coordinator: Optional[NodeId] = None  # layered mode only


@dataclass(frozen=True, slots=True)
class CommitRequest:
    tid: TransactionId
    shard_list: tuple
    client: NodeId
    local_notification = True


@dataclass(frozen=True, slots=True)
class ClientReply:
    tid: TransactionId
    decision: Outcome
    reason: Optional[str] = None
    local_notification = True


# --- replication -------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ReplicationAppend:
    entry: LogEntry
    catchup: bool = False


@dataclass(frozen=True, slots=True)
class ReplicationAck:
    shard: int
    index: int
    tid: TransactionId
    replica_dc: int


@dataclass(frozen=True, slots=True)
class CatchUp:
    shard: int
    from_index: int


@dataclass(frozen=True, slots=True)
class ApplyDecision:
    tid: TransactionId
    decision: Outcome
    writes: tuple


# --- D2PC --------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class FollowerNotice:
    """Vote plus replication reply from a replica to its local co-coordinator.

    ``reply`` is False for the direct vote a leader sends to a datacenter
    that holds no replica of its shard.
    """
    tid: TransactionId
    shard: int
    vote: Vote
    replica_dc: int
    reply: bool
    shard_list: tuple
    coord_dc: int
    client: NodeId
    local_notification = True


@dataclass(frozen=True, slots=True)
class ForwardedReply:
    tid: TransactionId
    shard: int
    replica_dc: int
    vote: Vote
    shard_list: tuple
    client: NodeId


@dataclass(frozen=True, slots=True)
class PreCommitNotify:
    tid: TransactionId
    decision: str  # "precommit" | "abort"
    reason: Optional[str] = None
    local_notification = True


@dataclass(frozen=True, slots=True)
class LeaderReport:
    tid: TransactionId
    shard: int
    vote: Vote
    replication_complete: bool
    shard_list: tuple
    client: NodeId
    local_notification = True


@dataclass(frozen=True, slots=True)
class FinalDecision:
    tid: TransactionId
    decision: Outcome
    reason: Optional[str] = None
    local_notification = True


@dataclass(frozen=True, slots=True)
class DecisionReplicate:
    tid: TransactionId
    decision: Outcome
    reason: Optional[str]
    shard_list: tuple = ()


@dataclass(frozen=True, slots=True)
class DecisionAck:
    tid: TransactionId


@dataclass(frozen=True, slots=True)
class RecoveryQuery:
    tid: TransactionId


@dataclass(frozen=True, slots=True)
class RecoveryReply:
    tid: TransactionId
    decision: Optional[Outcome]
    reason: Optional[str] = None
    known: bool = True


@dataclass(frozen=True, slots=True)
class RecoveryNudge:
    tid: TransactionId
    shard_list: tuple
    client: NodeId
    coord_dc: int


@dataclass(frozen=True, slots=True)
class TerminationQuery:
    tid: TransactionId


@dataclass(frozen=True, slots=True)
class TerminationReply:
    tid: TransactionId
    shard: int
    status: str  # "commit" | "abort" | "pending"
    reason: Optional[str] = None


# --- layered 2PC -------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ShardVote:
    tid: TransactionId
    vote: Vote
    shard_list: tuple
    client: NodeId


@dataclass(frozen=True)
class Timer:
    kind: str
    tid: Any = None
    extra: Any = None
