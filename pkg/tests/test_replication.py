import pytest

from d2pcsim.messages import COMMIT, LogEntry, TransactionId, Vote
from d2pcsim.replication import (ReplicaLog, ReplicationError, quorum_check, quorum_size,
                                 replication_plan)
from d2pcsim.simnet import TABLE1, NodeId
from d2pcsim.topology import default_placement


def log_entry(i, tid=None):
    tid = tid or TransactionId(0, i)
    return LogEntry(i, tid, (), (), Vote(COMMIT, 0, tid), (0,), 0, 0, NodeId("client", 0, 0))


@pytest.mark.parametrize("n,q", [(1, 1), (3, 2), (5, 3), (7, 4)])
def test_quorum_size(n, q):
    assert quorum_size(n) == q


@pytest.mark.parametrize("n", [0, 2, 4])
def test_quorum_size_rejects_even(n):
    with pytest.raises(ValueError):
        quorum_size(n)


def test_quorum_check_counts_distinct_replicas():
    assert not quorum_check([0], 3)
    assert not quorum_check([0, 0], 3)
    assert quorum_check([0, 2], 3)


def test_plan_five_dcs_three_replicas():
    shard = default_placement(TABLE1)[0]
    assert len(shard.replicas) == 3
    followers, direct = replication_plan(shard.replicas, shard.leader, range(5))
    assert len(followers) == 2 and len(direct) == 2
    assert set(followers) | set(direct) | {shard.leader} == set(range(5))


def test_plan_rejects_leader_without_replica():
    with pytest.raises(ReplicationError):
        replication_plan([1, 2], 0, range(3))


def test_leader_append_counts_itself():
    log = ReplicaLog(0, 3)
    log.append_local(log_entry(1), 0)
    assert not log.has_quorum(1)
    assert log.ack(1, 1) is True
    assert log.has_quorum(1)
    assert log.ack(1, 2) is False


def test_leader_append_out_of_order_rejected():
    log = ReplicaLog(0, 3)
    with pytest.raises(ReplicationError):
        log.append_local(log_entry(2), 0)


def test_ack_unknown_index_rejected():
    with pytest.raises(ReplicationError):
        ReplicaLog(0, 3).ack(4, 1)


def test_follower_duplicate_is_ignored():
    log = ReplicaLog(0, 3)
    assert log.receive(log_entry(1)) == [log_entry(1)]
    assert log.receive(log_entry(1)) == []
    assert log.applied == 1


def test_follower_conflicting_entry_raises():
    log = ReplicaLog(0, 3)
    log.receive(log_entry(1))
    with pytest.raises(ReplicationError):
        log.receive(log_entry(1, TransactionId(5, 5)))


def test_follower_buffers_gaps():
    log = ReplicaLog(0, 3)
    assert log.receive(log_entry(2)) == []
    assert log.receive(log_entry(3)) == []
    assert [e.index for e in log.receive(log_entry(1))] == [1, 2, 3]
    assert log.entry_for(TransactionId(0, 2)).index == 2
    assert [e.index for e in log.suffix(2)] == [2, 3]


def test_dump_shape():
    log = ReplicaLog(0, 3)
    log.append_local(log_entry(1), 0)
    assert log.dump() == [{"index": 1, "tid": "T0.1", "vote": "commit", "acks": [0]}]
