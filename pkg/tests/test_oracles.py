import pytest

from d2pcsim.bench.oracles import (INIT, check_history, decisions, exhaustive_serializable,
                                   parse_history, serialization_graph, vote_oracle)


def txn(tid, reads=(), writes=(), decision="commit", shard=0):
    return [{"kind": "commit_request", "tid": tid, "participants": [shard]},
            {"kind": "decide", "tid": tid, "decision": decision},
            {"kind": "apply", "tid": tid, "shard": shard, "decision": decision,
             "reads": [list(r) for r in reads], "writes": list(writes)}]


def test_empty_history_is_fine():
    rep = check_history([])
    assert rep.ok and rep.committed == 0


def test_serial_history_passes():
    recs = txn("T1", writes=[1]) + txn("T2", reads=[(1, "T1")], writes=[2])
    rep = check_history(recs, exhaustive=True)
    assert rep.ok and rep.committed == 2


def test_write_skew_cycle_is_caught():
    # both read the initial versions and overwrite each other's read key
    recs = txn("T1", reads=[(1, None)], writes=[2]) + txn("T2", reads=[(2, None)], writes=[1])
    rep = check_history(recs)
    assert not rep.serializable
    g = serialization_graph(parse_history(recs))
    assert not exhaustive_serializable(g)


def test_read_of_aborted_writer_is_caught():
    recs = txn("T1", writes=[1], decision="abort") + txn("T2", reads=[(1, "T1")])
    assert not check_history(recs).serializable


def test_partial_commit_breaks_atomicity():
    recs = [{"kind": "commit_request", "tid": "T1", "participants": [0, 1]},
            {"kind": "decide", "tid": "T1", "decision": "commit"},
            {"kind": "apply", "tid": "T1", "shard": 0, "decision": "commit",
             "reads": [], "writes": [3]}]
    assert not check_history(recs).atomic


def test_conflicting_decisions_break_atomicity():
    recs = txn("T1", writes=[1])
    recs.append({"kind": "decide", "tid": "T1", "decision": "abort"})
    assert not check_history(recs).atomic


def test_reader_committing_after_aborted_writer_is_unrecoverable():
    recs = txn("T1", writes=[1], decision="abort") + txn("T2", writes=[5])
    recs.append({"kind": "wr_dep", "reader": "T2", "writer": "T1", "key": 1})
    rep = check_history(recs)
    assert not rep.recoverable and not rep.dependency_order


def test_reader_committing_before_writer_breaks_dependency_order():
    recs = txn("T2", writes=[5]) + txn("T1", writes=[1])
    recs.append({"kind": "wr_dep", "reader": "T2", "writer": "T1", "key": 1})
    rep = check_history(recs)
    assert rep.recoverable and not rep.dependency_order


def test_exhaustive_limit():
    recs = []
    for i in range(9):
        recs += txn(f"T{i}", writes=[i])
    with pytest.raises(ValueError):
        exhaustive_serializable(serialization_graph(parse_history(recs)))


def test_init_node_only_ww_sources():
    g = serialization_graph(parse_history(txn("T1", writes=[1])))
    assert list(g.predecessors("T1")) == [INIT]


def test_vote_oracle_and_decisions():
    recs = [{"kind": "commit_request", "tid": "T1", "participants": [0, 1]},
            {"kind": "vote", "tid": "T1", "shard": 0, "value": "commit"},
            {"kind": "vote", "tid": "T1", "shard": 1, "value": "commit"},
            {"kind": "commit_request", "tid": "T2", "participants": [0, 1]},
            {"kind": "vote", "tid": "T2", "shard": 0, "value": "commit"},
            {"kind": "vote", "tid": "T2", "shard": 1, "value": "abort"},
            {"kind": "commit_request", "tid": "T3", "participants": [0]},
            {"kind": "decide", "tid": "T1", "decision": "commit"},
            {"kind": "decide", "tid": "T1", "decision": "abort"}]
    assert vote_oracle(recs) == {"T1": "commit", "T2": "abort", "T3": "abort"}
    assert decisions(recs) == {"T1": "commit"}
