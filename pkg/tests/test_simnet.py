import pytest

from d2pcsim.simnet import (TABLE1, THREE_DC, ConfigurationError, FailureEvent, LatencyMatrix,
                            Node, NodeId, Simulator, Trace, read_trace, validate_failures)


class Echo(Node):
    def __init__(self, nid, sim, log):
        super().__init__(nid, sim)
        self.log = log

    def on_str(self, msg, src):
        self.log.append((self.now, self.id, msg, src))
        if msg.startswith("ping"):
            self.send(src, "pong" + msg[4:])

    def on_timer(self, payload):
        self.log.append((self.now, self.id, payload, None))


def pair(rtt=None, **kw):
    sim = Simulator(rtt or THREE_DC, **kw)
    log = []
    a = Echo(NodeId("replica", 0, 0), sim, log)
    b = Echo(NodeId("replica", 1, 0), sim, log)
    return sim, a, b, log


def test_table_values():
    assert TABLE1.rtt("Hangzhou", "Frankfurt") == 231
    assert TABLE1.rtt("Beijing", "Virginia") == 215
    assert TABLE1.rtt("Virginia", "Virginia") == 0.3
    assert THREE_DC.names == ("Hangzhou", "San Francisco", "Frankfurt")
    assert THREE_DC.rtt(1, 2) == 151


def test_one_way_is_half_rtt():
    sim, a, b, log = pair()
    a.send(b.id, "hello")
    sim.run()
    assert log[0][0] == 70_000
    assert sim.one_way_delay(a.id, b.id) == 70.0


def test_intra_dc_delay_is_half_diagonal():
    sim, a, _, log = pair()
    c = Echo(NodeId("cocoord", 0, 0), sim, log)
    a.send(c.id, "x")
    sim.run()
    assert log[0][0] == 100


def test_round_trip_and_processing_delay():
    sim, a, b, log = pair(processing_delay_ms=0.5)
    a.send(b.id, "ping1")
    sim.run()
    assert [t for t, *_ in log] == [70_500, 141_000]


def test_trace_end_time_for_frankfurt_message():
    trace = Trace("full", THREE_DC.names)
    sim = Simulator(THREE_DC, trace=trace)
    log = []
    a = Echo(NodeId("replica", 0, 0), sim, log)
    f = Echo(NodeId("replica", 2, 0), sim, log)
    a.send(f.id, "x")
    sim.run()
    assert trace.dicts()[-1]["t"] == 115.5
    assert trace.dicts()[-1]["kind"] == "deliver"


def test_fifo_links_never_reorder():
    sim, a, b, log = pair(processing_delay_ms=0.0)
    for i in range(5):
        a.send(b.id, f"m{i}")
    sim.run()
    assert [m for _, _, m, _ in log] == [f"m{i}" for i in range(5)]


def test_ties_break_by_schedule_order():
    sim, a, b, log = pair()
    a.set_timer(10, "t1")
    a.set_timer(10, "t2")
    sim.run()
    assert [m for _, _, m, _ in log] == ["t1", "t2"]


def test_crash_drops_deliveries_and_timers():
    sim, a, b, log = pair()
    a.send(b.id, "x")
    b.set_timer(100_000, "late")
    sim.schedule_failures([FailureEvent(10.0, b.id, "crash")])
    sim.run()
    assert log == []
    assert not sim.is_alive(b.id)
    assert sim.incarnation(b.id) == 1


def test_drop_outbox_discards_messages_in_flight():
    sim, a, b, log = pair()
    a.send(b.id, "lost")
    sim.schedule_failures([FailureEvent(10.0, a.id, "crash", drop_outbox=True)])
    sim.run()
    assert log == []


def test_without_drop_outbox_sent_messages_still_arrive():
    sim, a, b, log = pair()
    a.send(b.id, "kept")
    sim.schedule_failures([FailureEvent(10.0, a.id, "crash")])
    sim.run()
    assert [m for _, _, m, _ in log] == ["kept"]


def test_recover_restores_node():
    sim, a, b, log = pair()
    sim.schedule_failures([FailureEvent(1.0, b.id, "crash"), FailureEvent(2.0, b.id, "recover")])
    sim.run()
    assert sim.is_alive(b.id)
    a.send(b.id, "again")
    sim.run()
    assert log[-1][2] == "again"


def test_failure_schedule_validation():
    n = NodeId("replica", 0, 0)
    with pytest.raises(ConfigurationError):
        validate_failures([FailureEvent(2.0, n, "crash"), FailureEvent(1.0, n, "recover")])
    with pytest.raises(ConfigurationError):
        validate_failures([FailureEvent(1.0, n, "recover")])
    with pytest.raises(ConfigurationError):
        validate_failures([FailureEvent(1.0, n, "explode")])


def test_matrix_validation():
    with pytest.raises(ConfigurationError):
        LatencyMatrix(["a", "b"], [[0.2, 10], [11, 0.2]])
    with pytest.raises(ConfigurationError):
        LatencyMatrix(["a", "b"], [[20, 10], [10, 0.2]])
    with pytest.raises(ConfigurationError):
        LatencyMatrix(["a", "a"], [[0.2, 10], [10, 0.2]])
    with pytest.raises(ConfigurationError):
        THREE_DC.index("Tokyo")


def test_unknown_destination_rejected():
    sim, a, _, _ = pair()
    with pytest.raises(ConfigurationError):
        a.send(NodeId("replica", 1, 7), "x")


def test_node_labels_round_trip():
    n = NodeId("cocoord", 2, 1)
    label = n.label(THREE_DC.names)
    assert label == "cocoord:1@Frankfurt"
    assert NodeId.parse(label, THREE_DC.names) == n


def test_same_seed_same_trace(tmp_path):
    from helpers import experiment
    from d2pcsim.bench.runner import run_experiment

    def digest():
        cfg = experiment({"kind": "retwis", "clients": 6, "txn_limit": 60, "zipf_theta": 0.9,
                          "keys_per_shard": 50}, seed=11, trace="full")
        return run_experiment(cfg).trace

    t1, t2 = digest(), digest()
    assert t1.digest() == t2.digest()
    path = tmp_path / "trace.jsonl"
    t1.write(path)
    back = read_trace(path)
    assert len(back) == len(t1.records)
    assert [(r["t"], r["kind"]) for r in back] == [(d["t"], d["kind"]) for d in t1.dicts()]
