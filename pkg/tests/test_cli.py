import json

import yaml

from d2pcsim.bench.cli import main

SMALL = {"protocol": "d2pc", "seed": 3,
         "workload": {"kind": "retwis", "clients": 6, "txn_limit": 40, "keys_per_shard": 100}}


def write_cfg(tmp_path, data=SMALL):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return p


def test_run_writes_metrics_summary_and_trace(tmp_path, capsys):
    out = tmp_path / "out"
    trace = tmp_path / "trace.jsonl"
    rc = main(["run", str(write_cfg(tmp_path)), "--out", str(out), "--trace", str(trace), "--check"])
    assert rc == 0
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 40
    assert {"tid", "outcome", "commit_latency_ms"} <= set(json.loads(lines[0]))
    assert "throughput" in (out / "summary.tsv").read_text()
    assert trace.exists()
    assert main(["check", str(trace)]) == 0
    assert '"serializable": true' in capsys.readouterr().out


def test_calc_prints_anchor_values(capsys):
    assert main(["calc", "three_dc", "--from", "Hangzhou",
                 "--participants", "Hangzhou,San Francisco,Frankfurt"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["latency_ms"] == 231.0
    assert out["ccp_ms"]["Frankfurt"] == 30.0


def test_calc_layered(capsys):
    assert main(["calc", "three_dc", "--protocol", "layered", "--from", "0",
                 "--participants", "0,1,2"]) == 0
    assert json.loads(capsys.readouterr().out)["latency_ms"] == 382.0


def test_calc_unknown_dc_is_config_error():
    assert main(["calc", "three_dc", "--from", "Tokyo", "--participants", "0"]) == 2


def test_bad_config_exits_2(tmp_path):
    assert main(["run", str(write_cfg(tmp_path, {"nope": 1})), "--out", str(tmp_path)]) == 2


def test_sweep_table(tmp_path, capsys):
    out = tmp_path / "sw"
    rc = main(["sweep", str(write_cfg(tmp_path)), "--param", "protocol=d2pc,layered",
               "--param", "workload.zipf_theta=0.0,0.9", "--out", str(out)])
    assert rc == 0
    rows = (out / "sweep.tsv").read_text().splitlines()
    assert rows[0].startswith("protocol\tworkload.zipf_theta\tthroughput")
    assert len(rows) == 5
