import json

import pytest
import yaml

from d2pcsim.bench.config import ExperimentConfig, load_config, set_path
from d2pcsim.simnet import ConfigurationError


def test_defaults_are_three_dc():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.topology.datacenters == ["Hangzhou", "San Francisco", "Frankfurt"]
    assert cfg.protocol == "d2pc" and cfg.cc == "occ"
    assert cfg.topology.build().num_shards == 3


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"workload": {"clients": 3, "colour": "red"}},
    {"topology": {"dcs": ["Hangzhou"]}},
    {"failures": [{"time_ms": 1, "action": "crash", "when": 3}]},
])
def test_unknown_fields_rejected(data):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(data)


@pytest.mark.parametrize("data", [
    {"protocol": "3pc"},
    {"cc": "mvcc"},
    {"coordinator_groups": 0},
    {"workload": {"kind": "tpcc"}},
    {"workload": {"kind": "fixed"}},
    {"injected_abort_rate": 2},
    {"read_opt": True, "workload": {"read_optimization": False}},
])
def test_bad_values_rejected(data):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(data)


def test_read_optimization_alias():
    cfg = ExperimentConfig.from_dict({"workload": {"read_optimization": True}})
    assert cfg.read_opt


def test_load_yaml_and_json(tmp_path):
    data = {"protocol": "layered", "workload": {"clients": 4, "txn_limit": 10}}
    (tmp_path / "a.yaml").write_text(yaml.safe_dump(data))
    (tmp_path / "a.json").write_text(json.dumps(data))
    for name in ("a.yaml", "a.json"):
        cfg = load_config(tmp_path / name)
        assert cfg.protocol == "layered" and cfg.workload.clients == 4


def test_explicit_shards_and_placement():
    cfg = ExperimentConfig.from_dict({"topology": {
        "shards": [{"replicas": ["Hangzhou", "Frankfurt", "San Francisco"], "leader": "Frankfurt"}]}})
    topo = cfg.topology.build()
    assert topo.shards[0].leader == 2
    assert cfg.workload.placement(["a", "b", "c"]) == [0]
    wl = ExperimentConfig.from_dict({"workload": {"clients_per_dc": {"Frankfurt": 2}}}).workload
    assert wl.placement(["Hangzhou", "San Francisco", "Frankfurt"]) == [2, 2]


def test_set_path():
    assert set_path({}, "workload.zipf_theta", 0.7) == {"workload": {"zipf_theta": 0.7}}
