"""Shared builders for experiment-level tests."""
import random

from d2pcsim.bench.config import ExperimentConfig
from d2pcsim.bench.runner import run_experiment

DCS = ["Hangzhou", "San Francisco", "Frankfurt"]


def experiment(workload=None, **kw):
    data = dict(kw)
    data["workload"] = workload or {}
    return ExperimentConfig.from_dict(data)


def single_txn(client, writes, reads=(), **kw):
    """One contention-free transaction issued from ``client``."""
    wl = {"kind": "fixed", "clients_per_dc": {client: 1}, "txn_limit": 1, "retry_limit": 0,
          "txns": [{"reads": list(reads), "writes": list(writes)}]}
    return run_experiment(experiment(wl, **kw))


def recovery_schedule(i, case, groups=1):
    """Crash the correspondent (case 1: mid dissemination, case 2: before deciding).

    A fault-free dry run with the same seed pins the decision time and the
    arrival times of the decision at the peer co-coordinators.
    """
    rng = random.Random(f"recovery:{i}")
    client = rng.choice(DCS)
    parts = sorted(rng.sample(range(3), rng.choice([2, 3])))
    rate = rng.choice([0.0, 0.0, 0.3])
    wl = {"kind": "fixed", "clients_per_dc": {client: 1}, "txn_limit": 1, "retry_limit": 0,
          "txns": [{"writes": parts}]}
    common = {"seed": i, "injected_abort_rate": rate, "coordinator_groups": groups}
    dry = run_experiment(experiment(wl, trace="full", **common)).trace.dicts()
    tid = next(r["tid"] for r in dry if r["kind"] == "commit_request")
    group = int(tid.split(".")[1]) % groups
    corr = f"cocoord:{group}@{client}"
    t_decide = next(r["t"] for r in dry if r["kind"] == "decide")
    arrivals = sorted(r["t"] for r in dry
                      if r["kind"] == "deliver" and r["msg"] == "DecisionReplicate")
    if case == 1:
        at = rng.uniform(arrivals[0] + 0.01, arrivals[-1] - 0.01)
    else:
        at = rng.uniform(0.01, t_decide - 0.01)
    fail = [{"time_ms": at, "action": "crash", "node": corr, "drop_outbox": True}]
    return run_experiment(experiment(wl, trace="history", failures=fail, **common),
                          max_time_ms=60_000)


HISTORY_GRID = [(theta, cc, proto) for theta in (0.0, 0.7, 0.9)
                for cc in ("2pl", "occ") for proto in ("d2pc", "layered")]


def history_config(i, groups=None):
    """Randomized contended run for the history oracles."""
    rng = random.Random(f"history:{i}")
    theta, cc, proto = HISTORY_GRID[i % len(HISTORY_GRID)]
    txns = int(round(10 ** rng.uniform(2, 3.301)))       # 100 .. 2000, log-uniform
    wl = {"kind": rng.choice(["retwis", "ycsbt"]), "zipf_theta": theta,
          "clients": rng.randint(5, 50), "txn_limit": min(txns, 2000),
          "keys_per_shard": rng.choice([50, 1000, 100_000])}
    return experiment(wl, seed=i, protocol=proto, cc=cc, read_opt=rng.random() < 0.5,
                      trace="history", coordinator_groups=groups or rng.choice([1, 2]),
                      injected_abort_rate=rng.choice([0.0, 0.05]))
