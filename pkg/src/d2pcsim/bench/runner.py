"""Run one configured experiment end to end."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..client import ClientOutcome
from ..cluster import Cluster
from ..simnet import Trace
from ..workload import GENERATORS, KeySpace, TxnTemplate
from .config import ExperimentConfig
from .metrics import MetricsRecord, SummaryReport, summarize


@dataclass
class RunResult:
    records: list
    summary: SummaryReport
    trace: Trace
    cluster: Cluster


def build_cluster(cfg: ExperimentConfig) -> tuple[Cluster, int]:
    topo = cfg.topology.build()
    cluster = Cluster(topo, protocol=cfg.protocol, cc=cfg.cc, read_opt=cfg.read_opt,
                      groups=cfg.coordinator_groups, seed=cfg.seed,
                      processing_delay_ms=cfg.processing_delay_ms,
                      local_notify_ms=cfg.local_notify_ms,
                      recovery_timeout_ms=cfg.recovery_timeout_ms,
                      injected_abort_rate=cfg.injected_abort_rate,
                      trace_level=cfg.trace)
    wl = cfg.workload
    dcs = list(topo.matrix.names)
    homes = wl.placement(dcs)
    n = len(homes)
    for cid, dc in enumerate(homes):
        limit = None
        if wl.txn_limit is not None:
            limit = wl.txn_limit // n + (1 if cid < wl.txn_limit % n else 0)
        if wl.kind == "fixed":
            source = [TxnTemplate("Fixed", tuple(t.get("reads", ())), tuple(t.get("writes", ())))
                      for t in wl.txns]
        else:
            space = KeySpace(topo.num_shards, wl.keys_per_shard, wl.zipf_theta,
                             client_slot=cid if wl.disjoint_keys else -1, slots=n)
            gen = GENERATORS[wl.kind]
            if wl.kind == "longread":
                source = lambda rng, g=gen, s=space: g(s, rng, wl.long_read_keys)
            else:
                source = lambda rng, g=gen, s=space: g(s, rng)
        cluster.add_client(dc, source, txn_limit=limit, stop_ms=wl.duration_ms,
                           retry_limit=wl.retry_limit, starvation_free=wl.starvation_free)
    if cfg.failures:
        cluster.schedule([f.event(dcs) for f in cfg.failures])
    return cluster, n


def collect(cluster: Cluster) -> tuple[list, SummaryReport]:
    names = cluster.topology.matrix.names
    ccp_by_tid: dict = {}
    for tid, shard, _dc, ccp_us in cluster.ctx.ccp:
        ccp_by_tid.setdefault(tid, {})[shard] = ccp_us / 1000.0
    records = []
    issued = 0
    now = cluster.sim.now
    for c in cluster.clients:
        issued += c.issued
        outcomes = list(c.outcomes)
        if c.cur is not None and not c.cur.done:
            # still in flight when the time cap hit
            t = c.cur
            outcomes.append(ClientOutcome(c.cid, c.dc, t.template.kind, t.tid, "failed",
                                          t.retries, t.started_us, t.commit_us, now,
                                          "unfinished", []))
        for o in outcomes:
            latency = None
            if o.outcome == "commit" and o.commit_us is not None:
                latency = (o.end_us - o.commit_us) / 1000.0
            records.append(MetricsRecord(str(o.tid), o.outcome, latency,
                                         ccp_by_tid.get(o.tid, {}), o.reason, o.retries,
                                         o.client, names[o.dc], o.kind,
                                         o.start_us / 1000.0, o.end_us / 1000.0))
    end = max((r.end_ms for r in records), default=now / 1000.0)
    summary = summarize(records, cluster.ctx.ccp, issued, end, names)
    return records, summary


def run_experiment(cfg: ExperimentConfig, *, max_time_ms: Optional[float] = None) -> RunResult:
    cluster, _ = build_cluster(cfg)
    cluster.run(max_time_ms if max_time_ms is not None else cfg.max_time_ms)
    records, summary = collect(cluster)
    return RunResult(records, summary, cluster.trace, cluster)
