"""Per-transaction records and run summaries."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np


@dataclass
class MetricsRecord:
    tid: str
    outcome: str                        # commit | abort | failed
    commit_latency_ms: Optional[float]
    ccp_ms: dict                        # shard -> ms, final attempt only
    aborted_reason: Optional[str]
    retries: int
    client: int
    dc: str
    kind: str
    start_ms: float
    end_ms: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SummaryReport:
    issued: int
    committed: int
    aborted: int
    failed: int
    attempts: int
    aborted_attempts: int
    sim_time_ms: float
    throughput: float                   # committed per simulated second
    latency_p50_ms: float
    latency_p95_ms: float
    latency_mean_ms: float
    mean_ccp_ms: float
    mean_ccp_ms_by_dc: dict = field(default_factory=dict)
    abort_rate: float = 0.0
    starved_fraction: float = 0.0
    max_retries: int = 0

    @property
    def conserved(self) -> bool:
        return self.issued == self.committed + self.aborted + self.failed

    def rows(self) -> list:
        out = []
        for k, v in asdict(self).items():
            if isinstance(v, dict):
                for dc, x in sorted(v.items()):
                    out.append((f"{k}[{dc}]", x))
            else:
                out.append((k, v))
        return out

    def table(self, delimiter: str = "\t") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        w.writerow(("metric", "value"))
        for k, v in self.rows():
            w.writerow((k, round(v, 4) if isinstance(v, float) else v))
        return buf.getvalue()


def summarize(records: list, ccp: list, issued: int, sim_time_ms: float,
              dc_names, starvation_threshold: int = 5) -> SummaryReport:
    committed = [r for r in records if r.outcome == "commit"]
    lat = np.array([r.commit_latency_ms for r in committed if r.commit_latency_ms is not None])
    attempts = sum(r.retries + 1 for r in records)
    aborted_attempts = attempts - len(committed)
    by_dc = defaultdict(list)
    for _tid, _shard, dc, ccp_us in ccp:
        by_dc[dc_names[dc]].append(ccp_us / 1000.0)
    all_ccp = [x for v in by_dc.values() for x in v]
    seconds = sim_time_ms / 1000.0
    return SummaryReport(
        issued=issued,
        committed=len(committed),
        aborted=sum(r.outcome == "abort" for r in records),
        failed=sum(r.outcome == "failed" for r in records),
        attempts=attempts,
        aborted_attempts=aborted_attempts,
        sim_time_ms=sim_time_ms,
        throughput=len(committed) / seconds if seconds > 0 else 0.0,
        latency_p50_ms=float(np.percentile(lat, 50)) if lat.size else 0.0,
        latency_p95_ms=float(np.percentile(lat, 95)) if lat.size else 0.0,
        latency_mean_ms=float(lat.mean()) if lat.size else 0.0,
        mean_ccp_ms=float(np.mean(all_ccp)) if all_ccp else 0.0,
        mean_ccp_ms_by_dc={dc: float(np.mean(v)) for dc, v in sorted(by_dc.items())},
        abort_rate=aborted_attempts / attempts if attempts else 0.0,
        starved_fraction=(sum(r.retries > starvation_threshold for r in records) / len(records)
                          if records else 0.0),
        max_retries=max((r.retries for r in records), default=0),
    )
