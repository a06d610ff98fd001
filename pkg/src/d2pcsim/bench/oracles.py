"""History oracles over recorded traces.

Works on the list-of-dicts form of a trace (``Trace.dicts()`` or a parsed
trace file). Only committed transactions enter the serialization graph;
the ww order on a key is the order in which its shard leader applied the
commits.
"""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field

import networkx as nx

INIT = "init"


@dataclass
class HistoryReport:
    serializable: bool = True
    atomic: bool = True
    recoverable: bool = True
    dependency_order: bool = True
    committed: int = 0
    issues: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.serializable and self.atomic and self.recoverable and self.dependency_order

    def as_dict(self) -> dict:
        return {"serializable": self.serializable, "atomic": self.atomic,
                "recoverable": self.recoverable, "dependency_order": self.dependency_order,
                "committed": self.committed, "issues": self.issues[:20]}


@dataclass
class History:
    participants: dict = field(default_factory=dict)       # tid -> set of shards
    decisions: dict = field(default_factory=dict)          # tid -> (decision, trace position)
    applies: dict = field(default_factory=dict)            # (tid, shard) -> record
    apply_order: list = field(default_factory=list)        # first-seen commit applies
    deps: list = field(default_factory=list)               # (reader, writer, key)
    conflicting_decisions: list = field(default_factory=list)


def parse_history(records) -> History:
    h = History()
    for seq, r in enumerate(records):
        kind = r["kind"]
        if kind == "commit_request":
            h.participants[r["tid"]] = set(r["participants"])
        elif kind == "decide":
            prev = h.decisions.get(r["tid"])
            if prev is None:
                h.decisions[r["tid"]] = (r["decision"], seq)
            elif prev[0] != r["decision"]:
                h.conflicting_decisions.append(r["tid"])
        elif kind == "apply":
            key = (r["tid"], r["shard"])
            if key in h.applies:
                if h.applies[key]["decision"] != r["decision"]:
                    h.conflicting_decisions.append(r["tid"])
                continue
            h.applies[key] = r
            if r["decision"] == "commit":
                h.apply_order.append(r)
        elif kind == "wr_dep":
            h.deps.append((r["reader"], r["writer"], r["key"]))
    return h


def serialization_graph(h: History) -> nx.DiGraph:
    """ww, wr and rw edges between committed transactions (plus an init node)."""
    g = nx.DiGraph()
    committed = {t for t, (d, _) in h.decisions.items() if d == "commit"}
    g.add_nodes_from(committed)
    writers = defaultdict(list)        # key -> committed writers in install order
    for r in h.apply_order:
        if r["tid"] in committed:
            for k in r["writes"]:
                writers[k].append(r["tid"])
    for k, ws in writers.items():
        for w1, w2 in zip([INIT] + ws, ws):
            g.add_edge(w1, w2, kind="ww", key=k)
    for r in h.apply_order:
        reader = r["tid"]
        if reader not in committed:
            continue
        for k, writer in r["reads"]:
            writer = INIT if writer is None else writer
            if writer != reader:
                g.add_edge(writer, reader, kind="wr", key=k)
            seq = [INIT] + writers.get(k, [])
            if writer in seq:
                pos = seq.index(writer)
                if pos + 1 < len(seq) and seq[pos + 1] != reader:
                    g.add_edge(reader, seq[pos + 1], kind="rw", key=k)
            else:
                g.add_edge(writer, reader, kind="wr-uncommitted", key=k)
    return g


def exhaustive_serializable(g: nx.DiGraph, limit: int = 8) -> bool:
    """Brute-force search for a serial order consistent with every edge."""
    nodes = [n for n in g.nodes if n != INIT]
    if len(nodes) > limit:
        raise ValueError(f"exhaustive oracle limited to {limit} transactions")
    edges = [(u, v) for u, v in g.edges if u != INIT and v != INIT]
    for order in itertools.permutations(nodes):
        pos = {n: i for i, n in enumerate(order)}
        if all(pos[u] < pos[v] for u, v in edges):
            return True
    return not nodes


def check_history(records, exhaustive: bool = False) -> HistoryReport:
    h = parse_history(records)
    rep = HistoryReport()
    committed = {t for t, (d, _) in h.decisions.items() if d == "commit"}
    rep.committed = len(committed)

    g = serialization_graph(h)
    bad_reads = [(u, v) for u, v, d in g.edges(data=True) if d["kind"] == "wr-uncommitted"]
    if bad_reads:
        rep.serializable = False
        rep.issues.append(f"committed reads of uncommitted writers: {bad_reads[:5]}")
    if not nx.is_directed_acyclic_graph(g):
        rep.serializable = False
        cycle = nx.find_cycle(g)
        rep.issues.append(f"serialization cycle: {cycle}")
    if exhaustive and rep.serializable:
        if not exhaustive_serializable(g):
            rep.serializable = False
            rep.issues.append("no serial order found by exhaustive search")

    if h.conflicting_decisions:
        rep.atomic = False
        rep.issues.append(f"conflicting decisions: {sorted(set(h.conflicting_decisions))[:5]}")
    applied = defaultdict(dict)
    for (tid, shard), r in h.applies.items():
        applied[tid][shard] = r["decision"]
    for tid, shards in applied.items():
        decision = h.decisions.get(tid, (None,))[0]
        commits = {s for s, d in shards.items() if d == "commit"}
        if commits and decision != "commit":
            rep.atomic = False
            rep.issues.append(f"{tid}: shards {sorted(commits)} committed without a commit decision")
        if decision == "commit" and commits != h.participants.get(tid, commits):
            rep.atomic = False
            rep.issues.append(f"{tid}: committed on {sorted(commits)} of {sorted(h.participants[tid])}")
    for tid in committed:
        if tid not in applied and tid in h.participants:
            rep.atomic = False
            rep.issues.append(f"{tid}: commit decided but never applied")

    for reader, writer, key in h.deps:
        rd = h.decisions.get(reader)
        wd = h.decisions.get(writer)
        if rd is not None and rd[0] == "commit":
            if wd is None or wd[0] != "commit":
                rep.recoverable = False
                rep.issues.append(f"{reader} committed after reading {writer}, which did not commit")
            elif wd[1] > rd[1]:
                rep.dependency_order = False
                rep.issues.append(f"{reader} committed before its writer {writer}")
        if wd is not None and wd[0] == "abort":
            if rd is not None and rd[0] == "commit":
                rep.dependency_order = False
                rep.issues.append(f"{writer} aborted but its reader {reader} committed")
            elif rd is None and reader in h.participants:
                rep.dependency_order = False
                rep.issues.append(f"{writer} aborted and its reader {reader} never terminated")
    return rep


def vote_oracle(records) -> dict:
    """Reference decision per transaction: Commit iff every participant recorded a Commit vote."""
    votes = defaultdict(dict)
    participants = {}
    for r in records:
        if r["kind"] == "commit_request":
            participants[r["tid"]] = set(r["participants"])
        elif r["kind"] == "vote":
            votes[r["tid"]].setdefault(r["shard"], r["value"])
    return {tid: "commit" if all(votes[tid].get(s) == "commit" for s in p) else "abort"
            for tid, p in participants.items()}


def decisions(records) -> dict:
    """First recorded decision per transaction."""
    out = {}
    for r in records:
        if r["kind"] == "decide":
            out.setdefault(r["tid"], r["decision"])
    return out
