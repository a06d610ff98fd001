"""Closed-loop client: one-shot reads, buffered writes, commit, retry."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .context import Context
from .messages import (ABORT, COMMIT, ClientAbort, ClientReply, CommitRequest, Outcome,
                       Prepare, ReadEntry, ReadReply, ReadRequest, RetryNotice, Timer)
from .simnet import Node, NodeId, cocoord_id
from .workload import TxnTemplate, begin


@dataclass
class ClientTxn:
    tid: object
    template: TxnTemplate
    ts: tuple
    retries: int
    started_us: int
    forced_lock: bool = False
    rset: dict = field(default_factory=dict)
    wset: dict = field(default_factory=dict)
    leader_read_shards: set = field(default_factory=set)
    commit_us: Optional[int] = None
    done: bool = False

    def read(self, key):
        """Own buffered writes first, then what the store returned."""
        if key in self.wset:
            return self.wset[key]
        return self.rset.get(key)


@dataclass
class ClientOutcome:
    client: int
    dc: int
    kind: str
    tid: object
    outcome: str           # "commit" | "abort" | "failed"
    retries: int
    start_us: int
    commit_us: Optional[int]
    end_us: int
    reason: Optional[str]
    attempts: list


class Client(Node):

    def __init__(self, node_id: NodeId, ctx: Context, *, source: Callable[[random.Random], TxnTemplate] | list,
                 rng: random.Random, txn_limit: Optional[int] = None, stop_us: Optional[int] = None,
                 retry_limit: int = 10, starvation_free: bool = True, start_us: int = 0,
                 sink: Optional[Callable] = None):
        super().__init__(node_id, ctx.sim)
        self.ctx = ctx
        self.cid = node_id.index
        self.dc = node_id.dc
        self.rng = rng
        if isinstance(source, list):
            script = list(source)
            self.source = lambda _rng: script.pop(0)
            txn_limit = len(script) if txn_limit is None else min(txn_limit, len(script))
        else:
            self.source = source
        self.txn_limit = txn_limit
        self.stop_us = stop_us
        self.retry_limit = retry_limit
        self.starvation_free = starvation_free
        self.sink = sink
        self.counter = 0
        self.issued = 0
        self.cur: Optional[ClientTxn] = None
        self.outcomes: list = []
        self._attempts: list = []
        self._notified: set = set()          # RetryNotice seen for these attempt tids
        self._parked = None                  # (tid, retry args) waiting for a RetryNotice
        self.set_timer(start_us, Timer("start"))

    def on_timer(self, t: Timer) -> None:
        if t.kind == "start":
            self._next()
        elif t.kind == "retry" and self._parked is not None and self._parked[0] == t.tid:
            self._unpark()

    def on_RetryNotice(self, m: RetryNotice, src: NodeId) -> None:
        if self._parked is not None and self._parked[0] == m.tid:
            self._unpark()
        elif self.cur is not None and m.tid == self.cur.tid:
            self._notified.add(m.tid)

    def _unpark(self) -> None:
        _tid, args = self._parked
        self._parked = None
        self._attempt(*args)

    def _stopped(self) -> bool:
        if self.txn_limit is not None and self.issued >= self.txn_limit:
            return True
        return self.stop_us is not None and self.now >= self.stop_us

    def _next(self) -> None:
        self.cur = None
        if self._stopped():
            return
        template = self.source(self.rng)
        self.issued += 1
        self._attempts = []
        self._attempt(template, (self.now, self.cid), 0, self.now, False)

    def _attempt(self, template, ts, retries, started_us, forced_lock) -> None:
        tid = begin(self.cid, self.counter)
        self.counter += 1
        self._notified.clear()
        txn = self.cur = ClientTxn(tid, template, ts, retries, started_us, forced_lock)
        for key in template.writes:
            txn.wset[key] = str(tid)
        if not template.reads:
            self._commit()
            return
        d = self.ctx.directory
        for key in template.reads:
            shard = d.topology.shard_of(key)
            leader = d.leader(shard)
            if self.ctx.read_opt and not forced_lock:
                local = d.local_replica(shard, self.dc)
                if local is not None and self.sim.is_alive(local):
                    self.send(local, ReadRequest(tid, key, ts, follower=True))
                    continue
                txn.leader_read_shards.add(shard)
                self.send(leader, ReadRequest(tid, key, ts))
                continue
            txn.leader_read_shards.add(shard)
            self.send(leader, ReadRequest(tid, key, ts, lock=self.ctx.cc == "2pl"))

    def on_ReadReply(self, m: ReadReply, src: NodeId) -> None:
        txn = self.cur
        if txn is None or m.tid != txn.tid or txn.commit_us is not None or txn.done:
            return
        if m.died:
            d = self.ctx.directory
            for shard in sorted(txn.leader_read_shards):
                self.send(d.leader(shard), ClientAbort(txn.tid))
            self._finish(ABORT, m.reason)
            return
        txn.rset[m.key] = ReadEntry(m.key, m.version, m.writer)
        if len(txn.rset) == len(txn.template.reads):
            self._commit()

    def _commit(self) -> None:
        txn = self.cur
        d = self.ctx.directory
        per_shard: dict[int, tuple[list, list]] = {}
        for key in txn.template.reads:
            per_shard.setdefault(d.topology.shard_of(key), ([], []))[0].append(txn.rset[key])
        for key in txn.template.writes:
            per_shard.setdefault(d.topology.shard_of(key), ([], []))[1].append((key, txn.wset[key]))
        shard_list = tuple(sorted(per_shard))
        txn.commit_us = self.now
        group = self.ctx.group_of(txn.tid)
        self.ctx.trace.add(self.now, self.id, "commit_request", tid=str(txn.tid),
                           participants=list(shard_list), profile=txn.template.kind)
        coordinator = d.leader(shard_list[0]) if self.ctx.protocol == "layered" else None
        if self.ctx.protocol == "d2pc":
            self.send(cocoord_id(self.dc, group), CommitRequest(txn.tid, shard_list, self.id))
        for shard in shard_list:
            rset, wset = per_shard[shard]
            self.send(d.leader(shard), Prepare(txn.tid, shard, tuple(rset), tuple(wset), shard_list,
                                               self.id, self.dc, group, txn.ts, coordinator))

    def on_ClientReply(self, m: ClientReply, src: NodeId) -> None:
        txn = self.cur
        if txn is None or m.tid != txn.tid or txn.done:
            return
        self._finish(m.decision, m.reason)

    def _finish(self, decision: Outcome, reason) -> None:
        txn = self.cur
        txn.done = True
        latency = None if txn.commit_us is None else self.now - txn.commit_us
        self._attempts.append((str(txn.tid), decision.value, reason, latency))
        if decision is COMMIT:
            self._record(txn, "commit", None)
            self._next()
            return
        forced = txn.forced_lock
        if (reason == "stale_read" and self.starvation_free and self.ctx.cc == "2pl"
                and self.ctx.read_opt):
            forced = True
        if self.stop_us is not None and self.now >= self.stop_us:
            self._record(txn, "abort", reason)
            self._next()
        elif txn.retries + 1 > self.retry_limit:
            self._record(txn, "failed", reason)
            self._next()
        else:
            args = (txn.template, txn.ts, txn.retries + 1, txn.started_us, forced)
            if reason == "wait_die" and txn.tid not in self._notified:
                # restart once the killers released, not into the same conflict
                self._parked = (txn.tid, args)
                self.set_timer(self.ctx.recovery_timeout_us, Timer("retry", txn.tid))
            else:
                self._attempt(*args)

    def _record(self, txn: ClientTxn, outcome: str, reason) -> None:
        rec = ClientOutcome(self.cid, self.dc, txn.template.kind, txn.tid, outcome, txn.retries,
                       txn.started_us, txn.commit_us, self.now, reason, self._attempts)
        self.outcomes.append(rec)
        self.ctx.trace.add(self.now, self.id, "client_outcome", tid=str(txn.tid), outcome=outcome,
                           retries=txn.retries, reason=reason)
        if self.sink is not None:
            self.sink(rec)
