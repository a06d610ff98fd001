"""Shard replica process: data store, replication log and leader duties.

Every replica of a shard runs a ShardServer. The one the directory names as
leader validates Prepares, replicates votes and applies decisions; the
others append entries, ack, notify their local co-coordinator and serve
committed reads for the read optimization.
"""
from __future__ import annotations

from .context import Context
from .layered import LayeredCoordinator
from .messages import (ABORT, COMMIT, ApplyDecision, CatchUp, ClientAbort, FinalDecision,
                       FollowerNotice, LeaderReport, LogEntry, Outcome, Prepare,
                       PreCommitNotify, ReadReply, ReadRequest, ReplicationAck,
                       ReplicationAppend, RetryNotice, ShardVote, TerminationQuery, TerminationReply, Vote)
from .replication import ReplicaLog, replication_plan
from .simnet import Node, NodeId, cocoord_id, ms
from .txkv import DIED, GRANTED, Store, TxnState


class ShardServer(Node):

    def __init__(self, node_id: NodeId, ctx: Context):
        super().__init__(node_id, ctx.sim)
        self.ctx = ctx
        self.shard = node_id.index
        self.dc = node_id.dc
        placement = ctx.directory.placement(self.shard)
        self.store = Store(self.shard, ctx.cc, on_dependency=self._trace_dependency)
        self.log = ReplicaLog(self.shard, len(placement.replicas))
        # durable
        self.decided: dict = {}
        self.refused: set = set()
        # volatile, leader only
        self.meta: dict = {}          # tid -> LogEntry template (index 0 until cast)
        self.ccp_start: dict = {}
        self.withheld: set = set()
        self.read_waiters: dict = {}  # (tid, key) -> client
        self.coordinator = LayeredCoordinator(self)
        self._catchup_from = 0

    # -- helpers -----------------------------------------------------------

    @property
    def is_leader(self) -> bool:
        return self.ctx.directory.leader(self.shard) == self.id

    @property
    def trace(self):
        return self.sim.trace

    def _trace_dependency(self, reader, writer, key) -> None:
        self.trace.add(self.now, self.id, "wr_dep", reader=str(reader), writer=str(writer),
                       key=key, shard=self.shard)

    def _correspondent(self, entry: LogEntry) -> NodeId:
        return cocoord_id(entry.coord_dc, entry.group)

    def _layered_coordinator(self, shard_list) -> NodeId:
        return self.ctx.directory.leader(min(shard_list))

    def _start_ccp(self, tid) -> None:
        self.ccp_start.setdefault(tid, self.now)

    def _end_ccp(self, tid) -> None:
        start = self.ccp_start.pop(tid, None)
        if start is not None:
            self.ctx.record_ccp(tid, self.shard, self.dc, self.now - start)

    # -- reads -------------------------------------------------------------

    def on_ReadRequest(self, m: ReadRequest, src: NodeId) -> None:
        if m.follower:
            r = self.store.read_committed(m.key)
            self.send(src, ReadReply(m.tid, m.key, r.value, r.version, r.writer))
            return
        if not self.is_leader:
            self.send(src, ReadReply(m.tid, m.key, died=True, reason="not_leader"))
            return
        if m.lock:
            self.read_waiters[(m.tid, m.key)] = src
            status = self.store.acquire_read_lock(m.tid, m.key, m.ts, self._read_lock_done)
            if status == GRANTED:
                self._read_lock_done(m.tid, m.key, True)
            elif status == DIED:
                self._read_lock_done(m.tid, m.key, False)
            return
        r = self.store.read(m.tid, m.key, m.ts)
        self.send(src, ReadReply(m.tid, m.key, r.value, r.version, r.writer))

    def _read_lock_done(self, tid, key, granted: bool) -> None:
        client = self.read_waiters.pop((tid, key), None)
        if client is None:
            return
        if not granted:
            self.send(client, ReadReply(tid, key, died=True, reason="wait_die"))
            self._watch_restart(tid, client)
            return
        self._start_ccp(tid)
        r = self.store.read(tid, key)
        self.send(client, ReadReply(tid, key, r.value, r.version, r.writer))

    def on_ClientAbort(self, m: ClientAbort, src: NodeId) -> None:
        for k in [k for k in self.read_waiters if k[0] == m.tid]:
            del self.read_waiters[k]
        if m.tid not in self.meta:
            self.ccp_start.pop(m.tid, None)
            self.store.abort_executing(m.tid)
            self.store.forget(m.tid)

    # -- prepare and votes -------------------------------------------------

    def on_Prepare(self, m: Prepare, src: NodeId) -> None:
        if not self.is_leader:
            leader = self.ctx.directory.leader(self.shard)
            if self.sim.is_alive(leader):
                self.send(leader, m)
            return
        if m.tid in self.meta or m.tid in self.decided:
            return
        self.meta[m.tid] = LogEntry(0, m.tid, m.rset, m.wset, None, m.shard_list,
                                    m.coord_dc, m.group, m.client, m.ts)
        self._start_ccp(m.tid)
        if m.tid in self.refused:
            vote = self.store.refuse(m.tid, "presumed_abort", m.ts)
        elif self.ctx.injected_abort(m.tid, self.shard):
            vote = self.store.refuse(m.tid, "injected", m.ts)
        else:
            tid = m.tid
            vote = self.store.prepare(tid, m.rset, m.wset, m.ts,
                                      on_ready=lambda v: self._voted(tid, v))
        if vote is not None:
            self._voted(m.tid, vote)

    def _voted(self, tid, vote: Vote) -> None:
        if tid not in self.meta or tid in self.decided:
            return
        rec = self.store.txns[tid]
        if vote.value is COMMIT and rec.blocked:
            self.withheld.add(tid)
            self.trace.add(self.now, self.id, "withhold", tid=str(tid), shard=self.shard,
                           waiting_on=max(rec.in_counter, 0) + len(rec.ww_wait))
            return
        if vote.value is ABORT:
            self.ccp_start.pop(tid, None)
            if vote.reason == "wait_die":
                self._watch_restart(tid, self.meta[tid].client)
        self._cast(tid, vote)

    def _watch_restart(self, tid, client: NodeId) -> None:
        """Tell the client when the transactions that killed ``tid`` are gone."""
        def notify(t):
            if self.alive:
                self.send(client, RetryNotice(t))
        self.store.restart_watch(tid, notify)

    def _cast(self, tid, vote: Vote) -> None:
        rec = self.store.txns.get(tid)
        if rec is not None:
            rec.vote_sent = True
        tmpl = self.meta[tid]
        entry = LogEntry(self.log.next_index(), tid, tmpl.rset, tmpl.wset, vote,
                         tmpl.shard_list, tmpl.coord_dc, tmpl.group, tmpl.client, tmpl.ts)
        self.meta[tid] = entry
        self.log.append_local(entry, self.dc)
        self.trace.add(self.now, self.id, "vote", tid=str(tid), shard=self.shard,
                       value=vote.value.value, reason=vote.reason)
        placement = self.ctx.directory.placement(self.shard)
        followers, direct = replication_plan(placement.replicas, self.dc, self.ctx.directory.topology.dcs)
        for dc in followers:
            self.send(NodeId("replica", dc, self.shard), ReplicationAppend(entry))
        if self.ctx.protocol == "d2pc":
            self.send(cocoord_id(self.dc, entry.group),
                      FollowerNotice(tid, self.shard, vote, self.dc, True, entry.shard_list,
                                     entry.coord_dc, entry.client))
            for dc in direct:
                self.send(cocoord_id(dc, entry.group),
                          FollowerNotice(tid, self.shard, vote, self.dc, False, entry.shard_list,
                                         entry.coord_dc, entry.client))
        if vote.value is ABORT:
            self._report(entry, False)
        if self.log.has_quorum(entry.index):
            self._on_quorum(entry)

    def _report(self, entry: LogEntry, complete: bool) -> None:
        if self.ctx.protocol == "d2pc":
            self.send(self._correspondent(entry),
                      LeaderReport(entry.tid, self.shard, entry.vote, complete,
                                   entry.shard_list, entry.client))
        else:
            msg = ShardVote(entry.tid, entry.vote, entry.shard_list, entry.client)
            coord = self._layered_coordinator(entry.shard_list)
            if coord == self.id:
                self.coordinator.on_vote(msg)
            else:
                self.send(coord, msg)

    def _on_quorum(self, entry: LogEntry) -> None:
        if entry.vote.value is COMMIT:
            self._report(entry, True)

    def on_ReplicationAck(self, m: ReplicationAck, src: NodeId) -> None:
        if not self.is_leader or m.index not in self.log.entries:
            return
        if self.log.ack(m.index, m.replica_dc):
            self._on_quorum(self.log.entries[m.index])

    def on_ShardVote(self, m: ShardVote, src: NodeId) -> None:
        self.coordinator.on_vote(m)

    # -- decisions ---------------------------------------------------------

    def on_PreCommitNotify(self, m: PreCommitNotify, src: NodeId) -> None:
        if not self.is_leader:
            return
        if m.decision == "precommit":
            if self.store.precommit_txn(m.tid):
                self.trace.add(self.now, self.id, "precommit", tid=str(m.tid), shard=self.shard)
                self._end_ccp(m.tid)
        elif m.tid in self.meta or m.tid in self.store.txns:
            self.apply(m.tid, ABORT)

    def on_FinalDecision(self, m: FinalDecision, src: NodeId) -> None:
        if self.is_leader:
            self.apply(m.tid, m.decision)

    def apply(self, tid, decision: Outcome) -> None:
        if tid in self.decided:
            return
        self.decided[tid] = decision
        rec = self.store.txns.get(tid)
        if rec is None:
            if decision is ABORT and tid not in self.meta:
                self.refused.add(tid)
            self._cleanup(tid)
            return
        if rec.state is TxnState.PREPARED:
            self._end_ccp(tid)
        reads = [[e.key, None if e.writer is None else str(e.writer)] for e in rec.rset]
        writes = sorted(rec.wset)
        changed = self.store.commit(tid, decision)
        self.trace.add(self.now, self.id, "apply", tid=str(tid), shard=self.shard,
                       decision=decision.value, reads=reads, writes=writes)
        if self.log.entry_for(tid) is not None:
            writes = tuple(sorted(rec.wset.items())) if decision is COMMIT else ()
            update = ApplyDecision(tid, decision, writes)
            for dc in self.ctx.directory.placement(self.shard).replicas:
                if dc != self.dc:
                    self.send(NodeId("replica", dc, self.shard), update)
        self._cleanup(tid)
        self._dependants(changed)

    def _cleanup(self, tid) -> None:
        self.withheld.discard(tid)
        self.ccp_start.pop(tid, None)
        self.meta.pop(tid, None)
        self.store.forget(tid)

    def _dependants(self, changed) -> None:
        work = list(changed)
        while work:
            t, counter = work.pop(0)
            rec = self.store.txns.get(t)
            if rec is None:
                continue
            if counter >= 0 and not rec.blocked and t in self.withheld:
                self.withheld.discard(t)
                self._cast(t, rec.vote)
            elif counter < 0 and rec.vote is not None and not rec.vote_sent:
                self.withheld.discard(t)
                self.ccp_start.pop(t, None)
                work.extend(self.store.cascade_abort(t))
                self._cast(t, rec.vote)

    def on_ApplyDecision(self, m: ApplyDecision, src: NodeId) -> None:
        if m.tid in self.decided:
            return
        self.decided[m.tid] = m.decision
        if m.decision is COMMIT:
            for key, value in m.writes:
                self.store.install(key, value, m.tid)

    # -- termination -------------------------------------------------------

    def on_TerminationQuery(self, m: TerminationQuery, src: NodeId) -> None:
        if not self.is_leader:
            return
        tid = m.tid
        reason = None
        if tid in self.decided:
            status = self.decided[tid].value
        else:
            entry = self.log.entry_for(tid)
            if entry is not None:
                if entry.vote.value is ABORT:
                    status, reason = "abort", entry.vote.reason
                elif self.log.has_quorum(entry.index):
                    status = "commit"
                else:
                    status = "pending"
            elif tid in self.meta or tid in self.store.txns:
                status = "pending"
            else:
                self.refused.add(tid)
                status, reason = "abort", "presumed_abort"
        self.send(src, TerminationReply(tid, self.shard, status, reason))

    # -- follower side -----------------------------------------------------

    def on_ReplicationAppend(self, m: ReplicationAppend, src: NodeId) -> None:
        if self.is_leader:
            return
        for e in self.log.receive(m.entry):
            self.send(src, ReplicationAck(self.shard, e.index, e.tid, self.dc))
            if self.ctx.protocol == "d2pc" and not m.catchup:
                self.send(cocoord_id(self.dc, e.group),
                          FollowerNotice(e.tid, self.shard, e.vote, self.dc, True,
                                         e.shard_list, e.coord_dc, e.client))
        if self.log.pending and self._catchup_from <= self.log.applied:
            self._catchup_from = self.log.applied + 1
            self.send(src, CatchUp(self.shard, self.log.applied + 1))

    def on_CatchUp(self, m: CatchUp, src: NodeId) -> None:
        if self.is_leader:
            for e in self.log.suffix(m.from_index):
                self.send(src, ReplicationAppend(e, catchup=True))

    # -- crashes and failover ----------------------------------------------

    def on_crash(self) -> None:
        self.store.reset_volatile()
        self.meta.clear()
        self.ccp_start.clear()
        self.withheld.clear()
        self.read_waiters.clear()
        self.coordinator.reset()
        self.log.pending.clear()
        self._catchup_from = 0

    def on_recover(self) -> None:
        if self.is_leader:
            self.become_leader()
            return
        leader = self.ctx.directory.leader(self.shard)
        if self.sim.is_alive(leader):
            self.send(leader, CatchUp(self.shard, self.log.applied + 1))

    def become_leader(self) -> None:
        """Rebuild leader state from the durable log after a failover."""
        self.trace.add(self.now, self.id, "become_leader", shard=self.shard,
                       entries=self.log.applied)
        for _, entry in sorted(self.log.entries.items()):
            if entry.tid in self.decided:
                continue
            self.meta[entry.tid] = entry
            self.store.restore_prepared(entry.tid, entry.rset, entry.wset, entry.ts, entry.vote)
        placement = self.ctx.directory.placement(self.shard)
        for _, entry in sorted(self.log.entries.items()):
            if entry.tid in self.decided:
                continue
            if entry.vote.value is ABORT:
                self._report(entry, False)
            elif self.log.has_quorum(entry.index):
                self._on_quorum(entry)
        for dc in placement.replicas:
            if dc != self.dc:
                peer = NodeId("replica", dc, self.shard)
                if self.sim.is_alive(peer):
                    have = self.sim.nodes[peer].log.applied
                    for e in self.log.suffix(have + 1):
                        self.send(peer, ReplicationAppend(e, catchup=True))

    def dump(self) -> dict:
        return {"node": self.id.label(self.sim.matrix.names), "leader": self.is_leader,
                "log": self.log.dump(), "store": self.store.dump(),
                "t": ms(self.now)}
