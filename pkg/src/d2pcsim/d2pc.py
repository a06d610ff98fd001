"""D2PC co-coordinators.

One co-coordinator per (datacenter, group). Every co-coordinator collects
votes for transactions of its group and issues PreCommit / Abort to the
shard leaders in its own datacenter. The co-coordinator in the client's
datacenter is the correspondent: it alone makes the final decision, either
from F+1 bypass-leader replication replies per shard (fast path) or from
leader quorum reports (slow path), then replicates it to its peers.

When a correspondent fails the surviving co-coordinators elect the
lowest-indexed live datacenter of the group, which either re-disseminates a
decision some peer already holds (Case 1) or runs the termination protocol
against the participant leaders (Case 2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .context import Context, route_to_group
from .messages import (ABORT, COMMIT, ClientReply, CommitRequest, DecisionAck,
                       DecisionReplicate, FinalDecision, FollowerNotice, ForwardedReply,
                       LeaderReport, Outcome, PreCommitNotify, RecoveryNudge, RecoveryQuery,
                       RecoveryReply, TerminationQuery, TerminationReply, Timer, Vote)
from .simnet import Node, NodeId, cocoord_id

__all__ = ["CoCoordinator", "route_to_group", "precommit_decision", "vote_conjunction",
           "fast_path_decision", "slow_path_decision"]


class ProtocolViolation(AssertionError):
    pass


# ---------------------------------------------------------------- reducers

def vote_conjunction(votes: dict, shard_list) -> Optional[Outcome]:
    """Oracle 2PC rule: Abort on any Abort, Commit once all shards voted Commit."""
    if any(v.value is ABORT for v in votes.values()):
        return ABORT
    if all(s in votes for s in shard_list):
        return COMMIT
    return None


def precommit_decision(votes: dict, shard_list) -> Optional[str]:
    d = vote_conjunction(votes, shard_list)
    if d is None:
        return None
    return "precommit" if d is COMMIT else "abort"


def fast_path_decision(votes: dict, replies: dict, f: dict, shard_list) -> Optional[Outcome]:
    """Decision from bypass-leader replies; replies maps shard -> set of replica dcs."""
    d = vote_conjunction(votes, shard_list)
    if d is not COMMIT:
        return d
    if all(len(replies.get(s, ())) >= f[s] + 1 for s in shard_list):
        return COMMIT
    return None


def slow_path_decision(votes: dict, reports: set, shard_list) -> Optional[Outcome]:
    """Decision from leader reports; reports holds shards with quorum confirmed."""
    d = vote_conjunction(votes, shard_list)
    if d is not COMMIT:
        return d
    if all(s in reports for s in shard_list):
        return COMMIT
    return None


# ---------------------------------------------------------------- state

@dataclass
class CoTxn:
    tid: object
    shard_list: tuple
    client: NodeId
    coord_dc: int
    correspondent: bool = False
    votes: dict = field(default_factory=dict)
    replies: dict = field(default_factory=dict)
    reports: set = field(default_factory=set)
    precommit: Optional[str] = None
    corr_incarnation: int = 0
    timer_armed: bool = False
    phase: Optional[str] = None       # None | "query" | "terminate"
    waiting: set = field(default_factory=set)
    term_status: dict = field(default_factory=dict)


class CoCoordinator(Node):

    def __init__(self, node_id: NodeId, ctx: Context):
        super().__init__(node_id, ctx.sim)
        self.ctx = ctx
        self.dc = node_id.dc
        self.group = node_id.index
        self.txns: dict = {}
        # durable
        self.decided: dict = {}       # tid -> (decision, reason)
        self.acks: dict = {}          # tid -> set of dcs acknowledging the decision
        self.informed: dict = {}      # tid -> {leader: incarnation} sent FinalDecision
        self.disseminated: set = set()

    @property
    def trace(self):
        return self.sim.trace

    @property
    def peers(self) -> list:
        return [cocoord_id(dc, self.group) for dc in self.ctx.directory.topology.dcs]

    def _f(self) -> dict:
        d = self.ctx.directory
        return {s.shard: s.f for s in d.topology.shards}

    # -- vote intake -------------------------------------------------------

    def _state(self, tid, shard_list, client, coord_dc) -> Optional[CoTxn]:
        st = self.txns.get(tid)
        if st is not None:
            return st
        if coord_dc == self.dc:
            # correspondent state only exists once the commit request is known
            return None
        st = self.txns[tid] = CoTxn(tid, tuple(shard_list), client, coord_dc)
        return st

    def _merge(self, st: CoTxn, vote: Vote) -> None:
        prev = st.votes.get(vote.shard)
        if prev is None:
            st.votes[vote.shard] = vote
        elif prev.value is not vote.value:
            raise ProtocolViolation(f"{st.tid}: conflicting votes from shard {vote.shard}")

    def on_CommitRequest(self, m: CommitRequest, src: NodeId) -> None:
        if m.tid in self.decided or m.tid in self.txns:
            return
        st = self.txns[m.tid] = CoTxn(m.tid, tuple(m.shard_list), m.client, self.dc, True)
        self.trace.add(self.now, self.id, "correspondent", tid=str(m.tid))
        self.set_timer(self.ctx.recovery_timeout_us, Timer("stall", m.tid))
        st.timer_armed = True

    def on_FollowerNotice(self, n: FollowerNotice, src: NodeId) -> None:
        if n.tid in self.decided:
            return
        st = self._state(n.tid, n.shard_list, n.client, n.coord_dc)
        if st is None:
            return
        self._merge(st, n.vote)
        if n.reply:
            st.replies.setdefault(n.shard, set()).add(n.replica_dc)
        if not st.correspondent:
            if n.reply:
                self.send(cocoord_id(st.coord_dc, self.group),
                          ForwardedReply(n.tid, n.shard, n.replica_dc, n.vote,
                                         st.shard_list, st.client))
            if not st.timer_armed:
                corr = cocoord_id(st.coord_dc, self.group)
                st.corr_incarnation = self.sim.incarnation(corr)
                st.timer_armed = True
                self.set_timer(self.ctx.recovery_timeout_us, Timer("recover", n.tid))
        self._precommit(st)
        self._evaluate(st)

    def on_ForwardedReply(self, m: ForwardedReply, src: NodeId) -> None:
        st = self.txns.get(m.tid)
        if m.tid in self.decided or st is None:
            return
        self._merge(st, m.vote)
        st.replies.setdefault(m.shard, set()).add(m.replica_dc)
        self._precommit(st)
        self._evaluate(st)

    def on_LeaderReport(self, m: LeaderReport, src: NodeId) -> None:
        if m.tid in self.decided:
            self._inform(m.tid, [src])
            return
        st = self.txns.get(m.tid)
        if st is None:
            return
        self._merge(st, m.vote)
        if m.replication_complete:
            st.reports.add(m.shard)
        self._precommit(st)
        self._evaluate(st)

    def _precommit(self, st: CoTxn) -> None:
        if st.precommit is not None:
            return
        pd = precommit_decision(st.votes, st.shard_list)
        if pd is None:
            return
        st.precommit = pd
        reason = next((v.reason for v in st.votes.values() if v.value is ABORT), None)
        for s in st.shard_list:
            leader = self.ctx.directory.leader(s)
            if leader.dc == self.dc:
                self.send(leader, PreCommitNotify(st.tid, pd, reason))

    def _evaluate(self, st: CoTxn) -> None:
        if not (st.correspondent or st.phase == "terminate"):
            return
        votes = st.votes
        if any(v.value is ABORT for v in votes.values()):
            v = next(v for v in votes.values() if v.value is ABORT)
            self._decide(st, ABORT, v.reason, "abort")
            return
        f = self._f()
        kinds = []
        for s in st.shard_list:
            if s not in votes:
                return
            if len(st.replies.get(s, ())) >= f[s] + 1:
                kinds.append("fast")
            elif s in st.reports:
                kinds.append("slow")
            else:
                return
        path = kinds[0] if len(set(kinds)) == 1 else "mixed"
        self._decide(st, COMMIT, None, path)

    # -- decisions ---------------------------------------------------------

    def _decide(self, st: CoTxn, decision: Outcome, reason, path: str) -> None:
        tid = st.tid
        if tid in self.decided:
            return
        self.decided[tid] = (decision, reason)
        if st.phase is not None:
            path = "termination"
            self.trace.add(self.now, self.id, "recovery", tid=str(tid), case=2,
                           decision=decision.value)
        self.trace.add(self.now, self.id, "decide", tid=str(tid), decision=decision.value,
                       path=path, reason=reason, shards=list(st.shard_list))
        self._disseminate(st)

    def _disseminate(self, st: CoTxn) -> None:
        tid = st.tid
        decision, reason = self.decided[tid]
        self.disseminated.add(tid)
        self.send(st.client, ClientReply(tid, decision, reason))
        self._inform(tid, [self.ctx.directory.leader(s) for s in st.shard_list])
        self.acks[tid] = {self.dc}
        for peer in self.peers:
            if peer != self.id:
                self.send(peer, DecisionReplicate(tid, decision, reason, st.shard_list))
        self.txns.pop(tid, None)

    def _inform(self, tid, leaders) -> None:
        decision, reason = self.decided[tid]
        sent = self.informed.setdefault(tid, {})
        for leader in leaders:
            if not self.sim.is_alive(leader):
                continue
            inc = self.sim.incarnation(leader)
            if sent.get(leader) == inc:
                continue
            sent[leader] = inc
            self.send(leader, FinalDecision(tid, decision, reason))

    def on_DecisionReplicate(self, m: DecisionReplicate, src: NodeId) -> None:
        self.decided.setdefault(m.tid, (m.decision, m.reason))
        self.txns.pop(m.tid, None)
        self.send(src, DecisionAck(m.tid))

    def on_DecisionAck(self, m: DecisionAck, src: NodeId) -> None:
        acks = self.acks.get(m.tid)
        if acks is None:
            return
        acks.add(src.dc)
        if len(acks) == len(self.peers) // 2 + 1:
            self.trace.add(self.now, self.id, "decision_durable", tid=str(m.tid), acks=len(acks))

    # -- correspondent liveness checks ---------------------------------------

    def on_timer(self, t: Timer) -> None:
        getattr(self, "_timer_" + t.kind)(t)

    def _timer_stall(self, t: Timer) -> None:
        st = self.txns.get(t.tid)
        if st is None or t.tid in self.decided:
            return
        d = self.ctx.directory
        f = self._f()
        for s in st.shard_list:
            complete = len(st.replies.get(s, ())) >= f[s] + 1 or s in st.reports
            if complete:
                continue
            alive = sum(self.sim.is_alive(r) for r in d.replicas(s))
            if alive < f[s] + 1:
                self._decide(st, ABORT, "replication_failure", "replication_failure")
                return
        for s in st.shard_list:
            if s not in st.reports and (s not in st.votes or st.votes[s].value is COMMIT):
                self.send(d.leader(s), TerminationQuery(st.tid))
        self.set_timer(self.ctx.recovery_timeout_us, t)

    def _timer_recover(self, t: Timer) -> None:
        st = self.txns.get(t.tid)
        if st is None or t.tid in self.decided or st.phase is not None:
            return
        corr = cocoord_id(st.coord_dc, self.group)
        if self.sim.is_alive(corr) and self.sim.incarnation(corr) == st.corr_incarnation:
            self.send(corr, RecoveryQuery(st.tid))
        else:
            self._elect(st)
        self.set_timer(self.ctx.recovery_timeout_us, t)

    def _elect(self, st: CoTxn) -> None:
        alive = [dc for dc in self.ctx.directory.topology.dcs
                 if dc != st.coord_dc and self.sim.is_alive(cocoord_id(dc, self.group))]
        if not alive:
            return
        elected = min(alive)
        if elected == self.dc:
            self._start_recovery(st)
        else:
            self.send(cocoord_id(elected, self.group),
                      RecoveryNudge(st.tid, st.shard_list, st.client, st.coord_dc))

    # -- recovery ----------------------------------------------------------

    def on_RecoveryNudge(self, m: RecoveryNudge, src: NodeId) -> None:
        if m.tid in self.decided:
            decision, reason = self.decided[m.tid]
            if m.tid in self.disseminated:
                self.send(src, DecisionReplicate(m.tid, decision, reason, m.shard_list))
            else:
                st = CoTxn(m.tid, m.shard_list, m.client, m.coord_dc)
                self._case1(st)
            return
        st = self.txns.get(m.tid)
        if st is None:
            st = self.txns[m.tid] = CoTxn(m.tid, tuple(m.shard_list), m.client, m.coord_dc)
        if st.phase is None:
            self._start_recovery(st)

    def _start_recovery(self, st: CoTxn) -> None:
        self.trace.add(self.now, self.id, "recovery_start", tid=str(st.tid))
        if st.tid in self.decided:
            self._case1(st)
            return
        st.phase = "query"
        st.waiting = set()
        for peer in self.peers:
            if peer != self.id and self.sim.is_alive(peer):
                st.waiting.add(peer.dc)
                self.send(peer, RecoveryQuery(st.tid))
        if not st.waiting:
            self._case2(st)
            return
        window = 2 * self.sim.matrix.max_one_way_us() + 1000
        self.set_timer(window, Timer("query_window", st.tid))

    def _case1(self, st: CoTxn) -> None:
        decision, _ = self.decided[st.tid]
        self.trace.add(self.now, self.id, "recovery", tid=str(st.tid), case=1,
                       decision=decision.value)
        self._disseminate(st)

    def _timer_query_window(self, t: Timer) -> None:
        st = self.txns.get(t.tid)
        if st is not None and st.phase == "query" and t.tid not in self.decided:
            self._case2(st)

    def _case2(self, st: CoTxn) -> None:
        st.phase = "terminate"
        self.trace.add(self.now, self.id, "termination_start", tid=str(st.tid))
        self._query_leaders(st)
        self.set_timer(self.ctx.recovery_timeout_us, Timer("term_retry", st.tid))

    def _query_leaders(self, st: CoTxn) -> None:
        for s in st.shard_list:
            if st.term_status.get(s) in ("commit", "abort"):
                continue
            self.send(self.ctx.directory.leader(s), TerminationQuery(st.tid))

    def _timer_term_retry(self, t: Timer) -> None:
        st = self.txns.get(t.tid)
        if st is None or t.tid in self.decided:
            return
        self._query_leaders(st)
        self.set_timer(self.ctx.recovery_timeout_us, t)

    def on_RecoveryQuery(self, m: RecoveryQuery, src: NodeId) -> None:
        if m.tid in self.decided:
            decision, reason = self.decided[m.tid]
            self.send(src, RecoveryReply(m.tid, decision, reason, True))
        else:
            self.send(src, RecoveryReply(m.tid, None, None, m.tid in self.txns))

    def on_RecoveryReply(self, m: RecoveryReply, src: NodeId) -> None:
        st = self.txns.get(m.tid)
        if m.tid in self.decided:
            return
        if m.decision is not None:
            self.decided[m.tid] = (m.decision, m.reason)
            if st is not None and st.phase is not None:
                self._case1(st)
            else:
                self.txns.pop(m.tid, None)
            return
        if st is None:
            return
        if st.phase == "query":
            st.waiting.discard(src.dc)
            if not st.waiting:
                self._case2(st)
        elif st.phase is None and src.dc == st.coord_dc and not m.known:
            self._elect(st)

    def on_TerminationReply(self, m: TerminationReply, src: NodeId) -> None:
        if m.tid in self.decided:
            return
        st = self.txns.get(m.tid)
        if st is None:
            return
        st.term_status[m.shard] = m.status
        if m.status == "commit":
            self._merge(st, Vote(COMMIT, m.shard, m.tid))
            st.reports.add(m.shard)
        elif m.status == "abort":
            prev = st.votes.get(m.shard)
            if prev is None or prev.value is ABORT:
                st.votes[m.shard] = Vote(ABORT, m.shard, m.tid, m.reason)
            else:
                # a shard that voted Commit can only report abort once aborted
                st.votes[m.shard] = Vote(ABORT, m.shard, m.tid, m.reason or "aborted")
        self._evaluate(st)

    # -- crashes -----------------------------------------------------------

    def on_crash(self) -> None:
        self.txns.clear()
        self.acks.clear()
