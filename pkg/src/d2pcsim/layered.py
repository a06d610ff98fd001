"""Layered 2PC baseline (2PC over a replicated log, Spanner style).

The coordinator is the leader of the lowest-numbered participant shard. It
collects one vote per shard (sent after the shard's quorum, or at once for
Abort), decides, and tells the client and the participant leaders. The
decision itself is not replicated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .messages import ABORT, COMMIT, ClientReply, FinalDecision, Outcome, ShardVote


@dataclass
class LayeredTxn:
    shard_list: tuple
    client: object
    votes: dict = field(default_factory=dict)
    decision: Optional[Outcome] = None


def layered_decision(votes: dict, shard_list) -> Optional[Outcome]:
    """Commit iff every participant voted Commit; None while votes are missing."""
    if any(v.value is ABORT for v in votes.values()):
        return ABORT
    if all(s in votes for s in shard_list):
        return COMMIT
    return None


class LayeredCoordinator:
    """Coordinator duties hosted inside a shard leader."""

    def __init__(self, server):
        self.server = server
        self.txns: dict = {}
        self.done: set = set()

    def reset(self) -> None:
        self.txns.clear()
        self.done.clear()

    def on_vote(self, m: ShardVote) -> None:
        if m.tid in self.done:
            return
        st = self.txns.get(m.tid)
        if st is None:
            st = self.txns[m.tid] = LayeredTxn(m.shard_list, m.client)
        if st.decision is not None:
            return
        prev = st.votes.get(m.vote.shard)
        if prev is not None and prev.value is not m.vote.value:
            raise AssertionError(f"{m.tid}: conflicting votes from shard {m.vote.shard}")
        st.votes[m.vote.shard] = m.vote
        decision = layered_decision(st.votes, st.shard_list)
        if decision is not None:
            self._decide(m.tid, st, decision)

    def _decide(self, tid, st: LayeredTxn, decision: Outcome) -> None:
        srv = self.server
        st.decision = decision
        reason = next((v.reason for v in st.votes.values() if v.value is ABORT), None)
        srv.trace.add(srv.now, srv.id, "decide", tid=str(tid), decision=decision.value,
                      path="layered", reason=reason)
        srv.send(st.client, ClientReply(tid, decision, reason))
        for shard in st.shard_list:
            leader = srv.ctx.directory.leader(shard)
            if leader == srv.id:
                srv.apply(tid, decision)
            else:
                srv.send(leader, FinalDecision(tid, decision, reason))
        del self.txns[tid]
        self.done.add(tid)
