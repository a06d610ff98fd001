"""Analytic latency and concurrency-control-period calculator.

Two layers: the closed-form expressions in RTTs (``analytic_*``), and an
exact message-path model (``path_model``) that replays the protocol's
critical paths hop by hop with the same delay rules the simulator uses.
The closed forms coincide with the path model on the configurations they
describe; the path model covers every placement.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from ..simnet import ConfigurationError, LatencyMatrix, ms, us
from ..topology import Topology


def _participants(participants: Iterable) -> list:
    p = list(participants)
    if not p:
        raise ConfigurationError("participant set must not be empty")
    return p


def analytic_ccp_d2pc(a: int, b: int, participants: Iterable[int], matrix: LatencyMatrix) -> float:
    """CCP at the leader in ``b``: max over i of (L_ai + L_ib - L_ab) / 2."""
    L = matrix.rtt
    return max((L(a, i) + L(i, b) - L(a, b)) / 2 for i in _participants(participants))


def majority_rtt(i: int, replicas: Sequence[int], matrix: LatencyMatrix) -> float:
    """RTT after which the leader in ``i`` holds a majority (its own copy is free)."""
    f = (len(replicas) - 1) // 2
    rtts = sorted([0.0] + [matrix.rtt(i, r) for r in replicas if r != i])
    return rtts[f]


def analytic_commit_latency(protocol: str, a: int, participants: Iterable[int],
                            matrix: LatencyMatrix, colocated_replica: bool = True,
                            replicas: Optional[dict] = None) -> float:
    """Closed-form client commit latency in ms.

    ``replicas`` maps each participant leader dc to its replica dcs; by
    default every datacenter holds a replica.
    """
    p = _participants(participants)
    L = matrix.rtt
    everywhere = list(range(len(matrix)))

    def reps(i):
        return list(replicas[i]) if replicas else everywhere

    if protocol == "layered":
        return max(L(a, i) + majority_rtt(i, reps(i), matrix) for i in p)
    if protocol != "d2pc":
        raise ConfigurationError(f"unknown protocol {protocol!r}")
    if colocated_replica:
        return max(L(a, i) for i in p)
    worst = 0.0
    for i in p:
        r = reps(i)
        f = (len(r) - 1) // 2
        routes = sorted((L(a, i) + (0 if x == i else L(i, x)) + (0 if x == a else L(x, a))) / 2
                        for x in r)
        worst = max(worst, routes[f])
    return worst


# ---------------------------------------------------------------- exact path model

@dataclass
class PathTimes:
    latency_ms: float
    ccp_ms: dict          # shard -> ms
    decision_ms: float


class _Delays:
    def __init__(self, matrix: LatencyMatrix, processing_delay_ms: float,
                 local_notify_ms: Optional[float]):
        self.m = matrix
        self.p = us(processing_delay_ms)
        self.local = None if local_notify_ms is None else us(local_notify_ms)

    def d(self, x: int, y: int) -> int:
        return self.m.one_way_us(x, y) + self.p

    def n(self, x: int, y: int) -> int:
        """A local-notification message (same-dc hops may be cheaper)."""
        if x == y and self.local is not None:
            return self.local + self.p
        return self.d(x, y)


def path_model(topology: Topology, protocol: str, client_dc: int, shards: Sequence[int], *,
               processing_delay_ms: float = 0.0,
               local_notify_ms: Optional[float] = 0.0) -> PathTimes:
    """Contention-free write-only transaction issued at ``client_dc``."""
    shards = sorted(set(shards))
    if not shards:
        raise ConfigurationError("participant set must not be empty")
    D = _Delays(topology.matrix, processing_delay_ms, local_notify_ms)
    a = client_dc
    dcs = list(topology.dcs)
    place = {s: topology.shards[s] for s in shards}
    t_prep = {s: D.d(a, place[s].leader) for s in shards}
    quorum = {}
    for s in shards:
        L, reps = place[s].leader, place[s].replicas
        rtts = sorted([0] + [D.d(L, r) + D.d(r, L) for r in reps if r != L])
        quorum[s] = t_prep[s] + rtts[place[s].f]

    if protocol == "layered":
        c = shards[0]
        Lc = place[c].leader
        vote_at = {s: quorum[s] + (0 if s == c else D.d(place[s].leader, Lc)) for s in shards}
        decision = max(vote_at.values())
        latency = decision + D.n(Lc, a)
        ccp = {s: decision + (0 if s == c else D.n(Lc, place[s].leader)) - t_prep[s]
               for s in shards}
        return PathTimes(ms(latency), {s: ms(v) for s, v in ccp.items()}, ms(decision))
    if protocol != "d2pc":
        raise ConfigurationError(f"unknown protocol {protocol!r}")

    notice = {}      # (s, dc) -> time the dc's co-coordinator learns the vote locally
    reply_at = {}    # s -> list of reply arrival times at the correspondent
    for s in shards:
        L, reps = place[s].leader, place[s].replicas
        reply_at[s] = []
        for r in reps:
            append = t_prep[s] + (0 if r == L else D.d(L, r))
            t = append + D.n(r, r)
            notice[(s, r)] = t
            reply_at[s].append(t + (0 if r == a else D.d(r, a)))
        for x in dcs:
            if x not in reps:
                notice[(s, x)] = t_prep[s] + D.d(L, x)
    slow = {s: quorum[s] + D.n(place[s].leader, a) for s in shards}
    fast = {s: sorted(reply_at[s])[place[s].f] for s in shards}
    decision = max(min(fast[s], slow[s]) for s in shards)
    latency = decision + D.n(a, a)

    def vote_known(s, x):
        if x != a:
            return notice[(s, x)]
        return min([notice[(s, a)], slow[s]] + reply_at[s])

    ccp = {}
    for s in shards:
        L = place[s].leader
        precommit = max(vote_known(s2, L) for s2 in shards) + D.n(L, L)
        final = decision + D.n(a, L)
        ccp[s] = min(precommit, final) - t_prep[s]
    return PathTimes(ms(latency), {s: ms(v) for s, v in ccp.items()}, ms(decision))
