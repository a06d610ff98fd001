"""Deterministic discrete-event network simulation.

Time is kept as integer microseconds so that sums of link delays are exact;
public helpers convert to and from milliseconds.
"""
from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Optional, Sequence


class ConfigurationError(ValueError):
    pass


def us(ms: float) -> int:
    return round(ms * 1000)


def ms(t_us: int) -> float:
    return t_us / 1000.0


@dataclass(frozen=True)
class Datacenter:
    index: int
    name: str


class LatencyMatrix:
    """Symmetric RTT matrix between datacenters, in milliseconds."""

    def __init__(self, names: Sequence[str], rtt_ms: Sequence[Sequence[float]]):
        names = list(names)
        n = len(names)
        if n == 0:
            raise ConfigurationError("latency matrix needs at least one datacenter")
        if len(set(names)) != n:
            raise ConfigurationError("datacenter names must be unique")
        rows = [list(map(float, row)) for row in rtt_ms]
        if len(rows) != n or any(len(r) != n for r in rows):
            raise ConfigurationError(f"rtt matrix must be {n}x{n}")
        for i in range(n):
            for j in range(n):
                if rows[i][j] <= 0:
                    raise ConfigurationError(f"rtt[{i}][{j}] must be positive")
                if rows[i][j] != rows[j][i]:
                    raise ConfigurationError(f"rtt matrix not symmetric at ({i},{j})")
                if i != j and rows[i][i] >= rows[i][j]:
                    raise ConfigurationError(
                        f"intra-DC rtt of {names[i]} must be below every inter-DC rtt")
        self.datacenters = tuple(Datacenter(i, nm) for i, nm in enumerate(names))
        self.names = tuple(names)
        self.rtt_ms = tuple(tuple(r) for r in rows)
        self._one_way_us = [[us(v / 2) for v in r] for r in rows]
        self._index = {nm: i for i, nm in enumerate(names)}

    @classmethod
    def from_upper(cls, names: Sequence[str], upper: Sequence[Sequence[Optional[float]]]):
        """Build from an upper-triangular table (the lower half may be None)."""
        n = len(names)
        full = [[0.0] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                full[i][j] = full[j][i] = float(upper[i][j])
        return cls(names, full)

    def __len__(self) -> int:
        return len(self.names)

    def index(self, dc: int | str) -> int:
        if isinstance(dc, str):
            try:
                return self._index[dc]
            except KeyError:
                raise ConfigurationError(f"unknown datacenter {dc!r}") from None
        if not 0 <= dc < len(self.names):
            raise ConfigurationError(f"unknown datacenter index {dc}")
        return dc

    def rtt(self, a: int | str, b: int | str) -> float:
        return self.rtt_ms[self.index(a)][self.index(b)]

    def one_way_us(self, a: int, b: int) -> int:
        try:
            return self._one_way_us[a][b]
        except IndexError:
            raise ConfigurationError(f"unknown datacenter pair ({a}, {b})") from None

    def max_one_way_us(self) -> int:
        return max(max(r) for r in self._one_way_us)

    def subset(self, names: Sequence[str]) -> "LatencyMatrix":
        idx = [self.index(n) for n in names]
        return LatencyMatrix(names, [[self.rtt_ms[i][j] for j in idx] for i in idx])


TABLE1_NAMES = ("Hangzhou", "Beijing", "San Francisco", "Virginia", "Frankfurt")
TABLE1 = LatencyMatrix.from_upper(TABLE1_NAMES, [
    [0.2, 30, 140, 203, 231],
    [None, 0.2, 150, 215, 240],
    [None, None, 0.2, 67, 151],
    [None, None, None, 0.3, 98],
    [None, None, None, None, 0.25],
])
THREE_DC = TABLE1.subset(("Hangzhou", "San Francisco", "Frankfurt"))


class NodeId(NamedTuple):
    kind: str   # "client" | "replica" | "cocoord"
    dc: int
    index: int  # client id, shard id, or co-coordinator group

    def label(self, names: Sequence[str] | None = None) -> str:
        dc = names[self.dc] if names else str(self.dc)
        return f"{self.kind}:{self.index}@{dc}"

    @classmethod
    def parse(cls, text: str, names: Sequence[str]) -> "NodeId":
        try:
            kind, rest = text.split(":", 1)
            index, dc = rest.split("@", 1)
        except ValueError:
            raise ConfigurationError(f"bad node id {text!r}; expected kind:index@dc") from None
        if kind not in ("client", "replica", "cocoord"):
            raise ConfigurationError(f"bad node kind {kind!r}")
        dci = names.index(dc) if dc in names else int(dc)
        return cls(kind, dci, int(index))


def client_id(dc: int, cid: int) -> NodeId:
    return NodeId("client", dc, cid)


def replica_id(dc: int, shard: int) -> NodeId:
    return NodeId("replica", dc, shard)


def cocoord_id(dc: int, group: int) -> NodeId:
    return NodeId("cocoord", dc, group)


@dataclass(frozen=True)
class FailureEvent:
    time_ms: float
    node: NodeId
    action: str  # "crash" | "recover" | "reassign_leader"
    shard: Optional[int] = None
    new_dc: Optional[int] = None
    drop_outbox: bool = False


def validate_failures(entries: Iterable[FailureEvent]) -> list[FailureEvent]:
    entries = list(entries)
    times = [e.time_ms for e in entries]
    if times != sorted(times):
        raise ConfigurationError("failure schedule must be sorted by time")
    down: set[NodeId] = set()
    for e in entries:
        if e.time_ms < 0:
            raise ConfigurationError("failure times must be non-negative")
        if e.action == "crash":
            down.add(e.node)
        elif e.action == "recover":
            if e.node not in down:
                raise ConfigurationError(f"{e.node} recovers before it crashed")
            down.discard(e.node)
        elif e.action == "reassign_leader":
            if e.shard is None or e.new_dc is None:
                raise ConfigurationError("reassign_leader needs shard and new_dc")
        else:
            raise ConfigurationError(f"unknown failure action {e.action!r}")
    return entries


class Trace:
    """Ordered (time, node, kind, fields) records.

    level "none" keeps nothing, "history" keeps protocol-level records needed
    by the history oracles, "full" adds every send/deliver/drop.
    """

    LEVELS = ("none", "history", "full")

    def __init__(self, level: str = "history", names: Sequence[str] = ()):
        if level not in self.LEVELS:
            raise ConfigurationError(f"trace level must be one of {self.LEVELS}")
        self.level = level
        self.full = level == "full"
        self.enabled = level != "none"
        self.names = tuple(names)
        self.records: list[tuple[int, str, str, dict]] = []

    def add(self, t_us: int, node: NodeId | str, kind: str, **fields: Any) -> None:
        if self.enabled:
            label = node.label(self.names) if isinstance(node, NodeId) else node
            self.records.append((t_us, label, kind, fields))

    def dicts(self) -> list[dict]:
        out = []
        for t, node, kind, fields in self.records:
            d = {"t": ms(t), "node": node, "kind": kind}
            d.update(fields)
            out.append(d)
        return out

    def lines(self) -> Iterable[str]:
        for d in self.dicts():
            yield json.dumps(d, sort_keys=True, default=_jsonable)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "_asdict"):
        return list(obj)
    if hasattr(obj, "value"):
        return obj.value
    return str(obj)


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


_MSG, _TIMER, _FAIL = 0, 1, 2


class Node:
    """Base class for message-driven state machines hosted by a Simulator."""

    def __init__(self, node_id: NodeId, sim: "Simulator"):
        self.id = node_id
        self.sim = sim
        self.alive = True
        self.incarnation = 0
        sim.add_node(self)

    @property
    def now(self) -> int:
        return self.sim.now

    def send(self, dst: NodeId, msg: Any) -> None:
        self.sim.send(self.id, dst, msg)

    def set_timer(self, delay_us: int, payload: Any) -> None:
        self.sim.set_timer(self.id, delay_us, payload)

    def receive(self, msg: Any, src: NodeId) -> None:
        handler = _dispatch(type(self), type(msg))
        handler(self, msg, src)

    def on_timer(self, payload: Any) -> None:
        pass

    def on_crash(self) -> None:
        pass

    def on_recover(self) -> None:
        pass


_DISPATCH: dict[tuple[type, type], Callable] = {}


def _dispatch(node_cls: type, msg_cls: type) -> Callable:
    key = (node_cls, msg_cls)
    fn = _DISPATCH.get(key)
    if fn is None:
        fn = getattr(node_cls, "on_" + msg_cls.__name__, None)
        if fn is None:
            raise TypeError(f"{node_cls.__name__} cannot handle {msg_cls.__name__}")
        _DISPATCH[key] = fn
    return fn


class Simulator:
    """Single-threaded event loop over (fire_at, seq) ordered events.

    Messages whose class sets ``local_notification = True`` and that stay
    inside one datacenter use ``local_notify_ms`` instead of the intra-DC
    RTT/2 when that parameter is not None.
    """

    def __init__(self, matrix: LatencyMatrix, *, processing_delay_ms: float = 0.0,
                 local_notify_ms: Optional[float] = 0.0, trace: Optional[Trace] = None):
        self.matrix = matrix
        self.now = 0
        self.processing_us = us(processing_delay_ms)
        self.local_us = None if local_notify_ms is None else us(local_notify_ms)
        self.trace = trace if trace is not None else Trace("none")
        self.nodes: dict[NodeId, Node] = {}
        self._queue: list[tuple] = []
        self._seq = 0
        self._link_last: dict[tuple[NodeId, NodeId], int] = {}
        self._dead_outbox: set[tuple[NodeId, int]] = set()
        self.failure_hooks: dict[str, Callable[[FailureEvent], None]] = {}
        self.events_processed = 0

    def add_node(self, node: Node) -> None:
        if node.id in self.nodes:
            raise ConfigurationError(f"duplicate node {node.id}")
        self.matrix.one_way_us(node.id.dc, node.id.dc)  # validates dc
        self.nodes[node.id] = node

    def one_way_delay(self, src: NodeId, dst: NodeId) -> float:
        """Link delay in ms: half the RTT between the two datacenters."""
        return ms(self.matrix.one_way_us(src.dc, dst.dc))

    def is_alive(self, nid: NodeId) -> bool:
        node = self.nodes.get(nid)
        return node is not None and node.alive

    def incarnation(self, nid: NodeId) -> int:
        return self.nodes[nid].incarnation

    def _push(self, at: int, kind: int, target, payload, src=None, src_inc=0) -> tuple:
        self._seq += 1
        ev = (at, self._seq, kind, target, payload, src, src_inc)
        heapq.heappush(self._queue, ev)
        return ev

    def send(self, src: NodeId, dst: NodeId, payload: Any) -> tuple:
        node = self.nodes[src]
        assert node.alive, f"crashed node {src} attempted to send {type(payload).__name__}"
        if dst not in self.nodes:
            raise ConfigurationError(f"message to unknown node {dst}")
        if (self.local_us is not None and src.dc == dst.dc
                and getattr(payload, "local_notification", False)):
            delay = self.local_us
        else:
            delay = self.matrix.one_way_us(src.dc, dst.dc)
        at = self.now + delay + self.processing_us
        link = (src, dst)
        last = self._link_last.get(link)
        if last is not None and last > at:
            at = last  # FIFO links
        self._link_last[link] = at
        if self.trace.full:
            self.trace.add(self.now, src, "send", to=dst.label(self.trace.names),
                           msg=type(payload).__name__, at=ms(at))
        return self._push(at, _MSG, dst, payload, src, node.incarnation)

    def set_timer(self, nid: NodeId, delay_us: int, payload: Any) -> None:
        self._push(self.now + max(0, delay_us), _TIMER, nid, payload, nid,
                   self.nodes[nid].incarnation)

    def schedule_failures(self, entries: Iterable[FailureEvent]) -> None:
        for e in validate_failures(entries):
            if e.action != "reassign_leader" and e.node not in self.nodes:
                raise ConfigurationError(f"failure targets unknown node {e.node}")
            self._push(us(e.time_ms), _FAIL, e.node, e)

    def pending(self) -> int:
        return len(self._queue)

    def run(self, until_us: Optional[int] = None, max_events: Optional[int] = None) -> int:
        """Process events until the queue drains or ``until_us`` is passed."""
        q = self._queue
        nodes = self.nodes
        trace = self.trace
        n = 0
        while q:
            if until_us is not None and q[0][0] > until_us:
                self.now = until_us
                break
            at, _seq, kind, target, payload, src, src_inc = heapq.heappop(q)
            self.now = at
            n += 1
            if kind == _MSG:
                node = nodes[target]
                if not node.alive or (src, src_inc) in self._dead_outbox:
                    if trace.full:
                        trace.add(at, target, "drop", msg=type(payload).__name__,
                                  frm=src.label(trace.names))
                    continue
                if trace.full:
                    trace.add(at, target, "deliver", msg=type(payload).__name__,
                              frm=src.label(trace.names))
                node.receive(payload, src)
            elif kind == _TIMER:
                node = nodes[target]
                if node.alive and node.incarnation == src_inc:
                    node.on_timer(payload)
            else:
                self._apply_failure(payload)
            if max_events is not None and n >= max_events:
                break
        self.events_processed += n
        return self.now

    def _apply_failure(self, e: FailureEvent) -> None:
        if e.action == "reassign_leader":
            trace_node = f"shard:{e.shard}"
            self.trace.add(self.now, trace_node, "reassign_leader", shard=e.shard,
                           new_dc=self.matrix.names[e.new_dc])
            hook = self.failure_hooks.get("reassign_leader")
            if hook is None:
                raise ConfigurationError("no handler for reassign_leader")
            hook(e)
            return
        node = self.nodes[e.node]
        if e.action == "crash":
            if not node.alive:
                return
            if e.drop_outbox:
                self._dead_outbox.add((node.id, node.incarnation))
            node.alive = False
            node.incarnation += 1
            self.trace.add(self.now, node.id, "crash", drop_outbox=e.drop_outbox)
            node.on_crash()
        else:
            if node.alive:
                return
            node.alive = True
            self.trace.add(self.now, node.id, "recover")
            node.on_recover()
