"""Per-shard versioned key-value store.

Implements Read / Prepare / PreCommit / Commit / Abort with either two-phase
locking (wait-die) or optimistic validation, plus write-read dependency
tracking through per-key lists of precommitted transactions: a reader of a
precommitted write registers in the writer's ``out_list`` and bumps its own
``in_counter``; the writer's final decision either decrements those counters
or marks the readers for cascade abort (``in_counter = -1``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, NamedTuple, Optional

from .messages import ABORT, COMMIT, Outcome, ReadEntry, TransactionId, Vote


class ProtocolViolation(AssertionError):
    pass


class TxnState(str, Enum):
    EXECUTED = "Executed"
    PREPARED = "Prepared"
    PRECOMMIT = "PreCommit"
    COMMIT = "Commit"
    ABORT = "Abort"


_ALLOWED = {
    TxnState.EXECUTED: {TxnState.PREPARED, TxnState.ABORT},
    TxnState.PREPARED: {TxnState.PRECOMMIT, TxnState.COMMIT, TxnState.ABORT},
    TxnState.PRECOMMIT: {TxnState.COMMIT, TxnState.ABORT},
    TxnState.COMMIT: set(),
    TxnState.ABORT: set(),
}


class Version(NamedTuple):
    counter: int
    value: Any
    writer: Optional[TransactionId]


INITIAL = Version(0, None, None)


@dataclass
class TxnRecord:
    tid: TransactionId
    ts: tuple = ()
    state: TxnState = TxnState.EXECUTED
    rset: list = field(default_factory=list)
    wset: dict = field(default_factory=dict)
    in_counter: int = 0
    out_list: list = field(default_factory=list)
    vote: Optional[Vote] = None
    vote_sent: bool = False
    ww_wait: set = field(default_factory=set)      # precommitted writers of our write keys
    ww_out: list = field(default_factory=list)

    @property
    def blocked(self) -> bool:
        """A Commit vote must wait for earlier precommitted readers-from or writers."""
        return self.in_counter > 0 or bool(self.ww_wait)

    @property
    def withheld(self) -> bool:
        return (self.vote is not None and not self.vote_sent
                and self.vote.value is COMMIT)

    def move(self, new: TxnState) -> None:
        if new not in _ALLOWED[self.state]:
            raise ProtocolViolation(f"{self.tid}: illegal transition {self.state.value} -> {new.value}")
        self.state = new


class ReadResult(NamedTuple):
    value: Any
    version: int
    writer: Optional[TransactionId]
    dependency: bool


# ---------------------------------------------------------------- 2PL locks

SHARED, EXCLUSIVE = "S", "X"
GRANTED, WAITING, DIED = "granted", "waiting", "died"


@dataclass
class _Waiter:
    ts: tuple
    tid: TransactionId
    mode: str
    callback: Callable[[TransactionId, int, bool], None]


@dataclass
class _LockState:
    holders: dict = field(default_factory=dict)  # tid -> (mode, ts)
    queue: list = field(default_factory=list)    # _Waiter sorted by ts


def _compatible(mode: str, holders: dict, tid: TransactionId) -> bool:
    others = [m for t, (m, _) in holders.items() if t != tid]
    if not others:
        return True
    return mode == SHARED and all(m == SHARED for m in others)


class LockTable:
    """Shared/exclusive locks with wait-die.

    A requester waits only if it is older than every conflicting holder;
    otherwise it dies. Whenever a waiter is granted, queued requests that
    conflict with it and are younger die, so every waiter stays older than
    every conflicting holder and the waits-for graph cannot cycle. Waiters
    are granted strictly in timestamp order.
    """

    def __init__(self):
        self.locks: dict[int, _LockState] = {}
        self.held: dict[TransactionId, set] = {}
        self.queued: dict[TransactionId, set] = {}
        self.killers: dict[TransactionId, set] = {}      # who made tid die, last death only

    def holders(self, key: int) -> dict:
        st = self.locks.get(key)
        return {t: m for t, (m, _) in st.holders.items()} if st else {}

    def waiting(self, key: int) -> list:
        st = self.locks.get(key)
        return [w.tid for w in st.queue] if st else []

    def acquire(self, tid: TransactionId, key: int, mode: str, ts: tuple,
                callback: Callable[[TransactionId, int, bool], None]) -> str:
        st = self.locks.setdefault(key, _LockState())
        cur = st.holders.get(tid)
        if cur is not None and (cur[0] == EXCLUSIVE or mode == SHARED):
            return GRANTED
        if _compatible(mode, st.holders, tid):
            self._grant(st, key, tid, mode, ts)
            return GRANTED
        conflicting = [hts for t, (m, hts) in st.holders.items()
                       if t != tid and (mode == EXCLUSIVE or m == EXCLUSIVE)]
        # equal ts means an aborted earlier attempt of the same transaction; it will release
        if all(ts <= hts for hts in conflicting):
            if any(w.tid == tid for w in st.queue):
                return WAITING
            st.queue.append(_Waiter(ts, tid, mode, callback))
            st.queue.sort(key=lambda w: w.ts)
            self.queued.setdefault(tid, set()).add(key)
            return WAITING
        self.killers[tid] = {t for t, (m, hts) in st.holders.items()
                             if t != tid and hts < ts and (mode == EXCLUSIVE or m == EXCLUSIVE)}
        return DIED

    def _grant(self, st: _LockState, key: int, tid, mode: str, ts: tuple) -> None:
        st.holders[tid] = (mode, ts)
        self.held.setdefault(tid, set()).add(key)

    def release_all(self, tid: TransactionId) -> list:
        """Drop every lock and queued request of ``tid``.

        Returns the (tid, key, granted) notifications to deliver to waiters;
        the caller runs them after its own bookkeeping so callbacks see a
        consistent table.
        """
        notes = []
        touched = self.held.pop(tid, set()) | self.queued.pop(tid, set())
        for key in sorted(touched):
            st = self.locks.get(key)
            if st is None:
                continue
            st.queue = [w for w in st.queue if w.tid != tid]
            st.holders.pop(tid, None)
            notes.extend(self._drain(st, key))
            if not st.holders and not st.queue:
                del self.locks[key]
        return notes

    def _unqueue(self, tid, key) -> None:
        q = self.queued.get(tid)
        if q is not None:
            q.discard(key)
            if not q:
                del self.queued[tid]

    def _drain(self, st: _LockState, key: int) -> list:
        notes = []
        while st.queue:
            w = st.queue[0]
            if not _compatible(w.mode, st.holders, w.tid):
                break
            st.queue.pop(0)
            self._unqueue(w.tid, key)
            self._grant(st, key, w.tid, w.mode, w.ts)
            notes.append((w, True))
            survivors = []
            for other in st.queue:
                conflict = w.mode == EXCLUSIVE or other.mode == EXCLUSIVE
                if conflict and other.ts > w.ts:
                    self._unqueue(other.tid, key)
                    self.killers[other.tid] = {w.tid}
                    notes.append((other, False))
                else:
                    survivors.append(other)
            st.queue = survivors
        return [(w.callback, w.tid, key, ok) for w, ok in notes]


def run_notes(notes) -> None:
    for cb, tid, key, ok in notes:
        cb(tid, key, ok)


# ---------------------------------------------------------------- the store

class Store:
    """Versioned store of one shard replica.

    ``cc`` is "occ" or "2pl". ``on_dependency`` is called as
    ``(reader, writer, key)`` whenever a read registers a wr dependency.
    """

    def __init__(self, shard: int, cc: str = "occ",
                 on_dependency: Optional[Callable] = None):
        if cc not in ("occ", "2pl"):
            raise ValueError(f"unknown concurrency control {cc!r}")
        self.shard = shard
        self.cc = cc
        self.committed: dict[int, list] = {}
        self.precommit: dict[int, list] = {}
        self.txns: dict[TransactionId, TxnRecord] = {}
        self.locks = LockTable()
        self.read_intents: dict[int, set] = {}
        self.write_intents: dict[int, TransactionId] = {}
        self.on_dependency = on_dependency
        self._lock_waits: dict[TransactionId, dict] = {}
        self._watch: dict[TransactionId, list] = {}

    # -- reads -------------------------------------------------------------

    def head(self, key: int) -> Version:
        versions = self.committed.get(key)
        return versions[-1] if versions else INITIAL

    def visible_writer(self, key: int) -> Optional[TransactionId]:
        plist = self.precommit.get(key)
        if plist:
            return plist[-1]
        return self.head(key).writer

    def read_committed(self, key: int) -> ReadResult:
        v = self.head(key)
        return ReadResult(v.value, v.counter, v.writer, False)

    def record(self, tid: TransactionId, ts: tuple = ()) -> TxnRecord:
        rec = self.txns.get(tid)
        if rec is None:
            rec = self.txns[tid] = TxnRecord(tid, ts)
        return rec

    def read(self, tid: TransactionId, key: int, ts: tuple = ()) -> ReadResult:
        """Leader read: the last precommitted write if any, else committed head."""
        plist = self.precommit.get(key)
        if not plist:
            return self.read_committed(key)
        rec = self.record(tid, ts)
        writer = plist[-1]
        wrec = self.txns[writer]
        wrec.out_list.append(tid)
        if rec.in_counter >= 0:
            rec.in_counter += 1
        if self.on_dependency is not None:
            self.on_dependency(tid, writer, key)
        return ReadResult(wrec.wset[key], self.head(key).counter + len(plist), writer, True)

    # -- prepare -----------------------------------------------------------

    def _stale(self, rset) -> bool:
        return any(self.visible_writer(e.key) != e.writer for e in rset)

    def prepare(self, tid: TransactionId, rset, wset, ts: tuple = (),
                on_ready: Optional[Callable[[Vote], None]] = None) -> Optional[Vote]:
        """Validate and reserve; returns the vote, or None while 2PL waits.

        When the 2PL path has to wait, ``on_ready(vote)`` is called later.
        A duplicate prepare returns the recorded vote.
        """
        rec = self.record(tid, ts)
        if rec.vote is not None:
            return rec.vote
        if rec.state is not TxnState.EXECUTED or tid in self._lock_waits:
            return None
        rec.rset = [ReadEntry(*e) for e in rset]
        rec.wset = dict(wset)
        if rec.ts == ():
            rec.ts = ts
        if rec.in_counter < 0:
            return self._abort_vote(rec, "cascade")
        if self.cc == "occ":
            return self._prepare_occ(rec)
        return self._prepare_2pl(rec, on_ready)

    def refuse(self, tid: TransactionId, reason: str, ts: tuple = ()) -> Vote:
        """Record an Abort vote without validating (presumed or injected abort)."""
        rec = self.record(tid, ts)
        if rec.vote is not None:
            return rec.vote
        if tid in self._lock_waits:
            del self._lock_waits[tid]
        self.release(tid)
        return self._abort_vote(rec, reason)

    def cascade_abort(self, tid: TransactionId) -> list:
        """Abort a reader whose writer aborted; its vote turns into Abort."""
        rec = self.txns[tid]
        rec.vote = Vote(ABORT, self.shard, tid, "cascade")
        return self.commit(tid, ABORT)

    def _commit_vote(self, rec: TxnRecord) -> Vote:
        rec.move(TxnState.PREPARED)
        # stacked writes install in PreCommit order
        for k in rec.wset:
            for w in self.precommit.get(k, ()):
                if w != rec.tid and w not in rec.ww_wait:
                    rec.ww_wait.add(w)
                    self.txns[w].ww_out.append(rec.tid)
        rec.vote = Vote(COMMIT, self.shard, rec.tid)
        return rec.vote

    def _abort_vote(self, rec: TxnRecord, reason: str) -> Vote:
        rec.vote = Vote(ABORT, self.shard, rec.tid, reason)
        return rec.vote

    def _prepare_occ(self, rec: TxnRecord) -> Vote:
        tid = rec.tid
        if self._stale(rec.rset):
            return self._abort_vote(rec, "stale_read")
        for e in rec.rset:
            w = self.write_intents.get(e.key)
            if w is not None and w != tid:
                return self._abort_vote(rec, "conflict")
        for k in rec.wset:
            w = self.write_intents.get(k)
            if w is not None and w != tid:
                return self._abort_vote(rec, "conflict")
            if self.read_intents.get(k, set()) - {tid}:
                return self._abort_vote(rec, "conflict")
        for e in rec.rset:
            self.read_intents.setdefault(e.key, set()).add(tid)
        for k in rec.wset:
            self.write_intents[k] = tid
        return self._commit_vote(rec)

    def _prepare_2pl(self, rec: TxnRecord, on_ready) -> Optional[Vote]:
        tid = rec.tid
        if self._stale(rec.rset):
            return self._abort_vote(rec, "stale_read")
        wanted = {k: EXCLUSIVE for k in rec.wset}
        for e in rec.rset:
            wanted.setdefault(e.key, SHARED)
        wait = {"outstanding": set(), "died": False, "on_ready": on_ready}
        self._lock_waits[tid] = wait
        for key in sorted(wanted):
            res = self.locks.acquire(tid, key, wanted[key], rec.ts, self._on_lock)
            if res == DIED:
                wait["died"] = True
                break
            if res == WAITING:
                wait["outstanding"].add(key)
        if wait["died"] or not wait["outstanding"]:
            return self._finish_2pl(rec)
        return None

    def _on_lock(self, tid: TransactionId, key: int, granted: bool) -> None:
        wait = self._lock_waits.get(tid)
        if wait is None:
            return
        if granted:
            wait["outstanding"].discard(key)
        else:
            wait["died"] = True
        if wait["died"] or not wait["outstanding"]:
            rec = self.txns[tid]
            vote = self._finish_2pl(rec)
            if wait["on_ready"] is not None:
                wait["on_ready"](vote)

    def _finish_2pl(self, rec: TxnRecord) -> Vote:
        wait = self._lock_waits.pop(rec.tid)
        if wait["died"]:
            vote = self._abort_vote(rec, "wait_die")
            self.release(rec.tid)
            return vote
        if self._stale(rec.rset):
            vote = self._abort_vote(rec, "stale_read")
            self.release(rec.tid)
            return vote
        if rec.in_counter < 0:
            vote = self._abort_vote(rec, "cascade")
            self.release(rec.tid)
            return vote
        return self._commit_vote(rec)

    def acquire_read_lock(self, tid: TransactionId, key: int, ts: tuple,
                          callback: Callable[[TransactionId, int, bool], None]) -> str:
        self.record(tid, ts)
        return self.locks.acquire(tid, key, SHARED, ts, callback)

    # -- release -----------------------------------------------------------

    def release(self, tid: TransactionId, defer: bool = False) -> list:
        """Drop every concurrency-control artifact of ``tid``.

        Lock waiters are woken immediately unless ``defer`` is set, in which
        case their notifications are returned for the caller to run.
        """
        for k in [k for k, t in self.write_intents.items() if t == tid]:
            del self.write_intents[k]
        for k in [k for k, s in self.read_intents.items() if tid in s]:
            self.read_intents[k].discard(tid)
            if not self.read_intents[k]:
                del self.read_intents[k]
        self._lock_waits.pop(tid, None)
        notes = self.locks.release_all(tid)
        if defer:
            return notes
        run_notes(notes)
        self._fire_watch(tid)
        return []

    def restart_watch(self, tid: TransactionId, callback: Callable[[TransactionId], None]) -> None:
        """Call ``callback(tid)`` once every transaction that made ``tid`` die has released."""
        blockers = {t for t in self.locks.killers.pop(tid, set()) if t in self.locks.held}
        if not blockers:
            callback(tid)
            return
        entry = (blockers, tid, callback)
        for b in blockers:
            self._watch.setdefault(b, []).append(entry)

    def _fire_watch(self, tid: TransactionId) -> None:
        for blockers, waiter, callback in self._watch.pop(tid, ()):
            blockers.discard(tid)
            if not blockers:
                callback(waiter)

    # -- decisions ---------------------------------------------------------

    def precommit_txn(self, tid: TransactionId) -> bool:
        """Move a Prepared transaction to PreCommit; returns False if ignored."""
        rec = self.txns.get(tid)
        if rec is None or rec.state is not TxnState.PREPARED:
            return False
        rec.move(TxnState.PRECOMMIT)
        for k in rec.wset:
            self.precommit.setdefault(k, []).append(tid)
        self.release(tid)
        return True

    def commit(self, tid: TransactionId, decision: Outcome) -> list:
        """Apply the final decision.

        Returns the dependants whose counters changed, as (tid, in_counter)
        pairs, so the caller can release withheld votes or cascade aborts.
        """
        rec = self.txns.get(tid)
        if rec is None:
            if decision is COMMIT:
                raise ProtocolViolation(f"commit of unknown transaction {tid}")
            return []
        if rec.state is TxnState.COMMIT or rec.state is TxnState.ABORT:
            if (rec.state is TxnState.COMMIT) != (decision is COMMIT):
                raise ProtocolViolation(f"{tid}: conflicting decision {decision.value} after {rec.state.value}")
            return []
        if decision is COMMIT:
            if rec.state is TxnState.EXECUTED:
                raise ProtocolViolation(f"{tid}: commit before prepare")
            rec.move(TxnState.COMMIT)
        else:
            rec.move(TxnState.ABORT)
        # waiters must see the installed versions, so wake them last
        notes = self.release(tid, defer=True)
        changed = []
        for t in rec.out_list:
            dep = self.txns.get(t)
            if dep is None or dep.state in (TxnState.COMMIT, TxnState.ABORT):
                continue
            if decision is COMMIT:
                if dep.in_counter > 0:
                    dep.in_counter -= 1
            else:
                dep.in_counter = -1
            changed.append((t, dep.in_counter))
        for t in rec.ww_out:
            dep = self.txns.get(t)
            if dep is None or dep.state in (TxnState.COMMIT, TxnState.ABORT):
                continue
            dep.ww_wait.discard(tid)
            changed.append((t, dep.in_counter))
        for k in rec.wset:
            plist = self.precommit.get(k)
            if plist and tid in plist:
                plist.remove(tid)
                if not plist:
                    del self.precommit[k]
        if decision is COMMIT:
            for k in sorted(rec.wset):
                self.install(k, rec.wset[k], tid)
        run_notes(notes)
        self._fire_watch(tid)
        return changed

    def abort_executing(self, tid: TransactionId) -> list:
        rec = self.txns.get(tid)
        if rec is None or rec.state is not TxnState.EXECUTED:
            return []
        return self.commit(tid, ABORT)

    def install(self, key: int, value: Any, writer: Optional[TransactionId]) -> None:
        versions = self.committed.setdefault(key, [])
        counter = versions[-1].counter + 1 if versions else 1
        versions.append(Version(counter, value, writer))
        if len(versions) > 2:
            del versions[0]

    def restore_prepared(self, tid: TransactionId, rset, wset, ts: tuple, vote: Vote) -> TxnRecord:
        """Rebuild a logged Prepared transaction on a new leader."""
        rec = self.record(tid, ts)
        rec.rset = [ReadEntry(*e) for e in rset]
        rec.wset = dict(wset)
        rec.vote = vote
        rec.vote_sent = True
        if vote.value is COMMIT and rec.state is TxnState.EXECUTED:
            rec.move(TxnState.PREPARED)
            if self.cc == "occ":
                for e in rec.rset:
                    self.read_intents.setdefault(e.key, set()).add(tid)
                for k in rec.wset:
                    self.write_intents[k] = tid
            else:
                wanted = {k: EXCLUSIVE for k in rec.wset}
                for e in rec.rset:
                    wanted.setdefault(e.key, SHARED)
                for key, mode in wanted.items():
                    st = self.locks.locks.setdefault(key, _LockState())
                    self.locks._grant(st, key, tid, mode, ts)
        return rec

    def forget(self, tid: TransactionId) -> None:
        rec = self.txns.get(tid)
        if rec is not None and rec.state in (TxnState.COMMIT, TxnState.ABORT):
            del self.txns[tid]

    def reset_volatile(self) -> None:
        """Crash: drop everything but committed versions."""
        self.precommit.clear()
        self.txns.clear()
        self.locks = LockTable()
        self.read_intents.clear()
        self.write_intents.clear()
        self._lock_waits.clear()
        self._watch.clear()

    def dump(self) -> dict:
        return {
            "shard": self.shard,
            "keys": {k: {"version": v[-1].counter, "writer": str(v[-1].writer)}
                     for k, v in sorted(self.committed.items())},
            "precommit": {k: [str(t) for t in p] for k, p in sorted(self.precommit.items())},
            "txns": {str(t): {"state": r.state.value, "in": r.in_counter,
                              "out": [str(o) for o in r.out_list]}
                     for t, r in self.txns.items()},
        }
