"""Workload generators: Zipf key choice, Retwis, YCSB+T and a long-read mix."""
from __future__ import annotations

import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .messages import TransactionId
from .simnet import ConfigurationError


@lru_cache(maxsize=64)
def _zeta(n: int, theta: float) -> float:
    return float(np.sum(1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta))


class ZipfGenerator:
    """Gray et al. rejection-free Zipfian sampler over [0, n), rank 0 hottest."""

    def __init__(self, n: int, theta: float):
        if n < 1:
            raise ConfigurationError("zipf key space must hold at least one key")
        if not 0 <= theta < 1:
            raise ConfigurationError(f"zipf theta must be in [0, 1), got {theta}")
        self.n = n
        self.theta = theta
        self.zetan = _zeta(n, theta)
        self.alpha = 1.0 / (1.0 - theta)
        if n > 1:
            zeta2 = _zeta(2, theta)
            self.eta = (1 - (2.0 / n) ** (1 - theta)) / (1 - zeta2 / self.zetan)
        else:
            self.eta = 1.0

    def next(self, rng: random.Random) -> int:
        if self.n == 1:
            return 0
        u = rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5 ** self.theta:
            return 1
        return min(self.n - 1, int(self.n * (self.eta * u - self.eta + 1) ** self.alpha))


def zipf_next(theta: float, n: int, rng: random.Random) -> int:
    return ZipfGenerator(n, theta).next(rng)


def zipf_pmf(theta: float, n: int) -> np.ndarray:
    mass = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** theta
    return mass / mass.sum()


class TxnTemplate(NamedTuple):
    kind: str
    reads: tuple   # keys read
    writes: tuple  # keys written


RETWIS_PROFILE = (
    # name, gets, puts, weight (percent)
    ("AddUser", 1, 3, 5),
    ("Follow", 2, 2, 15),
    ("PostTweet", 3, 5, 30),
    ("LoadTimeline", None, 0, 50),
)


@dataclass
class KeySpace:
    shards: int
    keys_per_shard: int = 100_000
    theta: float = 0.0
    client_slot: int = -1   # >= 0 confines a client to its own disjoint key range
    slots: int = 1

    def __post_init__(self):
        if self.client_slot >= 0:
            per_slot = max(1, self.keys_per_shard // max(1, self.slots))
            self.zipf = ZipfGenerator(per_slot, self.theta)
            self._span = per_slot
        else:
            self.zipf = ZipfGenerator(self.keys_per_shard, self.theta)
            self._span = self.keys_per_shard

    def key(self, rng: random.Random, shard: int | None = None) -> int:
        rank = self.zipf.next(rng)
        if self.client_slot >= 0:
            rank += self.client_slot * self._span
        if shard is None:
            shard = rng.randrange(self.shards)
        return rank * self.shards + shard

    def distinct(self, rng: random.Random, k: int) -> list:
        seen, out = set(), []
        while len(out) < k:
            key = self.key(rng)
            if key not in seen:
                seen.add(key)
                out.append(key)
        return out


def retwis(space: KeySpace, rng: random.Random) -> TxnTemplate:
    x = rng.random() * 100
    acc = 0
    for name, gets, puts, weight in RETWIS_PROFILE:
        acc += weight
        if x < acc:
            break
    if gets is None:
        gets = rng.randint(1, 10)
    keys = space.distinct(rng, gets + puts)
    return TxnTemplate(name, tuple(keys[:gets]), tuple(keys[gets:]))


def ycsbt(space: KeySpace, rng: random.Random) -> TxnTemplate:
    reads, writes = [], []
    for shard in range(space.shards):
        key = space.key(rng, shard)
        reads.append(key)
        if rng.random() < 0.5:
            writes.append(key)
    return TxnTemplate("YCSBT", tuple(reads), tuple(writes))


def longread(space: KeySpace, rng: random.Random, read_keys: int = 50) -> TxnTemplate:
    if rng.random() < 0.5:
        return TxnTemplate("LongRead", tuple(space.distinct(rng, read_keys)), ())
    keys = space.distinct(rng, 2)
    return TxnTemplate("Update", tuple(keys), tuple(keys))


GENERATORS: dict[str, Callable] = {"retwis": retwis, "ycsbt": ycsbt, "longread": longread}


def begin(client_id: int, counter: int) -> TransactionId:
    return TransactionId(client_id, counter)
