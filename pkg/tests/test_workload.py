import random

import numpy as np
import pytest
from scipy import stats

from d2pcsim.simnet import ConfigurationError
from d2pcsim.workload import (KeySpace, ZipfGenerator, longread, retwis, ycsbt, zipf_next,
                              zipf_pmf)


def test_theta_zero_is_uniform():
    rng = random.Random(1)
    n, draws = 20, 40_000
    counts = np.bincount([zipf_next(0.0, n, rng) for _ in range(draws)], minlength=n)
    assert stats.chisquare(counts).pvalue > 0.001


@pytest.mark.parametrize("theta", [0.7, 0.9])
def test_zipf_head_matches_pmf(theta):
    gen = ZipfGenerator(1000, theta)
    rng = random.Random(2)
    draws = 60_000
    counts = np.bincount([gen.next(rng) for _ in range(draws)], minlength=1000)
    pmf = zipf_pmf(theta, 1000)
    # the sampler is exact for ranks 0 and 1 and approximate in the tail
    for r in (0, 1):
        assert abs(counts[r] / draws - pmf[r]) < 4 * np.sqrt(pmf[r] / draws)
    assert counts[0] > counts[10] > counts[500]


def test_zipf_rejects_bad_theta():
    with pytest.raises(ConfigurationError):
        ZipfGenerator(10, 1.0)
    with pytest.raises(ConfigurationError):
        ZipfGenerator(0, 0.5)


def test_keys_map_to_requested_shard():
    space = KeySpace(3, 100, 0.7)
    rng = random.Random(3)
    assert all(space.key(rng, 2) % 3 == 2 for _ in range(200))


def test_disjoint_slots_never_overlap():
    rng = random.Random(4)
    a = KeySpace(3, 100, 0.0, client_slot=0, slots=2)
    b = KeySpace(3, 100, 0.0, client_slot=1, slots=2)
    ka = {a.key(rng) for _ in range(500)}
    kb = {b.key(rng) for _ in range(500)}
    assert not ka & kb


def test_retwis_mix_and_shapes():
    space = KeySpace(3, 100_000)
    rng = random.Random(5)
    txns = [retwis(space, rng) for _ in range(20_000)]
    kinds = {k: sum(t.kind == k for t in txns) / len(txns)
             for k in ("AddUser", "Follow", "PostTweet", "LoadTimeline")}
    for k, p in zip(kinds, (0.05, 0.15, 0.30, 0.50)):
        assert abs(kinds[k] - p) < 0.015
    for t in txns:
        assert len(set(t.reads + t.writes)) == len(t.reads) + len(t.writes)
        if t.kind == "LoadTimeline":
            assert 1 <= len(t.reads) <= 10 and not t.writes
    shards = [len({k % 3 for k in t.reads + t.writes}) for t in txns]
    # expected distinct shards for uniform keys, averaged over the mix
    expect = 0.05 * (3 - 3 * (2 / 3) ** 4) + 0.15 * (3 - 3 * (2 / 3) ** 4) \
        + 0.30 * (3 - 3 * (2 / 3) ** 8) \
        + 0.50 * np.mean([3 - 3 * (2 / 3) ** g for g in range(1, 11)])
    assert abs(np.mean(shards) - expect) < 0.02


def test_ycsbt_reads_every_shard():
    space = KeySpace(3, 1000)
    rng = random.Random(6)
    txns = [ycsbt(space, rng) for _ in range(2000)]
    assert all(sorted(k % 3 for k in t.reads) == [0, 1, 2] for t in txns)
    assert all(set(t.writes) <= set(t.reads) for t in txns)
    frac = np.mean([len(t.writes) for t in txns]) / 3
    assert abs(frac - 0.5) < 0.03


def test_longread_mix():
    space = KeySpace(3, 1000)
    rng = random.Random(7)
    txns = [longread(space, rng) for _ in range(2000)]
    long = [t for t in txns if t.kind == "LongRead"]
    assert abs(len(long) / len(txns) - 0.5) < 0.04
    assert all(len(t.reads) == 50 and not t.writes for t in long)
