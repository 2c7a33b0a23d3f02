"""Prefix-scan engine: schedule shape, equivalence with the sequential scan,
and parallelism invariance."""

import numpy as np
import pytest

from gateloop import scan
from gateloop.scan import (IDENTITY, ScanLane, ScanTuple, brent_kung_schedule,
                           gateloop_combine, parallel_scan, prefix_cumprod,
                           scan_tuples, schedule_stats, sequential_scan)

RNG = np.random.default_rng(7)

LENGTHS = [1, 2, 3, 4, 7, 8, 13, 64, 100, 255, 256, 257, 1000]


def random_lane(length, lanes=(3,)):
    shape = (length, *lanes)
    mag = RNG.uniform(0.5, 1.0, size=shape)
    phase = RNG.uniform(-np.pi, np.pi, size=shape)
    a = mag * np.exp(1j * phase)
    b = RNG.normal(size=shape) + 1j * RNG.normal(size=shape)
    return ScanLane(a, b)


def brute_prefixes(lane):
    """Direct evaluation of every prefix, no scan machinery at all."""
    a = np.empty_like(lane.a)
    b = np.empty_like(lane.b)
    for n in range(lane.length):
        acc_a = np.ones_like(lane.a[0])
        acc_b = np.zeros_like(lane.b[0])
        for m in range(n + 1):
            acc_a = acc_a * lane.a[m]
            acc_b = lane.a[m] * acc_b + lane.b[m]
        a[n] = acc_a
        b[n] = acc_b
    return a, b


def test_combine_is_the_recurrence_step():
    p = ScanTuple(2.0 + 1j, 3.0 - 1j)
    q = ScanTuple(0.5 + 0.5j, 1.0 + 0j)
    out = gateloop_combine(p, q)
    assert out.a == p.a * q.a
    assert out.b == q.a * p.b + q.b


def test_identity_element_exact():
    p = ScanTuple(RNG.normal(size=4) + 1j, RNG.normal(size=4) - 1j)
    for left, right in ((IDENTITY, p), (p, IDENTITY)):
        out = gateloop_combine(left, right)
        assert np.array_equal(out.a, p.a)
        assert np.array_equal(out.b, p.b)


@pytest.mark.parametrize("length", [1, 2, 3, 5, 16, 100])
def test_sequential_scan_matches_brute_force(length):
    lane = random_lane(length)
    out = sequential_scan(lane)
    a, b = brute_prefixes(lane)
    assert np.allclose(out.a, a, atol=1e-12)
    assert np.allclose(out.b, b, atol=1e-12)


@pytest.mark.parametrize("length", LENGTHS)
def test_parallel_matches_sequential(length):
    lane = random_lane(length)
    seq = sequential_scan(lane)
    par = parallel_scan(lane)
    assert np.abs(par.a - seq.a).max() < 1e-11
    assert np.abs(par.b - seq.b).max() < 1e-11


@pytest.mark.parametrize("length", [1, 2, 7, 64, 255, 256, 1000, 4096])
def test_schedule_work_and_depth_bounds(length):
    combines, depth = schedule_stats(length)
    assert combines <= 2 * length
    if length > 1:
        assert depth <= 2 * int(np.ceil(np.log2(length))) + 1


@pytest.mark.parametrize("length", LENGTHS)
def test_schedule_is_well_formed(length):
    for src, dst in brent_kung_schedule(length):
        assert np.all(src < dst), "source must precede destination in time"
        assert np.all(dst < length)
        touched = np.concatenate([src, dst])
        assert len(np.unique(touched)) == len(touched), \
            "pairs within a level must be disjoint"


def test_parallel_bit_identical_across_workers_and_chunks():
    lane = random_lane(517)
    base = parallel_scan(lane, chunk_size=256, workers=1)
    for workers, chunk in ((2, 64), (4, 16), (4, 128), (8, 7)):
        out = parallel_scan(lane, chunk_size=chunk, workers=workers)
        assert np.array_equal(out.a, base.a)
        assert np.array_equal(out.b, base.b)


def test_scan_tuples_generic_path_and_combine_count():
    items = [ScanTuple(complex(RNG.normal(), RNG.normal()),
                       complex(RNG.normal(), RNG.normal())) for _ in range(37)]
    calls = [0]

    def counting(p, q):
        calls[0] += 1
        return gateloop_combine(p, q)

    par = scan_tuples(items, counting)
    assert calls[0] == schedule_stats(37)[0]
    assert calls[0] <= 2 * 37
    seq = scan_tuples(items, gateloop_combine, schedule="sequential")
    for x, y in zip(par, seq):
        assert abs(x.a - y.a) < 1e-12
        assert abs(x.b - y.b) < 1e-12


def test_prefix_cumprod_matches_numpy():
    a = RNG.normal(size=(129, 4)) + 1j * RNG.normal(size=(129, 4))
    assert np.allclose(prefix_cumprod(a), np.cumprod(a, axis=0), atol=1e-12)


def test_empty_and_bad_inputs_raise():
    with pytest.raises(ValueError):
        brent_kung_schedule(0)
    with pytest.raises(ValueError):
        scan_tuples([], gateloop_combine)
    with pytest.raises(ValueError):
        ScanLane(np.ones(3), np.ones(4))
    with pytest.raises(ValueError):
        parallel_scan(random_lane(4), chunk_size=0)
