"""All-prefix-sum engine over associative binary operators.

The principal instance is the gated-recurrence tuple operator
(p1, p2) • (q1, q2) = (p1 q1, q1 p2 + q2), whose inclusive prefix scan
evaluates the linear recurrence h_n = h_{n-1} a_n + b_n.

The parallel path uses a work-efficient Brent-Kung up-sweep/down-sweep
tree. The combination schedule is a pure function of the sequence
length, so results are bit-identical across run counts and worker
counts. Non-power-of-two lengths are handled by scheduling against the
next power of two and skipping every combine whose destination falls in
the (conceptual) identity padding.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ScanTuple:
    """One leaf (a, b) of the gated-recurrence scan: state transition and input term."""
    a: object
    b: object


@dataclass
class ScanLane:
    """A batch of independent lanes sharing one length.

    a, b: complex arrays of shape (length, *lane_shape); each trailing
    index is an independent lane.
    """
    a: np.ndarray
    b: np.ndarray
    lane_id: tuple = ()

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.complex128)
        self.b = np.asarray(self.b, dtype=np.complex128)
        if self.a.shape != self.b.shape:
            raise ValueError(f"a shape {self.a.shape} != b shape {self.b.shape}")

    @property
    def length(self):
        return self.a.shape[0]


IDENTITY = ScanTuple(1.0 + 0.0j, 0.0 + 0.0j)


def gateloop_combine(p: ScanTuple, q: ScanTuple) -> ScanTuple:
    """(p1, p2) • (q1, q2) = (p1 q1, q1 p2 + q2); p precedes q in time."""
    return ScanTuple(p.a * q.a, q.a * p.b + q.b)


def brent_kung_schedule(length: int):
    """Combine schedule: list of levels, each (src_idx, dst_idx) with
    x[dst] <- x[src] • x[dst] and src strictly earlier in time.

    Within a level all (src, dst) pairs are disjoint, so they may run in
    any order or concurrently without changing the result.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    levels = []
    if length == 1:
        return levels
    n = 1 << (length - 1).bit_length()
    logn = n.bit_length() - 1
    # Up-sweep: reduce pairs of blocks.
    for d in range(logn):
        step = 1 << (d + 1)
        dst = np.arange(step - 1, n, step)
        dst = dst[dst < length]
        if dst.size:
            levels.append((dst - (1 << d), dst))
    # Down-sweep: fill in the remaining prefixes.
    for d in range(logn - 2, -1, -1):
        step = 1 << (d + 1)
        src = np.arange(step - 1, n - (1 << d), step)
        dst = src + (1 << d)
        keep = dst < length
        if keep.any():
            levels.append((src[keep], dst[keep]))
    return levels


def schedule_stats(length: int):
    """(total combine count, critical-path depth) of the parallel schedule."""
    levels = brent_kung_schedule(length)
    return sum(len(dst) for _, dst in levels), len(levels)


def sequential_scan(lane: ScanLane) -> ScanLane:
    """Inclusive left-to-right prefix scan, O(l) combines."""
    if lane.length < 1:
        raise ValueError("empty lane")
    a = np.empty_like(lane.a)
    b = np.empty_like(lane.b)
    a[0] = lane.a[0]
    b[0] = lane.b[0]
    for n in range(1, lane.length):
        # (prefix) • (element n)
        a[n] = a[n - 1] * lane.a[n]
        b[n] = lane.a[n] * b[n - 1] + lane.b[n]
    return ScanLane(a, b, lane.lane_id)


def parallel_scan(lane: ScanLane, chunk_size: int = 256, workers: int = 1) -> ScanLane:
    """Work-efficient tree scan; mathematically equals sequential_scan.

    chunk_size partitions each level's independent combines into worker
    tasks; neither it nor `workers` affects the combination order, so the
    output is bit-identical for fixed length regardless of parallelism.
    """
    if lane.length < 1:
        raise ValueError("empty lane")
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    a = lane.a.copy()
    b = lane.b.copy()
    levels = brent_kung_schedule(lane.length)

    def apply_pairs(src, dst):
        new_a = a[src] * a[dst]
        new_b = a[dst] * b[src] + b[dst]
        a[dst] = new_a
        b[dst] = new_b

    if workers <= 1:
        for src, dst in levels:
            apply_pairs(src, dst)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for src, dst in levels:
                if len(dst) <= chunk_size:
                    apply_pairs(src, dst)
                    continue
                futures = [pool.submit(apply_pairs, src[i:i + chunk_size],
                                       dst[i:i + chunk_size])
                           for i in range(0, len(dst), chunk_size)]
                for f in futures:
                    f.result()
    return ScanLane(a, b, lane.lane_id)


def scan_tuples(items, combine, schedule="parallel"):
    """Generic inclusive scan over a Python list with an explicit combine.

    Used for counting combine calls and for scanning non-array element
    types (e.g. matrix-valued input terms). Returns a new list.
    """
    if len(items) < 1:
        raise ValueError("empty sequence")
    xs = list(items)
    if schedule == "sequential":
        for n in range(1, len(xs)):
            xs[n] = combine(xs[n - 1], xs[n])
        return xs
    for src, dst in brent_kung_schedule(len(xs)):
        updates = [combine(xs[s], xs[d]) for s, d in zip(src, dst)]
        for d, u in zip(dst, updates):
            xs[d] = u
    return xs


def prefix_cumprod(a: np.ndarray) -> np.ndarray:
    """Running product pi_n = a_1 ... a_n along axis 0, via the same tree."""
    a = np.asarray(a, dtype=np.complex128)
    if a.shape[0] == 0:
        return a.copy()
    out = a.copy()
    for src, dst in brent_kung_schedule(a.shape[0]):
        out[dst] = out[src] * out[dst]
    return out
