"""Wall-clock benchmarking of the three computation modes."""

from __future__ import annotations

import csv
import time

import numpy as np

from .. import modes, scan


def random_inputs(length: int, batch: int = 1, heads: int = 1,
                  seed: int = 0) -> modes.GateLoopInputs:
    rng = np.random.default_rng(seed)
    shape = (batch, length, heads, 1)
    mag = rng.uniform(0.9, 1.0, size=shape)
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    return modes.GateLoopInputs(
        q=rng.normal(size=shape) + 1j * rng.normal(size=shape),
        k=rng.normal(size=shape) + 1j * rng.normal(size=shape),
        v=rng.normal(size=shape),
        a=mag * np.exp(1j * phase),
    )


def _runner(mode: str, workers: int):
    if mode == "recurrent":
        return modes.recurrent_forward
    if mode == "scan":
        return lambda inp: modes.scan_forward(inp, workers=workers)
    if mode == "attention":
        return modes.attention_forward
    raise ValueError(f"unknown mode {mode!r}")


def bench(mode_names, lengths, repetitions: int = 5, warmup: int = 2,
          workers: int = 1, seed: int = 0):
    """Median wall-clock per (mode, length) plus fitted log-log slopes."""
    lengths = list(lengths)
    if lengths != sorted(lengths):
        raise ValueError("lengths must be sorted ascending")
    rows = []
    for mode in mode_names:
        run = _runner(mode, workers)
        for length in lengths:
            inp = random_inputs(length, seed=seed)
            for _ in range(warmup):
                run(inp)
            times = []
            for _ in range(repetitions):
                t0 = time.monotonic()
                run(inp)
                times.append(time.monotonic() - t0)
            rows.append({"mode": mode, "length": length,
                         "median_seconds": float(np.median(times))})
    slopes = {}
    for mode in mode_names:
        pts = [(r["length"], r["median_seconds"]) for r in rows
               if r["mode"] == mode]
        if len(pts) >= 2:
            ls, ts = zip(*pts)
            slopes[mode] = float(np.polyfit(np.log(ls), np.log(ts), 1)[0])
    return rows, slopes


def write_bench_csv(rows, slopes, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "length", "median_seconds"])
        for r in rows:
            w.writerow([r["mode"], r["length"], repr(r["median_seconds"])])
        w.writerow([])
        w.writerow(["mode", "loglog_slope", ""])
        for mode, slope in slopes.items():
            w.writerow([mode, repr(slope), ""])


def combine_counts(lengths):
    """Scheduled combine count and tree depth per length."""
    return {length: scan.schedule_stats(length) for length in lengths}
