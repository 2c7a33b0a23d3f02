"""Memory Horizon synthetic language-modeling dataset.

Each sample is a sequence of number tokens with a few randomly placed
reset tokens. The target at every position compresses the window of
numbers since the most recent reset (or the sequence start): pairs are
multiplied outside-in and the products combined with alternating signs
starting with addition; an odd middle element is added or subtracted
according to the pending operation; the result is reduced modulo
`modulo`. A reset position itself has an empty window and target 0.

Generation is fully deterministic given (seed, config): samples use
per-index RNG streams obtained by seed-splitting, so worker count never
changes the output.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np


@dataclass
class MemHorizonConfig:
    number_min: int = 0
    number_max: int = 4
    sequence_length: int = 1024
    resets_per_sample: int = 3
    modulo: int = 50
    num_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.modulo < 2:
            raise ValueError("modulo must be >= 2")
        if self.resets_per_sample >= self.sequence_length:
            raise ValueError("resets_per_sample must be < sequence_length")
        if self.number_max < self.number_min:
            raise ValueError("empty number range")

    @property
    def reset_token(self) -> int:
        return self.number_max - self.number_min + 1

    @property
    def vocab_in(self) -> int:
        # number tokens plus the reset token
        return self.number_max - self.number_min + 2

    @property
    def vocab_out(self) -> int:
        return self.modulo


@dataclass
class MemoryHorizonSample:
    inputs: np.ndarray
    targets: np.ndarray
    reset_positions: list
    span: np.ndarray


def compress(window, modulo: int) -> int:
    """Alternating outside-in sum of pair products, reduced mod `modulo`.

    Empty window compresses to 0.
    """
    window = list(window)
    total = 0
    sign = 1
    i, j = 0, len(window) - 1
    while i < j:
        total += sign * window[i] * window[j]
        sign = -sign
        i += 1
        j -= 1
    if i == j:  # odd length: middle element takes the pending operation
        total += sign * window[i]
    return total % modulo


def generate_sample(rng: np.random.Generator, cfg: MemHorizonConfig) -> MemoryHorizonSample:
    l = cfg.sequence_length
    resets = np.sort(rng.choice(np.arange(1, l), size=cfg.resets_per_sample,
                                replace=False))
    numbers = rng.integers(cfg.number_min, cfg.number_max + 1, size=l)
    inputs = numbers - cfg.number_min  # token ids 0..range
    inputs[resets] = cfg.reset_token

    targets = np.empty(l, dtype=np.int64)
    span = np.empty(l, dtype=np.int64)
    window = []
    last_reset = None
    for n in range(l):
        if inputs[n] == cfg.reset_token:
            window = []
            last_reset = n
        else:
            window.append(int(numbers[n]))
        targets[n] = compress(window, cfg.modulo)
        span[n] = n - last_reset if last_reset is not None else n + 1
    return MemoryHorizonSample(inputs.astype(np.int64), targets,
                               [int(r) for r in resets], span)


def generate_samples(cfg: MemHorizonConfig):
    """All samples, via independent per-sample RNG streams."""
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.num_samples)
    return [generate_sample(np.random.default_rng(s), cfg) for s in streams]


def _sample_to_json(sample: MemoryHorizonSample) -> str:
    return json.dumps({"inputs": sample.inputs.tolist(),
                       "targets": sample.targets.tolist(),
                       "resets": sample.reset_positions})


def generate_dataset(cfg: MemHorizonConfig, out_dir) -> dict:
    """Write train/test JSON-lines files (90/10 split by sample index) and a
    manifest recording the config and a content hash."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = generate_samples(cfg)
    n_test = cfg.num_samples // 10
    n_train = cfg.num_samples - n_test
    digest = hashlib.sha256()
    counts = {}
    for name, part in (("train", samples[:n_train]), ("test", samples[n_train:])):
        lines = [_sample_to_json(s) for s in part]
        payload = "\n".join(lines) + "\n" if lines else ""
        (out_dir / f"{name}.jsonl").write_text(payload)
        digest.update(payload.encode())
        counts[name] = len(part)
    manifest = {"config": asdict(cfg), "counts": counts,
                "vocab_in": cfg.vocab_in, "vocab_out": cfg.vocab_out,
                "content_hash": digest.hexdigest()}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_split(dataset_dir, split: str):
    """(inputs, targets) int64 arrays of shape (num, length), plus reset lists."""
    path = Path(dataset_dir) / f"{split}.jsonl"
    inputs, targets, resets = [], [], []
    with open(path) as f:
        for line in f:
            rec = json.loads(line)
            inputs.append(rec["inputs"])
            targets.append(rec["targets"])
            resets.append(rec["resets"])
    return np.asarray(inputs, dtype=np.int64), np.asarray(targets, dtype=np.int64), resets


def spans_from_inputs(inputs: np.ndarray, reset_token: int) -> np.ndarray:
    """Required memory span per position: distance to the last reset at or
    before it, or position + 1 when none precedes."""
    num, l = inputs.shape
    span = np.empty((num, l), dtype=np.int64)
    for s in range(num):
        last = None
        for n in range(l):
            if inputs[s, n] == reset_token:
                last = n
            span[s, n] = n - last if last is not None else n + 1
    return span


def accuracy_by_span(predictions: np.ndarray, targets: np.ndarray,
                     spans: np.ndarray, bucket_width: int = 25):
    """Per-span-bucket accuracy rows: (span_lo, span_hi, count, accuracy)."""
    if predictions.shape != targets.shape or predictions.shape != spans.shape:
        raise ValueError(f"misaligned shapes: predictions {predictions.shape}, "
                         f"targets {targets.shape}, spans {spans.shape}")
    correct = predictions == targets
    rows = []
    for lo in range(0, int(spans.max()) + 1, bucket_width):
        in_bucket = (spans >= lo) & (spans < lo + bucket_width)
        count = int(in_bucket.sum())
        if count == 0:
            continue
        rows.append({"span_lo": lo, "span_hi": lo + bucket_width - 1,
                     "count": count,
                     "accuracy": float(correct[in_bucket].mean())})
    return rows


def write_span_table(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["span_lo", "span_hi", "count", "accuracy"])
        w.writeheader()
        w.writerows(rows)
