"""The gated linear-recurrence operator in three equivalent computation modes.

All functions here are pure numpy forward evaluations used for
equivalence checking and benchmarking; the differentiable versions used
inside the model live in `diffmodes`.

Shapes follow (batch, length, heads, d_h). The fast paths require
d_h == 1 (per-head scalar state); the general outer-product state is
served by `recurrent_forward` alone, which loops over time with an
explicit d_h x d_h hidden state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scan

UNDERFLOW_FLOOR = 1e-280

# When enabled, forward entry points assert their inputs are finite.
debug_checks = False


class SurrogateUnderflowError(FloatingPointError):
    """Cumulative state-transition product fell below the float64 safety floor."""


@dataclass
class GateLoopInputs:
    """Per-step gates and values: q, k, a complex; v real; all (batch, length, heads, d_h)."""
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.complex128)
        self.k = np.asarray(self.k, dtype=np.complex128)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.complex128)
        shapes = {x.shape for x in (self.q, self.k, self.v, self.a)}
        if len(shapes) != 1 or self.q.ndim != 4:
            raise ValueError(f"q/k/v/a must share a (batch, length, heads, d_h) "
                             f"shape, got {[x.shape for x in (self.q, self.k, self.v, self.a)]}")

    @property
    def batch(self):
        return self.q.shape[0]

    @property
    def length(self):
        return self.q.shape[1]

    def _check_finite(self):
        if debug_checks:
            for name in ("q", "k", "v", "a"):
                arr = getattr(self, name)
                if not np.all(np.isfinite(arr.view(np.float64))):
                    raise FloatingPointError(f"non-finite values in input {name}")


def recurrent_forward(inp: GateLoopInputs) -> np.ndarray:
    """Left-to-right O(l) evaluation of h_n = h_{n-1} a_n + k_n^T v_n, y_n = q_n h_n.

    Handles any d_h; the hidden state is a d_h x d_h matrix per
    (batch, head), with a_n applied as a diagonal right factor.
    """
    inp._check_finite()
    b, l, heads, dh = inp.q.shape
    y = np.empty((b, l, heads, dh), dtype=np.complex128)
    if dh == 1:
        h = np.zeros((b, heads, 1), dtype=np.complex128)
        for n in range(l):
            h = h * inp.a[:, n] + inp.k[:, n] * inp.v[:, n]
            y[:, n] = inp.q[:, n] * h
    else:
        h = np.zeros((b, heads, dh, dh), dtype=np.complex128)
        for n in range(l):
            kv = inp.k[:, n, :, :, None] * inp.v[:, n, :, None, :]
            h = h * inp.a[:, n, :, None, :] + kv
            y[:, n] = (inp.q[:, n, :, :, None] * h).sum(axis=-2)
    return y


def scan_forward(inp: GateLoopInputs, chunk_size: int = 256,
                 workers: int = 1) -> np.ndarray:
    """Identical result via the work-efficient parallel prefix scan."""
    inp._check_finite()
    b, l, heads, dh = inp.q.shape
    if dh != 1:
        raise ValueError("scan fast path requires d_h == 1")
    # Lane layout: length first, lanes = (batch, heads).
    a = np.ascontiguousarray(inp.a[..., 0].transpose(1, 0, 2))
    kv = np.ascontiguousarray((inp.k[..., 0] * inp.v[..., 0]).transpose(1, 0, 2))
    lane = scan.parallel_scan(scan.ScanLane(a, kv), chunk_size=chunk_size,
                              workers=workers)
    y = inp.q[..., 0] * lane.b.transpose(1, 0, 2)
    return y[..., None]


def _surrogate_factors(inp: GateLoopInputs):
    b, l, heads, dh = inp.q.shape
    if dh != 1:
        raise ValueError("surrogate attention requires d_h == 1")
    pi = scan.prefix_cumprod(inp.a[..., 0].transpose(1, 0, 2)).transpose(1, 0, 2)
    min_mag = np.abs(pi).min()
    if min_mag < UNDERFLOW_FLOOR:
        raise SurrogateUnderflowError(
            f"surrogate-mode underflow: min |pi_n| = {min_mag:.3e} < {UNDERFLOW_FLOOR:.0e}")
    q_bar = inp.q[..., 0] * pi
    k_bar = inp.k[..., 0] / pi
    return q_bar, k_bar


def attention_forward(inp: GateLoopInputs, score_perturb=None) -> np.ndarray:
    """O(l^2) surrogate attention: Y = (Qbar Kbar^T ⊙ M) V.

    score_perturb, if given, is an (l, l) array added to the raw scores
    before masking; anything strictly above the diagonal is provably
    inert (the mask kills it).
    """
    inp._check_finite()
    l = inp.length
    q_bar, k_bar = _surrogate_factors(inp)
    scores = np.einsum("bnh,bmh->bhnm", q_bar, k_bar)
    if score_perturb is not None:
        scores = scores + np.asarray(score_perturb)
    mask = np.tril(np.ones((l, l)))
    y = np.einsum("bhnm,bmh->bnh", scores * mask, inp.v[..., 0])
    return y[..., None]


def softmax_attention_forward(inp: GateLoopInputs) -> np.ndarray:
    """Softmax generalization: rows of Re(Qbar Kbar^T) masked with -inf, then softmax.

    Returns a real array; each attention row sums to 1 and the upper
    triangle contributes exactly 0.
    """
    inp._check_finite()
    l = inp.length
    q_bar, k_bar = _surrogate_factors(inp)
    scores = np.einsum("bnh,bmh->bhnm", q_bar, k_bar).real
    scores = np.where(np.tril(np.ones((l, l), dtype=bool)), scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    p = e / e.sum(axis=-1, keepdims=True)
    y = np.einsum("bhnm,bmh->bnh", p, inp.v[..., 0])
    return y[..., None]
