"""Direct-summation ground-truth evaluators for the gated recurrence.

These deliberately avoid scans, prefix products and clever factoring:
every output is an explicit sum over preceding steps with the
transition product recomputed from scratch, so they stay independent of
the fast paths they validate.
"""

from __future__ import annotations

import numpy as np

from .modes import GateLoopInputs


def unfolded_reference(inp: GateLoopInputs) -> np.ndarray:
    """y_n = q_n sum_{m<=n} k_m^T v_m prod_{j=m+1}^{n} a_j, by explicit loops.

    O(l^3) per lane (the inner product is recomputed per (n, m) pair);
    intended for short lengths only. d_h == 1.
    """
    b, l, heads, dh = inp.q.shape
    if dh != 1:
        raise ValueError("unfolded_reference handles d_h == 1; "
                         "see unfolded_reference_general")
    q = inp.q[..., 0]
    k = inp.k[..., 0]
    v = inp.v[..., 0]
    a = inp.a[..., 0]
    y = np.zeros((b, l, heads), dtype=np.complex128)
    for n in range(l):
        acc = np.zeros((b, heads), dtype=np.complex128)
        for m in range(n + 1):
            term = k[:, m] * v[:, m]
            for j in range(m + 1, n + 1):
                term = term * a[:, j]
            acc = acc + term
        y[:, n] = q[:, n] * acc
    return y[..., None]


def unfolded_reference_general(inp: GateLoopInputs) -> np.ndarray:
    """Same unfolded sum with the d_h x d_h outer-product hidden state."""
    b, l, heads, dh = inp.q.shape
    y = np.zeros((b, l, heads, dh), dtype=np.complex128)
    for bi in range(b):
        for hi in range(heads):
            for n in range(l):
                acc = np.zeros((dh, dh), dtype=np.complex128)
                for m in range(n + 1):
                    term = np.outer(inp.k[bi, m, hi], inp.v[bi, m, hi])
                    for j in range(m + 1, n + 1):
                        term = term * inp.a[bi, j, hi][None, :]
                    acc = acc + term
                y[bi, n, hi] = inp.q[bi, n, hi] @ acc
    return y


def retnet_oracle(q, k, v, a) -> np.ndarray:
    """Fixed-transition degeneration: y_n = q_n sum_m k_m^T v_m a^(n-m).

    q, k: complex (batch, length, heads); v: real likewise; a: one
    complex scalar per (batch, heads) (or broadcastable), constant in n.
    """
    q = np.asarray(q, dtype=np.complex128)
    k = np.asarray(k, dtype=np.complex128)
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(a, dtype=np.complex128)
    b, l, heads = q.shape
    a = np.broadcast_to(a, (b, heads))
    y = np.zeros((b, l, heads), dtype=np.complex128)
    for n in range(l):
        acc = np.zeros((b, heads), dtype=np.complex128)
        for m in range(n + 1):
            acc = acc + k[:, m] * v[:, m] * a ** (n - m)
        y[:, n] = q[:, n] * acc
    return y


def s4_conv_oracle(v, a) -> np.ndarray:
    """SISO degeneration (q = k = 1): causal convolution of v with (1, a, a^2, ...).

    v: real (batch, length, heads); a: complex per (batch, heads).
    """
    v = np.asarray(v, dtype=np.float64)
    a = np.asarray(a, dtype=np.complex128)
    b, l, heads = v.shape
    a = np.broadcast_to(a, (b, heads))
    kernel = np.stack([a ** p for p in range(l)])  # (l, batch, heads)
    y = np.zeros((b, l, heads), dtype=np.complex128)
    for n in range(l):
        for m in range(n + 1):
            y[:, n] += v[:, m] * kernel[n - m]
    return y
