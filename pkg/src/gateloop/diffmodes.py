"""Differentiable gated-recurrence modes built from `numerics` primitives.

These mirror the numpy forwards in `modes` but operate on Tensor /
CplxTensor inputs so the whole model is trainable end to end. The scan
mode applies the Brent-Kung tree schedule from `scan` to a list of
per-position complex tensors, so both work and graph size stay O(l)
with an O(log l) critical path.

Shapes are (batch, length, heads) with the per-head scalar state
(d_h = 1) implied; the general outer-product case is served by the
numpy reference path only.
"""

from __future__ import annotations

import numpy as np

from . import scan
from .modes import UNDERFLOW_FLOOR, SurrogateUnderflowError
from .numerics import (CplxTensor, Tensor, constant, cplx_muladd, matmul,
                       softmax, stack, unbind)


def _unbind_time(x: CplxTensor | Tensor):
    """Split (batch, length, heads) into a list of length (batch, heads) slices."""
    if isinstance(x, Tensor):
        return unbind(x.transpose((1, 0, 2)))
    res = unbind(x.re.transpose((1, 0, 2)))
    ims = unbind(x.im.transpose((1, 0, 2)))
    return [CplxTensor(r, i) for r, i in zip(res, ims)]


def _stack_time(items):
    """Inverse: list of (batch, heads) complex slices -> (batch, length, heads)."""
    return CplxTensor(stack([x.re for x in items], axis=1),
                      stack([x.im for x in items], axis=1))


def _input_terms(k: CplxTensor, v: Tensor):
    ks = _unbind_time(k)
    vs = _unbind_time(v)
    return [CplxTensor(kn.re * vn, kn.im * vn) for kn, vn in zip(ks, vs)]


def recurrent_forward(q: CplxTensor, k: CplxTensor, v: Tensor,
                      a: CplxTensor) -> CplxTensor:
    """Stepwise h_n = h_{n-1} a_n + k_n v_n, y_n = q_n h_n (complex output)."""
    qs = _unbind_time(q)
    a_list = _unbind_time(a)
    kvs = _input_terms(k, v)
    h = None
    ys = []
    for qn, an, kvn in zip(qs, a_list, kvs):
        h = kvn if h is None else cplx_muladd(h, an, kvn)
        ys.append(qn * h)
    return _stack_time(ys)


def scan_forward(q: CplxTensor, k: CplxTensor, v: Tensor,
                 a: CplxTensor) -> CplxTensor:
    """Same result via the work-efficient tree schedule."""
    l = q.shape[1]
    a_list = _unbind_time(a)
    b_list = _input_terms(k, v)
    for src, dst in scan.brent_kung_schedule(l):
        for s, d in zip(src.tolist(), dst.tolist()):
            new_a = a_list[s] * a_list[d]
            b_list[d] = cplx_muladd(a_list[d], b_list[s], b_list[d])
            a_list[d] = new_a
    return q * _stack_time(b_list)


def _prefix_cumprod_t(a: CplxTensor):
    """Differentiable running product along the length axis."""
    a_list = _unbind_time(a)
    for src, dst in scan.brent_kung_schedule(len(a_list)):
        for s, d in zip(src.tolist(), dst.tolist()):
            a_list[d] = a_list[s] * a_list[d]
    return _stack_time(a_list)


def _surrogate_factors(q: CplxTensor, k: CplxTensor, a: CplxTensor):
    pi = _prefix_cumprod_t(a)
    min_mag = np.abs(pi.numpy()).min()
    if min_mag < UNDERFLOW_FLOOR:
        raise SurrogateUnderflowError(
            f"surrogate-mode underflow: min |pi_n| = {min_mag:.3e} < {UNDERFLOW_FLOOR:.0e}")
    return q * pi, k * pi.reciprocal()


def _outer_scores(q_bar: CplxTensor, k_bar: CplxTensor):
    """Complex scores S[b,h,n,m] = q_bar[b,n,h] k_bar[b,m,h] via batched matmul."""
    b, l, heads = q_bar.shape
    qc = q_bar.transpose((0, 2, 1)).reshape(b, heads, l, 1)
    kc = k_bar.transpose((0, 2, 1)).reshape(b, heads, 1, l)
    re = matmul(qc.re, kc.re) - matmul(qc.im, kc.im)
    im = matmul(qc.re, kc.im) + matmul(qc.im, kc.re)
    return CplxTensor(re, im)


def _apply_values(weights_re: Tensor, weights_im, v: Tensor):
    """(b,h,l,l) score weights times real values (b,l,h) -> (b,l,h)."""
    b, l, heads = v.shape
    vc = v.transpose((0, 2, 1)).reshape(b, heads, l, 1)
    y_re = matmul(weights_re, vc).reshape(b, heads, l).transpose((0, 2, 1))
    if weights_im is None:
        return y_re
    y_im = matmul(weights_im, vc).reshape(b, heads, l).transpose((0, 2, 1))
    return CplxTensor(y_re, y_im)


def attention_forward(q: CplxTensor, k: CplxTensor, v: Tensor,
                      a: CplxTensor) -> CplxTensor:
    """O(l^2) surrogate attention; mathematically equals recurrent_forward."""
    l = q.shape[1]
    scores = _outer_scores(*_surrogate_factors(q, k, a))
    mask = constant(np.tril(np.ones((l, l))))
    return _apply_values(scores.re * mask, scores.im * mask, v)


def softmax_attention_forward(q: CplxTensor, k: CplxTensor, v: Tensor,
                              a: CplxTensor) -> Tensor:
    """Softmax over the real part of the masked scores; real output."""
    l = q.shape[1]
    scores = _outer_scores(*_surrogate_factors(q, k, a))
    neg_inf = np.where(np.tril(np.ones((l, l), dtype=bool)), 0.0, -np.inf)
    weights = softmax(scores.re + constant(neg_inf), axis=-1)
    return _apply_values(weights, None, v)
