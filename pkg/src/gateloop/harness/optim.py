"""AdamW with parameter groups, cosine schedule with linear warmup, clipping."""

from __future__ import annotations

import numpy as np


def lr_at_step(step: int, base_lr: float, warmup: int, total: int) -> float:
    """Linear warmup to base_lr, then cosine decay to 0; continuous at the
    boundary. `step` is 1-based."""
    if step <= warmup:
        return base_lr * step / warmup
    if total <= warmup:
        return base_lr
    progress = (step - warmup) / (total - warmup)
    return float(base_lr * 0.5 * (1.0 + np.cos(np.pi * min(progress, 1.0))))


def clip_global_norm(params: dict, max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm."""
    sq = 0.0
    for t in params.values():
        if t.grad is not None:
            sq += float((t.grad * t.grad).sum())
    norm = np.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


class AdamW:
    """Decoupled weight decay; per-group learning-rate factor and decay.

    groups: list of dicts {"names": [...], "lr_scale": float, "weight_decay": float}.
    Every parameter must appear in exactly one group. Names in `frozen`
    are never updated (fixed-transition ablation).
    """

    def __init__(self, params: dict, groups, beta1=0.9, beta2=0.98, eps=1e-8,
                 frozen=()):
        self.params = params
        self.groups = groups
        covered = [n for g in groups for n in g["names"]]
        if sorted(covered) != sorted(params):
            missing = set(params) - set(covered)
            extra = set(covered) - set(params)
            raise ValueError(f"bad group cover: missing={missing}, extra={extra}")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.frozen = set(frozen)
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for group in self.groups:
            glr = lr * group.get("lr_scale", 1.0)
            wd = group.get("weight_decay", 0.0)
            for name in group["names"]:
                if name in self.frozen:
                    continue
                p = self.params[name]
                g = p.grad
                if g is None:
                    continue
                self.m[name] = b1 * self.m[name] + (1 - b1) * g
                self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
                m_hat = self.m[name] / bias1
                v_hat = self.v[name] / bias2
                p.data -= glr * (m_hat / (np.sqrt(v_hat) + self.eps) + wd * p.data)
