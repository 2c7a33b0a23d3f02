"""Training configuration and key=value config-file parsing."""

from __future__ import annotations

from dataclasses import dataclass, asdict, fields


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    base_lr: float = 0.0025
    state_transition_lr: float | None = None  # default: 0.8 * base_lr
    weight_decay: float = 0.05
    warmup_steps: int | None = None  # default: half of the total step budget
    beta1: float = 0.9
    beta2: float = 0.98
    schedule: str = "cosine"
    seed: int = 0
    mode: str = "scan"  # recurrent | scan | attention
    ablation: str = "data-controlled"  # data-controlled | fixed
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.mode not in ("recurrent", "scan", "attention"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.ablation not in ("data-controlled", "fixed"):
            raise ValueError(f"unknown ablation flag {self.ablation!r}")
        if self.schedule != "cosine":
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def resolved_transition_lr(self) -> float:
        if self.state_transition_lr is not None:
            return self.state_transition_lr
        return 0.8 * self.base_lr

    def resolved_warmup(self, total_steps: int) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return max(1, total_steps // 2)

    def snapshot(self) -> dict:
        return asdict(self)


def parse_config_file(path) -> dict:
    """key = value lines; '#' starts a comment; values parsed as python literals
    when possible, else kept as strings."""
    import ast

    out = {}
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {raw.rstrip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                out[key] = ast.literal_eval(value)
            except (ValueError, SyntaxError):
                out[key] = value
    return out


def apply_overrides(cfg_cls, base: dict, overrides: dict):
    """Build a dataclass from file values plus non-None flag overrides."""
    valid = {f.name for f in fields(cfg_cls)}
    merged = {k: v for k, v in base.items() if k in valid}
    merged.update({k: v for k, v in overrides.items()
                   if k in valid and v is not None})
    return cfg_cls(**merged)
