"""Toy-scale language model around the gated linear recurrence.

Stack: learned token embedding, L layers of (pre-norm time-mixing block
with residual, pre-norm channel-mixing FFN with residual), final norm
and a linear language head. Projection weights are real-valued; the
time-mixing block takes the real part of the complex recurrence output
once, after head concatenation, before the output projection.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, asdict, field

import numpy as np

from . import diffmodes
from .numerics import CplxTensor, Tensor, layer_norm, parameter

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    n_layer: int = 4
    d_model: int = 64
    d_qk: int = 64
    d_v: int = 64
    nr_heads: int = 64
    d_h: int = 1
    d_channel_mixing: int = 128
    vocab_in: int = 6
    vocab_out: int = 50
    magnitude_activation: str = "sigmoid"
    phase_activation: str = "identity"

    def __post_init__(self):
        if self.d_h != 1:
            raise ValueError("the model uses the max-headed layout (d_h == 1)")
        if self.d_qk != self.nr_heads * self.d_h or self.d_v != self.nr_heads * self.d_h:
            raise ValueError("d_qk and d_v must equal nr_heads * d_h")
        if self.magnitude_activation not in ("sigmoid", "stable-exp"):
            raise ValueError(f"unknown magnitude activation {self.magnitude_activation!r}")
        if self.phase_activation not in ("identity", "exp"):
            raise ValueError(f"unknown phase activation {self.phase_activation!r}")


# Initial sigmoid bias so |a| starts near 0.97 (stable, slow-forgetting regime).
TRANSITION_MAG_BIAS = 3.5


def init_params(cfg: ModelConfig, seed: int = 0,
                fixed_transition: bool = False) -> dict[str, Tensor]:
    """Fresh parameter dict. With fixed_transition, the state-transition
    projections' input weights start at zero (bias-only) and are meant to
    stay frozen, making a_n constant over time."""
    rng = np.random.default_rng(seed)

    def linear(fan_in, fan_out, scale=1.0):
        bound = scale / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    p = {"embed": rng.normal(0.0, 0.02, size=(cfg.vocab_in, cfg.d_model))}
    for i in range(cfg.n_layer):
        pre = f"layers.{i}."
        p[pre + "ln1_gain"] = np.ones(cfg.d_model)
        p[pre + "ln1_bias"] = np.zeros(cfg.d_model)
        p[pre + "wq"] = linear(cfg.d_model, cfg.d_qk)
        p[pre + "wk"] = linear(cfg.d_model, cfg.d_qk)
        p[pre + "wv"] = linear(cfg.d_model, cfg.d_v)
        if fixed_transition:
            p[pre + "wg"] = np.zeros((cfg.d_model, cfg.d_qk))
            p[pre + "wt"] = np.zeros((cfg.d_model, cfg.d_qk))
        else:
            # Small scale keeps initial |a| near the bias point but data-dependent.
            p[pre + "wg"] = rng.normal(0.0, 0.02, size=(cfg.d_model, cfg.d_qk))
            p[pre + "wt"] = rng.normal(0.0, 0.02, size=(cfg.d_model, cfg.d_qk))
        p[pre + "bg"] = np.full(cfg.d_qk, TRANSITION_MAG_BIAS)
        p[pre + "bt"] = np.zeros(cfg.d_qk)
        p[pre + "wo"] = linear(cfg.d_v, cfg.d_model)
        p[pre + "ln2_gain"] = np.ones(cfg.d_model)
        p[pre + "ln2_bias"] = np.zeros(cfg.d_model)
        p[pre + "w1"] = linear(cfg.d_model, cfg.d_channel_mixing)
        p[pre + "b1"] = np.zeros(cfg.d_channel_mixing)
        p[pre + "w2"] = linear(cfg.d_channel_mixing, cfg.d_model)
        p[pre + "b2"] = np.zeros(cfg.d_model)
    p["ln_f_gain"] = np.ones(cfg.d_model)
    p["ln_f_bias"] = np.zeros(cfg.d_model)
    p["head_w"] = linear(cfg.d_model, cfg.vocab_out)
    p["head_b"] = np.zeros(cfg.vocab_out)
    return {name: parameter(arr) for name, arr in p.items()}


def transition_param_names(cfg: ModelConfig):
    """Parameters that control the state transition (separate optimizer group)."""
    names = []
    for i in range(cfg.n_layer):
        names += [f"layers.{i}.{s}" for s in ("wg", "bg", "wt", "bt")]
    return names


def frozen_param_names(cfg: ModelConfig, fixed_transition: bool):
    """Input weights held at zero under the fixed-transition ablation."""
    if not fixed_transition:
        return []
    return [f"layers.{i}.{s}" for i in range(cfg.n_layer) for s in ("wg", "wt")]


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count from the layer shapes."""
    per_layer = (4 * cfg.d_model  # two layer norms, gain + bias each
                 + cfg.d_model * (2 * cfg.d_qk + cfg.d_v)        # q, k, v
                 + 2 * (cfg.d_model * cfg.d_qk + cfg.d_qk)       # gamma, theta
                 + cfg.d_v * cfg.d_model                         # output projection
                 + cfg.d_model * cfg.d_channel_mixing + cfg.d_channel_mixing
                 + cfg.d_channel_mixing * cfg.d_model + cfg.d_model)
    return (cfg.vocab_in * cfg.d_model
            + cfg.n_layer * per_layer
            + 2 * cfg.d_model                                    # final norm
            + cfg.d_model * cfg.vocab_out + cfg.vocab_out)       # head


def project_qkv(x: Tensor, params: dict, layer: int, cfg: ModelConfig):
    """Linear projections, reshaped to (batch, length, heads); q and k are
    lifted to complex with zero imaginary part."""
    b, l, _ = x.shape
    pre = f"layers.{layer}."
    heads = cfg.nr_heads
    q = (x @ params[pre + "wq"]).reshape(b, l, heads)
    k = (x @ params[pre + "wk"]).reshape(b, l, heads)
    v = (x @ params[pre + "wv"]).reshape(b, l, heads)
    return CplxTensor.from_real(q), CplxTensor.from_real(k), v


def state_transition(x: Tensor, params: dict, layer: int,
                     cfg: ModelConfig) -> CplxTensor:
    """a_n = f(gamma_n) exp(i g(theta_n)) per head; |a| in (0, 1) strictly."""
    b, l, _ = x.shape
    pre = f"layers.{layer}."
    gamma = (x @ params[pre + "wg"] + params[pre + "bg"]).reshape(b, l, cfg.nr_heads)
    theta = (x @ params[pre + "wt"] + params[pre + "bt"]).reshape(b, l, cfg.nr_heads)
    if cfg.magnitude_activation == "sigmoid":
        mag = gamma.sigmoid()
    else:  # stable-exp
        mag = (-gamma.exp()).exp()
    if cfg.phase_activation == "exp":
        theta = theta.exp()
    return CplxTensor(mag * theta.cos(), mag * theta.sin())


_MODE_FNS = {
    "recurrent": diffmodes.recurrent_forward,
    "scan": diffmodes.scan_forward,
    "attention": diffmodes.attention_forward,
}


def time_mixing(x: Tensor, params: dict, layer: int, cfg: ModelConfig,
                mode: str = "scan", collect_transitions=None) -> Tensor:
    """Gated recurrence over projected q/k/v/a; heads concatenated, real
    part taken, then the output projection. Residual is added by the caller."""
    if mode not in _MODE_FNS:
        raise ValueError(f"unknown mode {mode!r}")
    b, l, _ = x.shape
    q, k, v = project_qkv(x, params, layer, cfg)
    a = state_transition(x, params, layer, cfg)
    if collect_transitions is not None:
        collect_transitions.append(np.abs(a.numpy()))
    y = _MODE_FNS[mode](q, k, v, a)
    y_real = y.re.reshape(b, l, cfg.d_v)
    return y_real @ params[f"layers.{layer}.wo"]


def channel_mixing(x: Tensor, params: dict, layer: int) -> Tensor:
    """Position-wise two-layer FFN with a GELU in between."""
    pre = f"layers.{layer}."
    h = (x @ params[pre + "w1"] + params[pre + "b1"]).gelu()
    return h @ params[pre + "w2"] + params[pre + "b2"]


def model_forward(tokens, params: dict, cfg: ModelConfig, mode: str = "scan",
                  collect_transitions=None) -> Tensor:
    """Logits of shape (batch, length, vocab_out)."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_in:
        raise IndexError(f"token id out of range for input vocab {cfg.vocab_in}")
    x = params["embed"].gather(tokens)
    for i in range(cfg.n_layer):
        pre = f"layers.{i}."
        normed = layer_norm(x, params[pre + "ln1_gain"], params[pre + "ln1_bias"])
        x = x + time_mixing(normed, params, i, cfg, mode, collect_transitions)
        normed = layer_norm(x, params[pre + "ln2_gain"], params[pre + "ln2_bias"])
        x = x + channel_mixing(normed, params, i)
    x = layer_norm(x, params["ln_f_gain"], params["ln_f_bias"])
    return x @ params["head_w"] + params["head_b"]


def zero_grads(params: dict):
    for t in params.values():
        t.zero_grad()


# -- checkpointing -----------------------------------------------------------

def save_checkpoint(path, params: dict, cfg: ModelConfig, extra: dict | None = None):
    """Single-file container: float64 payloads plus the config; round-trips bit-exactly."""
    arrays = {f"param/{name}": t.data for name, t in params.items()}
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(cfg),
            "extra": extra or {}}
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta_json"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        params = {key[len("param/"):]: parameter(z[key])
                  for key in z.files if key.startswith("param/")}
    cfg = ModelConfig(**meta["config"])
    return params, cfg, meta["extra"]


# -- transition magnitude export ---------------------------------------------

def export_transition_magnitudes(tokens, params: dict, cfg: ModelConfig,
                                 path, mode: str = "scan"):
    """Dump |a_n| per (layer, head, channel, position) for the first sequence,
    plus per-(layer, position) and per-layer averages, as CSV."""
    collected = []
    model_forward(tokens, params, cfg, mode=mode, collect_transitions=collected)
    mags = np.stack([m[0] for m in collected])  # (n_layer, length, heads)
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["layer", "head", "channel", "position", "magnitude"])
    n_layer, length, heads = mags.shape
    for li in range(n_layer):
        for hi in range(heads):
            for n in range(length):
                w.writerow([li, hi, 0, n, repr(float(mags[li, n, hi]))])
    with open(path, "w") as f:
        f.write(out.getvalue())

    avg_path = str(path).rsplit(".", 1)[0] + "_averages.csv"
    with open(avg_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scope", "layer", "position", "mean_magnitude"])
        for li in range(n_layer):
            for n in range(length):
                w.writerow(["layer_position", li, n,
                            repr(float(mags[li, n].mean()))])
        for li in range(n_layer):
            w.writerow(["layer", li, "", repr(float(mags[li].mean()))])
    return mags
