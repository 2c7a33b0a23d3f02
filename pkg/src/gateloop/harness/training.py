"""Training and evaluation loops for the Memory Horizon and text tasks."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .. import memhorizon
from ..model import (ModelConfig, frozen_param_names, init_params, model_forward,
                     param_count, save_checkpoint, transition_param_names,
                     zero_grads)
from ..numerics import backward, softmax_cross_entropy
from .config import TrainConfig
from .optim import AdamW, clip_global_norm, lr_at_step


class DivergenceError(RuntimeError):
    """Loss went non-finite; carries state-transition magnitude statistics."""

    def __init__(self, step, stats):
        super().__init__(f"training diverged at step {step}; "
                         f"|a| stats per layer: {stats}")
        self.step = step
        self.stats = stats


def make_optimizer(params: dict, model_cfg: ModelConfig, train_cfg: TrainConfig):
    """Two parameter groups: state-transition projections get a reduced
    learning rate and exactly zero weight decay."""
    transition = transition_param_names(model_cfg)
    base = [n for n in params if n not in transition]
    groups = [
        {"names": base, "lr_scale": 1.0, "weight_decay": train_cfg.weight_decay},
        {"names": transition,
         "lr_scale": train_cfg.resolved_transition_lr() / train_cfg.base_lr,
         "weight_decay": 0.0},
    ]
    frozen = frozen_param_names(model_cfg, train_cfg.ablation == "fixed")
    return AdamW(params, groups, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
                 frozen=frozen)


def _transition_stats(tokens, params, cfg, mode):
    collected = []
    model_forward(tokens, params, cfg, mode=mode, collect_transitions=collected)
    return [{"layer": i, "mean": float(m.mean()), "min": float(m.min()),
             "max": float(m.max())} for i, m in enumerate(collected)]


def evaluate(params: dict, cfg: ModelConfig, inputs, targets,
             mode: str = "scan", batch_size: int = 32):
    """Token accuracy, mean loss and argmax predictions over a split."""
    num = inputs.shape[0]
    preds = np.empty_like(targets)
    losses, weights = [], []
    for lo in range(0, num, batch_size):
        batch_in = inputs[lo:lo + batch_size]
        batch_tgt = targets[lo:lo + batch_size]
        logits = model_forward(batch_in, params, cfg, mode=mode)
        preds[lo:lo + batch_size] = logits.data.argmax(axis=-1)
        losses.append(float(softmax_cross_entropy(logits, batch_tgt).data))
        weights.append(batch_tgt.size)
    loss = float(np.average(losses, weights=weights))
    accuracy = float((preds == targets).mean())
    return {"accuracy": accuracy, "loss": loss}, preds


def train(train_cfg: TrainConfig, model_cfg: ModelConfig, dataset_dir,
          out_dir, log_every: int = 0) -> dict:
    """Train on a generated Memory Horizon dataset; returns the run report.

    Writes steps.csv, epochs.csv, accuracy_by_span.csv, report.json and
    best.npz (checkpoint with the best test accuracy) under out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()

    train_in, train_tgt, _ = memhorizon.load_split(dataset_dir, "train")
    test_in, test_tgt, _ = memhorizon.load_split(dataset_dir, "test")
    manifest = json.loads((Path(dataset_dir) / "manifest.json").read_text())
    reset_token = memhorizon.MemHorizonConfig(**manifest["config"]).reset_token

    rng = np.random.default_rng(train_cfg.seed)
    fixed = train_cfg.ablation == "fixed"
    params = init_params(model_cfg, seed=train_cfg.seed, fixed_transition=fixed)
    opt = make_optimizer(params, model_cfg, train_cfg)

    num_train = train_in.shape[0]
    steps_per_epoch = int(np.ceil(num_train / train_cfg.batch_size))
    total_steps = train_cfg.epochs * steps_per_epoch
    warmup = train_cfg.resolved_warmup(total_steps)

    step_rows, epoch_rows = [], []
    best = {"accuracy": -1.0}
    step = 0
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(num_train)
        for lo in range(0, num_train, train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            step += 1
            lr = lr_at_step(step, train_cfg.base_lr, warmup, total_steps)
            logits = model_forward(train_in[idx], params, model_cfg,
                                   mode=train_cfg.mode)
            loss = softmax_cross_entropy(logits, train_tgt[idx])
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                stats = _transition_stats(train_in[idx], params, model_cfg,
                                          train_cfg.mode)
                raise DivergenceError(step, stats)
            zero_grads(params)
            backward(loss)
            clip_global_norm(params, train_cfg.grad_clip)
            opt.step(lr)
            step_rows.append((step, repr(lr), repr(loss_val)))
            if log_every and step % log_every == 0:
                print(f"step {step}/{total_steps} lr {lr:.2e} loss {loss_val:.4f}",
                      flush=True)
        metrics, preds = evaluate(params, model_cfg, test_in, test_tgt,
                                  mode=train_cfg.mode,
                                  batch_size=train_cfg.batch_size)
        epoch_rows.append((epoch, repr(metrics["accuracy"]), repr(metrics["loss"])))
        if metrics["accuracy"] > best["accuracy"]:
            best = dict(metrics)
            best["epoch"] = epoch
            save_checkpoint(out_dir / "best.npz", params, model_cfg,
                            extra={"train_config": train_cfg.snapshot(),
                                   "test_accuracy": metrics["accuracy"]})

    final_metrics, preds = evaluate(params, model_cfg, test_in, test_tgt,
                                    mode=train_cfg.mode,
                                    batch_size=train_cfg.batch_size)
    spans = memhorizon.spans_from_inputs(test_in, reset_token)
    span_rows = memhorizon.accuracy_by_span(preds, test_tgt, spans)
    memhorizon.write_span_table(span_rows, out_dir / "accuracy_by_span.csv")

    _write_csv(out_dir / "steps.csv", ("step", "lr", "loss"), step_rows)
    _write_csv(out_dir / "epochs.csv", ("epoch", "test_accuracy", "test_loss"),
               epoch_rows)
    report = {
        "train_config": train_cfg.snapshot(),
        "model_config": model_cfg.__dict__,
        "param_count": param_count(model_cfg),
        "total_steps": total_steps,
        "warmup_steps": warmup,
        "final": final_metrics,
        "best": best,
        "accuracy_by_span": span_rows,
        "wall_clock_seconds": time.monotonic() - t0,
        "content_hash": _hash_files(out_dir / "steps.csv", out_dir / "epochs.csv"),
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _hash_files(*paths) -> str:
    digest = hashlib.sha256()
    for p in paths:
        digest.update(Path(p).read_bytes())
    return digest.hexdigest()


# -- byte-level text sanity task ----------------------------------------------

def byte_unigram_perplexity(corpus: bytes) -> float:
    counts = np.bincount(np.frombuffer(corpus, dtype=np.uint8), minlength=256)
    probs = counts / counts.sum()
    nz = probs[counts > 0]
    entropy = -(nz * np.log(nz)).sum()
    return float(np.exp(entropy))


def train_text(corpus_path, train_cfg: TrainConfig, out_dir,
               seq_len: int = 128, d_model: int = 64, n_layer: int = 2,
               d_channel_mixing: int = 128, max_steps: int | None = None,
               log_every: int = 0) -> dict:
    """Autoregressive next-byte training on a plain-text corpus."""
    corpus = Path(corpus_path).read_bytes()
    if not corpus:
        raise ValueError(f"empty corpus: {corpus_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()

    data = np.frombuffer(corpus, dtype=np.uint8).astype(np.int64)
    n_seq = (len(data) - 1) // seq_len
    if n_seq < 1:
        raise ValueError("corpus shorter than one sequence")
    inputs = data[:n_seq * seq_len].reshape(n_seq, seq_len)
    targets = data[1:n_seq * seq_len + 1].reshape(n_seq, seq_len)

    model_cfg = ModelConfig(n_layer=n_layer, d_model=d_model, d_qk=d_model,
                            d_v=d_model, nr_heads=d_model, d_h=1,
                            d_channel_mixing=d_channel_mixing,
                            vocab_in=256, vocab_out=256)
    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_cfg, seed=train_cfg.seed,
                         fixed_transition=train_cfg.ablation == "fixed")
    opt = make_optimizer(params, model_cfg, train_cfg)

    steps_per_epoch = int(np.ceil(n_seq / train_cfg.batch_size))
    total_steps = train_cfg.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    warmup = train_cfg.resolved_warmup(total_steps)

    step_rows = []
    step = 0
    done = False
    for epoch in range(train_cfg.epochs):
        if done:
            break
        order = rng.permutation(n_seq)
        for lo in range(0, n_seq, train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            step += 1
            lr = lr_at_step(step, train_cfg.base_lr, warmup, total_steps)
            logits = model_forward(inputs[idx], params, model_cfg,
                                   mode=train_cfg.mode)
            loss = softmax_cross_entropy(logits, targets[idx])
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise DivergenceError(step, _transition_stats(
                    inputs[idx], params, model_cfg, train_cfg.mode))
            zero_grads(params)
            backward(loss)
            clip_global_norm(params, train_cfg.grad_clip)
            opt.step(lr)
            step_rows.append((step, repr(lr), repr(loss_val)))
            if log_every and step % log_every == 0:
                print(f"text step {step}/{total_steps} loss {loss_val:.4f}",
                      flush=True)
            if step >= total_steps:
                done = True
                break

    metrics, _ = evaluate(params, model_cfg, inputs, targets,
                          mode=train_cfg.mode, batch_size=train_cfg.batch_size)
    perplexity = float(np.exp(metrics["loss"]))
    save_checkpoint(out_dir / "text.npz", params, model_cfg,
                    extra={"train_config": train_cfg.snapshot()})
    _write_csv(out_dir / "steps.csv", ("step", "lr", "loss"), step_rows)
    report = {
        "train_config": train_cfg.snapshot(),
        "corpus_bytes": len(corpus),
        "unigram_perplexity": byte_unigram_perplexity(corpus),
        "perplexity": perplexity,
        "final_loss": metrics["loss"],
        "total_steps": step,
        "wall_clock_seconds": time.monotonic() - t0,
        "content_hash": _hash_files(out_dir / "steps.csv"),
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
