"""Command-line entry point.

Subcommands: generate, train, train-text, eval, bench, check,
export-magnitudes. Exit codes: 0 success, 1 property/check failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import memhorizon
from ..model import (ModelConfig, export_transition_magnitudes, load_checkpoint)
from . import benchmarks, checks, training
from .config import TrainConfig, apply_overrides, parse_config_file


def _load_base(args) -> dict:
    return parse_config_file(args.config) if getattr(args, "config", None) else {}


def _add_config_flag(p):
    p.add_argument("--config", help="key=value config file; flags override it")


def _model_cfg_from(base: dict, args) -> ModelConfig:
    overrides = {k: getattr(args, k, None)
                 for k in ("n_layer", "d_model", "d_qk", "d_v", "nr_heads",
                           "d_channel_mixing", "vocab_in", "vocab_out")}
    # Max-headed layout: unless stated otherwise, one scalar-state head per
    # model channel, so nr_heads, d_qk and d_v all follow d_model.
    base = dict(base)
    d_model = overrides.get("d_model") or base.get("d_model")
    heads = overrides.get("nr_heads") or base.get("nr_heads") or d_model
    if heads is not None:
        base.setdefault("nr_heads", heads)
        base.setdefault("d_qk", heads)
        base.setdefault("d_v", heads)
    return apply_overrides(ModelConfig, base, overrides)


def _train_cfg_from(base: dict, args) -> TrainConfig:
    overrides = {k: getattr(args, k, None)
                 for k in ("epochs", "batch_size", "base_lr",
                           "state_transition_lr", "weight_decay",
                           "warmup_steps", "seed", "mode", "ablation")}
    return apply_overrides(TrainConfig, base, overrides)


def cmd_generate(args) -> int:
    base = _load_base(args)
    overrides = {k: getattr(args, k) for k in
                 ("number_min", "number_max", "sequence_length",
                  "resets_per_sample", "modulo", "num_samples", "seed")}
    cfg = apply_overrides(memhorizon.MemHorizonConfig, base, overrides)
    manifest = memhorizon.generate_dataset(cfg, args.out)
    print(json.dumps(manifest, indent=2))
    return 0


def cmd_train(args) -> int:
    base = _load_base(args)
    train_cfg = _train_cfg_from(base, args)
    manifest = json.loads((Path(args.dataset) / "manifest.json").read_text())
    data_cfg = memhorizon.MemHorizonConfig(**manifest["config"])
    base.setdefault("vocab_in", data_cfg.vocab_in)
    base.setdefault("vocab_out", data_cfg.vocab_out)
    if args.full_scale:
        base.setdefault("warmup_steps", 10000)
        train_cfg = apply_overrides(TrainConfig, {**train_cfg.snapshot(),
                                                  "epochs": 300,
                                                  "warmup_steps": 10000}, {})
    model_cfg = _model_cfg_from(base, args)
    report = training.train(train_cfg, model_cfg, args.dataset, args.out,
                            log_every=args.log_every)
    print(json.dumps({"final": report["final"], "best": report["best"]},
                     indent=2))
    return 0


def cmd_train_text(args) -> int:
    base = _load_base(args)
    train_cfg = _train_cfg_from(base, args)
    report = training.train_text(args.corpus, train_cfg, args.out,
                                 seq_len=args.seq_len, d_model=args.d_model,
                                 n_layer=args.n_layer, max_steps=args.max_steps,
                                 log_every=args.log_every)
    print(json.dumps({"perplexity": report["perplexity"],
                      "unigram_perplexity": report["unigram_perplexity"]},
                     indent=2))
    return 0


def cmd_eval(args) -> int:
    params, cfg, extra = load_checkpoint(args.checkpoint)
    inputs, targets, _ = memhorizon.load_split(args.dataset, args.split)
    metrics, preds = training.evaluate(params, cfg, inputs, targets,
                                       mode=args.mode)
    manifest = json.loads((Path(args.dataset) / "manifest.json").read_text())
    reset_token = memhorizon.MemHorizonConfig(**manifest["config"]).reset_token
    spans = memhorizon.spans_from_inputs(inputs, reset_token)
    rows = memhorizon.accuracy_by_span(preds, targets, spans,
                                       bucket_width=args.bucket_width)
    out = {"metrics": metrics, "accuracy_by_span": rows}
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out["metrics"], indent=2))
    return 0


def cmd_bench(args) -> int:
    lengths = sorted(int(x) for x in args.lengths.split(","))
    mode_names = args.modes.split(",")
    rows, slopes = benchmarks.bench(mode_names, lengths,
                                    repetitions=args.repetitions,
                                    workers=args.workers)
    if args.out:
        benchmarks.write_bench_csv(rows, slopes, args.out)
    print(json.dumps({"rows": rows, "slopes": slopes}, indent=2))
    return 0


def cmd_check(args) -> int:
    return checks.run_and_print(args.suite, seed=args.seed)


def cmd_export_magnitudes(args) -> int:
    params, cfg, _ = load_checkpoint(args.checkpoint)
    if args.dataset:
        inputs, _, _ = memhorizon.load_split(args.dataset, args.split)
        tokens = inputs[:1]
    else:
        rng = np.random.default_rng(args.seed)
        tokens = rng.integers(0, cfg.vocab_in, size=(1, args.length))
    export_transition_magnitudes(tokens, params, cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gateloop",
                                description="gated linear recurrence toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a Memory Horizon dataset")
    _add_config_flag(g)
    g.add_argument("--out", required=True)
    for name, typ in (("number-min", int), ("number-max", int),
                      ("sequence-length", int), ("resets-per-sample", int),
                      ("modulo", int), ("num-samples", int), ("seed", int)):
        g.add_argument(f"--{name}", type=typ, dest=name.replace("-", "_"))
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train on a Memory Horizon dataset")
    _add_config_flag(t)
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--full-scale", action="store_true",
                   help="paper-scale schedule (300 epochs, 10000 warmup steps)")
    t.add_argument("--log-every", type=int, default=0)
    for name, typ in (("epochs", int), ("batch-size", int), ("base-lr", float),
                      ("state-transition-lr", float), ("weight-decay", float),
                      ("warmup-steps", int), ("seed", int),
                      ("n-layer", int), ("d-model", int), ("nr-heads", int),
                      ("d-channel-mixing", int)):
        t.add_argument(f"--{name}", type=typ, dest=name.replace("-", "_"))
    t.add_argument("--mode", choices=["recurrent", "scan", "attention"])
    t.add_argument("--ablation", choices=["data-controlled", "fixed"])
    t.set_defaults(fn=cmd_train)

    tt = sub.add_parser("train-text", help="byte-level language-model sanity run")
    _add_config_flag(tt)
    tt.add_argument("--corpus", required=True)
    tt.add_argument("--out", required=True)
    tt.add_argument("--seq-len", type=int, default=128)
    tt.add_argument("--d-model", type=int, default=64)
    tt.add_argument("--n-layer", type=int, default=2)
    tt.add_argument("--max-steps", type=int)
    tt.add_argument("--log-every", type=int, default=0)
    for name, typ in (("epochs", int), ("batch-size", int), ("base-lr", float),
                      ("seed", int)):
        tt.add_argument(f"--{name}", type=typ, dest=name.replace("-", "_"))
    tt.add_argument("--mode", choices=["recurrent", "scan", "attention"])
    tt.set_defaults(fn=cmd_train_text)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--mode", default="scan",
                   choices=["recurrent", "scan", "attention"])
    e.add_argument("--bucket-width", type=int, default=25)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="runtime benchmark across modes")
    b.add_argument("--modes", default="recurrent,scan,attention")
    b.add_argument("--lengths", default="256,512,1024,2048,4096")
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)

    c = sub.add_parser("check", help="run property suites")
    c.add_argument("--suite", default="all",
                   choices=sorted(checks.SUITES) + ["all"])
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_check)

    m = sub.add_parser("export-magnitudes",
                       help="dump per-layer state-transition magnitudes to CSV")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--dataset")
    m.add_argument("--split", default="test")
    m.add_argument("--length", type=int, default=256)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(fn=cmd_export_magnitudes)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
