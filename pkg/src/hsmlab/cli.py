"""Command-line entry point.

Subcommands: tokenize, train, eval, generate, bench, gradcheck, plotdata,
preset. Exit codes are a stable contract: 0 success, 1 usage or configuration
error, 2 runtime error. Set HSMLAB_THREADS to pin the BLAS thread count
before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    if "HSMLAB_THREADS" in os.environ:
        os.environ.setdefault(_var, os.environ["HSMLAB_THREADS"])

import numpy as np

from . import __version__, bench, checks, data as data_mod, generation, presets, tokenizer, training
from .model import (
    CheckpointError,
    ConfigError,
    ModelConfig,
    build_model,
    count_params,
    load_checkpoint,
)

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage problems, not argparse's 2
        raise UsageError(message)


def _load_model_config(args) -> ModelConfig:
    if getattr(args, "preset", None):
        cfg = presets.load_preset(args.preset)
    elif getattr(args, "config", None):
        cfg = ModelConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    else:
        raise UsageError("provide --preset or --config")
    return cfg


def _cmd_tokenize(args) -> int:
    corpus = data_mod.load_corpus(args.corpus, format=args.format)
    vocab = tokenizer.train_bpe(corpus.stories, args.vocab_size, specials=tuple(args.special))
    vocab.save(args.out)
    print(f"vocab size {vocab.size} ({len(vocab.merges)} merges) -> {args.out}")
    if vocab.size < args.vocab_size:
        print(f"note: corpus ran out of repeated pairs; requested {args.vocab_size}")
    return 0


def _cmd_train(args) -> int:
    vocab = tokenizer.Vocab.load(args.vocab)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tcfg = training.TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        weight_decay=args.weight_decay,
        seed=args.seed,
        grad_clip=None if args.grad_clip == 0 else args.grad_clip,
        micro_batch=args.micro_batch,
    )

    if args.resume:
        model, meta = load_checkpoint(args.resume)
        cfg = model.config
        start_epoch = meta["epoch"]
        optimizer = training.AdamW(
            model, lr=tcfg.learning_rate, betas=tcfg.betas, eps=tcfg.eps,
            weight_decay=tcfg.weight_decay,
        )
        if meta["optimizer_state"] is not None:
            optimizer.load_state_dict(meta["optimizer_state"])
        rng_state = meta["rng_state"]
    else:
        cfg = _load_model_config(args)
        if args.adapt_vocab and cfg.vocab != vocab.size:
            print(f"adapting config vocab {cfg.vocab} -> tokenizer size {vocab.size}")
            cfg = cfg.with_vocab(vocab.size)
        if args.dropout is not None:
            cfg = ModelConfig.from_dict({**cfg.to_dict(), "dropout": args.dropout})
        model = build_model(cfg, seed=args.seed, dtype=args.dtype)
        start_epoch = 0
        optimizer = None
        rng_state = None
    tcfg.dropout = cfg.dropout

    if cfg.vocab != vocab.size:
        raise ConfigError(
            f"model vocab {cfg.vocab} != tokenizer size {vocab.size} (use --adapt-vocab)"
        )

    corpus = data_mod.load_corpus(args.data, format=args.format)
    train_split, val_split = data_mod.filter_and_split(
        corpus, vocab, cfg.context, val_fraction=args.val_fraction, seed=args.seed
    )
    stats = data_mod.dataset_stats(corpus, vocab, cfg.context)
    (out_dir / "data_stats.json").write_text(json.dumps(stats, indent=2) + "\n", encoding="utf-8")
    run_meta = {
        "model_config": cfg.to_dict(),
        "train_config": {
            "batch_size": tcfg.batch_size,
            "learning_rate": tcfg.learning_rate,
            "dropout": tcfg.dropout,
            "epochs": tcfg.epochs,
            "weight_decay": tcfg.weight_decay,
            "betas": list(tcfg.betas),
            "eps": tcfg.eps,
            "seed": tcfg.seed,
            "grad_clip": tcfg.grad_clip,
            "micro_batch": tcfg.micro_batch,
        },
        "dtype": str(np.dtype(args.dtype)),
        "vocab_file": str(args.vocab),
        "data": str(args.data),
        "data_format": args.format,
        "val_fraction": args.val_fraction,
        "resumed_from": str(args.resume) if args.resume else None,
        "params": count_params(model),
        "version": __version__,
    }
    (out_dir / "run.json").write_text(json.dumps(run_meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"training {count_params(model):,} parameters for {tcfg.epochs} epochs")
    training.train(
        model, train_split, val_split, tcfg,
        out_dir=out_dir, start_epoch=start_epoch, optimizer=optimizer,
        rng_state=rng_state, log=print,
    )
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    vocab = tokenizer.Vocab.load(args.vocab)
    if model.config.vocab != vocab.size:
        raise ConfigError(f"checkpoint vocab {model.config.vocab} != tokenizer size {vocab.size}")
    corpus = data_mod.load_corpus(args.data, format=args.format)
    _, val_split = data_mod.filter_and_split(
        corpus, vocab, model.config.context, val_fraction=args.val_fraction, seed=args.seed
    )
    loss, acc = training.validate(model, val_split, micro_batch=args.micro_batch)
    assert 0.0 <= acc <= 1.0
    print(json.dumps({"val_loss": loss, "val_accuracy": acc}, sort_keys=True))
    return 0


def _cmd_generate(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    vocab = tokenizer.Vocab.load(args.vocab)
    if args.prompt is not None:
        prompts = [args.prompt]
    elif args.prompt_file:
        with open(args.prompt_file, encoding="utf-8") as f:
            prompts = [line.rstrip("\n") for line in f if line.strip()]
    else:
        raise UsageError("provide --prompt or --prompt-file")
    outputs = []
    for i, prompt in enumerate(prompts):
        text = generation.generate(
            model, vocab, prompt, max_new=args.max_new,
            temperature=args.temperature, seed=args.seed + i,
        )
        outputs.append(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            for text in outputs:  # one completion per line; escape line breaks
                f.write(text.replace("\\", "\\\\").replace("\r", "\\r").replace("\n", "\\n") + "\n")
        print(f"wrote {len(outputs)} completions to {args.out}")
    else:
        for text in outputs:
            print(text)
    return 0


def _cmd_bench(args) -> int:
    lengths = [int(x) for x in args.lengths.split(",")]
    if any(t < 2 for t in lengths):
        raise UsageError("context lengths must be >= 2")
    if max(lengths) > args.max_length:
        raise UsageError(f"lengths above --max-length {args.max_length} refused")
    if args.config:
        cfg = ModelConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
        kinds = list(dict.fromkeys(spec.kind for spec in cfg.layers))
        if not kinds:
            raise UsageError(f"{args.config}: config has no layers to bench")
    elif args.mixers == "all":
        kinds = list(bench.mixers.KINDS)
    else:
        kinds = [k.strip() for k in args.mixers.split(",")]
    rows = bench.run_bench(
        kinds, lengths, repeats=args.repeats, dim=args.dim, heads=args.heads,
        include_backward=args.backward, seed=args.seed,
    )
    lines = [",".join(bench.BENCH_CSV_FIELDS)]
    for r in rows:
        lines.append(",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in bench.BENCH_CSV_FIELDS))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(rows)} timing rows to {args.out}")
    else:
        print(text, end="")
    slopes = bench.fit_slopes(rows)
    for (mixer, component), slope in sorted(slopes.items()):
        print(f"slope {mixer}/{component}: {slope:.3f}")
    return 0


def _cmd_gradcheck(args) -> int:
    rows = checks.gradcheck_report(args.mixer, seed=args.seed)
    failed = 0
    for r in rows:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"[{status}] {r['check']}: max rel err {r['max_rel_err']:.3e} (tol {r['tolerance']:.0e})")
        failed += 0 if r["passed"] else 1
    print(f"{len(rows) - failed}/{len(rows)} gradient checks passed")
    return 0 if failed == 0 else 2


def _cmd_plotdata(args) -> int:
    fields = ("run",) + training.METRICS_FIELDS
    lines = [",".join(fields)]
    for path in args.metrics:
        p = Path(path)
        label = p.parent.name if p.stem == "metrics" and p.parent.name else p.stem
        for row in training.read_metrics_csv(p):
            lines.append(label + "," + ",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in training.METRICS_FIELDS))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {len(lines) - 1} rows to {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_preset(args) -> int:
    if args.name == "list":
        for name in presets.PRESET_NAMES:
            print(name)
        return 0
    text = presets.load_preset(args.name).to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.name} to {args.out}")
    else:
        print(text, end="")
    return 0


def build_parser() -> _Parser:
    ap = _Parser(prog="hsmlab", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tokenize", help="train a byte-level BPE vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("plain", "jsonl"), default="plain")
    p.add_argument("--vocab-size", type=int, default=5000, dest="vocab_size")
    p.add_argument("--special", action="append", default=[],
                   help="declare a special token (repeatable); none by default")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_tokenize)

    p = sub.add_parser("train", help="train a model; writes metrics + checkpoints")
    p.add_argument("--preset", choices=presets.PRESET_NAMES)
    p.add_argument("--config", help="model config JSON path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("plain", "jsonl"), default="plain")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=256, dest="batch_size")
    p.add_argument("--micro-batch", type=int, default=32, dest="micro_batch")
    p.add_argument("--learning-rate", type=float, default=0.002, dest="learning_rate")
    p.add_argument("--weight-decay", type=float, default=0.01, dest="weight_decay")
    p.add_argument("--dropout", type=float, default=None,
                   help="override the config's dropout rate")
    p.add_argument("--grad-clip", type=float, default=1.0, dest="grad_clip", help="0 disables")
    p.add_argument("--val-fraction", type=float, default=0.10, dest="val_fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--adapt-vocab", action="store_true", dest="adapt_vocab",
                   help="shrink/grow config vocab to the tokenizer's actual size")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="loss/accuracy of a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("plain", "jsonl"), default="plain")
    p.add_argument("--val-fraction", type=float, default=0.10, dest="val_fraction")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--micro-batch", type=int, default=32, dest="micro_batch")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("generate", help="sample text from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--prompt")
    p.add_argument("--prompt-file", dest="prompt_file")
    p.add_argument("--max-new", type=int, default=100, dest="max_new")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("bench", help="mixer timing over sequence lengths + scaling exponents")
    p.add_argument("--config", help="bench the mixer kinds a model config JSON uses")
    p.add_argument("--mixers", default="all")
    p.add_argument("--lengths", default="32,64,128,256,512")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--backward", action="store_true", help="time forward+backward")
    p.add_argument("--max-length", type=int, default=4096, dest="max_length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("mixer", nargs="?", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("plotdata", help="merge metrics CSVs into one long-format CSV")
    p.add_argument("metrics", nargs="+")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_plotdata)

    p = sub.add_parser("preset", help="print a shipped preset config ('list' to enumerate)")
    p.add_argument("name")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_preset)

    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, data_mod.DataError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (CheckpointError, training.DivergenceError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
