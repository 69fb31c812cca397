"""Command-line entry point.

One executable, subcommand per pipeline stage; experiment-level commands
are config-file-first (JSON, see ExperimentConfig) with flag overrides.
Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 training error.  Output files are written atomically, so a failing
invocation leaves no partial outputs behind.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .corpus import (
    LabelInventory,
    SyntheticProfile,
    atomic_write,
    generate_synthetic,
    load_corpus,
    load_predictions,
    save_corpus,
    split_train_tune,
)
from .encoder import EncoderConfig, EncoderParams, load_checkpoint, save_checkpoint
from .errors import DataError, FormatError, TrainingError
from .evaluate import evaluate_predictions
from .model import load_model, predict_documents, save_model
from .postprocess import resolve_nesting
from .segment import SegmenterConfig, segment_document
from .subtok import BpeVocab, fragmentation_ratio, train_bpe
from .train import (
    ExperimentConfig,
    MlmConfig,
    pretrain_mlm,
    run_protocol,
    sweep_tapt_checkpoints,
    train_supervised,
    write_log,
)

CONFIG_ENV = "DUALNER_CONFIG"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract wants 1
        raise UsageError(message)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(path, obj) -> None:
    with atomic_write(path) as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def _load_experiment(args) -> ExperimentConfig:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if not path:
        raise UsageError(f"--config is required (or set ${CONFIG_ENV})")
    return ExperimentConfig.load(path)


def _resolve_vocab(cfg: ExperimentConfig, docs, out_dir: Path) -> BpeVocab:
    if cfg.vocab:
        return BpeVocab.load(cfg.vocab)
    vocab = train_bpe(docs, cfg.vocab_size)
    vocab.save(out_dir / "vocab.json")
    _info(f"trained vocabulary of {len(vocab)} symbols -> {out_dir / 'vocab.json'}")
    return vocab


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_generate(args) -> None:
    inventory = LabelInventory.from_types([t for t in args.types.split(",") if t])
    profile = SyntheticProfile(
        sentences_per_doc=tuple(args.sentences_per_doc),
        words_per_sentence=tuple(args.words_per_sentence),
        oov_fraction=args.oov_fraction,
    )
    docs = generate_synthetic(args.seed, args.docs, inventory, profile)
    save_corpus(docs, args.out)
    _info(f"wrote {len(docs)} synthetic documents -> {args.out}")


def cmd_segment(args) -> None:
    cfg = SegmenterConfig(min_words=args.min_words, terminator=args.terminator)
    docs = load_corpus(args.input)
    fresh = sum(1 for d in docs if not d.sentences)
    docs = [segment_document(d, cfg) for d in docs]
    save_corpus(docs, args.output)
    _info(f"segmented {fresh} of {len(docs)} documents -> {args.output}")


def cmd_build_vocab(args) -> None:
    docs = load_corpus(args.corpus)
    vocab = train_bpe(docs, args.vocab_size, seed=args.seed)
    vocab.save(args.out)
    _info(f"trained vocabulary: {len(vocab)} symbols, {len(vocab.merges)} merges -> {args.out}")


def _apply_train_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.method:
        cfg.methods = [args.method]
    if args.seeds is not None:
        cfg.seeds = args.seeds
    if args.epochs is not None:
        cfg.train = dataclasses.replace(cfg.train, epochs=args.epochs)
    cfg.validate()
    return cfg


def cmd_train(args) -> None:
    cfg = _apply_train_overrides(_load_experiment(args), args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs = load_corpus(cfg.corpus)
    train_docs, tune_docs = split_train_tune(docs, cfg.n_train)
    vocab = _resolve_vocab(cfg, train_docs, out_dir)
    eval_sets = {}
    for split in cfg.eval_splits:
        eval_sets[split] = train_docs if split == "train" else tune_docs

    if len(cfg.seeds) >= 2:
        report = run_protocol(
            train_docs, tune_docs, eval_sets, vocab,
            cfg.methods, cfg.seeds, cfg.encoder, cfg.heads, cfg.train,
        )
        _write_json(out_dir / "report.json", report.to_dict())
        with atomic_write(out_dir / "report.txt") as fh:
            fh.write(report.render_table() + "\n")
        print(report.render_table())
        return

    seed = cfg.seeds[0]
    for method in cfg.methods:
        train_cfg = dataclasses.replace(cfg.train, method=method, seed=seed)
        enc_cfg = dataclasses.replace(cfg.encoder, init_seed=seed)
        result = train_supervised(train_docs, tune_docs, vocab, enc_cfg, cfg.heads, train_cfg)
        ckpt = out_dir / f"{method}_seed{seed}.npz"
        save_model(ckpt, result.model)
        write_log(out_dir / f"{method}_seed{seed}_log.jsonl", result.log)
        _write_json(
            out_dir / f"{method}_seed{seed}_summary.json",
            {
                "method": method,
                "seed": seed,
                "best_step": result.best_step,
                "best_tune_f1": result.best_tune_f1,
                "checkpoint": ckpt.name,
            },
        )
        _info(
            f"{method}: best tune F1 "
            f"{'n/a' if result.best_tune_f1 is None else f'{result.best_tune_f1:.4f}'} "
            f"at step {result.best_step} -> {ckpt}"
        )


def _mlm_overrides(cfg: MlmConfig, args) -> MlmConfig:
    updates = {}
    if args.steps is not None:
        updates["total_steps"] = args.steps
    if args.checkpoint_every is not None:
        updates["checkpoint_every"] = args.checkpoint_every
    if args.mask_prob is not None:
        updates["mask_prob"] = args.mask_prob
    if args.seed is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(cfg, **updates) if updates else cfg


def cmd_pretrain(args) -> None:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        exp = ExperimentConfig.load(path)
        mlm_cfg, enc_cfg = exp.mlm, exp.encoder
    else:
        mlm_cfg, enc_cfg = MlmConfig(), EncoderConfig()
    mlm_cfg = _mlm_overrides(mlm_cfg, args)
    docs = load_corpus(args.corpus)
    vocab = BpeVocab.load(args.vocab)
    result = pretrain_mlm(docs, vocab, enc_cfg, mlm_cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for step, enc in result.checkpoints:
        save_checkpoint(
            out_dir / f"mlm_step_{step:06d}.npz",
            {"kind": "encoder", "step": step, "encoder": enc.config.to_dict()},
            enc.tensors,
        )
    write_log(out_dir / "mlm_log.jsonl", result.log)
    first = result.probe_loss(0)
    last = result.probe_loss(result.checkpoints[-1][0])
    _info(
        f"saved {len(result.checkpoints)} encoder checkpoints -> {out_dir} "
        f"(train probe loss {first:.4f} -> {last:.4f})"
    )


def _load_encoder_checkpoints(directory: str) -> list[tuple[int, EncoderParams]]:
    paths = sorted(Path(directory).glob("mlm_step_*.npz"))
    if not paths:
        raise FormatError(f"no mlm_step_*.npz checkpoints under {directory}")
    out = []
    for p in paths:
        config, tensors = load_checkpoint(p)
        if config.get("kind") != "encoder":
            raise FormatError(f"not an encoder checkpoint: {p}", path=str(p))
        cfg = EncoderConfig.from_dict(config["encoder"])
        out.append((int(config["step"]), EncoderParams(cfg, tensors)))
    out.sort(key=lambda pair: pair[0])
    return out


def cmd_sweep(args) -> None:
    cfg = _load_experiment(args)
    docs = load_corpus(args.corpus if args.corpus else cfg.corpus)
    train_docs, tune_docs = split_train_tune(docs, cfg.n_train)
    vocab = BpeVocab.load(args.vocab)
    checkpoints = _load_encoder_checkpoints(args.checkpoints)
    enc_cfg = checkpoints[0][1].config
    train_cfg = dataclasses.replace(cfg.train, method=args.method or cfg.methods[0])
    points = sweep_tapt_checkpoints(
        checkpoints, train_docs, tune_docs, vocab, enc_cfg, cfg.heads, train_cfg
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "sweep.json", {"points": [p.to_dict() for p in points]})
    lines = [f"{'pretrain step':>13} {'tune F1':>9}", "-" * 23]
    lines += [f"{p.step:>13} {p.f1:>9.4f}" for p in points]
    table = "\n".join(lines)
    with atomic_write(out_dir / "sweep.txt") as fh:
        fh.write(table + "\n")
    print(table)


def cmd_predict(args) -> None:
    docs = load_corpus(args.corpus)
    vocab = BpeVocab.load(args.vocab)
    model = load_model(args.checkpoint)
    preds = predict_documents(model, docs, vocab)
    save_corpus(preds, args.out)
    n = sum(d.n_mentions for d in preds)
    _info(f"predicted {n} mentions with {model.method} -> {args.out}")


def cmd_postprocess(args) -> None:
    strategy = args.strategy.replace("-", "_")
    docs = load_predictions(args.input)
    for doc in docs:
        for sent in doc.sentences:
            sent.mentions = resolve_nesting(sent.mentions, strategy)
    save_corpus(docs, args.output)
    _info(f"applied {strategy} -> {args.output}")


def cmd_evaluate(args) -> None:
    gold = load_corpus(args.gold)
    pred = load_predictions(args.pred)
    vocab = BpeVocab.load(args.by_subtokens) if args.by_subtokens else None
    report = evaluate_predictions(gold, pred, with_mcc=args.mcc, vocab=vocab)
    out = {"overall": report.to_dict()}
    print(report.render_table())
    if args.nesting_table:
        rows = {}
        for name, strategy in (("Orig", "none"), ("keep_inner", "keep_inner"), ("keep_outer", "keep_outer")):
            resolved = [
                dataclasses.replace(
                    doc,
                    sentences=[
                        dataclasses.replace(s, mentions=resolve_nesting(s.mentions, strategy))
                        for s in doc.sentences
                    ],
                )
                for doc in pred
            ]
            rows[name] = evaluate_predictions(gold, resolved).f1
        out["nesting_table"] = rows
        print()
        print(f"{'post-processing':<16} {'F1':>8}")
        print("-" * 25)
        for name, f1 in rows.items():
            print(f"{name:<16} {f1:>8.4f}")
    if args.out:
        _write_json(args.out, out)


def cmd_analyze(args) -> None:
    docs = load_corpus(args.corpus)
    vocab = BpeVocab.load(args.vocab)
    report = fragmentation_ratio(docs, vocab, scope=args.scope)
    print(f"fragmentation ratio ({report.scope}): {report.ratio:.4f}")
    print(f"{'sub-tokens':<12} {'words':>8} {'share':>8}")
    print("-" * 30)
    for bucket, count in report.histogram.items():
        print(f"{bucket:<12} {count:>8} {count / report.total_words:>8.1%}")
    if args.out:
        _write_json(args.out, report.to_dict())


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="dualner", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("generate-synthetic", help="generate a labeled synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--types", default="Facility,Instrument,SkyObject", help="comma-separated entity types")
    p.add_argument("--oov-fraction", type=float, default=0.2)
    p.add_argument("--sentences-per-doc", type=int, nargs=2, default=[2, 4], metavar=("LO", "HI"))
    p.add_argument("--words-per-sentence", type=int, nargs=2, default=[11, 16], metavar=("LO", "HI"))
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("segment", help="split unsegmented documents into sentences")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-words", type=int, default=10)
    p.add_argument("--terminator", default=".")
    p.set_defaults(handler=cmd_segment)

    p = sub.add_parser("build-vocab", help="train a BPE vocabulary on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_build_vocab)

    p = sub.add_parser("train", help="train heads per the experiment config (multi-seed runs emit a protocol report)")
    p.add_argument("--config", help=f"experiment JSON (default ${CONFIG_ENV})")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--method", choices=["word_tagger", "span_classifier"])
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("pretrain-mlm", help="continue pre-training the encoder with masked language modeling")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help=f"experiment JSON (default ${CONFIG_ENV})")
    p.add_argument("--steps", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--mask-prob", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("sweep-tapt", help="fine-tune from every MLM checkpoint and chart tune F1")
    p.add_argument("--config", help=f"experiment JSON (default ${CONFIG_ENV})")
    p.add_argument("--corpus", help="overrides the config's corpus path")
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoints", required=True, help="directory with mlm_step_*.npz")
    p.add_argument("--method", choices=["word_tagger", "span_classifier"])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("predict", help="run a trained model over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("postprocess", help="resolve nested predictions")
    p.add_argument("--input", required=True)
    p.add_argument("--strategy", required=True, choices=["none", "keep-inner", "keep-outer"])
    p.add_argument("--output", required=True)
    p.set_defaults(handler=cmd_postprocess)

    p = sub.add_parser("evaluate", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--mcc", action="store_true", help="add word-level multiclass MCC")
    p.add_argument("--by-subtokens", metavar="VOCAB", help="add word F1 grouped by sub-token count")
    p.add_argument("--nesting-table", action="store_true", help="add Orig/keep_inner/keep_outer F1 rows")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("analyze-fragmentation", help="sub-token fragmentation ratio and histogram")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--scope", choices=["all_words", "mention_words"], default="all_words")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(handler=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required (see --help)", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    if not hasattr(args, "handler"):
        parser.print_usage(sys.stderr)
        return 1
    try:
        args.handler(args)
        return 0
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
