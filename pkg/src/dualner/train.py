"""Training: supervised runs, MLM continued pre-training, multi-seed protocol.

Supervised training is epoch-based with periodic tune-split evaluation and
keeps the snapshot with the best tune F1 (ties to the earliest step); MLM
pre-training is step-based and snapshots the encoder on a fixed interval,
step 0 (the untouched initialization) included.  Every source of
randomness, shuffling, dropout, and masking, flows from the configured
seeds, so equal configs reproduce logs and parameters bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document, LabelInventory, atomic_write
from .encoder import EncoderConfig, EncoderParams, init_params
from .errors import FormatError, ProtocolError, TrainingError
from .evaluate import evaluate_predictions, mean_std, mention_prf
from .heads import HeadConfig
from .model import (
    METHODS,
    Model,
    batch_loss_and_grads,
    build_examples,
    init_model,
    mlm_batch_loss_and_grads,
    model_tensors,
    predict_documents,
)
from .subtok import BpeVocab, subtokenize

__all__ = [
    "TrainConfig",
    "MlmConfig",
    "LogEntry",
    "TrainResult",
    "MlmResult",
    "SweepPoint",
    "ProtocolReport",
    "ExperimentConfig",
    "AdamW",
    "train_supervised",
    "pretrain_mlm",
    "sweep_tapt_checkpoints",
    "run_protocol",
    "write_log",
]


@dataclass(frozen=True)
class TrainConfig:
    method: str = "word_tagger"
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 50
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 50
    select_metric: str = "micro_f1"
    warmup_frac: float = 0.1
    early_stop_f1: float | None = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.checkpoint_every < 1 or self.epochs < 0:
            raise ValueError("batch_size and checkpoint_every must be >= 1, epochs >= 0")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in [0, 1)")
        if self.select_metric != "micro_f1":
            raise ValueError("only micro_f1 checkpoint selection is supported")


@dataclass(frozen=True)
class MlmConfig:
    total_steps: int = 300
    checkpoint_every: int = 60
    mask_prob: float = 0.15
    seed: int = 0
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    warmup_frac: float = 0.1
    heldout_fraction: float = 0.1

    def validate(self) -> None:
        if self.total_steps < 1 or self.checkpoint_every < 1 or self.batch_size < 1:
            raise ValueError("total_steps, checkpoint_every, and batch_size must be >= 1")
        if self.total_steps % self.checkpoint_every != 0:
            raise ValueError(
                f"checkpoint_every={self.checkpoint_every} must divide total_steps={self.total_steps}"
            )
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must be in [0, 1]")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must be in [0, 1)")


@dataclass(frozen=True)
class LogEntry:
    step: int
    split: str
    metric: str
    value: float

    def to_dict(self) -> dict:
        return {"step": self.step, "split": self.split, "metric": self.metric, "value": self.value}


def write_log(path: str | Path, log: Sequence[LogEntry]) -> None:
    with atomic_write(path) as fh:
        for entry in log:
            fh.write(json.dumps(entry.to_dict()))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Optimizer: Adam with decoupled weight decay and linear warmup
# ---------------------------------------------------------------------------


class AdamW:
    """Deterministic AdamW over a flat tensor dict; decay skips 1-D tensors.

    The learning rate warms up linearly over ``warmup_steps`` updates and
    stays constant afterwards.  Keys are visited in sorted order so update
    arithmetic is order-fixed across runs.
    """

    def __init__(
        self,
        tensors: dict[str, np.ndarray],
        learning_rate: float,
        weight_decay: float = 0.0,
        warmup_steps: int = 0,
        trainable: Sequence[str] | None = None,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.keys = sorted(tensors if trainable is None else trainable)
        self.lr = learning_rate
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(tensors[k]) for k in self.keys}
        self.v = {k: np.zeros_like(tensors[k]) for k in self.keys}
        self.t = 0

    def _lr(self) -> float:
        if self.warmup_steps and self.t <= self.warmup_steps:
            return self.lr * self.t / self.warmup_steps
        return self.lr

    def step(self, tensors, grads, grad_clip: float | None = None) -> None:
        self.t += 1
        scale = 1.0
        if grad_clip:
            sq = sum(float((grads[k] ** 2).sum()) for k in self.keys)
            norm = np.sqrt(sq)
            if norm > grad_clip:
                scale = grad_clip / norm
        lr = self._lr()
        for k in self.keys:
            g = grads[k] if scale == 1.0 else grads[k] * scale
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[k] / (1.0 - self.beta1**self.t)
            vhat = self.v[k] / (1.0 - self.beta2**self.t)
            update = mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay and tensors[k].ndim >= 2:
                update = update + self.weight_decay * tensors[k]
            tensors[k] -= lr * update


# ---------------------------------------------------------------------------
# Supervised training with best-checkpoint selection
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    log: list[LogEntry]
    best_step: int
    best_tune_f1: float | None


def _resolve_encoder_cfg(encoder_cfg: EncoderConfig, vocab: BpeVocab) -> EncoderConfig:
    if encoder_cfg.vocab_size == 0:
        return replace(encoder_cfg, vocab_size=len(vocab))
    if encoder_cfg.vocab_size != len(vocab):
        raise ValueError(
            f"encoder vocab_size={encoder_cfg.vocab_size} does not match vocabulary size {len(vocab)}"
        )
    return encoder_cfg


def _tune_f1(model: Model, docs: Sequence[Document], vocab: BpeVocab) -> float:
    preds = predict_documents(model, docs, vocab)
    gold = [s.mentions for d in docs for s in d.sentences]
    pred = [s.mentions for d in preds for s in d.sentences]
    return mention_prf(gold, pred).f1


def _batches(order: np.ndarray, batch_size: int):
    for i in range(0, order.size, batch_size):
        yield order[i : i + batch_size]


def train_supervised(
    train_docs: Sequence[Document],
    tune_docs: Sequence[Document],
    vocab: BpeVocab,
    encoder_cfg: EncoderConfig,
    head_cfg: HeadConfig,
    train_cfg: TrainConfig,
    init_encoder: EncoderParams | None = None,
) -> TrainResult:
    """Train one head end to end and return the best-on-tune checkpoint.

    Tune F1 is recorded every ``checkpoint_every`` steps (and at the final
    step); the returned model maximizes it, ties resolved to the earliest
    step.  ``init_encoder`` warm-starts the encoder, e.g. from an MLM
    snapshot.  Zero epochs return the initialization with an empty log.
    """
    train_cfg.validate()
    head_cfg.validate()
    if not train_docs or not tune_docs:
        raise ValueError("both the train and tune splits must be non-empty")
    encoder_cfg = _resolve_encoder_cfg(encoder_cfg, vocab)
    labels = LabelInventory.from_documents(list(train_docs) + list(tune_docs))
    model = init_model(train_cfg.method, labels, encoder_cfg, head_cfg)
    if init_encoder is not None:
        if init_encoder.config != encoder_cfg:
            raise ValueError("init_encoder configuration does not match encoder_cfg")
        model.encoder = init_encoder.clone()

    examples = build_examples(train_docs, vocab, labels, head_cfg)
    if not examples:
        raise ValueError("training split contains no sentences")
    rng = np.random.default_rng(train_cfg.seed)
    steps_per_epoch = -(-len(examples) // train_cfg.batch_size)
    total_steps = train_cfg.epochs * steps_per_epoch
    head_prefix = "heads.tagger." if train_cfg.method == "word_tagger" else "heads.span."
    tensors = model_tensors(model)
    trainable = [k for k in tensors if k.startswith("encoder.") or k.startswith(head_prefix)]
    opt = AdamW(
        tensors,
        learning_rate=train_cfg.learning_rate,
        weight_decay=train_cfg.weight_decay,
        warmup_steps=int(np.ceil(train_cfg.warmup_frac * total_steps)),
        trainable=trainable,
    )

    log: list[LogEntry] = []
    best_model = model.clone()
    best_step = 0
    best_f1: float | None = None
    step = 0
    stop = False

    def record_tune(at_step: int) -> float:
        nonlocal best_model, best_step, best_f1
        f1 = _tune_f1(model, tune_docs, vocab)
        log.append(LogEntry(at_step, "tune", "micro_f1", f1))
        if best_f1 is None or f1 > best_f1:
            best_f1, best_step, best_model = f1, at_step, model.clone()
        return f1

    for _epoch in range(train_cfg.epochs):
        order = rng.permutation(len(examples))
        for chunk in _batches(order, train_cfg.batch_size):
            batch = [examples[i] for i in chunk]
            loss, grads = batch_loss_and_grads(model, batch, "train", rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at step {step + 1}")
            opt.step(tensors, grads, train_cfg.grad_clip)
            step += 1
            log.append(LogEntry(step, "train", "loss", loss))
            if step % train_cfg.checkpoint_every == 0:
                f1 = record_tune(step)
                if train_cfg.early_stop_f1 is not None and f1 >= train_cfg.early_stop_f1:
                    stop = True
                    break
        if stop:
            break
    if step > 0 and step % train_cfg.checkpoint_every != 0:
        record_tune(step)
    return TrainResult(model=best_model, log=log, best_step=best_step, best_tune_f1=best_f1)


# ---------------------------------------------------------------------------
# Masked-language-model continued pre-training
# ---------------------------------------------------------------------------


@dataclass
class MlmResult:
    checkpoints: list[tuple[int, EncoderParams]]
    log: list[LogEntry]

    def probe_loss(self, step: int, split: str = "train") -> float:
        for entry in self.log:
            if entry.step == step and entry.split == split and entry.metric == "mlm_loss":
                return entry.value
        raise KeyError(f"no probe loss logged for step {step} on split {split!r}")


def pretrain_mlm(
    docs: Sequence[Document],
    vocab: BpeVocab,
    encoder_cfg: EncoderConfig,
    mlm_cfg: MlmConfig,
) -> MlmResult:
    """Continue pre-training the encoder with masked-language modeling.

    Labels on ``docs`` are ignored.  Encoder snapshots are taken at step 0
    (the untouched initialization) and every ``checkpoint_every`` steps; at
    each snapshot an eval-mode loss is probed on the training pool and on a
    held-out tail of sentences, under masks that are identical across
    probes so the series is comparable.
    """
    mlm_cfg.validate()
    encoder_cfg = _resolve_encoder_cfg(encoder_cfg, vocab)
    if vocab.mask_id is None:
        raise ValueError("vocabulary has no mask token; cannot run masked language modeling")
    pool = [
        np.asarray(subtokenize(s.words, vocab).sub_token_ids, dtype=np.int64)
        for d in docs
        for s in d.sentences
    ]
    if not pool:
        raise ValueError("corpus contains no sentences; segment it first")
    n_heldout = int(np.ceil(mlm_cfg.heldout_fraction * len(pool)))
    n_heldout = min(n_heldout, len(pool) - 1)
    train_pool = pool[: len(pool) - n_heldout] if n_heldout else pool
    heldout_pool = pool[len(pool) - n_heldout :] if n_heldout else []

    enc = init_params(encoder_cfg)
    seq = np.random.SeedSequence(mlm_cfg.seed)
    rng = np.random.default_rng(seq.spawn(2)[0])
    probe_seed = seq.spawn(2)[1]
    log: list[LogEntry] = []
    checkpoints: list[tuple[int, EncoderParams]] = []

    def probe(at_step: int) -> None:
        probe_rng = np.random.default_rng(probe_seed)
        loss, _ = mlm_batch_loss_and_grads(
            enc, train_pool, vocab, mlm_cfg.mask_prob, probe_rng, mode="eval", with_grads=False
        )
        log.append(LogEntry(at_step, "train", "mlm_loss", loss))
        if heldout_pool:
            held, _ = mlm_batch_loss_and_grads(
                enc, heldout_pool, vocab, mlm_cfg.mask_prob, probe_rng, mode="eval", with_grads=False
            )
            log.append(LogEntry(at_step, "heldout", "mlm_loss", held))

    checkpoints.append((0, enc.clone()))
    probe(0)

    opt = AdamW(
        enc.tensors,
        learning_rate=mlm_cfg.learning_rate,
        weight_decay=mlm_cfg.weight_decay,
        warmup_steps=int(np.ceil(mlm_cfg.warmup_frac * mlm_cfg.total_steps)),
    )
    order: list[int] = []
    for step in range(1, mlm_cfg.total_steps + 1):
        while len(order) < mlm_cfg.batch_size:
            order.extend(rng.permutation(len(train_pool)).tolist())
        batch = [train_pool[i] for i in order[: mlm_cfg.batch_size]]
        del order[: mlm_cfg.batch_size]
        loss, grads = mlm_batch_loss_and_grads(
            enc, batch, vocab, mlm_cfg.mask_prob, rng, mode="train", dropout_rng=rng
        )
        if grads is not None:
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite MLM loss at step {step}")
            opt.step(enc.tensors, grads, mlm_cfg.grad_clip)
        log.append(LogEntry(step, "train", "mlm_batch_loss", loss))
        if step % mlm_cfg.checkpoint_every == 0:
            checkpoints.append((step, enc.clone()))
            probe(step)
    return MlmResult(checkpoints=checkpoints, log=log)


# ---------------------------------------------------------------------------
# Checkpoint sweep: downstream F1 as a function of pre-training step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    step: int
    f1: float
    best_step: int

    def to_dict(self) -> dict:
        return {"step": self.step, "f1": self.f1, "best_step": self.best_step}


def sweep_tapt_checkpoints(
    checkpoints: Sequence[tuple[int, EncoderParams]],
    train_docs: Sequence[Document],
    tune_docs: Sequence[Document],
    vocab: BpeVocab,
    encoder_cfg: EncoderConfig,
    head_cfg: HeadConfig,
    train_cfg: TrainConfig,
) -> list[SweepPoint]:
    """Fine-tune from every MLM snapshot and report tune F1 per step.

    The curve is reported as-is; adapted snapshots are not required (or
    expected) to improve monotonically over the step-0 baseline.
    """
    points = []
    for step, enc in checkpoints:
        result = train_supervised(
            train_docs, tune_docs, vocab, encoder_cfg, head_cfg, train_cfg, init_encoder=enc
        )
        f1 = result.best_tune_f1
        if f1 is None:
            f1 = _tune_f1(result.model, tune_docs, vocab)
        points.append(SweepPoint(step=step, f1=f1, best_step=result.best_step))
    return points


# ---------------------------------------------------------------------------
# Multi-seed protocol
# ---------------------------------------------------------------------------


@dataclass
class ProtocolReport:
    methods: list[str]
    encoders: list[str]
    splits: list[str]
    seeds: list[int]
    metrics: list[str]
    # rows[(method, encoder, split)][metric] -> {"mean", "std", "values"}
    rows: dict[tuple[str, str, str], dict[str, dict]]

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "encoders": self.encoders,
            "splits": self.splits,
            "seeds": self.seeds,
            "metrics": self.metrics,
            "rows": [
                {"method": m, "encoder": e, "split": s, "metrics": vals}
                for (m, e, s), vals in self.rows.items()
            ],
        }

    def render_table(self) -> str:
        head = f"{'method':<18} {'encoder':<10} {'split':<10}"
        for metric in self.metrics:
            head += f" {metric + ' mean(std)':>20}"
        lines = [head, "-" * len(head)]
        for (m, e, s), vals in self.rows.items():
            line = f"{m:<18} {e:<10} {s:<10}"
            for metric in self.metrics:
                cell = f"{vals[metric]['mean']:.4f} ({vals[metric]['std']:.4f})"
                line += f" {cell:>20}"
            lines.append(line)
        return "\n".join(lines)


def run_protocol(
    train_docs: Sequence[Document],
    tune_docs: Sequence[Document],
    eval_sets: dict[str, Sequence[Document]],
    vocab: BpeVocab,
    methods: Sequence[str],
    seeds: Sequence[int],
    encoder_cfgs: dict[str, EncoderConfig] | EncoderConfig,
    head_cfg: HeadConfig,
    train_cfg: TrainConfig,
) -> ProtocolReport:
    """Repeat every (method, encoder) experiment once per seed and aggregate.

    Each run seeds both the initialization and the data order, the best
    checkpoint is evaluated on every split in ``eval_sets``, and the report
    carries mean and sample standard deviation per metric.  Any failing run
    aborts the protocol with the full failure list.
    """
    if len(seeds) < 2:
        raise ValueError("the protocol needs at least 2 seeds to report a standard deviation")
    if isinstance(encoder_cfgs, EncoderConfig):
        encoder_cfgs = {"desk": encoder_cfgs}
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
    metrics = ["f1", "precision", "recall", "mcc"]
    values: dict[tuple[str, str, str], dict[str, list[float]]] = {}
    failures: list[tuple[str, int, str]] = []
    for method in methods:
        for enc_name, enc_cfg in encoder_cfgs.items():
            for seed in seeds:
                try:
                    result = train_supervised(
                        train_docs,
                        tune_docs,
                        vocab,
                        replace(enc_cfg, init_seed=seed),
                        head_cfg,
                        replace(train_cfg, method=method, seed=seed),
                    )
                    for split, docs in eval_sets.items():
                        preds = predict_documents(result.model, docs, vocab)
                        report = evaluate_predictions(docs, preds, with_mcc=True)
                        row = values.setdefault(
                            (method, enc_name, split), {m: [] for m in metrics}
                        )
                        row["f1"].append(report.f1)
                        row["precision"].append(report.precision)
                        row["recall"].append(report.recall)
                        row["mcc"].append(report.mcc)
                except Exception as exc:  # noqa: BLE001 - reported via ProtocolError
                    failures.append((f"{method}/{enc_name}", seed, str(exc)))
    if failures:
        failed = ", ".join(f"{name} seed {seed}" for name, seed, _ in failures)
        raise ProtocolError(f"protocol runs failed: {failed}", failures=failures)
    rows = {
        key: {
            metric: dict(zip(("mean", "std"), mean_std(vals))) | {"values": vals}
            for metric, vals in per_metric.items()
        }
        for key, per_metric in values.items()
    }
    return ProtocolReport(
        methods=list(methods),
        encoders=list(encoder_cfgs),
        splits=list(eval_sets),
        seeds=list(seeds),
        metrics=metrics,
        rows=rows,
    )


# ---------------------------------------------------------------------------
# Experiment configuration files (JSON)
# ---------------------------------------------------------------------------


def _dataclass_from_dict(cls, obj: dict, where: str):
    if not isinstance(obj, dict):
        raise FormatError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise FormatError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**obj)
    except TypeError as exc:
        raise FormatError(f"bad {where} section: {exc}") from exc


@dataclass
class ExperimentConfig:
    """Declarative description of a run: corpus, split, model, schedule, seeds."""

    corpus: str
    n_train: int
    vocab: str | None = None
    vocab_size: int = 200
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    eval_splits: list[str] = field(default_factory=lambda: ["tune"])
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mlm: MlmConfig = field(default_factory=MlmConfig)

    def validate(self) -> None:
        if self.n_train < 1:
            raise ValueError("n_train must be >= 1")
        if not self.methods or not self.seeds:
            raise ValueError("methods and seeds must be non-empty")
        for split in self.eval_splits:
            if split not in ("train", "tune"):
                raise ValueError(f"eval split must be 'train' or 'tune', got {split!r}")

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus,
            "n_train": self.n_train,
            "vocab": self.vocab,
            "vocab_size": self.vocab_size,
            "methods": self.methods,
            "seeds": self.seeds,
            "eval_splits": self.eval_splits,
            "encoder": self.encoder.to_dict(),
            "heads": self.heads.to_dict(),
            "train": dataclasses.asdict(self.train),
            "mlm": dataclasses.asdict(self.mlm),
        }

    @classmethod
    def from_dict(cls, obj: dict, where: str = "experiment config") -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise FormatError(f"{where} must be a JSON object")
        obj = dict(obj)
        sections = {
            "encoder": (EncoderConfig, {}),
            "heads": (HeadConfig, {}),
            "train": (TrainConfig, {}),
            "mlm": (MlmConfig, {}),
        }
        parsed = {}
        for name, (section_cls, default) in sections.items():
            raw = obj.pop(name, default)
            parsed[name] = _dataclass_from_dict(section_cls, raw, f"{where}.{name}")
        cfg = _dataclass_from_dict(cls, obj | parsed, where)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", path=str(path)) from exc
        return cls.from_dict(obj, where=str(path))

    def save(self, path: str | Path) -> None:
        with atomic_write(path) as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")
