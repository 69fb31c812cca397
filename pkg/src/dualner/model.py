"""Full-model composition: encoder + active head, losses, prediction, checkpoints.

One Model owns the encoder parameters, both heads' parameters, and the
label inventory; ``method`` selects which head trains and predicts.  All
losses are mean cross-entropy per unit (word, candidate span, or masked
position) over the batch, and every gradient here chains through the exact
encoder backward, so the whole pipeline is finite-difference checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document, LabelInventory, Mention, ScoredMention
from .encoder import (
    EncoderConfig,
    EncoderParams,
    encode_backward,
    encode_with_cache,
    load_checkpoint,
    save_checkpoint,
    word_vectors,
    word_vectors_backward,
    zero_grads,
)
from .errors import FormatError
from .heads import (
    HeadConfig,
    HeadParams,
    enumerate_spans,
    init_head_params,
    mentions_to_tags,
    softmax,
    span_backward,
    span_decode,
    span_forward,
    span_logits_with_cache,
    tagger_backward,
    tagger_forward,
    tags_to_mentions,
)
from .subtok import BpeVocab, SubTokenization, subtokenize

__all__ = [
    "METHODS",
    "Model",
    "Example",
    "init_model",
    "build_examples",
    "model_tensors",
    "batch_loss",
    "batch_loss_and_grads",
    "mlm_mask",
    "mlm_batch_loss_and_grads",
    "predict_sentence",
    "predict_documents",
    "save_model",
    "load_model",
]

METHODS = ("word_tagger", "span_classifier")


@dataclass
class Model:
    method: str
    labels: LabelInventory
    encoder: EncoderParams
    heads: HeadParams

    def clone(self) -> "Model":
        return Model(self.method, self.labels, self.encoder.clone(), self.heads.clone())


def init_model(
    method: str,
    labels: LabelInventory,
    encoder_cfg: EncoderConfig,
    head_cfg: HeadConfig,
) -> Model:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    from .encoder import init_params

    enc = init_params(encoder_cfg)
    heads = init_head_params(
        encoder_cfg.hidden_dim, head_cfg, labels, seed=encoder_cfg.init_seed + 1
    )
    return Model(method=method, labels=labels, encoder=enc, heads=heads)


def model_tensors(model: Model) -> dict[str, np.ndarray]:
    """Flat name -> array view of all parameters, prefixed by component."""
    out = {f"encoder.{k}": v for k, v in model.encoder.tensors.items()}
    out.update({f"heads.{k}": v for k, v in model.heads.tensors.items()})
    return out


# ---------------------------------------------------------------------------
# Supervised examples
# ---------------------------------------------------------------------------


@dataclass
class Example:
    doc_id: str
    sent_index: int
    words: list[str]
    ids: np.ndarray
    align: SubTokenization
    gold_mentions: tuple[Mention, ...]
    tag_ids: np.ndarray
    spans: list[tuple[int, int]]
    span_classes: np.ndarray


def build_examples(
    docs: Sequence[Document], vocab: BpeVocab, labels: LabelInventory, head_cfg: HeadConfig
) -> list[Example]:
    """Pre-tokenized training units, one per sentence, with gold targets for
    both heads.  Gold mentions wider than ``max_span_width`` have no matching
    candidate and stay unreachable for the span head (permanent fn)."""
    tag_index = {t: i for i, t in enumerate(labels.tag_set())}
    type_index = {t: i + 1 for i, t in enumerate(labels.types)}
    examples = []
    for doc in docs:
        for si, sent in enumerate(doc.sentences):
            align = subtokenize(sent.words, vocab)
            tags = mentions_to_tags(sent.mentions, len(sent.words))
            spans = enumerate_spans(len(sent.words), head_cfg.max_span_width)
            gold_by_span = {(m.start_word, m.end_word): type_index[m.label] for m in sent.mentions}
            span_classes = np.fromiter(
                (gold_by_span.get(span, 0) for span in spans), dtype=np.int64, count=len(spans)
            )
            examples.append(
                Example(
                    doc_id=doc.id,
                    sent_index=si,
                    words=list(sent.words),
                    ids=np.asarray(align.sub_token_ids, dtype=np.int64),
                    align=align,
                    gold_mentions=tuple(sent.mentions),
                    tag_ids=np.fromiter((tag_index[t] for t in tags), dtype=np.int64, count=len(tags)),
                    spans=spans,
                    span_classes=span_classes,
                )
            )
    return examples


def _softmax_ce(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy and its gradient (probs minus one-hot)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    rows = np.arange(len(targets))
    ce = -float(logp[rows, targets].sum())
    dlogits = np.exp(logp)
    dlogits[rows, targets] -= 1.0
    return ce, dlogits


def _forward_word_vecs(model: Model, ex: Example, mode: str, rng):
    name = f"{ex.doc_id}[{ex.sent_index}]"
    ctx, cache = encode_with_cache(ex.ids, model.encoder, mode, rng, name=name)
    return word_vectors(ctx, ex.align), cache


def _example_loss(model: Model, ex: Example, mode: str, rng, grads=None):
    """Summed CE and unit count for one sentence; backward when grads given."""
    wv, cache = _forward_word_vecs(model, ex, mode, rng)
    if model.method == "word_tagger":
        logits = tagger_forward(wv, model.heads).scores
        ce, dlogits = _softmax_ce(logits, ex.tag_ids)
        units = len(ex.tag_ids)
        if grads is not None:
            d_wv = tagger_backward(wv, model.heads, dlogits, grads["heads"])
    else:
        logits, span_cache = span_logits_with_cache(wv, ex.spans, model.heads)
        ce, dlogits = _softmax_ce(logits, ex.span_classes)
        units = len(ex.spans)
        if grads is not None:
            d_wv = span_backward(
                wv, ex.spans, model.heads, dlogits, grads["heads"], cache=span_cache
            )
    if grads is not None:
        d_ctx = word_vectors_backward(d_wv, ex.align)
        encode_backward(ex.ids, model.encoder, d_ctx, cache=cache, grads=grads["encoder"])
    return ce, units


def batch_loss(model: Model, examples: Sequence[Example]) -> float:
    """Eval-mode mean loss per unit; pure function of the parameters."""
    total_ce = 0.0
    total_units = 0
    for ex in examples:
        ce, units = _example_loss(model, ex, "eval", None)
        total_ce += ce
        total_units += units
    return total_ce / total_units if total_units else 0.0


def batch_loss_and_grads(
    model: Model, examples: Sequence[Example], mode: str = "train", rng=None
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and its gradient for every parameter (prefixed flat dict)."""
    grads = {"encoder": zero_grads(model.encoder),
             "heads": {k: np.zeros_like(v) for k, v in model.heads.tensors.items()}}
    total_ce = 0.0
    total_units = 0
    for ex in examples:
        ce, units = _example_loss(model, ex, mode, rng, grads=grads)
        total_ce += ce
        total_units += units
    flat = {f"encoder.{k}": v for k, v in grads["encoder"].items()}
    flat.update({f"heads.{k}": v for k, v in grads["heads"].items()})
    if total_units:
        for v in flat.values():
            v *= 1.0 / total_units
    return (total_ce / total_units if total_units else 0.0), flat


# ---------------------------------------------------------------------------
# Masked language modeling (output projection tied to token embeddings)
# ---------------------------------------------------------------------------


def mlm_mask(ids: np.ndarray, vocab_size: int, mask_id: int, mask_prob: float, rng):
    """Corrupt ceil(mask_prob * n) positions: 80% mask, 10% random, 10% kept."""
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.size
    k = int(np.ceil(mask_prob * n)) if mask_prob > 0 else 0
    k = min(k, n)
    if k == 0:
        return ids.copy(), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    positions = np.sort(rng.choice(n, size=k, replace=False))
    corrupted = ids.copy()
    rolls = rng.random(k)
    randoms = rng.integers(0, vocab_size, size=k)
    for j, pos in enumerate(positions):
        if rolls[j] < 0.8:
            corrupted[pos] = mask_id
        elif rolls[j] < 0.9:
            corrupted[pos] = randoms[j]
    return corrupted, positions, ids[positions]


def mlm_batch_loss_and_grads(
    enc: EncoderParams,
    batch: Sequence[np.ndarray],
    vocab: BpeVocab,
    mask_prob: float,
    mask_rng,
    mode: str = "train",
    dropout_rng=None,
    with_grads: bool = True,
):
    """Mean masked-position CE and encoder gradients (None when no position
    was masked, in which case parameters must not be updated)."""
    if vocab.mask_id is None:
        raise ValueError("vocabulary has no mask token; cannot run masked language modeling")
    emb = enc.tensors["tok_emb"]
    grads = zero_grads(enc) if with_grads else None
    total_ce = 0.0
    total_pos = 0
    for ids in batch:
        corrupted, positions, targets = mlm_mask(
            ids, len(vocab), vocab.mask_id, mask_prob, mask_rng
        )
        if positions.size == 0:
            continue
        ctx, cache = encode_with_cache(corrupted, enc, mode, dropout_rng)
        sel = ctx[positions]
        logits = sel @ emb.T
        ce, dlogits = _softmax_ce(logits, targets)
        total_ce += ce
        total_pos += positions.size
        if with_grads:
            d_ctx = np.zeros_like(ctx)
            d_ctx[positions] = dlogits @ emb
            grads["tok_emb"] += dlogits.T @ sel
            encode_backward(corrupted, enc, d_ctx, cache=cache, grads=grads)
    if total_pos == 0:
        return 0.0, None
    if with_grads:
        for v in grads.values():
            v *= 1.0 / total_pos
    return total_ce / total_pos, grads


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def predict_sentence(model: Model, words: Sequence[str], vocab: BpeVocab) -> list[ScoredMention]:
    align = subtokenize(words, vocab)
    ids = np.asarray(align.sub_token_ids, dtype=np.int64)
    ctx, _ = encode_with_cache(ids, model.encoder, "eval")
    wv = word_vectors(ctx, align)
    if model.method == "word_tagger":
        seq = tagger_forward(wv, model.heads)
        win = softmax(seq.scores).max(axis=1)
        return [
            ScoredMention(
                start_word=m.start_word,
                end_word=m.end_word,
                label=m.label,
                score=float(win[m.start_word : m.end_word + 1].mean()),
            )
            for m in tags_to_mentions(seq.tags)
        ]
    spans = enumerate_spans(len(words), model.heads.config.max_span_width)
    return span_decode(span_forward(wv, spans, model.heads))


def predict_documents(model: Model, docs: Sequence[Document], vocab: BpeVocab) -> list[Document]:
    """Copies of ``docs`` whose mentions are the model's scored predictions."""
    out = []
    for doc in docs:
        sentences = [
            replace(sent, mentions=list(predict_sentence(model, sent.words, vocab)))
            for sent in doc.sentences
        ]
        out.append(replace(doc, sentences=sentences))
    return out


# ---------------------------------------------------------------------------
# Whole-model checkpoints
# ---------------------------------------------------------------------------


def save_model(path: str | Path, model: Model) -> None:
    config = {
        "kind": "model",
        "method": model.method,
        "labels": list(model.labels.types),
        "encoder": model.encoder.config.to_dict(),
        "heads": model.heads.config.to_dict(),
    }
    save_checkpoint(path, config, model_tensors(model))


def load_model(path: str | Path) -> Model:
    config, tensors = load_checkpoint(path)
    if config.get("kind") != "model":
        raise FormatError(f"not a model checkpoint: {path}", path=str(path))
    enc_cfg = EncoderConfig.from_dict(config["encoder"])
    head_cfg = HeadConfig.from_dict(config["heads"])
    labels = LabelInventory.from_types(config["labels"])
    model = init_model(config["method"], labels, enc_cfg, head_cfg)
    expected = set(model_tensors(model))
    if expected != set(tensors):
        missing = expected - set(tensors)
        extra = set(tensors) - expected
        raise FormatError(
            f"checkpoint tensor mismatch (missing {sorted(missing)}, unexpected {sorted(extra)})",
            path=str(path),
        )
    for key, arr in model_tensors(model).items():
        if arr.shape != tensors[key].shape:
            raise FormatError(
                f"checkpoint tensor {key} has shape {tensors[key].shape}, expected {arr.shape}",
                path=str(path),
            )
        arr[...] = tensors[key]
    return model
