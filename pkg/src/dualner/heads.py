"""The two classification heads over shared word vectors.

The word-based tagger is a linear map from a word's vector to BIO tag
scores.  The span-based classifier scores every enumerated candidate span
from the concatenation of its two boundary word vectors and a dense
embedding of its length in words; class 0 is reserved for "not an entity".
Both heads decode by per-item argmax with ties going to the lowest index,
so all-zero weights predict O / none everywhere.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .corpus import LabelInventory, Mention, ScoredMention
from .encoder import gelu, gelu_grad, trunc_normal

__all__ = [
    "HeadConfig",
    "HeadParams",
    "init_head_params",
    "TagSequence",
    "SpanCandidate",
    "softmax",
    "tagger_forward",
    "tagger_backward",
    "tags_to_mentions",
    "mentions_to_tags",
    "enumerate_spans",
    "span_representation",
    "span_forward",
    "span_backward",
    "span_decode",
]


@dataclass(frozen=True)
class HeadConfig:
    max_span_width: int = 12
    span_len_dim: int = 16
    span_hidden: int = 64

    def validate(self) -> None:
        if min(self.max_span_width, self.span_len_dim, self.span_hidden) < 1:
            raise ValueError("all head dimensions must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "HeadConfig":
        return cls(**obj)


@dataclass
class HeadParams:
    config: HeadConfig
    labels: LabelInventory
    hidden_dim: int
    tensors: dict[str, np.ndarray]

    @property
    def n_tags(self) -> int:
        return 1 + 2 * len(self.labels)

    @property
    def n_span_classes(self) -> int:
        return 1 + len(self.labels)

    def clone(self) -> "HeadParams":
        return HeadParams(
            self.config, self.labels, self.hidden_dim, {k: v.copy() for k, v in self.tensors.items()}
        )


def init_head_params(
    hidden_dim: int, cfg: HeadConfig, labels: LabelInventory, seed: int = 0
) -> HeadParams:
    cfg.validate()
    if len(labels) == 0:
        raise ValueError("label inventory is empty")
    rng = np.random.default_rng(seed)
    n_tags = 1 + 2 * len(labels)
    n_classes = 1 + len(labels)
    rep_dim = 2 * hidden_dim + cfg.span_len_dim
    tensors = {
        "tagger.w": trunc_normal(rng, (hidden_dim, n_tags)),
        "tagger.b": np.zeros(n_tags),
        "span.len_emb": trunc_normal(rng, (cfg.max_span_width, cfg.span_len_dim)),
        "span.w1": trunc_normal(rng, (rep_dim, cfg.span_hidden)),
        "span.b1": np.zeros(cfg.span_hidden),
        "span.w2": trunc_normal(rng, (cfg.span_hidden, n_classes)),
        "span.b2": np.zeros(n_classes),
    }
    return HeadParams(config=cfg, labels=labels, hidden_dim=hidden_dim, tensors=tensors)


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Word-based tagger
# ---------------------------------------------------------------------------


@dataclass
class TagSequence:
    """Per-word BIO tags, plus the raw score matrix when produced by the tagger."""

    tags: list[str]
    scores: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.tags)


def tagger_forward(word_vecs: np.ndarray, params: HeadParams) -> TagSequence:
    """Score every word over the BIO tag set; argmax ties go to the lowest index."""
    if word_vecs.ndim != 2 or word_vecs.shape[1] != params.hidden_dim:
        raise ValueError(
            f"word vectors must be [n_words, {params.hidden_dim}], got {word_vecs.shape}"
        )
    scores = word_vecs @ params.tensors["tagger.w"] + params.tensors["tagger.b"]
    tag_set = params.labels.tag_set()
    tags = [tag_set[i] for i in scores.argmax(axis=1)]
    return TagSequence(tags=tags, scores=scores)


def tagger_backward(
    word_vecs: np.ndarray,
    params: HeadParams,
    d_scores: np.ndarray,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Accumulate tagger parameter gradients; returns the word-vector gradient."""
    grads["tagger.w"] += word_vecs.T @ d_scores
    grads["tagger.b"] += d_scores.sum(axis=0)
    return d_scores @ params.tensors["tagger.w"].T


def _parse_tag(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    if tag.startswith("B-") or tag.startswith("I-"):
        return tag[0], tag[2:]
    raise ValueError(f"not a BIO tag: {tag!r}")


def tags_to_mentions(tags: Sequence[str] | TagSequence) -> list[Mention]:
    """Decode BIO tags into mentions; total on illegal sequences.

    Repair policy: an I-X with no open mention of type X acts as B-X, and an
    I-Y directly after a mention of a different type starts a new mention of
    type Y.  The output is always non-overlapping and in sentence order.
    """
    if isinstance(tags, TagSequence):
        tags = tags.tags
    mentions: list[Mention] = []
    start: int | None = None
    label: str | None = None

    def close(end: int) -> None:
        nonlocal start, label
        if start is not None:
            mentions.append(Mention(start_word=start, end_word=end, label=label))
        start, label = None, None

    for i, tag in enumerate(tags):
        prefix, tag_label = _parse_tag(tag)
        if prefix == "O":
            close(i - 1)
        elif prefix == "B" or tag_label != label:
            close(i - 1)
            start, label = i, tag_label
    close(len(tags) - 1)
    return mentions


def mentions_to_tags(mentions: Sequence[Mention], n_words: int) -> list[str]:
    """Exact BIO encoding; rejects out-of-bounds or overlapping mentions."""
    tags = ["O"] * n_words
    ordered = sorted(mentions, key=lambda m: (m.start_word, m.end_word))
    prev_end = -1
    for m in ordered:
        if not (0 <= m.start_word <= m.end_word < n_words):
            raise ValueError(
                f"mention ({m.start_word},{m.end_word}) out of bounds for {n_words} words"
            )
        if m.start_word <= prev_end:
            raise ValueError("overlapping mentions cannot be BIO-encoded")
        prev_end = m.end_word
        tags[m.start_word] = f"B-{m.label}"
        for w in range(m.start_word + 1, m.end_word + 1):
            tags[w] = f"I-{m.label}"
    return tags


# ---------------------------------------------------------------------------
# Span-based classifier
# ---------------------------------------------------------------------------


@dataclass
class SpanCandidate:
    """A scored candidate span; ``label`` is None when the none class wins."""

    start_word: int
    end_word: int
    scores: np.ndarray
    label: str | None
    score: float

    @property
    def length_words(self) -> int:
        return self.end_word - self.start_word + 1


def enumerate_spans(n_words: int, max_span_width: int) -> list[tuple[int, int]]:
    """All (start, end) with end inclusive and width <= max_span_width, sorted."""
    if n_words < 1 or max_span_width < 1:
        raise ValueError("n_words and max_span_width must be positive")
    return [
        (s, e) for s in range(n_words) for e in range(s, min(n_words, s + max_span_width))
    ]


def _span_arrays(spans: Sequence[tuple[int, int]]):
    starts = np.fromiter((s for s, _ in spans), dtype=np.int64, count=len(spans))
    ends = np.fromiter((e for _, e in spans), dtype=np.int64, count=len(spans))
    return starts, ends, ends - starts + 1


def _check_spans(spans, n_words, max_width):
    for s, e in spans:
        if not (0 <= s <= e < n_words):
            raise ValueError(f"span ({s},{e}) out of bounds for {n_words} words")
        if e - s + 1 > max_width:
            raise ValueError(f"span ({s},{e}) wider than max_span_width={max_width}")


def span_representations(
    word_vecs: np.ndarray, spans: Sequence[tuple[int, int]], params: HeadParams
) -> np.ndarray:
    """[m, 2d + len_dim]: boundary word vectors plus the length embedding."""
    _check_spans(spans, word_vecs.shape[0], params.config.max_span_width)
    starts, ends, lengths = _span_arrays(spans)
    return np.hstack(
        (word_vecs[starts], word_vecs[ends], params.tensors["span.len_emb"][lengths - 1])
    )


def span_representation(
    word_vecs: np.ndarray, span: tuple[int, int], params: HeadParams
) -> np.ndarray:
    return span_representations(word_vecs, [span], params)[0]


def span_logits_with_cache(word_vecs, spans, params: HeadParams):
    reps = span_representations(word_vecs, spans, params)
    t = params.tensors
    u = reps @ t["span.w1"] + t["span.b1"]
    h = gelu(u)
    logits = h @ t["span.w2"] + t["span.b2"]
    return logits, (reps, u, h)


def span_forward(
    word_vecs: np.ndarray, candidates: Sequence[tuple[int, int]], params: HeadParams
) -> list[SpanCandidate]:
    """Score candidates over |types|+1 classes (none first); keep none-predictions."""
    logits, _ = span_logits_with_cache(word_vecs, candidates, params)
    probs = softmax(logits)
    picks = probs.argmax(axis=1)
    out = []
    for (s, e), row, k in zip(candidates, probs, picks):
        label = None if k == 0 else params.labels.types[k - 1]
        out.append(
            SpanCandidate(start_word=s, end_word=e, scores=row, label=label, score=float(row[k]))
        )
    return out


def span_backward(
    word_vecs: np.ndarray,
    spans: Sequence[tuple[int, int]],
    params: HeadParams,
    d_logits: np.ndarray,
    grads: dict[str, np.ndarray],
    cache=None,
) -> np.ndarray:
    """Accumulate span-head gradients; returns the word-vector gradient."""
    t = params.tensors
    if cache is None:
        _, cache = span_logits_with_cache(word_vecs, spans, params)
    reps, u, h = cache
    grads["span.w2"] += h.T @ d_logits
    grads["span.b2"] += d_logits.sum(axis=0)
    du = (d_logits @ t["span.w2"].T) * gelu_grad(u)
    grads["span.w1"] += reps.T @ du
    grads["span.b1"] += du.sum(axis=0)
    d_reps = du @ t["span.w1"].T
    d = word_vecs.shape[1]
    starts, ends, lengths = _span_arrays(spans)
    d_word_vecs = np.zeros_like(word_vecs)
    np.add.at(d_word_vecs, starts, d_reps[:, :d])
    np.add.at(d_word_vecs, ends, d_reps[:, d : 2 * d])
    np.add.at(grads["span.len_emb"], lengths - 1, d_reps[:, 2 * d :])
    return d_word_vecs


def _strictly_contains(a, b) -> bool:
    return (
        a.start_word <= b.start_word
        and b.end_word <= a.end_word
        and (a.start_word, a.end_word) != (b.start_word, b.end_word)
    )


def _overlap_not_nested(a, b) -> bool:
    overlap = a.start_word <= b.end_word and b.start_word <= a.end_word
    return overlap and not (_strictly_contains(a, b) or _strictly_contains(b, a))


def span_decode(scored: Sequence[SpanCandidate]) -> list[ScoredMention]:
    """Typed candidates minus overlap conflicts; nested pairs are retained.

    Overlapping non-nested pairs are resolved greedily by descending winning
    score (ties: earlier start, then shorter).  Nested predictions survive
    on purpose; resolving them is the post-processing step's job.
    """
    typed = [c for c in scored if c.label is not None]
    order = sorted(typed, key=lambda c: (-c.score, c.start_word, c.length_words))
    kept: list[SpanCandidate] = []
    for cand in order:
        if all(not _overlap_not_nested(cand, other) for other in kept):
            kept.append(cand)
    mentions = [
        ScoredMention(start_word=c.start_word, end_word=c.end_word, label=c.label, score=c.score)
        for c in kept
    ]
    mentions.sort(key=lambda m: (m.start_word, m.end_word, m.label))
    return mentions
