"""Annotated-corpus data model, JSONL on-disk format, splits, synthetic corpora.

A corpus is a list of documents; each document carries raw text plus an
ordered list of sentences, and each sentence carries whitespace words plus
typed entity mentions addressed by inclusive word indices.  Gold corpora are
flat: mentions within a sentence never overlap or nest.  Prediction files
reuse the same schema with an extra per-mention "score" and are allowed to
contain nested mentions (the span classifier produces them before
post-processing).
"""

from __future__ import annotations

import json
import os
import string
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import FormatError, ValidationError

__all__ = [
    "Mention",
    "ScoredMention",
    "Sentence",
    "Document",
    "LabelInventory",
    "SyntheticProfile",
    "load_corpus",
    "load_predictions",
    "save_corpus",
    "split_train_tune",
    "generate_synthetic",
    "synthetic_pools",
    "atomic_write",
]


@dataclass(frozen=True)
class Mention:
    """A typed entity span over sentence words; end index is inclusive."""

    start_word: int
    end_word: int
    label: str

    def key(self) -> tuple[int, int, str]:
        return (self.start_word, self.end_word, self.label)

    @property
    def length_words(self) -> int:
        return self.end_word - self.start_word + 1


@dataclass(frozen=True)
class ScoredMention(Mention):
    """A predicted mention with the classifier's confidence attached."""

    score: float = 0.0


@dataclass
class Sentence:
    words: list[str]
    char_start: int
    char_end: int
    mentions: list[Mention] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.words)


@dataclass
class Document:
    id: str
    text: str
    sentences: list[Sentence] = field(default_factory=list)

    @property
    def n_words(self) -> int:
        return sum(len(s.words) for s in self.sentences)

    @property
    def n_mentions(self) -> int:
        return sum(len(s.mentions) for s in self.sentences)


@dataclass(frozen=True)
class LabelInventory:
    """The corpus's entity types plus the BIO tag set derived from them.

    Types are kept sorted so that inventories inferred from data are
    reproducible; the tag set places O first (index 0 wins argmax ties)
    followed by a B-/I- pair per type.
    """

    types: tuple[str, ...]

    @classmethod
    def from_types(cls, types: Sequence[str]) -> "LabelInventory":
        uniq = sorted(set(types))
        if any(not t for t in uniq):
            raise ValidationError("empty entity-type string in label inventory")
        return cls(types=tuple(uniq))

    @classmethod
    def from_documents(cls, docs: Sequence[Document]) -> "LabelInventory":
        seen: set[str] = set()
        for doc in docs:
            for sent in doc.sentences:
                for m in sent.mentions:
                    seen.add(m.label)
        return cls.from_types(sorted(seen))

    def tag_set(self) -> tuple[str, ...]:
        tags = ["O"]
        for t in self.types:
            tags.extend((f"B-{t}", f"I-{t}"))
        return tuple(tags)

    def __len__(self) -> int:
        return len(self.types)

    def __contains__(self, label: str) -> bool:
        return label in self.types


# ---------------------------------------------------------------------------
# On-disk format (JSONL, one document per line)
# ---------------------------------------------------------------------------


@contextmanager
def atomic_write(path: str | Path, mode: str = "w") -> Iterator:
    """Write to a temp file in the target directory, rename on success.

    On any failure the temp file is removed, so consumers never observe a
    partial output file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _mention_to_obj(m: Mention) -> dict:
    obj = {"start_word": m.start_word, "end_word": m.end_word, "label": m.label}
    if isinstance(m, ScoredMention):
        obj["score"] = m.score
    return obj


def _document_to_obj(doc: Document) -> dict:
    return {
        "id": doc.id,
        "text": doc.text,
        "sentences": [
            {
                "words": s.words,
                "char_start": s.char_start,
                "char_end": s.char_end,
                "mentions": [_mention_to_obj(m) for m in s.mentions],
            }
            for s in doc.sentences
        ],
    }


def document_to_json(doc: Document) -> str:
    return json.dumps(_document_to_obj(doc), ensure_ascii=False, separators=(",", ":"))


def save_corpus(docs: Sequence[Document], path: str | Path) -> None:
    with atomic_write(path) as fh:
        for doc in docs:
            fh.write(document_to_json(doc))
            fh.write("\n")


def _require(cond: bool, msg: str, path: str, line: int) -> None:
    if not cond:
        raise FormatError(msg, path=path, line=line)


def _parse_document(obj, path: str, line: int, scored: bool) -> Document:
    _require(isinstance(obj, dict), "document must be a JSON object", path, line)
    _require(isinstance(obj.get("id"), str), 'missing or non-string "id"', path, line)
    _require(isinstance(obj.get("text"), str), 'missing or non-string "text"', path, line)
    _require(isinstance(obj.get("sentences"), list), 'missing or non-list "sentences"', path, line)
    sentences = []
    for sobj in obj["sentences"]:
        _require(isinstance(sobj, dict), "sentence must be a JSON object", path, line)
        words = sobj.get("words")
        _require(
            isinstance(words, list) and all(isinstance(w, str) for w in words),
            'sentence "words" must be a list of strings',
            path,
            line,
        )
        _require(
            isinstance(sobj.get("char_start"), int) and isinstance(sobj.get("char_end"), int),
            "sentence char offsets must be integers",
            path,
            line,
        )
        mentions = []
        for mobj in sobj.get("mentions", []):
            _require(isinstance(mobj, dict), "mention must be a JSON object", path, line)
            _require(
                isinstance(mobj.get("start_word"), int)
                and isinstance(mobj.get("end_word"), int)
                and isinstance(mobj.get("label"), str),
                "mention needs integer start_word/end_word and string label",
                path,
                line,
            )
            if scored:
                mentions.append(
                    ScoredMention(
                        start_word=mobj["start_word"],
                        end_word=mobj["end_word"],
                        label=mobj["label"],
                        score=float(mobj.get("score", 0.0)),
                    )
                )
            else:
                mentions.append(
                    Mention(
                        start_word=mobj["start_word"],
                        end_word=mobj["end_word"],
                        label=mobj["label"],
                    )
                )
        sentences.append(
            Sentence(
                words=list(words),
                char_start=sobj["char_start"],
                char_end=sobj["char_end"],
                mentions=mentions,
            )
        )
    return Document(id=obj["id"], text=obj["text"], sentences=sentences)


def mentions_overlap(a: Mention, b: Mention) -> bool:
    return a.start_word <= b.end_word and b.start_word <= a.end_word


def validate_document(doc: Document, *, allow_overlap: bool = False) -> None:
    """Check sentence/mention invariants; raise ValidationError naming the doc.

    Gold corpora must have non-empty words, in-bounds mentions, and (unless
    ``allow_overlap``) pairwise non-overlapping mentions per sentence, which
    forbids nesting as a special case.  Sentence character ranges must be
    ordered, disjoint, and within the document text.
    """
    prev_end = -1
    for si, sent in enumerate(doc.sentences):
        where = f"document {doc.id!r}, sentence {si}"
        if not sent.words or any(w == "" for w in sent.words):
            raise ValidationError(f"{where}: empty word list or empty word")
        if not (0 <= sent.char_start <= sent.char_end <= len(doc.text)):
            raise ValidationError(f"{where}: character range outside document text")
        if sent.char_start < prev_end:
            raise ValidationError(f"{where}: sentence character ranges out of order or overlapping")
        prev_end = sent.char_end
        n = len(sent.words)
        for m in sent.mentions:
            if not (0 <= m.start_word <= m.end_word < n):
                raise ValidationError(
                    f"{where}: mention ({m.start_word},{m.end_word},{m.label!r}) out of bounds for {n} words"
                )
            if not m.label:
                raise ValidationError(f"{where}: mention with empty label")
        if not allow_overlap:
            ms = sorted(sent.mentions, key=lambda m: (m.start_word, m.end_word))
            for a, b in zip(ms, ms[1:]):
                if mentions_overlap(a, b):
                    raise ValidationError(
                        f"{where}: overlapping or nested gold mentions "
                        f"({a.start_word},{a.end_word},{a.label!r}) and "
                        f"({b.start_word},{b.end_word},{b.label!r})"
                    )


def _load(path: str | Path, *, scored: bool, allow_overlap: bool) -> list[Document]:
    path = str(path)
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", path=path, line=lineno) from exc
            doc = _parse_document(obj, path, lineno, scored)
            validate_document(doc, allow_overlap=allow_overlap)
            docs.append(doc)
    return docs


def load_corpus(path: str | Path) -> list[Document]:
    """Load a gold corpus, validating all annotation invariants.

    The label inventory of the loaded corpus is available through
    ``LabelInventory.from_documents`` (types sorted lexicographically).
    A document with an empty "sentences" list is legal and signals that it
    still needs segmentation.
    """
    return _load(path, scored=False, allow_overlap=False)


def load_predictions(path: str | Path) -> list[Document]:
    """Load a prediction file: same schema, scores kept, nesting allowed."""
    return _load(path, scored=True, allow_overlap=True)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def split_train_tune(docs: Sequence[Document], n_train: int) -> tuple[list[Document], list[Document]]:
    """Deterministic prefix split: first n_train docs train, the rest tune.

    File order is preserved and no shuffling happens, so the split only
    depends on the corpus file itself.
    """
    if not 0 < n_train < len(docs):
        raise ValueError(
            f"n_train must satisfy 0 < n_train < {len(docs)} (both splits non-empty), got {n_train}"
        )
    return list(docs[:n_train]), list(docs[n_train:])


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticProfile:
    """Knobs for the synthetic corpus generator.

    ``oov_fraction`` is the probability that a mention word is drawn from a
    large pool of rare words instead of its type's small pool; rare words
    stay fragmented under a BPE vocabulary trained on the corpus, which is
    what the fragmentation analyses need to see.
    """

    sentences_per_doc: tuple[int, int] = (2, 4)
    words_per_sentence: tuple[int, int] = (11, 16)
    mentions_per_sentence: tuple[int, int] = (0, 2)
    mention_len: tuple[int, int] = (1, 3)
    common_pool_size: int = 60
    type_pool_size: int = 16
    oov_pool_size: int = 400
    oov_fraction: float = 0.2
    terminator: str = "."

    def validate(self) -> None:
        for name in ("sentences_per_doc", "words_per_sentence", "mentions_per_sentence", "mention_len"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} must be an ordered non-negative range, got ({lo},{hi})")
        if self.words_per_sentence[0] < 3:
            raise ValueError("sentences need at least 3 words to place mentions away from the terminator")
        if not 0.0 <= self.oov_fraction <= 1.0:
            raise ValueError(f"oov_fraction must be in [0,1], got {self.oov_fraction}")
        if min(self.common_pool_size, self.type_pool_size, self.oov_pool_size) < 1:
            raise ValueError("all word pools must be non-empty")


def _random_word(rng: np.random.Generator, lo: int, hi: int) -> str:
    length = int(rng.integers(lo, hi + 1))
    letters = rng.integers(0, 26, size=length)
    return "".join(string.ascii_lowercase[i] for i in letters)


def _fill_pool(rng: np.random.Generator, size: int, lo: int, hi: int, taken: set[str]) -> list[str]:
    pool: list[str] = []
    while len(pool) < size:
        w = _random_word(rng, lo, hi)
        if w not in taken:
            taken.add(w)
            pool.append(w)
    return pool


def synthetic_pools(
    seed: int, inventory: LabelInventory, profile: SyntheticProfile
) -> tuple[list[str], dict[str, list[str]], list[str]]:
    """The exact word pools ``generate_synthetic`` uses for this seed.

    Returns (common, per-type, oov) pools; all pairwise disjoint.  Exposed so
    tests can count how many generated mention words came from the oov pool.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    taken: set[str] = set()
    common = _fill_pool(rng, profile.common_pool_size, 3, 7, taken)
    type_pools = {t: _fill_pool(rng, profile.type_pool_size, 4, 8, taken) for t in inventory.types}
    oov = _fill_pool(rng, profile.oov_pool_size, 6, 12, taken)
    return common, type_pools, oov


def _place_mentions(
    rng: np.random.Generator, n_words: int, profile: SyntheticProfile, inventory: LabelInventory
) -> list[tuple[int, int, str]]:
    lo, hi = profile.mentions_per_sentence
    want = int(rng.integers(lo, hi + 1))
    placed: list[tuple[int, int]] = []
    out = []
    for _ in range(want):
        length = int(rng.integers(profile.mention_len[0], profile.mention_len[1] + 1))
        # last word carries the terminator; keep mentions off it
        limit = n_words - 1 - length
        if limit < 0:
            continue
        for _attempt in range(8):
            start = int(rng.integers(0, limit + 1))
            end = start + length - 1
            # one-word gap so adjacent same-type mentions cannot fuse
            if all(end < s - 1 or start > e + 1 for s, e in placed):
                placed.append((start, end))
                label = inventory.types[int(rng.integers(0, len(inventory.types)))]
                out.append((start, end, label))
                break
    out.sort()
    return out


def generate_synthetic(
    seed: int,
    n_docs: int,
    inventory: LabelInventory,
    profile: SyntheticProfile | None = None,
) -> list[Document]:
    """Generate a deterministic, fully segmented synthetic corpus.

    Every sentence ends with a terminator attached to its final word and has
    at least ``words_per_sentence[0]`` words, so the shipped sentence
    splitter (default threshold 10) reproduces the generated boundaries
    exactly when ``words_per_sentence[0] >= 11``.
    """
    if n_docs <= 0:
        raise ValueError(f"n_docs must be positive, got {n_docs}")
    if len(inventory) == 0:
        raise ValueError("inventory must contain at least one type")
    profile = profile or SyntheticProfile()
    profile.validate()

    common, type_pools, oov = synthetic_pools(seed, inventory, profile)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])

    docs = []
    for di in range(n_docs):
        sentences = []
        parts = []
        cursor = 0
        n_sents = int(rng.integers(profile.sentences_per_doc[0], profile.sentences_per_doc[1] + 1))
        for _si in range(n_sents):
            n_words = int(rng.integers(profile.words_per_sentence[0], profile.words_per_sentence[1] + 1))
            slots = _place_mentions(rng, n_words, profile, inventory)
            words = [common[int(i)] for i in rng.integers(0, len(common), size=n_words)]
            mentions = []
            for start, end, label in slots:
                for w in range(start, end + 1):
                    if rng.random() < profile.oov_fraction:
                        words[w] = oov[int(rng.integers(0, len(oov)))]
                    else:
                        pool = type_pools[label]
                        words[w] = pool[int(rng.integers(0, len(pool)))]
                mentions.append(Mention(start_word=start, end_word=end, label=label))
            words[-1] = words[-1] + profile.terminator
            sent_text = " ".join(words)
            if parts:
                cursor += 1  # single joining space
            sentences.append(
                Sentence(
                    words=words,
                    char_start=cursor,
                    char_end=cursor + len(sent_text),
                    mentions=mentions,
                )
            )
            parts.append(sent_text)
            cursor += len(sent_text)
        doc = Document(id=f"syn-{di:04d}", text=" ".join(parts), sentences=sentences)
        validate_document(doc)
        docs.append(doc)
    return docs


def strip_segmentation(docs: Sequence[Document]) -> list[Document]:
    """Copies with empty sentence lists: raw documents awaiting segmentation."""
    return [replace(doc, sentences=[]) for doc in docs]
