"""Word-internal BPE: vocabulary training, sub-tokenization, fragmentation.

Merges never cross word boundaries, so each word owns a contiguous,
non-empty run of sub-token positions; that partition is exactly what
first-sub-token word representations need.  Unknown characters map to the
<unk> id (one sub-token each) but keep their original surface so a word's
pieces always concatenate back to the word.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

from .corpus import Document, atomic_write
from .errors import FormatError

__all__ = [
    "PAD_TOKEN",
    "UNK_TOKEN",
    "MASK_TOKEN",
    "BpeVocab",
    "SubTokenization",
    "train_bpe",
    "subtokenize",
    "FragmentationReport",
    "fragmentation_ratio",
]

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
MASK_TOKEN = "<mask>"
_SPECIALS = (PAD_TOKEN, UNK_TOKEN, MASK_TOKEN)


@dataclass(frozen=True)
class BpeVocab:
    """Symbol table (index == id), ordered merge rules, special ids."""

    symbols: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    pad_id: int = 0
    unk_id: int = 1
    mask_id: int | None = 2

    def __post_init__(self):
        table = {s: i for i, s in enumerate(self.symbols)}
        if len(table) != len(self.symbols):
            raise FormatError("duplicate symbol strings in vocabulary")
        for left, right in self.merges:
            if left + right not in table:
                raise FormatError(f"merge output {left + right!r} missing from symbol table")

    def __len__(self) -> int:
        return len(self.symbols)

    @cached_property
    def _table(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    @cached_property
    def _ranks(self) -> dict[tuple[str, str], int]:
        ranks: dict[tuple[str, str], int] = {}
        for i, pair in enumerate(self.merges):
            ranks.setdefault(pair, i)
        return ranks

    @cached_property
    def _word_cache(self) -> dict[str, tuple[str, ...]]:
        return {}

    def id_of(self, symbol: str) -> int:
        return self._table.get(symbol, self.unk_id)

    def encode_word(self, word: str) -> tuple[str, ...]:
        """Segment one word by repeatedly applying the lowest-ranked merge."""
        if not word:
            raise ValueError("cannot sub-tokenize an empty word")
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        pieces = list(word)
        ranks = self._ranks
        while len(pieces) > 1:
            best_rank = None
            best_pair = None
            for pair in zip(pieces, pieces[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank, best_pair = r, pair
            if best_pair is None:
                break
            pieces = _merge_once(pieces, best_pair)
        out = tuple(pieces)
        self._word_cache[word] = out
        return out

    def to_json(self) -> dict:
        return {
            "symbols": list(self.symbols),
            "merges": [list(p) for p in self.merges],
            "special": {"pad": self.pad_id, "unk": self.unk_id, "mask": self.mask_id},
        }

    @classmethod
    def from_json(cls, obj: dict, path: str | None = None) -> "BpeVocab":
        try:
            symbols = tuple(obj["symbols"])
            merges = tuple((l, r) for l, r in obj["merges"])
            special = obj["special"]
            return cls(
                symbols=symbols,
                merges=merges,
                pad_id=int(special["pad"]),
                unk_id=int(special["unk"]),
                mask_id=None if special.get("mask") is None else int(special["mask"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed vocabulary file: {exc}", path=path) from exc

    def save(self, path: str | Path) -> None:
        with atomic_write(path) as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "BpeVocab":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", path=str(path)) from exc
        return cls.from_json(obj, path=str(path))


def _merge_once(pieces: list[str], pair: tuple[str, str]) -> list[str]:
    out = []
    i = 0
    while i < len(pieces):
        if i + 1 < len(pieces) and pieces[i] == pair[0] and pieces[i + 1] == pair[1]:
            out.append(pieces[i] + pieces[i + 1])
            i += 2
        else:
            out.append(pieces[i])
            i += 1
    return out


def corpus_words(docs: Sequence[Document]) -> Counter:
    counts: Counter = Counter()
    for doc in docs:
        for sent in doc.sentences:
            counts.update(sent.words)
    return counts


def _best_pair(pair_counts: Counter, banned: frozenset[str]) -> tuple[str, str] | None:
    """Highest-count pair, ties broken by lexicographic order of the pair.

    Pairs whose concatenation is a reserved special string are skipped so
    user text can never alias <pad>/<unk>/<mask>.
    """
    best = None
    best_key = None
    for pair, count in pair_counts.items():
        if pair[0] + pair[1] in banned:
            continue
        key = (-count, pair)
        if best_key is None or key < best_key:
            best, best_key = pair, key
    return best


def train_bpe(corpus: Sequence[Document], target_vocab_size: int, seed: int = 0) -> BpeVocab:
    """Train a word-internal BPE vocabulary of exactly the requested size.

    Deterministic for a fixed corpus: greedy most-frequent pair, ties by
    lexicographic pair order. ``seed`` is accepted for interface stability
    but unused, there is no randomness to seed.  The target size counts the
    three specials, the base characters, and one slot per merge; a merge
    whose output string already exists reuses that symbol's id without
    consuming a slot.
    """
    del seed
    word_counts = corpus_words(corpus)
    if not word_counts:
        raise ValueError("corpus has no words; segment documents before training a vocabulary")
    alphabet = sorted({ch for word in word_counts for ch in word})
    floor = len(_SPECIALS) + len(alphabet)
    if target_vocab_size < floor:
        raise ValueError(
            f"target_vocab_size={target_vocab_size} too small: need >= {floor} "
            f"({len(_SPECIALS)} specials + {len(alphabet)} characters)"
        )

    symbols: list[str] = list(_SPECIALS) + alphabet
    table = {s: i for i, s in enumerate(symbols)}
    merges: list[tuple[str, str]] = []
    pieces = {w: tuple(w) for w in word_counts}
    budget = target_vocab_size - floor

    banned = frozenset(_SPECIALS)
    while budget > 0:
        pair_counts: Counter = Counter()
        for word, ps in pieces.items():
            if len(ps) < 2:
                continue
            c = word_counts[word]
            for pair in zip(ps, ps[1:]):
                pair_counts[pair] += c
        pair = _best_pair(pair_counts, banned)
        if pair is None:
            break
        merged = pair[0] + pair[1]
        merges.append(pair)
        if merged not in table:
            table[merged] = len(symbols)
            symbols.append(merged)
            budget -= 1
        pieces = {
            w: tuple(_merge_once(list(ps), pair)) if len(ps) > 1 else ps
            for w, ps in pieces.items()
        }
    return BpeVocab(symbols=tuple(symbols), merges=tuple(merges))


# ---------------------------------------------------------------------------
# Sub-tokenization with word alignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubTokenization:
    """A sentence's sub-token ids plus the word -> sub-token alignment.

    ``word_spans`` are half-open ranges that partition [0, n) in sentence
    order; ``pieces`` keep original surfaces, including for unknown
    characters whose id is <unk>.
    """

    sub_token_ids: tuple[int, ...]
    pieces: tuple[str, ...]
    word_spans: tuple[tuple[int, int], ...]

    @property
    def first_subtoken_index(self) -> tuple[int, ...]:
        return tuple(span[0] for span in self.word_spans)

    @property
    def n_subtokens(self) -> int:
        return len(self.sub_token_ids)

    @property
    def n_words(self) -> int:
        return len(self.word_spans)

    def subtokens_per_word(self) -> tuple[int, ...]:
        return tuple(e - s for s, e in self.word_spans)


def subtokenize(words: Sequence[str], vocab: BpeVocab) -> SubTokenization:
    ids: list[int] = []
    pieces: list[str] = []
    spans: list[tuple[int, int]] = []
    for word in words:
        ps = vocab.encode_word(word)
        start = len(ids)
        ids.extend(vocab.id_of(p) for p in ps)
        pieces.extend(ps)
        spans.append((start, len(ids)))
    return SubTokenization(
        sub_token_ids=tuple(ids), pieces=tuple(pieces), word_spans=tuple(spans)
    )


# ---------------------------------------------------------------------------
# Fragmentation analysis
# ---------------------------------------------------------------------------

BUCKETS = ("1", "2", "3+")


def bucket_of(n_subtokens: int) -> str:
    if n_subtokens <= 1:
        return "1"
    if n_subtokens == 2:
        return "2"
    return "3+"


@dataclass(frozen=True)
class FragmentationReport:
    ratio: float
    histogram: dict[str, int] = field(default_factory=dict)
    total_words: int = 0
    total_subtokens: int = 0
    scope: str = "all_words"

    def shares(self) -> dict[str, float]:
        return {b: self.histogram[b] / self.total_words for b in BUCKETS}

    def to_dict(self) -> dict:
        return {
            "scope": self.scope,
            "ratio": self.ratio,
            "total_words": self.total_words,
            "total_subtokens": self.total_subtokens,
            "histogram": dict(self.histogram),
            "shares": self.shares(),
        }


def _mention_word_mask(sent) -> list[bool]:
    mask = [False] * len(sent.words)
    for m in sent.mentions:
        for w in range(m.start_word, m.end_word + 1):
            mask[w] = True
    return mask


def fragmentation_ratio(
    docs: Sequence[Document], vocab: BpeVocab, scope: str = "all_words"
) -> FragmentationReport:
    """Total sub-tokens over total words, plus the {1,2,3+} split-count histogram.

    ``scope="mention_words"`` restricts the count to words covered by a gold
    mention.
    """
    if scope not in ("all_words", "mention_words"):
        raise ValueError(f"scope must be 'all_words' or 'mention_words', got {scope!r}")
    hist = {b: 0 for b in BUCKETS}
    total_words = 0
    total_subtokens = 0
    for doc in docs:
        for sent in doc.sentences:
            mask = _mention_word_mask(sent) if scope == "mention_words" else None
            for wi, word in enumerate(sent.words):
                if mask is not None and not mask[wi]:
                    continue
                k = len(vocab.encode_word(word))
                hist[bucket_of(k)] += 1
                total_words += 1
                total_subtokens += k
    if total_words == 0:
        raise ValueError(f"no words in scope {scope!r}; is the corpus segmented (and annotated)?")
    return FragmentationReport(
        ratio=total_subtokens / total_words,
        histogram=hist,
        total_words=total_words,
        total_subtokens=total_subtokens,
        scope=scope,
    )
