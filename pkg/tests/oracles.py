"""Independent reference implementations used to check the library.

Everything here is deliberately written from first principles (brute force,
one-hot covariance, central differences) and never calls back into the code
path under test.
"""

from __future__ import annotations

import numpy as np

from dualner.corpus import Mention, ScoredMention


def central_difference(loss_fn, arr: np.ndarray, flat_index: int, step: float) -> float:
    """(f(x+h) - f(x-h)) / 2h for one coordinate, restoring the array after."""
    old = arr.flat[flat_index]
    arr.flat[flat_index] = old + step
    plus = loss_fn()
    arr.flat[flat_index] = old - step
    minus = loss_fn()
    arr.flat[flat_index] = old
    return (plus - minus) / (2.0 * step)


def gradient_agreement(analytic: float, numeric: float, zero_floor: float = 1e-6) -> float:
    """Relative error with an absolute guard: coordinates where both values
    sit below ``zero_floor`` count as exact agreement (finite differences are
    pure roundoff noise there)."""
    m = max(abs(analytic), abs(numeric))
    if m < zero_floor:
        return 0.0
    return abs(analytic - numeric) / m


def mcc_one_hot_covariance(confusion: np.ndarray) -> float:
    """MCC from the covariance of one-hot gold/pred indicator matrices.

    Expands the confusion matrix back into N observations and computes
    cov(X,Y) / sqrt(cov(X,X) cov(Y,Y)) directly, a different route than any
    closed-form confusion arithmetic.
    """
    confusion = np.asarray(confusion, dtype=np.int64)
    k = confusion.shape[0]
    n = int(confusion.sum())
    if n == 0:
        return 0.0
    gold = np.zeros((n, k))
    pred = np.zeros((n, k))
    row = 0
    for i in range(k):
        for j in range(k):
            for _ in range(int(confusion[i, j])):
                gold[row, i] = 1.0
                pred[row, j] = 1.0
                row += 1
    gc = gold - gold.mean(axis=0)
    pc = pred - pred.mean(axis=0)
    cov_gp = (gc * pc).sum() / n
    cov_gg = (gc * gc).sum() / n
    cov_pp = (pc * pc).sum() / n
    if cov_gg == 0.0 or cov_pp == 0.0:
        return 0.0
    return float(cov_gp / np.sqrt(cov_gg * cov_pp))


def random_flat_mentions(
    rng: np.random.Generator, n_words: int, types: tuple[str, ...], max_len: int = 4
) -> list[Mention]:
    """A random valid non-overlapping mention set over ``n_words`` words."""
    mentions = []
    pos = 0
    while pos < n_words:
        if rng.random() < 0.4:
            length = int(rng.integers(1, min(max_len, n_words - pos) + 1))
            label = types[int(rng.integers(0, len(types)))]
            mentions.append(Mention(pos, pos + length - 1, label))
            pos += length + 1  # gap keeps same-type neighbours distinct
        else:
            pos += 1
    return mentions


def random_nested_mentions(
    rng: np.random.Generator, types: tuple[str, ...]
) -> list[ScoredMention]:
    """A random scored mention set whose pairs are nested or disjoint only.

    Built by recursively carving sub-intervals, so overlapping non-nested
    pairs cannot occur; most draws contain at least one strict nesting.
    """
    out: list[ScoredMention] = []
    seen: set[tuple[int, int]] = set()

    def carve(lo: int, hi: int, depth: int) -> None:
        if hi - lo < 1 or depth > 4:
            return
        start = int(rng.integers(lo, hi))
        end = int(rng.integers(start, hi))
        if (start, end) not in seen:  # duplicate spans are decode's job, not ours
            seen.add((start, end))
            label = types[int(rng.integers(0, len(types)))]
            out.append(ScoredMention(start, end, label, score=float(rng.random())))
        if end - start >= 1 and rng.random() < 0.8:
            carve(start, end + 1, depth + 1)  # nested child inside [start, end]
        if rng.random() < 0.5 and end + 2 < hi:
            carve(end + 2, hi, depth + 1)  # disjoint sibling to the right

    carve(0, int(rng.integers(6, 30)), 0)
    return out
