"""Lexical overlap metrics over token sequences.

BLEU-1..4 with clipped n-gram precisions and brevity penalty, ROUGE-1/2/L as
precision/recall/F1, and a lightweight METEOR variant whose second alignment
stage uses stem matching instead of a synonym dictionary. All scores lie in
[0, 1]; candidate/reference order matters (swapping them swaps ROUGE
precision and recall).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .textcore import TokenSequence, stem

__all__ = [
    "NGramCounts",
    "PRF",
    "ngram_counts",
    "bleu",
    "corpus_bleu",
    "rouge_n",
    "rouge_l",
    "lcs_length",
    "meteor_lite",
]


@dataclass(frozen=True)
class NGramCounts:
    """Multiset of order-n token windows."""

    n: int
    counts: Counter

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "PRF":
        if precision + recall == 0:
            return cls(precision, recall, 0.0)
        return cls(precision, recall, 2 * precision * recall / (precision + recall))


def _tokens(seq: TokenSequence | Sequence[str]) -> tuple[str, ...]:
    if isinstance(seq, TokenSequence):
        return seq.tokens
    return tuple(seq)


def ngram_counts(tokens: TokenSequence | Sequence[str], n: int) -> NGramCounts:
    """Count the order-n windows of a token sequence."""
    if n < 1:
        raise ValueError(f"n-gram order must be >= 1, got {n}")
    toks = _tokens(tokens)
    grams = Counter(tuple(toks[i : i + n]) for i in range(len(toks) - n + 1))
    return NGramCounts(n=n, counts=grams)


def _clipped_overlap(cand: Counter, ref: Counter) -> int:
    return sum(min(count, ref[gram]) for gram, count in cand.items())


def bleu(
    candidate: TokenSequence | Sequence[str],
    reference: TokenSequence | Sequence[str],
    max_n: int = 4,
    smoothing: bool = True,
) -> float:
    """Sentence BLEU: geometric mean of clipped precisions times brevity penalty.

    Orders for which the candidate has no n-grams at all are dropped from the
    geometric mean (effective order), so identical short sentences score 1
    at any max_n. With smoothing on (the sentence-level default) a zero
    precision is replaced by 1 / (2 * candidate n-gram count) so short
    sentences do not collapse to zero; with smoothing off any zero precision
    zeroes the score.
    """
    cand = _tokens(candidate)
    ref = _tokens(reference)
    if not ref:
        raise ValueError("empty reference")
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")
    if not cand:
        return 0.0

    log_sum = 0.0
    orders = 0
    for n in range(1, max_n + 1):
        cand_grams = ngram_counts(cand, n)
        ref_grams = ngram_counts(ref, n)
        total = cand_grams.total
        if total == 0:
            continue
        overlap = _clipped_overlap(cand_grams.counts, ref_grams.counts)
        precision = overlap / total
        if precision == 0.0:
            if not smoothing:
                return 0.0
            precision = 1.0 / (2.0 * total)
        log_sum += math.log(precision)
        orders += 1

    brevity = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return brevity * math.exp(log_sum / orders)


def corpus_bleu(
    pairs: Iterable[tuple[TokenSequence | Sequence[str], TokenSequence | Sequence[str]]],
    max_n: int = 4,
    smoothing: bool = False,
    pooled: bool = False,
) -> float:
    """Aggregate BLEU over (candidate, reference) pairs.

    Default is the arithmetic mean of per-pair scores; ``pooled=True`` pools
    clipped counts and lengths across the corpus before taking the geometric
    mean (micro BLEU). Smoothing defaults off for aggregates.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty corpus")
    if not pooled:
        scores = [bleu(c, r, max_n=max_n, smoothing=smoothing) for c, r in pairs]
        return sum(scores) / len(scores)

    overlaps = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for c, r in pairs:
        cand, ref = _tokens(c), _tokens(r)
        if not ref:
            raise ValueError("empty reference")
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cg = ngram_counts(cand, n)
            rg = ngram_counts(ref, n)
            overlaps[n - 1] += _clipped_overlap(cg.counts, rg.counts)
            totals[n - 1] += cg.total
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    orders = 0
    for overlap, total in zip(overlaps, totals):
        if total == 0:
            continue
        precision = overlap / total
        if precision == 0.0:
            if not smoothing:
                return 0.0
            precision = 1.0 / (2.0 * total)
        log_sum += math.log(precision)
        orders += 1
    brevity = min(1.0, math.exp(1.0 - ref_len / cand_len))
    return brevity * math.exp(log_sum / orders)


def rouge_n(
    candidate: TokenSequence | Sequence[str],
    reference: TokenSequence | Sequence[str],
    n: int,
) -> PRF:
    """ROUGE-N precision/recall/F1 from clipped n-gram overlap."""
    if n not in (1, 2):
        raise ValueError(f"rouge_n supports n in {{1, 2}}, got {n}")
    cand = _tokens(candidate)
    ref = _tokens(reference)
    if not ref:
        raise ValueError("empty reference")
    cand_grams = ngram_counts(cand, n)
    ref_grams = ngram_counts(ref, n)
    overlap = _clipped_overlap(cand_grams.counts, ref_grams.counts)
    precision = overlap / cand_grams.total if cand_grams.total else 0.0
    recall = overlap / ref_grams.total if ref_grams.total else 0.0
    return PRF.from_pr(precision, recall)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Length of the longest common subsequence (quadratic DP, rolling row)."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(
    candidate: TokenSequence | Sequence[str],
    reference: TokenSequence | Sequence[str],
) -> PRF:
    """ROUGE-L precision/recall/F1 from the exact LCS length."""
    cand = _tokens(candidate)
    ref = _tokens(reference)
    if not ref:
        raise ValueError("empty reference")
    lcs = lcs_length(cand, ref)
    precision = lcs / len(cand) if cand else 0.0
    recall = lcs / len(ref)
    return PRF.from_pr(precision, recall)


def _align(cand: tuple[str, ...], ref: tuple[str, ...]) -> list[tuple[int, int]]:
    # Two-stage unigram alignment: exact tokens first, then stems on the
    # leftovers. Each stage scans the candidate left to right and prefers the
    # first free reference slot to the right of its previous pick, falling
    # back to the leftmost free slot (a crossing) only when none exists.
    pairs: list[tuple[int, int]] = []
    cand_free = [True] * len(cand)
    ref_free = [True] * len(ref)
    for key in (lambda t: t, stem):
        cand_keys = [key(t) for t in cand]
        ref_keys = [key(t) for t in ref]
        last_j = -1
        for i, ck in enumerate(cand_keys):
            if not cand_free[i]:
                continue
            slots = [j for j, rk in enumerate(ref_keys) if ref_free[j] and rk == ck]
            if not slots:
                continue
            after = [j for j in slots if j > last_j]
            j = after[0] if after else slots[0]
            pairs.append((i, j))
            cand_free[i] = False
            ref_free[j] = False
            last_j = j
    return sorted(pairs)


def meteor_lite(
    candidate: TokenSequence | Sequence[str],
    reference: TokenSequence | Sequence[str],
) -> float:
    """Unigram METEOR with exact-then-stem matching and a chunk penalty.

    score = Fmean * (1 - 0.5 * (chunks / matches)^3) with
    Fmean = P*R / (0.9*P + 0.1*R). Zero matches score 0.
    """
    cand = _tokens(candidate)
    ref = _tokens(reference)
    if not ref:
        raise ValueError("empty reference")
    if not cand:
        return 0.0

    pairs = _align(cand, ref)
    matches = len(pairs)
    if matches == 0:
        return 0.0

    chunks = 1
    for (i_prev, j_prev), (i, j) in zip(pairs, pairs[1:]):
        if i != i_prev + 1 or j != j_prev + 1:
            chunks += 1

    precision = matches / len(cand)
    recall = matches / len(ref)
    f_mean = precision * recall / (0.9 * precision + 0.1 * recall)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1.0 - penalty)
