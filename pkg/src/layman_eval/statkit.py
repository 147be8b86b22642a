"""Statistical analyses layered on evaluation output.

Pearson/Spearman correlation of metric scores against human scores, Cohen's
kappa for inter-annotator agreement, similarity-score histograms with the
share-at-or-above-0.8 headline number, and pairwise-cosine diversity of a
report set.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .embedkit import EmbeddingCache, EmbeddingProvider, Vector, cosine, embed

__all__ = [
    "PairedSeries",
    "Histogram",
    "pearson",
    "spearman",
    "rank",
    "cohens_kappa",
    "discretize",
    "similarity_histogram",
    "diversity",
]


@dataclass(frozen=True)
class PairedSeries:
    """Aligned metric scores (x) and human scores (y)."""

    ids: tuple
    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.ids) == len(self.x) == len(self.y)):
            raise ValueError("ids, x, and y must have equal length")
        values = self.x + self.y
        if not np.all(np.isfinite(values)):
            raise ValueError("series values must be finite")

    @classmethod
    def from_lists(cls, ids, x, y) -> "PairedSeries":
        return cls(tuple(ids), tuple(float(v) for v in x), tuple(float(v) for v in y))


@dataclass(frozen=True)
class Histogram:
    """Uniform-width bin counts plus the share of values >= the headline cut."""

    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    high_threshold: float
    high_proportion: float

    @property
    def total(self) -> int:
        return sum(self.counts)


def pearson(series: PairedSeries) -> float:
    """Sample Pearson correlation coefficient."""
    if len(series.x) < 3:
        raise ValueError("need at least 3 points for correlation")
    x = np.asarray(series.x, dtype=np.float64)
    y = np.asarray(series.y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt(np.sum(dx * dx) * np.sum(dy * dy))
    if denom == 0.0:
        raise ValueError("degenerate series: zero variance")
    return float(np.sum(dx * dy) / denom)


def rank(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the average of their rank range."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(series: PairedSeries) -> float:
    """Spearman rho: Pearson correlation of (average-tied) ranks."""
    if len(series.x) < 3:
        raise ValueError("need at least 3 points for correlation")
    ranked = PairedSeries.from_lists(series.ids, rank(series.x), rank(series.y))
    return pearson(ranked)


def cohens_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Cohen's kappa: (p_o - p_e) / (1 - p_e) with marginal chance agreement."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("empty label lists")
    n = len(a)
    observed = sum(x == y for x, y in zip(a, b)) / n
    freq_a = Counter(a)
    freq_b = Counter(b)
    expected = sum(freq_a[label] * freq_b.get(label, 0) for label in freq_a) / (n * n)
    if expected == 1.0:
        raise ValueError("degenerate marginals: chance agreement is 1")
    return (observed - expected) / (1.0 - expected)


def discretize(scores: Sequence[float], bins: int = 10) -> list[int]:
    """Map scores in [0, 1] to bin labels 0..bins-1 (top edge closed)."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    labels = []
    for s in scores:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"score outside [0, 1]: {s}")
        labels.append(min(int(s * bins), bins - 1))
    return labels


def similarity_histogram(
    similarities: Sequence[float],
    bins: int = 20,
    value_range: tuple[float, float] = (0.0, 1.0),
    high_threshold: float = 0.8,
) -> Histogram:
    """Bin similarity scores into uniform-width bins (final bin right-closed).

    Values are clamped to [-1, 1] first and must then fall inside
    ``value_range``. The returned histogram carries the exact share of values
    at or above ``high_threshold``, counted directly rather than from bins.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if not similarities:
        raise ValueError("empty input")
    lo, hi = value_range
    if not lo < hi:
        raise ValueError("invalid range")

    values = [max(-1.0, min(1.0, float(v))) for v in similarities]
    for v in values:
        if v < lo or v > hi:
            raise ValueError(f"value {v} outside range [{lo}, {hi}]")

    edges = [lo + (hi - lo) * i / bins for i in range(bins + 1)]
    counts = [0] * bins
    width = (hi - lo) / bins
    for v in values:
        idx = min(int((v - lo) / width), bins - 1)
        counts[idx] += 1
    high = sum(v >= high_threshold for v in values) / len(values)
    return Histogram(
        bin_edges=tuple(edges),
        counts=tuple(counts),
        high_threshold=high_threshold,
        high_proportion=high,
    )


def diversity(
    reports: Sequence[str],
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> tuple[float, float]:
    """Mean and population variance of all pairwise report cosines.

    Embeds each report as a whole and evaluates every unordered pair; the
    variance divides by the pair count. Requires at least two reports.
    """
    if len(reports) < 2:
        raise ValueError("need at least 2 reports")
    vectors = embed(list(reports), provider, cache)
    sims = [
        cosine(vectors[i], vectors[j])
        for i in range(len(vectors))
        for j in range(i + 1, len(vectors))
    ]
    arr = np.asarray(sims, dtype=np.float64)
    return float(arr.mean()), float(arr.var())
