"""Semantics-based report evaluation via layman-sentence substitution.

A candidate and a reference report are split into sentences, each sentence is
replaced by the layman text of its most similar professional entry in the
sentence index, and reports are compared two ways: the proportion of
sentences with a sufficiently similar counterpart on the other side
(precision over candidate sentences, recall over reference sentences, F1),
and the usual lexical metrics computed over the rejoined substituted texts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from . import lexmetrics
from .embedkit import EmbeddingCache, EmbeddingProvider, Vector, cosine, embed
from .jsonio import load_jsonl
from .textcore import split_sentences, tokenize

logger = logging.getLogger(__name__)

__all__ = [
    "LaymanIndex",
    "EvalConfig",
    "MetricReport",
    "build_index",
    "substitute_layman",
    "match_proportion",
    "evaluate_report",
    "evaluate_corpus",
]


@dataclass
class LaymanIndex:
    """Professional->layman sentence pairs with embeddings for the former."""

    entries: list[tuple[str, str]]
    vectors: list[Vector]
    provider: EmbeddingProvider
    cache: EmbeddingCache | None = None

    def __post_init__(self):
        if not self.entries:
            raise ValueError("index must have at least one entry")
        if len(self.entries) != len(self.vectors):
            raise ValueError("one vector per entry required")
        ids = {v.provider_id for v in self.vectors}
        if ids != {self.provider.provider_id}:
            raise ValueError(f"index vectors span providers {sorted(ids)}")

    @property
    def provider_id(self) -> str:
        return self.provider.provider_id


def build_index(
    pairs,
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> LaymanIndex:
    """Build a sentence index from (professional, layman) pairs or dataset rows."""
    entries: list[tuple[str, str]] = []
    for item in pairs:
        if isinstance(item, dict):
            entries.append((item["professional"], item["layman"]))
        else:
            professional, layman = item
            entries.append((professional, layman))
    if not entries:
        raise ValueError("index must have at least one entry")
    vectors = embed([professional for professional, _ in entries], provider, cache)
    return LaymanIndex(entries=entries, vectors=vectors, provider=provider, cache=cache)


def load_index(
    dataset_path: str,
    provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
) -> LaymanIndex:
    """Load a dataset JSONL file ({professional, layman} rows) as an index."""
    return build_index(load_jsonl(dataset_path), provider, cache)


@dataclass
class EvalConfig:
    """Evaluation knobs: match threshold, substitution mode, providers."""

    provider: EmbeddingProvider
    cache: EmbeddingCache | None = None
    theta: float = 0.8
    substitution: bool = True
    substitution_floor: float | None = None
    best_match: bool = False
    aggregation: str = "sentence-mean"

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must be in (0, 1], got {self.theta}")


@dataclass(frozen=True)
class MetricReport:
    """Per-report metric bundle: lexical scores plus semantic match rates."""

    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge1: float
    rouge2: float
    rougeL: float
    meteor: float
    semantic_precision: float
    semantic_recall: float
    semantic_f1: float
    matched_pairs: tuple[tuple[int, int, float], ...] = ()

    def as_dict(self, include_pairs: bool = True) -> dict:
        payload = {
            "bleu1": self.bleu1, "bleu2": self.bleu2,
            "bleu3": self.bleu3, "bleu4": self.bleu4,
            "rouge1": self.rouge1, "rouge2": self.rouge2, "rougeL": self.rougeL,
            "meteor": self.meteor,
            "semantic_precision": self.semantic_precision,
            "semantic_recall": self.semantic_recall,
            "semantic_f1": self.semantic_f1,
        }
        if include_pairs:
            payload["matched_pairs"] = [list(p) for p in self.matched_pairs]
        return payload


AGGREGATE_FIELDS = (
    "bleu1", "bleu2", "bleu3", "bleu4",
    "rouge1", "rouge2", "rougeL", "meteor",
    "semantic_precision", "semantic_recall", "semantic_f1",
)


def substitute_layman(
    sentences: list[str],
    index: LaymanIndex,
    floor: float | None = None,
) -> list[str]:
    """Replace each sentence with the layman text of its argmax-similar entry.

    Ties break toward the lowest entry index. With a floor set, sentences
    whose best similarity falls below it keep their original text (flagged in
    the log, never silently). Token-less sentences are kept unmodified.
    """
    if not sentences:
        return []

    embeddable = []
    for i, s in enumerate(sentences):
        if tokenize(s).tokens:
            embeddable.append(i)
        else:
            logger.warning("degenerate sentence kept unmodified: %r", s)
    if not embeddable:
        return list(sentences)

    vectors = embed([sentences[i] for i in embeddable], index.provider, index.cache)
    out = list(sentences)
    for pos, i in enumerate(embeddable):
        best_sim = None
        best_entry = 0
        for entry_idx, entry_vec in enumerate(index.vectors):
            sim = cosine(vectors[pos], entry_vec)
            if best_sim is None or sim > best_sim:
                best_sim = sim
                best_entry = entry_idx
        if floor is not None and best_sim < floor:
            logger.warning(
                "substitution floor %.3f not reached (best %.3f); keeping %r",
                floor, best_sim, sentences[i],
            )
            continue
        out[i] = index.entries[best_entry][1]
    return out


def match_proportion(
    candidate_sentences: list[str],
    reference_sentences: list[str],
    theta: float = 0.8,
    provider: EmbeddingProvider | None = None,
    cache: EmbeddingCache | None = None,
    best_match: bool = False,
) -> tuple[float, float, float, list[tuple[int, int, float]]]:
    """Thresholded any-match sentence proportions between two reports.

    A candidate sentence counts as matched when any reference sentence
    reaches cosine >= theta (first match short-circuits); recall mirrors the
    loop over reference sentences; F1 is their harmonic mean. matched_pairs
    holds the first (or, with best_match, the highest-similarity) match per
    counted sentence, deduplicated. Token-less sentences never match but stay
    in the denominators.
    """
    if not candidate_sentences or not reference_sentences:
        raise ValueError("empty report")
    if provider is None:
        raise ValueError("an embedding provider is required")

    def vector_map(texts: list[str]) -> dict[int, Vector]:
        usable = [i for i, t in enumerate(texts) if tokenize(t).tokens]
        vectors = embed([texts[i] for i in usable], provider, cache) if usable else []
        return dict(zip(usable, vectors))

    cand_vecs = vector_map(candidate_sentences)
    ref_vecs = vector_map(reference_sentences)

    pairs: dict[tuple[int, int], float] = {}
    matched_candidates = 0
    for i in range(len(candidate_sentences)):
        if i not in cand_vecs:
            continue
        best: tuple[int, float] | None = None
        for j in range(len(reference_sentences)):
            if j not in ref_vecs:
                continue
            sim = cosine(cand_vecs[i], ref_vecs[j])
            if sim >= theta:
                if not best_match:
                    best = (j, sim)
                    break
                if best is None or sim > best[1]:
                    best = (j, sim)
        if best is not None:
            matched_candidates += 1
            pairs.setdefault((i, best[0]), best[1])

    matched_references = 0
    for j in range(len(reference_sentences)):
        if j not in ref_vecs:
            continue
        best = None
        for i in range(len(candidate_sentences)):
            if i not in cand_vecs:
                continue
            sim = cosine(cand_vecs[i], ref_vecs[j])
            if sim >= theta:
                if not best_match:
                    best = (i, sim)
                    break
                if best is None or sim > best[1]:
                    best = (i, sim)
        if best is not None:
            matched_references += 1
            pairs.setdefault((best[0], j), best[1])

    precision = matched_candidates / len(candidate_sentences)
    recall = matched_references / len(reference_sentences)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    matched_pairs = [(i, j, sim) for (i, j), sim in pairs.items()]
    return precision, recall, f1, matched_pairs


def evaluate_report(
    candidate: str,
    reference: str,
    index: LaymanIndex | None,
    config: EvalConfig,
) -> MetricReport:
    """Evaluate one candidate/reference pair per the substitution pipeline.

    Both reports are split into sentences; with substitution on, both sides
    are rewritten from the index before any scoring. Lexical metrics run on
    the rejoined (possibly substituted) texts; the semantic proportions run on
    the sentence lists.
    """
    if not candidate.strip() or not reference.strip():
        raise ValueError("empty report")
    cand_sentences = [r.text for r in split_sentences(candidate)]
    ref_sentences = [r.text for r in split_sentences(reference)]

    if config.substitution:
        if index is None:
            raise ValueError("substitution requires a sentence index")
        if index.provider_id != config.provider.provider_id:
            raise ValueError(
                f"index provider {index.provider_id!r} does not match "
                f"run provider {config.provider.provider_id!r}"
            )
        cand_sentences = substitute_layman(cand_sentences, index, config.substitution_floor)
        ref_sentences = substitute_layman(ref_sentences, index, config.substitution_floor)

    precision, recall, f1, matched = match_proportion(
        cand_sentences,
        ref_sentences,
        theta=config.theta,
        provider=config.provider,
        cache=config.cache,
        best_match=config.best_match,
    )

    cand_tokens = tokenize(" ".join(cand_sentences))
    ref_tokens = tokenize(" ".join(ref_sentences))
    rouge1 = lexmetrics.rouge_n(cand_tokens, ref_tokens, 1).f1
    rouge2 = lexmetrics.rouge_n(cand_tokens, ref_tokens, 2).f1
    rougeL = lexmetrics.rouge_l(cand_tokens, ref_tokens).f1

    return MetricReport(
        bleu1=lexmetrics.bleu(cand_tokens, ref_tokens, max_n=1),
        bleu2=lexmetrics.bleu(cand_tokens, ref_tokens, max_n=2),
        bleu3=lexmetrics.bleu(cand_tokens, ref_tokens, max_n=3),
        bleu4=lexmetrics.bleu(cand_tokens, ref_tokens, max_n=4),
        rouge1=rouge1,
        rouge2=rouge2,
        rougeL=rougeL,
        meteor=lexmetrics.meteor_lite(cand_tokens, ref_tokens),
        semantic_precision=precision,
        semantic_recall=recall,
        semantic_f1=f1,
        matched_pairs=tuple(matched),
    )


def evaluate_corpus(
    candidates_path: str,
    references_path: str,
    index: LaymanIndex | None,
    config: EvalConfig,
) -> tuple[dict, list[tuple[str, MetricReport]], list[float]]:
    """Evaluate aligned candidate/reference files.

    Records pair up by id; ids present on only one side abort with an error
    listing them. Returns the arithmetic-mean aggregate, the per-report
    results, and every matched-pair similarity (histogram input).
    """
    candidates = {str(r["id"]): r["text"] for r in load_jsonl(candidates_path)}
    references = {str(r["id"]): r["text"] for r in load_jsonl(references_path)}
    only_cand = sorted(set(candidates) - set(references))
    only_ref = sorted(set(references) - set(candidates))
    if only_cand or only_ref:
        raise ValueError(
            f"id mismatch: only in candidates {only_cand}; only in references {only_ref}"
        )
    if not candidates:
        raise ValueError("empty corpus")

    reports: list[tuple[str, MetricReport]] = []
    similarities: list[float] = []
    for record_id in candidates:
        report = evaluate_report(candidates[record_id], references[record_id], index, config)
        reports.append((record_id, report))
        similarities.extend(sim for _, _, sim in report.matched_pairs)

    aggregate = {
        name: sum(getattr(r, name) for _, r in reports) / len(reports)
        for name in AGGREGATE_FIELDS
    }
    aggregate["reports"] = len(reports)
    return aggregate, reports, similarities
