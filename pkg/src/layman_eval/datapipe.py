"""Dataset construction: dedup filtering and the generate-then-verify loop.

The sentence pipeline runs segment -> greedy similarity dedup -> per-sentence
refinement; the report pipeline refines whole reports without dedup. Chat
backends are abstracted so the same loop runs against a remote LLM endpoint
or a deterministic glossary mock. Long runs checkpoint after every record and
resume to byte-identical output.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .embedkit import EmbeddingCache, EmbeddingProvider, Vector, cosine, embed
from .errors import ProviderError
from .jsonio import dumps_record, load_jsonl, write_json
from .textcore import SentenceRecord, split_sentences, tokenize

logger = logging.getLogger(__name__)

__all__ = [
    "LaymanPair",
    "ChatProvider",
    "ChatProviderSpec",
    "MockGlossaryProvider",
    "RemoteChatProvider",
    "DedupResult",
    "RunStats",
    "deduplicate",
    "translate_batch",
    "parse_llm_json",
    "self_check",
    "refine",
    "build_dataset",
    "apply_glossary",
]

ENV_CHAT_URL = "LAYMAN_EVAL_CHAT_URL"
ENV_API_KEY = "LAYMAN_EVAL_API_KEY"

ACCEPTED = "accepted"
FLAGGED = "flagged"
PENDING = "pending"


@dataclass(frozen=True)
class LaymanPair:
    """A professional sentence or report and its plain-language counterpart."""

    id: str
    professional: str
    layman: str
    similarity: float = -1.0
    status: str = PENDING
    iterations: int = 0

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "professional": self.professional,
            "layman": self.layman,
            "similarity": self.similarity,
            "status": self.status,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class DedupResult:
    kept: list[SentenceRecord]
    dropped: int
    comparisons: int
    degenerate: int = 0


# ---------------------------------------------------------------------------
# Prompt templates. Batches are rendered as "index. sentence" lines and the
# model must answer with a JSON object keyed by those indices.
# ---------------------------------------------------------------------------

TRANSLATE_PROMPT = """\
Given a series of sentences that are split from radiology reports.

Sentences:
{sentences}

Please finish the following tasks.
Tasks:
1. Translation: Please translate each sentence into plain language that is easy to understand. You must translate all the sentences.

For each task, return a dict keyed by the sentence number. Here is an example:
Task 1:
```json
{{
"0": "No signs of infection, fluid, or air outside of the lung.",
"1": "The unclear spots seen in both lungs are most likely just shadows."
}}
```"""

CHECK_PROMPT = """\
Given a series of Original sentences that are split from radiology reports and their translated layman's terms sentences.

Original Sentences:
{originals}

Translated Layman's Term:
{translations}

Please finish the following tasks.
Tasks:
1. Check and Modification: Please check if the translated sentence is semantically consistent and has the same detailed description as the given original sentence. If it is, make no changes; otherwise, make modifications.

For each task, return a dict keyed by the sentence number. Here is an example:
Task 1:
```json
{{
"0": "No signs of infection, fluid, or air outside of the lung."
}}
```"""

_NUMBERED_LINE = re.compile(r"^(\d+)\.\s?(.*)$")


def _numbered_block(texts: list[str]) -> str:
    # One line per text; internal whitespace collapsed so the numbering and
    # the mock parser stay line-oriented.
    return "\n".join(f"{i}. {' '.join(t.split())}" for i, t in enumerate(texts))


def _parse_numbered_block(block: str) -> dict[int, str]:
    out: dict[int, str] = {}
    for line in block.splitlines():
        m = _NUMBERED_LINE.match(line.strip())
        if m:
            out[int(m.group(1))] = m.group(2)
    return out


class ChatProvider:
    """Chat backend surface: one prompt in, one raw completion out."""

    provider_id: str

    def complete(self, prompt: str) -> str:
        raise NotImplementedError


class MockGlossaryProvider(ChatProvider):
    """Deterministic offline chat stand-in.

    Translation prompts get the professional text back with longest-match
    glossary substitutions applied left to right (case-insensitive). Check
    prompts return the translation unchanged unless the fix table maps it to
    a corrected version. Responses are fenced JSON, exercising the same
    parsing path as a live endpoint.
    """

    def __init__(self, glossary: dict[str, str] | None = None,
                 fixes: dict[str, str] | None = None,
                 provider_id: str = "mock-glossary"):
        self.glossary = dict(glossary or {})
        self.fixes = dict(fixes or {})
        self.provider_id = provider_id
        self.calls = 0

    @classmethod
    def from_files(cls, glossary_path: str | None = None, fixes_path: str | None = None,
                   provider_id: str = "mock-glossary") -> "MockGlossaryProvider":
        def load(path):
            if not path:
                return {}
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)

        return cls(load(glossary_path), load(fixes_path), provider_id)

    def complete(self, prompt: str) -> str:
        self.calls += 1
        if "Original Sentences:" in prompt:
            originals_block = prompt.split("Original Sentences:\n", 1)[1].split(
                "\n\nTranslated Layman's Term:", 1
            )[0]
            translations_block = prompt.split("Translated Layman's Term:\n", 1)[1].split(
                "\n\nPlease finish", 1
            )[0]
            translations = _parse_numbered_block(translations_block)
            _parse_numbered_block(originals_block)  # shape check only
            answer = {str(i): self.fixes.get(text, text) for i, text in translations.items()}
        else:
            block = prompt.split("Sentences:\n", 1)[1].split("\n\nPlease finish", 1)[0]
            sentences = _parse_numbered_block(block)
            answer = {str(i): apply_glossary(text, self.glossary) for i, text in sentences.items()}
        return "```json\n" + json.dumps(answer, ensure_ascii=False) + "\n```"


class RemoteChatProvider(ChatProvider):
    """Chat-completions endpoint with the same retry policy as embeddings."""

    def __init__(
        self,
        endpoint: str | None = None,
        model: str = "default",
        api_key: str | None = None,
        provider_id: str | None = None,
        post=None,
        sleep=time.sleep,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        temperature: float = 0.0,
    ):
        endpoint = endpoint or os.environ.get(ENV_CHAT_URL)
        if not endpoint:
            raise ValueError(f"remote chat endpoint not configured (set {ENV_CHAT_URL})")
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        self.provider_id = provider_id or f"chat-{model}"
        if post is None:
            import requests

            post = requests.post
        self._post = post
        self._sleep = sleep
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.temperature = temperature

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                response = self._post(self.endpoint, json=payload, headers=headers, timeout=120)
                response.raise_for_status()
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - every failure is retriable
                last_error = exc
                logger.warning("chat request failed (attempt %d): %s", attempt + 1, exc)
        raise ProviderError(f"provider unavailable after {self.max_attempts} attempts: {last_error}")


@dataclass(frozen=True)
class ChatProviderSpec:
    """Declarative chat backend selection, resolvable from config/flags."""

    kind: str = "mock-glossary"
    provider_id: str | None = None
    endpoint: str | None = None
    model: str = "default"
    api_key: str | None = None
    glossary_path: str | None = None
    fixes_path: str | None = None

    def build(self) -> ChatProvider:
        if self.kind == "mock-glossary":
            return MockGlossaryProvider.from_files(
                self.glossary_path, self.fixes_path,
                provider_id=self.provider_id or "mock-glossary",
            )
        if self.kind == "remote-http":
            return RemoteChatProvider(
                endpoint=self.endpoint,
                model=self.model,
                api_key=self.api_key,
                provider_id=self.provider_id,
            )
        raise ValueError(f"unknown chat provider kind: {self.kind!r}")


def apply_glossary(text: str, glossary: dict[str, str]) -> str:
    """Rewrite *text* with longest-match glossary substitutions, left to right."""
    if not glossary:
        return text
    keys = sorted(glossary, key=len, reverse=True)
    lowered = {k.lower(): glossary[k] for k in keys}
    ordered = sorted(lowered, key=len, reverse=True)
    low = text.lower()
    out: list[str] = []
    i = 0
    while i < len(text):
        for key in ordered:
            if low.startswith(key, i):
                out.append(lowered[key])
                i += len(key)
                break
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


# ---------------------------------------------------------------------------
# LLM response parsing and batch translation
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```[a-zA-Z]*")


def _raise_on_duplicates(pairs):
    seen = set()
    obj = {}
    for key, value in pairs:
        if key in seen:
            raise ValueError(f"duplicate key: {key!r}")
        seen.add(key)
        obj[key] = value
    return obj


def parse_llm_json(raw: str) -> dict[int, str]:
    """Extract the first JSON object from a chat completion.

    Code fences are stripped, leading/trailing prose is tolerated, keys are
    parsed as integers, and values must be strings. Raises ValueError when no
    JSON object is found, on duplicate keys, and on non-string values.
    """
    cleaned = _FENCE_RE.sub(" ", raw)
    decoder = json.JSONDecoder(object_pairs_hook=_raise_on_duplicates)
    pos = cleaned.find("{")
    obj = None
    while pos != -1:
        try:
            candidate, _ = decoder.raw_decode(cleaned[pos:])
        except json.JSONDecodeError:
            pos = cleaned.find("{", pos + 1)
            continue
        if isinstance(candidate, dict):
            obj = candidate
            break
        pos = cleaned.find("{", pos + 1)
    if obj is None:
        raise ValueError("no JSON object found in response")

    result: dict[int, str] = {}
    for key, value in obj.items():
        try:
            index = int(key)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"non-integer key: {key!r}") from exc
        if not isinstance(value, str):
            raise ValueError(f"non-string value for key {key!r}")
        result[index] = value
    return result


def _request_indexed(provider: ChatProvider, prompt: str) -> dict[int, str]:
    # One parse retry before giving up on a malformed completion.
    raw = provider.complete(prompt)
    try:
        return parse_llm_json(raw)
    except ValueError:
        raw = provider.complete(prompt)
        try:
            return parse_llm_json(raw)
        except ValueError as exc:
            raise ProviderError(f"unparseable response: {exc}") from exc


def translate_batch(
    sentences: list[str],
    provider: ChatProvider,
    batch_size: int = 50,
) -> list[str]:
    """Translate sentences to plain language in index-keyed batches.

    Missing indices in a batch response trigger one re-request for just the
    missing subset; indices still absent afterwards raise an incomplete-batch
    error naming them.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not sentences:
        raise ValueError("no sentences to translate")

    results: dict[int, str] = {}
    for start in range(0, len(sentences), batch_size):
        batch = sentences[start : start + batch_size]
        mapping = _request_indexed(provider, TRANSLATE_PROMPT.format(sentences=_numbered_block(batch)))
        for i in range(len(batch)):
            if i in mapping:
                results[start + i] = mapping[i]
        missing = [i for i in range(len(batch)) if start + i not in results]
        if missing:
            retry_prompt = TRANSLATE_PROMPT.format(
                sentences=_numbered_block([batch[i] for i in missing])
            )
            retry_mapping = _request_indexed(provider, retry_prompt)
            for pos, i in enumerate(missing):
                if pos in retry_mapping:
                    results[start + i] = retry_mapping[pos]
            still_missing = [start + i for i in missing if start + i not in results]
            if still_missing:
                raise ProviderError(f"incomplete batch: missing indices {still_missing}")
    return [results[i] for i in range(len(sentences))]


def self_check(pair: LaymanPair, provider: ChatProvider) -> tuple[str, str]:
    """Run the consistency check; returns ("unchanged"|"revised", layman text)."""
    if not pair.professional.strip() or not pair.layman.strip():
        raise ValueError("self_check requires non-empty professional and layman texts")
    prompt = CHECK_PROMPT.format(
        originals=_numbered_block([pair.professional]),
        translations=_numbered_block([pair.layman]),
    )
    mapping = _request_indexed(provider, prompt)
    if 0 not in mapping:
        raise ProviderError("incomplete batch: missing indices [0]")
    revised = mapping[0]
    normalized_input = " ".join(pair.layman.split())
    verdict = "unchanged" if revised.strip() == normalized_input else "revised"
    return verdict, revised


# ---------------------------------------------------------------------------
# Greedy similarity dedup
# ---------------------------------------------------------------------------

def deduplicate(
    sentences: list[SentenceRecord],
    threshold: float = 0.8,
    provider: EmbeddingProvider | None = None,
    cache: EmbeddingCache | None = None,
) -> DedupResult:
    """Single forward pass keeping sentences within the similarity budget.

    A sentence survives iff its cosine with every previously kept sentence is
    <= threshold; the first occurrence always wins. Zero-token sentences are
    dropped with a warning and counted separately. Embeddings are fetched once
    per sentence up front.
    """
    if not sentences:
        raise ValueError("no sentences to deduplicate")
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    if provider is None:
        raise ValueError("an embedding provider is required")

    usable: list[SentenceRecord] = []
    degenerate = 0
    for record in sentences:
        if tokenize(record.text).tokens:
            usable.append(record)
        else:
            degenerate += 1
            logger.warning("dropping degenerate sentence %s (no tokens)", record.id)

    vectors = embed([r.text for r in usable], provider, cache)
    kept: list[SentenceRecord] = []
    kept_vectors: list[Vector] = []
    comparisons = 0
    for record, vector in zip(usable, vectors):
        duplicate = False
        for kv in kept_vectors:
            comparisons += 1
            if cosine(vector, kv) > threshold:
                duplicate = True
                break
        if duplicate:
            continue
        kept.append(record)
        kept_vectors.append(vector)

    return DedupResult(
        kept=kept,
        dropped=len(usable) - len(kept),
        comparisons=comparisons,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# Refinement loop
# ---------------------------------------------------------------------------

def _similarity(professional: str, layman: str,
                embed_provider: EmbeddingProvider,
                cache: EmbeddingCache | None) -> float:
    if not tokenize(layman).tokens:
        logger.warning("degenerate layman text, scoring as -1: %r", layman)
        return -1.0
    prof_vec, lay_vec = embed([professional, layman], embed_provider, cache)
    return cosine(prof_vec, lay_vec)


def _refine_trace(
    professional: str,
    threshold: float,
    max_iterations: int,
    chat_provider: ChatProvider,
    embed_provider: EmbeddingProvider,
    cache: EmbeddingCache | None = None,
    pair_id: str = "",
    retranslate: bool = False,
    initial_translation: str | None = None,
) -> tuple[LaymanPair, list[dict]]:
    if not professional.strip():
        raise ValueError("professional text must be non-empty")

    trace: list[dict] = []
    layman = ""
    best_layman = ""
    best_similarity = -1.0
    for round_no in range(1, max_iterations + 1):
        modified = False
        checked = False
        try:
            if round_no == 1:
                layman = (
                    initial_translation
                    if initial_translation is not None
                    else translate_batch([professional], chat_provider)[0]
                )
            elif retranslate or not layman.strip():
                # Plain re-translation, also the fallback when the previous
                # round produced nothing checkable.
                layman = translate_batch([professional], chat_provider)[0]
            else:
                verdict, layman = self_check(
                    LaymanPair(id=pair_id, professional=professional, layman=layman),
                    chat_provider,
                )
                checked = True
                modified = verdict == "revised"
        except ProviderError as exc:
            raise ProviderError(f"round {round_no}: {exc}") from exc

        positive = bool(layman.strip())
        similarity = (
            _similarity(professional, layman, embed_provider, cache) if positive else -1.0
        )
        if similarity > best_similarity:
            best_similarity = similarity
            best_layman = layman
        accepted = positive and similarity >= threshold
        trace.append(
            {
                "round": round_no,
                "similarity": similarity,
                "modified": modified,
                "checked": checked,
                "accepted": accepted,
            }
        )
        if accepted:
            pair = LaymanPair(
                id=pair_id,
                professional=professional,
                layman=layman,
                similarity=similarity,
                status=ACCEPTED,
                iterations=round_no,
            )
            return pair, trace

    pair = LaymanPair(
        id=pair_id,
        professional=professional,
        layman=best_layman,
        similarity=best_similarity,
        status=FLAGGED,
        iterations=max_iterations,
    )
    return pair, trace


def refine(
    professional: str,
    threshold: float = 0.8,
    max_iterations: int = 3,
    chat_provider: ChatProvider | None = None,
    embed_provider: EmbeddingProvider | None = None,
    cache: EmbeddingCache | None = None,
    pair_id: str = "",
    retranslate: bool = False,
) -> LaymanPair:
    """Translate then verify until the similarity gate passes or rounds run out.

    Round 1 translates; later rounds run the check-and-modify prompt (or
    re-translate when ``retranslate`` is set). A round accepts when it produced
    usable text and cosine(professional, layman) >= threshold. Exhausted pairs
    come back flagged with their best-scoring text.
    """
    if chat_provider is None or embed_provider is None:
        raise ValueError("chat and embedding providers are required")
    pair, _ = _refine_trace(
        professional,
        threshold,
        max_iterations,
        chat_provider,
        embed_provider,
        cache,
        pair_id=pair_id,
        retranslate=retranslate,
    )
    return pair


# ---------------------------------------------------------------------------
# Dataset build with checkpoint/resume
# ---------------------------------------------------------------------------

@dataclass
class RunStats:
    level: str
    total_inputs: int = 0
    total_units: int = 0
    degenerate: int = 0
    dedup: dict | None = None
    rounds: list[dict] = field(default_factory=list)
    accepted_total: int = 0
    flagged_total: int = 0

    def record(self, trace: list[dict]) -> None:
        for event in trace:
            row = self._round_row(event["round"])
            row["entered"] += 1
            if event["accepted"]:
                row["accepted"] += 1
            if event["checked"]:
                row["checks"] += 1
                if event["modified"]:
                    row["modified"] += 1

    def _round_row(self, round_no: int) -> dict:
        while len(self.rounds) < round_no:
            self.rounds.append(
                {"round": len(self.rounds) + 1, "entered": 0, "accepted": 0,
                 "checks": 0, "modified": 0}
            )
        return self.rounds[round_no - 1]

    def acceptance_curve(self) -> list[float]:
        """Cumulative fraction of units accepted by the end of each round."""
        if not self.total_units:
            return []
        curve = []
        cumulative = 0
        for row in self.rounds:
            cumulative += row["accepted"]
            curve.append(cumulative / self.total_units)
        return curve

    def as_dict(self) -> dict:
        return {
            "level": self.level,
            "total_inputs": self.total_inputs,
            "total_units": self.total_units,
            "degenerate": self.degenerate,
            "dedup": self.dedup,
            "rounds": self.rounds,
            "accepted_total": self.accepted_total,
            "flagged_total": self.flagged_total,
            "acceptance_curve": self.acceptance_curve(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunStats":
        stats = cls(level=payload["level"])
        stats.total_inputs = payload["total_inputs"]
        stats.total_units = payload["total_units"]
        stats.degenerate = payload["degenerate"]
        stats.dedup = payload["dedup"]
        stats.rounds = payload["rounds"]
        stats.accepted_total = payload["accepted_total"]
        stats.flagged_total = payload["flagged_total"]
        return stats


def _fingerprint(corpus_path: str, level: str, threshold: float,
                 max_iterations: int, retranslate: bool,
                 chat_provider: ChatProvider, embed_provider: EmbeddingProvider) -> str:
    h = hashlib.blake2b(digest_size=16)
    with open(corpus_path, "rb") as fh:
        h.update(fh.read())
    config = f"{level}|{threshold}|{max_iterations}|{retranslate}|" \
             f"{chat_provider.provider_id}|{embed_provider.provider_id}"
    h.update(config.encode("utf-8"))
    return h.hexdigest()


def _corpus_units(corpus_path: str, level: str) -> tuple[int, list[SentenceRecord]]:
    records = load_jsonl(corpus_path)
    for i, record in enumerate(records):
        if "id" not in record or "text" not in record:
            raise ValueError(f"{corpus_path}: record {i} must have 'id' and 'text'")
    if level == "report":
        units = [
            SentenceRecord(id=str(r["id"]), text=r["text"], report_id=str(r["id"]), position=0)
            for r in records
        ]
        return len(records), units
    if level != "sentence":
        raise ValueError(f"level must be 'sentence' or 'report', got {level!r}")
    presplit = all("report_id" in r and "position" in r for r in records)
    if presplit and records:
        units = [
            SentenceRecord(
                id=str(r["id"]), text=r["text"],
                report_id=str(r["report_id"]), position=int(r["position"]),
            )
            for r in records
        ]
        return len(records), units
    units = []
    for record in records:
        units.extend(split_sentences(record["text"], report_id=str(record["id"])))
    return len(records), units


def build_dataset(
    corpus_path: str,
    output_path: str,
    level: str = "sentence",
    chat_provider: ChatProvider | None = None,
    embed_provider: EmbeddingProvider | None = None,
    cache: EmbeddingCache | None = None,
    threshold: float = 0.8,
    max_iterations: int = 3,
    batch_size: int = 50,
    checkpoint_path: str | None = None,
    resume: bool = False,
    retranslate: bool = False,
    parallelism: int = 1,
    progress=None,
) -> RunStats:
    """Build a layman dataset file from a corpus, checkpointing as it goes.

    Sentence level segments every report and dedups before refining; report
    level refines each report whole. The partial output and a checkpoint JSON
    sit next to ``output_path`` until the run completes, at which point the
    dataset is atomically moved into place and the checkpoint removed.
    Resuming an interrupted run reproduces the uninterrupted output exactly
    (given deterministic providers).
    """
    if chat_provider is None or embed_provider is None:
        raise ValueError("chat and embedding providers are required")

    partial_path = output_path + ".partial"
    checkpoint_path = checkpoint_path or output_path + ".checkpoint.json"
    fingerprint = _fingerprint(
        corpus_path, level, threshold, max_iterations, retranslate,
        chat_provider, embed_provider,
    )

    total_inputs, units = _corpus_units(corpus_path, level)

    usable: list[SentenceRecord] = []
    degenerate = 0
    for unit in units:
        if tokenize(unit.text).tokens:
            usable.append(unit)
        else:
            degenerate += 1
            logger.warning("skipping degenerate unit %s (no tokens)", unit.id)

    dedup_stats = None
    if level == "sentence" and usable:
        result = deduplicate(usable, threshold=threshold, provider=embed_provider, cache=cache)
        dedup_stats = {
            "kept": len(result.kept),
            "dropped": result.dropped,
            "comparisons": result.comparisons,
        }
        usable = result.kept

    completed = 0
    stats = RunStats(level=level)
    if resume and os.path.exists(checkpoint_path):
        with open(checkpoint_path, "r", encoding="utf-8") as fh:
            state = json.load(fh)
        if state.get("fingerprint") != fingerprint:
            raise ValueError(
                "checkpoint does not match this corpus/configuration; "
                "remove it or rerun without --resume"
            )
        completed = state["completed"]
        stats = RunStats.from_dict(state["stats"])
        _truncate_partial(partial_path, completed)
    elif os.path.exists(partial_path):
        os.unlink(partial_path)

    stats.total_inputs = total_inputs
    stats.total_units = len(usable)
    stats.degenerate = degenerate
    stats.dedup = dedup_stats

    pending = usable[completed:]
    translations: list[str] = []
    if pending:
        translations = translate_batch(
            [u.text for u in pending], chat_provider, batch_size=batch_size
        )

    def run_unit(args: tuple[SentenceRecord, str]) -> tuple[LaymanPair, list[dict]]:
        unit, translation = args
        return _refine_trace(
            unit.text,
            threshold,
            max_iterations,
            chat_provider,
            embed_provider,
            cache,
            pair_id=unit.id,
            retranslate=retranslate,
            initial_translation=translation,
        )

    work = list(zip(pending, translations))
    if parallelism > 1:
        executor = ThreadPoolExecutor(max_workers=parallelism)
        outcomes = executor.map(run_unit, work)
    else:
        executor = None
        outcomes = map(run_unit, work)

    try:
        with open(partial_path, "a", encoding="utf-8") as out:
            for pair, trace in outcomes:
                out.write(dumps_record(pair.as_dict()) + "\n")
                out.flush()
                completed += 1
                stats.record(trace)
                if pair.status == ACCEPTED:
                    stats.accepted_total += 1
                else:
                    stats.flagged_total += 1
                write_json(
                    {"fingerprint": fingerprint, "completed": completed,
                     "last_id": pair.id, "stats": stats.as_dict()},
                    checkpoint_path,
                )
                if progress is not None:
                    progress(completed, len(usable))
    finally:
        if executor is not None:
            executor.shutdown(wait=False, cancel_futures=True)

    os.replace(partial_path, output_path)
    if os.path.exists(checkpoint_path):
        os.unlink(checkpoint_path)
    return stats


def _truncate_partial(partial_path: str, completed: int) -> None:
    # Keep exactly the first `completed` lines; a torn trailing line from an
    # interrupted write is discarded.
    if not os.path.exists(partial_path):
        if completed:
            raise ValueError("checkpoint exists but partial output is missing")
        return
    with open(partial_path, "rb") as fh:
        data = fh.read()
    offset = 0
    for _ in range(completed):
        nl = data.find(b"\n", offset)
        if nl == -1:
            raise ValueError("partial output has fewer records than the checkpoint")
        offset = nl + 1
    if offset != len(data):
        with open(partial_path, "r+b") as fh:
            fh.truncate(offset)
