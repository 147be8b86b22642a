"""Deterministic text primitives shared by every metric module.

Tokenization, sentence segmentation, syllable counting, and stemming are
rule-based and depend only on this module plus the bundled data files, so
identical inputs produce identical outputs on every platform. All functions
here are pure and safe to call concurrently.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

__all__ = [
    "TokenSequence",
    "SentenceRecord",
    "tokenize",
    "split_sentences",
    "count_syllables",
    "stem",
]

# Maximal runs of letters/digits (underscore excluded). Punctuation,
# including hyphens, acts as a token boundary.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_VOWEL_RUN_RE = re.compile(r"[aeiouy]+")
_OPENERS = "\"'([{“‘"


@dataclass(frozen=True)
class TokenSequence:
    """Ordered lowercased tokens, optionally with source character spans."""

    tokens: tuple[str, ...]
    source_span: tuple[tuple[int, int], ...] | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]


@dataclass(frozen=True)
class SentenceRecord:
    """One segmented sentence with provenance back to its source report."""

    id: str
    text: str
    report_id: str | None = None
    position: int = 0


def _read_data_lines(name: str) -> list[str]:
    payload = resources.files("layman_eval.data").joinpath(name).read_text("utf-8")
    return [line.strip() for line in payload.splitlines() if line.strip()]


@lru_cache(maxsize=None)
def default_abbreviations() -> frozenset[str]:
    """Abbreviations protected from sentence splitting (bundled list)."""
    return frozenset(w.lower() for w in _read_data_lines("abbreviations.txt"))


@lru_cache(maxsize=None)
def _syllable_overrides() -> dict[str, int]:
    table = {}
    for line in _read_data_lines("syllable_overrides.tsv"):
        word, _, count = line.partition("\t")
        table[word.strip().lower()] = int(count)
    return table


def tokenize(text: str) -> TokenSequence:
    """Lowercase and split *text* into letter/digit runs.

    Punctuation (hyphens included) is stripped and acts as a boundary, so
    "x-ray" yields ["x", "ray"]. Empty input yields an empty sequence.
    """
    tokens = []
    spans = []
    for m in _TOKEN_RE.finditer(text):
        tokens.append(m.group(0).lower())
        spans.append((m.start(), m.end()))
    return TokenSequence(tokens=tuple(tokens), source_span=tuple(spans))


def _protected_abbreviation(text: str, dot: int, abbreviations: frozenset[str]) -> bool:
    # Chunk of non-space characters immediately before the dot, with any
    # opening quotes/brackets stripped, e.g. "(e.g" -> "e.g".
    start = dot
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    chunk = text[start:dot].lstrip(_OPENERS).lower()
    return bool(chunk) and chunk in abbreviations


def split_sentences(
    text: str,
    report_id: str | None = None,
    abbreviations: frozenset[str] | None = None,
) -> list[SentenceRecord]:
    """Split *text* into sentences on terminal punctuation.

    A run of ``.``/``!``/``?`` followed by whitespace (or end of text) closes a
    sentence, except a lone period whose preceding word is on the abbreviation
    list. Text without terminal punctuation is returned as a single sentence.
    Sentences are trimmed; empty segments are dropped.
    """
    if abbreviations is None:
        abbreviations = default_abbreviations()

    boundaries = []
    i, n = 0, len(text)
    while i < n:
        if text[i] in ".!?":
            j = i
            while j + 1 < n and text[j + 1] in ".!?":
                j += 1
            if j + 1 >= n or text[j + 1].isspace():
                lone_period = i == j and text[j] == "."
                if not (lone_period and _protected_abbreviation(text, i, abbreviations)):
                    boundaries.append(j)
            i = j + 1
        else:
            i += 1

    records = []
    start = 0
    for b in boundaries + ([n - 1] if n else []):
        segment = text[start : b + 1].strip()
        start = b + 1
        if segment:
            pos = len(records)
            rid = f"{report_id}:{pos}" if report_id is not None else f"s{pos}"
            records.append(SentenceRecord(id=rid, text=segment, report_id=report_id, position=pos))
    return records


def count_syllables(word: str) -> int:
    """Count syllables in *word* with a vowel-group heuristic.

    Maximal runs of a/e/i/o/u/y count one syllable each; a trailing 'e' drops
    one unless that would reach zero; the bundled overrides table wins for
    listed words. Raises ValueError for input without letters.
    """
    letters = "".join(c for c in word.lower() if c.isalpha())
    if not letters:
        raise ValueError(f"not a word: {word!r}")
    override = _syllable_overrides().get(letters)
    if override is not None:
        return override
    count = len(_VOWEL_RUN_RE.findall(letters))
    if count > 1 and letters.endswith("e"):
        count -= 1
    return max(count, 1)


# ---------------------------------------------------------------------------
# Suffix-stripping stemmer (five-step pass, iterated to a fixed point).
#
# The pass follows the classic five-step suffix algorithm with one guard:
# the bare plural 's' is not stripped from words ending in 'us' or 'ss'
# ("focus", "caress"). Iterating the pass until the output stops changing
# makes stem() idempotent by construction.
# ---------------------------------------------------------------------------

_STEP2 = sorted(
    [
        ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
        ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
        ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
        ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
        ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
    ],
    key=lambda r: -len(r[0]),
)
_STEP3 = sorted(
    [
        ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
        ("ical", "ic"), ("ful", ""), ("ness", ""),
    ],
    key=lambda r: -len(r[0]),
)
_STEP4 = sorted(
    [
        "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
        "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
    ],
    key=len,
    reverse=True,
)


def _is_consonant(w: str, i: int) -> bool:
    c = w[i]
    if c in "aeiou":
        return False
    if c == "y":
        return i == 0 or not _is_consonant(w, i - 1)
    return True


def _measure(w: str) -> int:
    # Number of vowel->consonant transitions in the [C](VC)^m[V] form.
    m = 0
    prev_vowel = False
    for i in range(len(w)):
        vowel = not _is_consonant(w, i)
        if prev_vowel and not vowel:
            m += 1
        prev_vowel = vowel
    return m


def _has_vowel(w: str) -> bool:
    return any(not _is_consonant(w, i) for i in range(len(w)))


def _ends_double_consonant(w: str) -> bool:
    return len(w) >= 2 and w[-1] == w[-2] and _is_consonant(w, len(w) - 1)


def _ends_cvc(w: str) -> bool:
    if len(w) < 3:
        return False
    if not _is_consonant(w, len(w) - 3) or _is_consonant(w, len(w) - 2):
        return False
    return _is_consonant(w, len(w) - 1) and w[-1] not in "wxy"


def _step1a(w: str) -> str:
    if w.endswith("sses"):
        return w[:-2]
    if w.endswith("ies"):
        return w[:-2]
    if w.endswith("ss"):
        return w
    if w.endswith("s") and not w.endswith("us"):
        return w[:-1]
    return w


def _step1b(w: str) -> str:
    if w.endswith("eed"):
        return w[:-1] if _measure(w[:-3]) > 0 else w
    if w.endswith("ed") and _has_vowel(w[:-2]):
        w = w[:-2]
    elif w.endswith("ing") and _has_vowel(w[:-3]):
        w = w[:-3]
    else:
        return w
    if w.endswith(("at", "bl", "iz")):
        return w + "e"
    if _ends_double_consonant(w) and w[-1] not in "lsz":
        return w[:-1]
    if _measure(w) == 1 and _ends_cvc(w):
        return w + "e"
    return w


def _step1c(w: str) -> str:
    if w.endswith("y") and _has_vowel(w[:-1]):
        return w[:-1] + "i"
    return w


def _apply_rules(w: str, rules, min_measure: int) -> str:
    for suffix, replacement in rules:
        if w.endswith(suffix):
            stem_part = w[: -len(suffix)]
            if _measure(stem_part) > min_measure:
                return stem_part + replacement
            return w
    return w


def _step4(w: str) -> str:
    for suffix in _STEP4:
        if w.endswith(suffix):
            stem_part = w[: -len(suffix)]
            if _measure(stem_part) > 1:
                if suffix == "ion" and not stem_part.endswith(("s", "t")):
                    return w
                return stem_part
            return w
    return w


def _step5(w: str) -> str:
    if w.endswith("e"):
        stem_part = w[:-1]
        m = _measure(stem_part)
        if m > 1 or (m == 1 and not _ends_cvc(stem_part)):
            w = stem_part
    if _measure(w) > 1 and _ends_double_consonant(w) and w.endswith("l"):
        w = w[:-1]
    return w


def _suffix_pass(w: str) -> str:
    if len(w) <= 2:
        return w
    w = _step1a(w)
    w = _step1b(w)
    w = _step1c(w)
    w = _apply_rules(w, _STEP2, 0)
    w = _apply_rules(w, _STEP3, 0)
    w = _step4(w)
    w = _step5(w)
    return w


def stem(word: str) -> str:
    """Strip suffixes from a lowercased token; idempotent by construction."""
    current = word
    previous = None
    while current != previous:
        previous = current
        current = _suffix_pass(current)
    return current
