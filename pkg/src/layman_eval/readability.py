"""Readability scoring: Flesch Reading Ease plus nine grade-level formulas.

Text statistics come from the shared tokenizer/segmenter/syllable counter, so
every score is reproducible from this package alone. Constants follow the
standard published definitions:

    easy  Flesch Reading Ease          206.835 - 1.015*ASL - 84.6*(syll/word)
    m1    Flesch-Kincaid Grade         0.39*ASL + 11.8*(syll/word) - 15.59
    m2    Gunning Fog                  0.4*(ASL + 100*complex/words)
    m3    SMOG Index                   1.0430*sqrt(poly*30/sentences) + 3.1291
    m4    Automated Readability Index  4.71*(letters/words) + 0.5*ASL - 21.43
    m5    Coleman-Liau Index           0.0588*L - 0.296*S - 15.8
    m6    Linsear Write                points-per-sentence rule (see below)
    m7    Dale-Chall                   0.1579*pct_difficult + 0.0496*ASL (+3.6365)
    m8    Spache                       0.121*ASL + 0.082*pct_unfamiliar + 0.659
    m9    McAlpine EFLAW               (words + miniwords) / sentences

where ASL is words per sentence, L/S are letters/sentences per 100 words.
Scores are reported unrounded; integer display is a CLI formatting concern.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .textcore import _read_data_lines, count_syllables, split_sentences, tokenize

__all__ = ["TextStats", "ReadabilityReport", "text_stats", "readability_suite"]


@dataclass(frozen=True)
class TextStats:
    """Raw counts needed by the readability formulas."""

    sentences: int
    words: int
    syllables: int
    letters: int
    complex_words: int
    monosyllables: int
    difficult_words_dc: int
    unfamiliar_words_spache: int
    miniwords: int

    @property
    def polysyllables(self) -> int:
        return self.complex_words


@dataclass(frozen=True)
class ReadabilityReport:
    easy: float
    m1: float
    m2: float
    m3: float
    m4: float
    m5: float
    m6: float
    m7: float
    m8: float
    m9: float

    def as_dict(self) -> dict[str, float]:
        return {
            "easy": self.easy, "m1": self.m1, "m2": self.m2, "m3": self.m3,
            "m4": self.m4, "m5": self.m5, "m6": self.m6, "m7": self.m7,
            "m8": self.m8, "m9": self.m9,
        }


@lru_cache(maxsize=None)
def familiar_words_dale_chall() -> frozenset[str]:
    return frozenset(_read_data_lines("dale_chall_words.txt"))


@lru_cache(maxsize=None)
def familiar_words_spache() -> frozenset[str]:
    return frozenset(_read_data_lines("spache_words.txt"))


def text_stats(text: str) -> TextStats:
    """Compute the counts feeding the readability suite.

    Words are tokenizer tokens (digit runs included). Letters are alphabetic
    characters only. Tokens without letters count one syllable. Word-list
    membership is an exact lowercase match; no stemming fallback.
    """
    tokens = tokenize(text).tokens
    if not tokens:
        return TextStats(0, 0, 0, 0, 0, 0, 0, 0, 0)

    sentences = len(split_sentences(text))
    dale_chall = familiar_words_dale_chall()
    spache = familiar_words_spache()

    syllables = letters = complex_words = monosyllables = 0
    difficult = unfamiliar = miniwords = 0
    for token in tokens:
        alpha = sum(c.isalpha() for c in token)
        letters += alpha
        syll = count_syllables(token) if alpha else 1
        syllables += syll
        if syll >= 3:
            complex_words += 1
        elif syll == 1:
            monosyllables += 1
        if token not in dale_chall:
            difficult += 1
        if token not in spache:
            unfamiliar += 1
        if len(token) <= 3:
            miniwords += 1

    return TextStats(
        sentences=sentences,
        words=len(tokens),
        syllables=syllables,
        letters=letters,
        complex_words=complex_words,
        monosyllables=monosyllables,
        difficult_words_dc=difficult,
        unfamiliar_words_spache=unfamiliar,
        miniwords=miniwords,
    )


def readability_suite(stats: TextStats) -> ReadabilityReport:
    """Evaluate all ten formulas on precomputed text statistics."""
    if stats.words < 1 or stats.sentences < 1:
        raise ValueError("insufficient text: need at least one word and one sentence")

    words = stats.words
    sents = stats.sentences
    asl = words / sents
    syllables_per_word = stats.syllables / words

    easy = 206.835 - 1.015 * asl - 84.6 * syllables_per_word
    m1 = 0.39 * asl + 11.8 * syllables_per_word - 15.59
    m2 = 0.4 * (asl + 100.0 * stats.complex_words / words)
    m3 = 1.0430 * math.sqrt(stats.polysyllables * 30.0 / sents) + 3.1291
    m4 = 4.71 * stats.letters / words + 0.5 * asl - 21.43
    m5 = 0.0588 * (100.0 * stats.letters / words) - 0.296 * (100.0 * sents / words) - 15.8

    # Linsear Write: easy words score 1 point, words of 3+ syllables score 3;
    # halve the per-sentence points, minus one when they do not exceed 20.
    points = (words - stats.complex_words) + 3 * stats.complex_words
    rate = points / sents
    m6 = rate / 2.0 if rate > 20 else rate / 2.0 - 1.0

    pct_difficult = 100.0 * stats.difficult_words_dc / words
    m7 = 0.1579 * pct_difficult + 0.0496 * asl
    if pct_difficult > 5.0:
        m7 += 3.6365

    m8 = 0.121 * asl + 0.082 * (100.0 * stats.unfamiliar_words_spache / words) + 0.659
    m9 = (words + stats.miniwords) / sents

    return ReadabilityReport(easy, m1, m2, m3, m4, m5, m6, m7, m8, m9)
