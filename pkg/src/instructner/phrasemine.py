"""Candidate entity phrases from a tokenised sentence.

The default extractor scores every n-gram (n <= ``max_phrase_len``) against
corpus statistics: single tokens by normalised self-information (rare words
score high), longer n-grams by normalised pointwise mutual information
rescaled to [0, 1]. Candidates may not begin or end with a stopword or a
punctuation-only token.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Protocol, Sequence

STOPWORDS_RESOURCE = "stopwords-v1.txt"

_PUNCT = re.compile(r"^[^\w]+$|^_+$")
_NUMBER = re.compile(r"^[+-]?(\d+([.,]\d+)*|\d*\.\d+)(%|e[+-]?\d+)?$", re.I)


def load_stopwords(name: str = STOPWORDS_RESOURCE) -> frozenset[str]:
    text = resources.files("instructner.resources").joinpath(name).read_text("utf-8")
    return frozenset(
        w.strip().lower() for w in text.splitlines() if w.strip() and not w.startswith("#")
    )


STOPWORDS = load_stopwords()


def is_punct(token: str) -> bool:
    return bool(_PUNCT.match(token))


def is_number(token: str) -> bool:
    return bool(_NUMBER.match(token))


@dataclass(frozen=True)
class ExtractorConfig:
    max_phrase_len: int = 5
    max_queries_per_sentence: int = 10
    min_count: int = 2
    stopwords: frozenset = field(default=STOPWORDS, repr=False)


@dataclass(frozen=True)
class PhraseCandidate:
    text: str
    start: int
    end: int
    score: float


class NgramStats:
    """Lower-cased n-gram counts over a tokenised corpus."""

    def __init__(self, sentences: Iterable[Sequence[str]] = (), max_n: int = 5):
        self.max_n = max_n
        self.counts: Counter = Counter()
        self.totals = [0] * (max_n + 1)
        for tokens in sentences:
            self.add(tokens)

    def add(self, tokens: Sequence[str]) -> None:
        low = [t.lower() for t in tokens]
        for n in range(1, self.max_n + 1):
            for i in range(len(low) - n + 1):
                self.counts[tuple(low[i:i + n])] += 1
                self.totals[n] += 1

    @property
    def vocab_size(self) -> int:
        return sum(1 for k in self.counts if len(k) == 1)

    def count(self, ngram: Sequence[str]) -> int:
        return self.counts.get(tuple(t.lower() for t in ngram), 0)

    def unigram_logp(self, word: str) -> float:
        # add-one smoothing so unseen words get the largest self-information
        denom = self.totals[1] + self.vocab_size + 1
        return math.log((self.count([word]) + 1) / denom)

    def score(self, ngram: Sequence[str], min_count: int = 2) -> float:
        n = len(ngram)
        if n == 1:
            denom = self.totals[1] + self.vocab_size + 1
            return min(1.0, -self.unigram_logp(ngram[0]) / math.log(denom)) if denom > 1 else 1.0
        c = self.count(ngram)
        if c < min_count or n > self.max_n:
            return 0.0
        logp = math.log(c / self.totals[n])
        if logp == 0.0:
            return 1.0
        pmi = logp - sum(math.log(self.count([w]) / self.totals[1]) for w in ngram)
        npmi = pmi / (-(n - 1) * logp)
        return min(1.0, max(0.0, (npmi + 1.0) / 2.0))


class PhraseExtractor(Protocol):
    def __call__(self, tokens: Sequence[str]) -> list[PhraseCandidate]: ...


def _boundary_ok(token: str, stopwords) -> bool:
    return token.lower() not in stopwords and not is_punct(token)


def extract_phrases(tokens: Sequence[str], stats: NgramStats,
                    config: ExtractorConfig = ExtractorConfig()) -> list[PhraseCandidate]:
    out: list[PhraseCandidate] = []
    sw = config.stopwords
    for start in range(len(tokens)):
        if not _boundary_ok(tokens[start], sw):
            continue
        for end in range(start + 1, min(len(tokens), start + config.max_phrase_len) + 1):
            if not _boundary_ok(tokens[end - 1], sw):
                continue
            gram = tokens[start:end]
            score = stats.score(gram, config.min_count)
            if end - start > 1 and score <= 0.0:
                continue
            out.append(PhraseCandidate(" ".join(gram), start, end, score))
    out.sort(key=lambda c: (-c.score, c.start, c.end))
    return out


@dataclass
class NgramPhraseExtractor:
    stats: NgramStats
    config: ExtractorConfig = field(default_factory=ExtractorConfig)

    def __call__(self, tokens: Sequence[str]) -> list[PhraseCandidate]:
        return extract_phrases(tokens, self.stats, self.config)


def is_query_worthy(text: str, config: ExtractorConfig = ExtractorConfig()) -> bool:
    words = text.split()
    if not words or len(words) > config.max_phrase_len:
        return False
    if all(w.lower() in config.stopwords for w in words):
        return False
    if all(is_punct(w) or is_number(w) for w in words):
        return False
    return True


def filter_phrases(candidates: Iterable[PhraseCandidate],
                   config: ExtractorConfig = ExtractorConfig()) -> list[str]:
    """Deduplicated query strings, best-scored first, capped per sentence."""
    best: dict[str, PhraseCandidate] = {}
    for c in candidates:
        if not is_query_worthy(c.text, config):
            continue
        key = " ".join(c.text.split())
        kept = best.get(key)
        if kept is None or (-c.score, c.start) < (-kept.score, kept.start):
            best[key] = c
    ranked = sorted(best.items(), key=lambda kv: (-kv[1].score, kv[1].start, kv[0]))
    return [text for text, _ in ranked[: config.max_queries_per_sentence]]
