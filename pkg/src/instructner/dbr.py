"""Dense entity samples synthesized from knowledge-base retrieval.

For each training sentence: mine phrases, retrieve the top-K KB entries per
phrase, keep the best-scored positives (KB type equals the dataset type) and
negatives up to their caps, shuffle, and concatenate the entity names into
one token sequence. Positive entities are tagged ``B I*``; every token of a
negative entity is ``O``.

Entities are joined without separator tokens. Consecutive negatives
therefore form one undifferentiated ``O`` run, which is harmless because
negatives are never decoded as spans.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import B, I, O, decode_spans, first_iob_violation
from .errors import ContractError, ParseError
from .knowledge import (
    DEFAULT_ENCODER,
    Encoder,
    KBEntry,
    KnowledgeBase,
    VectorIndex,
    retrieve,
)
from .phrasemine import ExtractorConfig, PhraseExtractor, filter_phrases

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class CandidateEntity:
    entry: KBEntry
    origin_query: str
    score: float
    polarity: str

    @classmethod
    def for_target(cls, entry: KBEntry, target_type: str, origin_query: str = "",
                   score: float = 0.0) -> "CandidateEntity":
        polarity = POSITIVE if entry.entity_type == target_type else NEGATIVE
        return cls(entry, origin_query, float(score), polarity)

    @property
    def tokens(self) -> list[str]:
        return self.entry.name.split()


@dataclass(frozen=True)
class DBRLimits:
    max_positive: int = 10
    max_negative: int = 5

    def __post_init__(self):
        if self.max_positive < 0 or self.max_negative < 0:
            raise ContractError("DBR limits must be non-negative")
        if self.max_positive + self.max_negative == 0:
            raise ContractError("DBR limits allow no entities")


@dataclass(frozen=True)
class DBRSample:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    target_type: str
    entities: tuple[CandidateEntity, ...]
    source_sentence_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        object.__setattr__(self, "entities", tuple(self.entities))
        if len(self.tokens) != len(self.tags):
            raise ContractError("DBR sample tokens/tags length mismatch")
        if sum(len(e.tokens) for e in self.entities) != len(self.tokens):
            raise ContractError("DBR entity boundaries do not partition the tokens")
        if first_iob_violation(self.tags) is not None:
            raise ContractError("DBR tags are not IOB-valid")
        for e in self.entities:
            want = POSITIVE if e.entry.entity_type == self.target_type else NEGATIVE
            if e.polarity != want:
                raise ContractError(f"entity {e.entry.name!r} should be {want}")
        if list(self.tags) != synthesize_labels(self.entities, self.target_type):
            raise ContractError("DBR tags disagree with the entity polarities")

    @property
    def n_positive(self) -> int:
        return sum(e.polarity == POSITIVE for e in self.entities)

    @property
    def n_negative(self) -> int:
        return sum(e.polarity == NEGATIVE for e in self.entities)

    def entity_ranges(self) -> list[tuple[int, int, CandidateEntity]]:
        out, pos = [], 0
        for e in self.entities:
            n = len(e.tokens)
            out.append((pos, pos + n, e))
            pos += n
        return out


def sentence_seed(global_seed: int, sentence_id: str) -> int:
    digest = hashlib.sha256(f"{global_seed}\x00{sentence_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def gather_candidates(tokens: Sequence[str], target_type: str, index: VectorIndex,
                      kb: KnowledgeBase, k: int, extractor: PhraseExtractor,
                      config: ExtractorConfig = ExtractorConfig(),
                      encoder: Encoder = DEFAULT_ENCODER) -> list[CandidateEntity]:
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    queries = filter_phrases(extractor(tokens), config)
    best: dict[KBEntry, CandidateEntity] = {}
    for query in queries:
        for hit in retrieve(index, kb, query, k, encoder):
            kept = best.get(hit.entry)
            if kept is None or hit.score > kept.score:
                best[hit.entry] = CandidateEntity.for_target(hit.entry, target_type,
                                                             query, hit.score)
    return sorted(best.values(), key=_rank_key)


def _rank_key(c: CandidateEntity):
    return (-c.score, c.entry.name, c.entry.entity_type)


def synthesize_labels(entities: Sequence[CandidateEntity], target_type: str) -> list[str]:
    tags: list[str] = []
    for e in entities:
        words = e.entry.name.split()
        if not words:
            raise ContractError("entity with empty name")
        if e.entry.entity_type == target_type:
            tags.append(B)
            tags.extend(I for _ in words[1:])
        else:
            tags.extend(O for _ in words)
    return tags


def assemble_dbr(candidates: Sequence[CandidateEntity], target_type: str,
                 limits: DBRLimits = DBRLimits(), rng: random.Random | int = 0,
                 source_sentence_id: str = "",
                 max_tokens: int | None = None) -> DBRSample | None:
    """Cap, shuffle and concatenate candidates into one dense sample.

    When ``max_tokens`` is given, the lowest-scored entities are dropped until
    the concatenation fits. Returns ``None`` if nothing survives.
    """
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    ranked = sorted(candidates, key=_rank_key)
    pos = [c for c in ranked if c.entry.entity_type == target_type][: limits.max_positive]
    neg = [c for c in ranked if c.entry.entity_type != target_type][: limits.max_negative]
    chosen = sorted(pos + neg, key=_rank_key)
    if max_tokens is not None:
        while chosen and sum(len(c.tokens) for c in chosen) > max_tokens:
            chosen.pop()
    if not chosen:
        return None
    rng.shuffle(chosen)
    tokens = [w for c in chosen for w in c.tokens]
    return DBRSample(tokens, synthesize_labels(chosen, target_type), target_type,
                     chosen, source_sentence_id)


@dataclass(frozen=True)
class DBRStats:
    avg_positive: float
    avg_negative: float
    avg_token_len: float
    sample_count: int = 0


def dbr_stats(samples: Sequence[DBRSample]) -> DBRStats:
    if not samples:
        raise ContractError("dbr_stats needs at least one sample")
    n = len(samples)
    return DBRStats(
        sum(s.n_positive for s in samples) / n,
        sum(s.n_negative for s in samples) / n,
        sum(len(s.tokens) for s in samples) / n,
        n,
    )


@dataclass
class Synthesizer:
    """Per-sentence DBR synthesis with seeds derived from the sentence id."""

    index: VectorIndex
    kb: KnowledgeBase
    extractor: PhraseExtractor
    k: int = 5
    limits: DBRLimits = field(default_factory=DBRLimits)
    extractor_config: ExtractorConfig = field(default_factory=ExtractorConfig)
    encoder: Encoder = DEFAULT_ENCODER
    max_tokens: int | None = None

    def __call__(self, sentence_id: str, tokens: Sequence[str], target_type: str,
                 seed: int) -> DBRSample | None:
        cands = gather_candidates(tokens, target_type, self.index, self.kb, self.k,
                                  self.extractor, self.extractor_config, self.encoder)
        return assemble_dbr(cands, target_type, self.limits,
                            random.Random(sentence_seed(seed, sentence_id)),
                            sentence_id, self.max_tokens)

    def synthesize(self, items: Iterable[tuple[str, Sequence[str], str]],
                   seed: int) -> list[DBRSample]:
        out = []
        for sid, tokens, target_type in items:
            sample = self(sid, tokens, target_type, seed)
            if sample is not None:
                out.append(sample)
        return out


def random_dbr(curated: Sequence[DBRSample], kb: KnowledgeBase, seed: int,
               max_tokens: int | None = None) -> list[DBRSample]:
    """Relevance-free control: same positive/negative counts, uniform KB draws."""
    by_type: dict[str, list[KBEntry]] = {}
    for e in kb:
        by_type.setdefault(e.entity_type, []).append(e)
    out = []
    for sample in curated:
        rng = random.Random(sentence_seed(seed, "random:" + sample.source_sentence_id))
        target = sample.target_type
        pos_pool = by_type.get(target, [])
        neg_pool = [e for t, es in sorted(by_type.items()) if t != target for e in es]
        picks = rng.sample(pos_pool, min(sample.n_positive, len(pos_pool)))
        picks += rng.sample(neg_pool, min(sample.n_negative, len(neg_pool)))
        cands = [CandidateEntity.for_target(e, target, "<random>", 0.0) for e in picks]
        if max_tokens is not None:
            while cands and sum(len(c.tokens) for c in cands) > max_tokens:
                cands.pop()
        if not cands:
            continue
        rng.shuffle(cands)
        tokens = [w for c in cands for w in c.tokens]
        out.append(DBRSample(tokens, synthesize_labels(cands, target), target, cands,
                             sample.source_sentence_id))
    return out


def positive_ranges(sample: DBRSample) -> list[tuple[int, int]]:
    return [(s, e) for s, e, c in sample.entity_ranges() if c.polarity == POSITIVE]


def decoded_ranges(sample: DBRSample) -> list[tuple[int, int]]:
    return [sp.bounds for sp in decode_spans(sample.tags, sample.tokens)]


def sample_to_record(sample: DBRSample) -> dict:
    return {
        "source_sentence_id": sample.source_sentence_id,
        "target_type": sample.target_type,
        "tokens": list(sample.tokens),
        "tags": list(sample.tags),
        "entities": [
            {"name": e.entry.name, "entity_type": e.entry.entity_type,
             "origin_query": e.origin_query, "score": round(e.score, 12),
             "polarity": e.polarity}
            for e in sample.entities
        ],
    }


def record_to_sample(rec: dict) -> DBRSample:
    ents = [
        CandidateEntity(KBEntry(e["name"], e["entity_type"]), e["origin_query"],
                        float(e["score"]), e["polarity"])
        for e in rec["entities"]
    ]
    return DBRSample(rec["tokens"], rec["tags"], rec["target_type"], ents,
                     rec["source_sentence_id"])


def write_dbr_jsonl(path, samples: Iterable[DBRSample], meta: dict | None = None) -> None:
    """One JSON object per line; an optional leading ``{"record": "meta"}`` line."""
    lines = []
    if meta is not None:
        lines.append(json.dumps({"record": "meta", **meta}, sort_keys=True))
    for s in samples:
        lines.append(json.dumps({"record": "sample", **sample_to_record(s)},
                                sort_keys=True, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dbr_jsonl(path) -> tuple[dict, list[DBRSample]]:
    meta: dict = {}
    samples = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc}", path, lineno) from exc
            kind = rec.pop("record", "sample")
            if kind == "meta":
                meta = rec
            else:
                samples.append(record_to_sample(rec))
    return meta, samples
