"""IOB-tagged corpora: loading, validation, span conversion and statistics.

Files are token-per-line, ``token<TAB>tag``, with a blank line between
sentences. Tags are bare ``B``/``I``/``O``; the entity category lives on the
:class:`DatasetSpec`, since every dataset carries exactly one type.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from .errors import ContractError, IOBError, ParseError, ValidationError

log = logging.getLogger(__name__)

B, I, O = "B", "I", "O"
TAGS = (B, I, O)
SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    entity_type: str
    split_paths: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.name.strip():
            raise ContractError("dataset name must be non-empty")
        if not self.entity_type.strip():
            raise ContractError(f"dataset {self.name!r}: entity_type must be non-empty")
        unknown = set(self.split_paths) - set(SPLITS)
        if unknown:
            raise ContractError(f"dataset {self.name!r}: unknown splits {sorted(unknown)}")


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int
    surface: str
    entity_type: str = ""

    @property
    def bounds(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) != len(self.tags):
            raise ContractError(
                f"{len(self.tokens)} tokens but {len(self.tags)} tags"
            )
        for tok in self.tokens:
            if not tok or any(c.isspace() for c in tok):
                raise ValidationError(f"token {tok!r} is empty or contains whitespace")
        for tag in self.tags:
            if tag not in TAGS:
                raise ValidationError(f"invalid tag {tag!r}")
        pos = first_iob_violation(self.tags)
        if pos is not None:
            raise IOBError(f"I tag at position {pos} does not continue an entity")

    def __len__(self) -> int:
        return len(self.tokens)

    def spans(self, entity_type: str = "") -> list[EntitySpan]:
        return decode_spans(self.tags, self.tokens, entity_type)


@dataclass(frozen=True)
class CorpusStats:
    sentence_count: int
    entity_count: int
    avg_entities_per_sentence: float
    avg_tokens_per_sentence: float


def first_iob_violation(tags: Sequence[str]) -> int | None:
    """Index of the first ``I`` that starts a sequence or follows ``O``."""
    prev = O
    for i, tag in enumerate(tags):
        if tag == I and prev == O:
            return i
        prev = tag
    return None


def is_iob_valid(tags: Sequence[str]) -> bool:
    return all(t in TAGS for t in tags) and first_iob_violation(tags) is None


def repair_iob(tags: Sequence[str]) -> list[str]:
    """Turn every illegal ``I`` into ``B``."""
    out = []
    prev = O
    for tag in tags:
        if tag == I and prev == O:
            tag = B
        out.append(tag)
        prev = tag
    return out


def decode_spans(
    tags: Sequence[str], tokens: Sequence[str], entity_type: str = ""
) -> list[EntitySpan]:
    """Maximal ``B I*`` runs as spans, sorted by start."""
    if len(tags) != len(tokens):
        raise ContractError(f"length mismatch: {len(tags)} tags, {len(tokens)} tokens")
    spans = []
    start = None
    for i, tag in enumerate(tags):
        if tag == I:
            if start is None:
                raise IOBError(f"I tag at position {i} does not continue an entity")
            continue
        if start is not None:
            spans.append(EntitySpan(start, i, " ".join(tokens[start:i]), entity_type))
            start = None
        if tag == B:
            start = i
        elif tag != O:
            raise ValidationError(f"invalid tag {tag!r} at position {i}")
    if start is not None:
        spans.append(
            EntitySpan(start, len(tags), " ".join(tokens[start:]), entity_type)
        )
    return spans


def encode_spans(spans: Iterable[EntitySpan | tuple[int, int]], length: int) -> list[str]:
    tags = [O] * length
    for span in sorted(spans, key=_bounds):
        start, end = _bounds(span)
        if not 0 <= start < end <= length:
            raise ContractError(f"span [{start},{end}) outside [0,{length})")
        if any(t != O for t in tags[start:end]):
            raise ContractError(f"span [{start},{end}) overlaps another span")
        tags[start] = B
        for k in range(start + 1, end):
            tags[k] = I
    return tags


def _bounds(span) -> tuple[int, int]:
    if isinstance(span, EntitySpan):
        return span.start, span.end
    return int(span[0]), int(span[1])


def load_conll(path, spec: DatasetSpec, lenient: bool = False) -> list[LabeledSentence]:
    """Read a ``token<TAB>tag`` file.

    In strict mode (default) an IOB-invalid sentence raises :class:`IOBError`
    naming the sentence index; ``lenient=True`` rewrites illegal ``I`` tags
    to ``B`` instead.
    """
    path = Path(path)
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    tags: list[str] = []
    repaired = 0

    def flush():
        nonlocal repaired
        if not tokens:
            return
        idx = len(sentences)
        pos = first_iob_violation(tags)
        fixed = tags
        if pos is not None:
            if not lenient:
                raise IOBError(
                    f"{path}: sentence {idx} has an I tag at token {pos} "
                    "that does not continue an entity",
                    sentence_index=idx,
                )
            fixed = repair_iob(tags)
            repaired += 1
        sentences.append(LabeledSentence(tuple(tokens), tuple(fixed), spec.name))
        tokens.clear()
        tags.clear()

    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(
                    f"expected 'token<TAB>tag', got {len(parts)} field(s): {line!r}",
                    path, lineno,
                )
            tok, tag = parts
            if tag not in TAGS:
                raise ParseError(f"invalid tag {tag!r} (allowed: B, I, O)", path, lineno)
            if not tok or any(c.isspace() for c in tok):
                raise ParseError(f"token {tok!r} is empty or contains whitespace", path, lineno)
            tokens.append(tok)
            tags.append(tag)
    flush()
    if repaired:
        log.warning("%s: repaired %d IOB-invalid sentence(s)", path, repaired)
    return sentences


def dumps_conll(sentences: Iterable[LabeledSentence]) -> str:
    blocks = []
    for s in sentences:
        blocks.append("".join(f"{t}\t{g}\n" for t, g in zip(s.tokens, s.tags)))
    return "\n".join(blocks)


def write_conll(path, sentences: Iterable[LabeledSentence]) -> None:
    Path(path).write_text(dumps_conll(sentences), encoding="utf-8")


def corpus_stats(sentences: Sequence[LabeledSentence]) -> CorpusStats:
    if not sentences:
        raise ContractError("corpus_stats needs at least one sentence")
    n = len(sentences)
    entities = sum(len(decode_spans(s.tags, s.tokens)) for s in sentences)
    tokens = sum(len(s.tokens) for s in sentences)
    return CorpusStats(n, entities, entities / n, tokens / n)


def load_registry(path) -> dict[str, DatasetSpec]:
    """Parse a dataset registry (YAML or JSON).

    Layout::

        datasets:
          NCBI:
            entity_type: Disease
            train: ncbi/train.conll
            dev: ncbi/dev.conll
            test: ncbi/test.conll

    Relative paths resolve against the registry file's directory.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ParseError(f"cannot parse registry: {exc}", path) from exc
    if not isinstance(data, dict) or not isinstance(data.get("datasets"), dict):
        raise ParseError("registry must contain a 'datasets' mapping", path)
    registry: dict[str, DatasetSpec] = {}
    for name, entry in data["datasets"].items():
        name = str(name)
        if not isinstance(entry, dict) or "entity_type" not in entry:
            raise ParseError(f"dataset {name!r} needs an 'entity_type'", path)
        splits = {}
        for split in SPLITS:
            if entry.get(split):
                p = Path(entry[split])
                splits[split] = p if p.is_absolute() else path.parent / p
        registry[name] = DatasetSpec(name, str(entry["entity_type"]), splits)
    return registry


def dump_registry(registry: dict[str, DatasetSpec]) -> str:
    data = {
        "datasets": {
            spec.name: {"entity_type": spec.entity_type}
            | {k: str(v) for k, v in spec.split_paths.items()}
            for spec in registry.values()
        }
    }
    return yaml.safe_dump(data, sort_keys=False)


def load_split(spec: DatasetSpec, split: str, lenient: bool = False) -> list[LabeledSentence]:
    if split not in spec.split_paths:
        raise ValidationError(f"dataset {spec.name!r} has no {split!r} split")
    p = Path(spec.split_paths[split])
    if not p.exists():
        raise ValidationError(f"dataset {spec.name!r}: missing file {p}")
    return load_conll(p, spec, lenient=lenient)
