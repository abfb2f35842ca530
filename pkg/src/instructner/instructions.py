"""Instruction prefixes and label alignment over tokenizer pieces.

A sample is ``instruction pieces ++ sentence pieces``. Instruction pieces and
every non-initial piece of a word carry :data:`IGNORE`; the first piece of
each sentence word carries that word's tag.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from typing import Protocol, Sequence

from .corpus import TAGS
from .errors import ContractError

TEMPLATE_RESOURCE = "instruction-template-v1.json"
MAX_INPUT_LEN = 128

LABEL_IDS = {tag: i for i, tag in enumerate(TAGS)}  # B=0, I=1, O=2
ID_LABELS = {i: tag for tag, i in LABEL_IDS.items()}
IGNORE = -100

PAD_ID = 0
N_SPECIAL = 1


@dataclass(frozen=True)
class InstructionTemplate:
    with_dataset: str
    type_only: str
    version: str

    def __post_init__(self):
        for slot in ("{entity_type}", "{dataset_name}"):
            if slot not in self.with_dataset:
                raise ContractError(f"with_dataset template lacks {slot}")
        if "{entity_type}" not in self.type_only or "{dataset_name}" in self.type_only:
            raise ContractError("type_only template must use {entity_type} only")

    @classmethod
    def load(cls, name: str = TEMPLATE_RESOURCE) -> "InstructionTemplate":
        text = resources.files("instructner.resources").joinpath(name).read_text("utf-8")
        data = json.loads(text)
        return cls(data["with_dataset"], data["type_only"], data["version"])


DEFAULT_TEMPLATE = InstructionTemplate.load()


def build_instruction(template: InstructionTemplate, entity_type: str,
                      dataset_name: str | None = None) -> str:
    if not entity_type or not entity_type.strip():
        raise ContractError("entity_type must be non-empty")
    if dataset_name:
        return template.with_dataset.format(entity_type=entity_type,
                                            dataset_name=dataset_name)
    return template.type_only.format(entity_type=entity_type)


class Tokenizer(Protocol):
    tokenizer_id: str
    vocab_size: int

    def pieces(self, word: str) -> list[int]: ...


def _hash_id(text: str, vocab_size: int) -> int:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return N_SPECIAL + int.from_bytes(digest, "little") % (vocab_size - N_SPECIAL)


@dataclass(frozen=True)
class WhitespaceTokenizer:
    """One piece per word; ids are a stable hash of the word into the vocab."""

    vocab_size: int = 16384

    @property
    def tokenizer_id(self) -> str:
        return f"ws-hash-v1/{self.vocab_size}"

    def pieces(self, word: str) -> list[int]:
        return [_hash_id("w:" + word, self.vocab_size)]


@dataclass(frozen=True)
class ChunkTokenizer:
    """Splits each word into fixed-width character chunks (a subword stand-in)."""

    vocab_size: int = 16384
    width: int = 3

    @property
    def tokenizer_id(self) -> str:
        return f"chunk-hash-v1/{self.vocab_size}/{self.width}"

    def pieces(self, word: str) -> list[int]:
        chunks = [word[i:i + self.width] for i in range(0, len(word), self.width)]
        return [_hash_id(("w:" if i == 0 else "##") + c, self.vocab_size)
                for i, c in enumerate(chunks)]


@dataclass(frozen=True)
class TokenizedSample:
    piece_ids: tuple[int, ...]
    labels: tuple[int, ...]
    word_starts: tuple[bool, ...]
    n_words: int
    n_kept: int
    truncated: bool = False
    sample_id: str = ""

    def __len__(self) -> int:
        return len(self.piece_ids)

    def start_positions(self) -> list[int]:
        return [i for i, s in enumerate(self.word_starts) if s]


def compose_input(instruction: str, tokens: Sequence[str], tokenizer: Tokenizer,
                  tags: Sequence[str] | None = None, max_input_len: int = MAX_INPUT_LEN,
                  sample_id: str = "") -> TokenizedSample:
    """Tokenize ``instruction ++ tokens`` and align word tags to first pieces.

    Whole words that do not fit in ``max_input_len`` are dropped from the
    right and ``truncated`` is set.
    """
    if not tokens:
        raise ContractError("cannot compose an empty sentence")
    if tags is not None and len(tags) != len(tokens):
        raise ContractError(f"{len(tokens)} tokens but {len(tags)} tags")
    ids: list[int] = []
    for w in instruction.split():
        ids.extend(tokenizer.pieces(w))
    if len(ids) >= max_input_len:
        raise ContractError(
            f"instruction alone uses {len(ids)} pieces (max_input_len={max_input_len})"
        )
    labels = [IGNORE] * len(ids)
    starts = [False] * len(ids)
    kept = 0
    for i, word in enumerate(tokens):
        pieces = tokenizer.pieces(word)
        if len(ids) + len(pieces) > max_input_len:
            break
        ids.extend(pieces)
        labels.append(LABEL_IDS[tags[i]] if tags is not None else IGNORE)
        labels.extend([IGNORE] * (len(pieces) - 1))
        starts.append(True)
        starts.extend([False] * (len(pieces) - 1))
        kept += 1
    return TokenizedSample(tuple(ids), tuple(labels), tuple(starts), len(tokens), kept,
                           kept < len(tokens), sample_id)


def project_labels(sample: TokenizedSample, label_ids: Sequence[int] | None = None) -> list[str]:
    """Map per-piece label ids (default: the sample's gold) back to word tags."""
    label_ids = sample.labels if label_ids is None else label_ids
    return [ID_LABELS[label_ids[i]] for i in sample.start_positions()]
