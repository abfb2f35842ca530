"""Entity knowledge base and exact cosine top-K retrieval.

The embedding function is pluggable. :class:`CharNgramEncoder` is the
built-in default: hashed character n-grams plus whole-word features, L2
normalised, fully deterministic and offline.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .blobio import read_blob, write_blob
from .errors import ContractError, ParseError, VersionMismatchError


@dataclass(frozen=True, order=True)
class KBEntry:
    name: str
    entity_type: str

    def __post_init__(self):
        if not self.name.strip() or not self.entity_type.strip():
            raise ContractError(f"KB entry needs non-empty name and type: {self!r}")


class KnowledgeBase:
    """Deduplicated ``(name, type)`` store, in first-seen order."""

    def __init__(self, entries: Sequence[KBEntry] = ()):
        self.entries: list[KBEntry] = []
        self._seen: set[KBEntry] = set()
        for e in entries:
            self.append(e)

    def append(self, entry: KBEntry) -> bool:
        if entry in self._seen:
            return False
        self._seen.add(entry)
        self.entries.append(entry)
        return True

    @property
    def size(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i) -> KBEntry:
        return self.entries[i]

    def types(self) -> list[str]:
        return sorted({e.entity_type for e in self.entries})

    def by_type(self, entity_type: str) -> list[KBEntry]:
        return [e for e in self.entries if e.entity_type == entity_type]


def load_kb(path) -> KnowledgeBase:
    kb = KnowledgeBase()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(
                    f"expected 'name<TAB>type', got {len(parts)} field(s)", path, lineno
                )
            name, etype = (p.strip() for p in parts)
            if not name or not etype:
                raise ParseError("empty name or type", path, lineno)
            kb.append(KBEntry(" ".join(name.split()), etype))
    return kb


def write_kb(path, kb: KnowledgeBase) -> None:
    Path(path).write_text(
        "".join(f"{e.name}\t{e.entity_type}\n" for e in kb), encoding="utf-8"
    )


class Encoder(Protocol):
    encoder_id: str
    dim: int

    def __call__(self, text: str) -> np.ndarray: ...


def _bucket(feature: str, dim: int) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


@dataclass(frozen=True)
class CharNgramEncoder:
    """Hash character n-grams of the lower-cased, boundary-padded text."""

    dim: int = 512
    ngram_sizes: tuple[int, ...] = (3, 4)
    word_weight: float = 1.0

    @property
    def encoder_id(self) -> str:
        sizes = "-".join(map(str, self.ngram_sizes))
        return f"char-ngram-hash-v1/d{self.dim}/n{sizes}/w{self.word_weight:g}"

    def __call__(self, text: str) -> np.ndarray:
        words = text.lower().split()
        if not words:
            raise ContractError("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        for word in words:
            padded = f"<{word}>"
            for n in self.ngram_sizes:
                for i in range(max(1, len(padded) - n + 1)):
                    vec[_bucket("c:" + padded[i:i + n], self.dim)] += 1.0
            if self.word_weight:
                vec[_bucket("w:" + word, self.dim)] += self.word_weight
        return vec / np.linalg.norm(vec)


DEFAULT_ENCODER = CharNgramEncoder()


def embed(text: str, encoder: Callable[[str], np.ndarray] = DEFAULT_ENCODER) -> np.ndarray:
    if not text or not text.strip():
        raise ContractError("cannot embed empty text")
    return np.asarray(encoder(text), dtype=np.float64)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ContractError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ContractError("cosine undefined for a zero vector")
    return float(min(1.0, max(-1.0, float(u @ v) / (nu * nv))))


@dataclass
class VectorIndex:
    vectors: np.ndarray
    encoder_id: str
    dim: int = field(init=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ContractError("index vectors must be a 2-D matrix")
        self.dim = self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def append(self, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64).reshape(1, self.dim)
        self.vectors = np.concatenate([self.vectors, vector], axis=0)


def build_index(kb: KnowledgeBase, encoder: Encoder = DEFAULT_ENCODER) -> VectorIndex:
    if len(kb) == 0:
        return VectorIndex(np.zeros((0, encoder.dim)), encoder.encoder_id)
    rows = np.stack([embed(e.name, encoder) for e in kb])
    return VectorIndex(rows, encoder.encoder_id)


def add_entry(kb: KnowledgeBase, index: VectorIndex, entry: KBEntry,
              encoder: Encoder = DEFAULT_ENCODER) -> bool:
    """Append one entry to both the KB and its index (no-op for duplicates)."""
    if index.encoder_id != encoder.encoder_id:
        raise VersionMismatchError("index and encoder disagree")
    if not kb.append(entry):
        return False
    index.append(embed(entry.name, encoder))
    return True


def save_index(path, index: VectorIndex, meta: dict | None = None) -> None:
    write_blob(path, {"kind": "vector-index", "encoder_id": index.encoder_id,
                      "dim": index.dim, "rows": len(index), "meta": meta or {}},
               {"vectors": index.vectors})


def load_index(path, encoder_id: str | None = None) -> VectorIndex:
    header, arrays = read_blob(path)
    if header.get("kind") != "vector-index":
        raise ParseError("file is not a vector index", path)
    if encoder_id is not None and header["encoder_id"] != encoder_id:
        raise VersionMismatchError(
            f"index built with {header['encoder_id']!r}, expected {encoder_id!r}"
        )
    return VectorIndex(arrays["vectors"].reshape(header["rows"], header["dim"]),
                       header["encoder_id"])


@dataclass(frozen=True)
class RetrievalResult:
    entry: KBEntry
    score: float


TIE_DECIMALS = 12


def retrieve(index: VectorIndex, kb: KnowledgeBase, query: str, k: int = 5,
             encoder: Encoder = DEFAULT_ENCODER) -> list[RetrievalResult]:
    """Exact top-k by cosine similarity.

    Order: descending score, then ascending name, then ascending type, then
    KB position. Scores are compared after rounding to ``TIE_DECIMALS`` so
    that summation-order noise cannot beat the name tie-break.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if len(kb) == 0:
        return []
    if len(index) != len(kb):
        raise ContractError(f"index has {len(index)} rows but KB has {len(kb)} entries")
    if index.encoder_id != encoder.encoder_id:
        raise VersionMismatchError(
            f"index built with {index.encoder_id!r}, query encoder is {encoder.encoder_id!r}"
        )
    q = embed(query, encoder)
    scores = index.vectors @ q
    if k < len(scores):
        # every row tied with the k-th best score must reach the tie-break
        kth = np.partition(scores, len(scores) - k)[len(scores) - k]
        pool = np.flatnonzero(scores >= kth - 10.0 ** -TIE_DECIMALS)
    else:
        pool = np.arange(len(scores))
    pool = sorted(
        pool.tolist(),
        key=lambda i: (-round(float(scores[i]), TIE_DECIMALS), kb[i].name, kb[i].entity_type, i),
    )
    return [
        RetrievalResult(kb[i], float(min(1.0, max(-1.0, scores[i])))) for i in pool[:k]
    ]


def unit_norm_ok(index: VectorIndex, tol: float = 1e-6) -> bool:
    if len(index) == 0:
        return True
    norms = np.linalg.norm(index.vectors, axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= tol))
