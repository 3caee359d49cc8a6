"""Text embedding abstraction with a deterministic hashed reference embedder.

All embedders produce L2-normalized vectors (or an all-zero sentinel for
text that normalizes to nothing), so cosine similarity reduces to a dot
product everywhere downstream. The reference embedder hashes whitespace
tokens and character trigrams of the normalized text into a fixed number
of buckets; it exists so the whole pipeline is testable without any
external model, and real embedders can be plugged in through the registry.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .corpus import normalize_text

DEFAULT_DIM = 4096
REFERENCE_EMBEDDER = "hashed-trigram"

#: Parameters recorded in every reference EmbedderSpec so index files are
#: self-describing. The hash must stay fixed, portable, and non-seeded:
#: vectors have to be stable across platforms, processes, and runs.
_REFERENCE_PARAMETERS: Mapping[str, str] = {
    "hash": "blake2b-64",
    "features": "token+char-trigram",
    "normalize": "l2",
}


class EmbeddingError(ValueError):
    """Raised for invalid embedder specs or mismatched vector dimensions."""


@dataclass(frozen=True)
class EmbedderSpec:
    """Names an embedder and its vector dimensionality.

    Serialized into index headers so an index file records exactly how its
    vectors were produced.
    """

    name: str = REFERENCE_EMBEDDER
    dim: int = DEFAULT_DIM
    parameters: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dim < 8:
            raise EmbeddingError(f"embedder dim must be >= 8, got {self.dim}")
        if self.name not in _REGISTRY:
            raise EmbeddingError(
                f"unknown embedder {self.name!r}; registered: {sorted(_REGISTRY)}"
            )

    def to_dict(self) -> dict:
        return {"name": self.name, "dim": self.dim, "parameters": dict(self.parameters)}

    @classmethod
    def from_dict(cls, obj: dict) -> "EmbedderSpec":
        return cls(
            name=obj["name"],
            dim=int(obj["dim"]),
            parameters=dict(obj.get("parameters", {})),
        )


def default_spec(dim: int = DEFAULT_DIM) -> EmbedderSpec:
    """Reference embedder spec with its hash parameters filled in."""
    return EmbedderSpec(
        name=REFERENCE_EMBEDDER, dim=dim, parameters=dict(_REFERENCE_PARAMETERS)
    )


def token_bucket(token: str, dim: int) -> int:
    """Stable hash bucket in [0, dim) for one token or trigram."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def _hashed_trigram_embed(spec: EmbedderSpec, text: str) -> np.ndarray:
    normalized = normalize_text(text)
    vec = np.zeros(spec.dim, dtype=np.float64)
    if not normalized:
        return vec
    for token in normalized.split():
        vec[token_bucket(token, spec.dim)] += 1.0
        for i in range(len(token) - 2):
            vec[token_bucket(token[i : i + 3], spec.dim)] += 1.0
    norm = float(np.linalg.norm(vec))
    return vec / norm


_EmbedFn = Callable[[EmbedderSpec, str], np.ndarray]
_REGISTRY: dict[str, _EmbedFn] = {}


def register_embedder(name: str, fn: _EmbedFn) -> None:
    """Register an embedding backend; it must honor the unit-norm contract."""
    _REGISTRY[name] = fn


def registered_embedders() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


register_embedder(REFERENCE_EMBEDDER, _hashed_trigram_embed)


def embed_text(spec: EmbedderSpec, text: str) -> np.ndarray:
    """Embed text into a unit vector (or the zero sentinel for empty text).

    Deterministic for a fixed (spec, normalized text) pair; texts differing
    only in case or punctuation embed identically.
    """
    return _REGISTRY[spec.name](spec, text)


def is_zero(vec: np.ndarray) -> bool:
    """True for the all-zero sentinel that marks unembeddable text."""
    return not bool(np.any(vec))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Dot product of two unit vectors; 0 against the zero sentinel."""
    if u.shape != v.shape:
        raise EmbeddingError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.dot(u, v))
