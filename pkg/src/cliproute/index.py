"""Per-modality vector indices with exact top-n cosine search.

One immutable index per searchable source (the three modalities plus the
optional fused-caption index): each clip's text is split into sentences,
every sentence embedded, and the sentence vectors mean-pooled into a single
re-normalized vector per clip. Search is an exhaustive scan, which keeps
results exact and deterministic at desk scale; the on-disk format is
versioned and self-describing so files round-trip bit-exactly.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import ClipRef, Corpus, Modality, parse_clip_id
from .embed import EmbedderSpec, EmbeddingError, embed_text, is_zero

FORMAT_NAME = "cliproute-index"
FORMAT_VERSION = 1
DEFAULT_DEPTH = 50

FUSED_SOURCE = "fused"
INDEX_SOURCES = ("asr", "ocr", "visuals", FUSED_SOURCE)

_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")


class IndexingError(RuntimeError):
    """Raised for index build, search, or serialization failures."""


@dataclass
class BuildStats:
    indexed: int
    skipped: int
    empty: bool = False

    def to_dict(self) -> dict:
        return {"indexed": self.indexed, "skipped": self.skipped, "empty": self.empty}


@dataclass
class ModalityIndex:
    """Immutable searchable store of unit vectors for one text source."""

    source: str
    embedder: EmbedderSpec
    clip_refs: list[ClipRef]
    matrix: np.ndarray  # (len(clip_refs), embedder.dim) float64 unit rows
    build_stats: BuildStats

    def __post_init__(self) -> None:
        # Precomputed canonical-id array drives the deterministic tie-break.
        self._id_array = np.array([ref.clip_id for ref in self.clip_refs])

    def __len__(self) -> int:
        return len(self.clip_refs)

    @property
    def modality(self) -> Optional[Modality]:
        """The modality this index serves; None for the fused-caption index."""
        return Modality.from_wire(self.source)


@dataclass
class RankedList:
    """Top-n search result for one source, scores non-increasing."""

    modality: Optional[Modality]
    items: list[tuple[ClipRef, float]]
    depth: int


def split_sentences(text: str) -> list[str]:
    """Split on sentence punctuation; parts that normalize to nothing drop out."""
    return [part for part in _SENTENCE_SPLIT_RE.split(text) if part.strip()]


def _pool_clip_vector(spec: EmbedderSpec, text: str) -> Optional[np.ndarray]:
    vectors = []
    for sentence in split_sentences(text):
        vec = embed_text(spec, sentence)
        if not is_zero(vec):
            vectors.append(vec)
    if not vectors:
        return None
    pooled = np.mean(vectors, axis=0)
    norm = float(np.linalg.norm(pooled))
    if norm == 0.0:
        return None
    return pooled / norm


def _build_for_source(corpus: Corpus, source: str, spec: EmbedderSpec) -> ModalityIndex:
    refs: list[ClipRef] = []
    rows: list[np.ndarray] = []
    skipped = 0
    for clip in corpus:
        text = clip.text_for(source)
        vector = _pool_clip_vector(spec, text) if text else None
        if vector is None:
            skipped += 1
            continue
        refs.append(clip.ref)
        rows.append(vector)
    matrix = (
        np.vstack(rows) if rows else np.zeros((0, spec.dim), dtype=np.float64)
    )
    stats = BuildStats(indexed=len(refs), skipped=skipped, empty=not refs)
    return ModalityIndex(
        source=source, embedder=spec, clip_refs=refs, matrix=matrix, build_stats=stats
    )


def build_index(corpus: Corpus, modality: Modality, spec: EmbedderSpec) -> ModalityIndex:
    """Build the vector index for one modality's text field."""
    return _build_for_source(corpus, modality.wire, spec)


def build_fused_index(corpus: Corpus, spec: EmbedderSpec) -> ModalityIndex:
    """Build the index over fused captions (the all-text baseline)."""
    return _build_for_source(corpus, FUSED_SOURCE, spec)


def search(index: ModalityIndex, query_vec: np.ndarray, n: int) -> RankedList:
    """Exhaustive top-n cosine search with a deterministic tie-break.

    Ties in score are broken by ascending canonical clip id. A zero-sentinel
    query (unembeddable text) yields an empty result.
    """
    if n < 1:
        raise IndexingError(f"search depth must be >= 1, got {n}")
    if query_vec.shape != (index.embedder.dim,):
        raise EmbeddingError(
            f"query dim {query_vec.shape} does not match index dim ({index.embedder.dim},)"
        )
    if is_zero(query_vec) or not len(index):
        return RankedList(modality=index.modality, items=[], depth=n)
    scores = index.matrix @ query_vec
    order = np.lexsort((index._id_array, -scores))[:n]
    items = [(index.clip_refs[i], float(scores[i])) for i in order]
    return RankedList(modality=index.modality, items=items, depth=n)


def save_index(index: ModalityIndex, path: str | Path) -> None:
    """Write the versioned binary index file.

    Layout: one JSON header line, then per entry a little-endian u32 id
    length, the UTF-8 clip id, and ``dim`` little-endian float64 values.
    Writing the same index twice produces identical bytes.
    """
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "source": index.source,
        "embedder": index.embedder.to_dict(),
        "dim": index.embedder.dim,
        "count": len(index.clip_refs),
        "build_stats": index.build_stats.to_dict(),
    }
    with Path(path).open("wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for ref, row in zip(index.clip_refs, index.matrix):
            id_bytes = ref.clip_id.encode("utf-8")
            handle.write(struct.pack("<I", len(id_bytes)))
            handle.write(id_bytes)
            handle.write(row.astype("<f8").tobytes())


def load_index(path: str | Path) -> ModalityIndex:
    """Read an index file back; inverse of :func:`save_index`."""
    path = Path(path)
    with path.open("rb") as handle:
        header_line = handle.readline()
        try:
            header = json.loads(header_line)
        except ValueError:
            raise IndexingError(f"{path}: not an index file (bad header)") from None
        if header.get("format") != FORMAT_NAME:
            raise IndexingError(f"{path}: unexpected format {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise IndexingError(f"{path}: unsupported version {header.get('version')!r}")
        spec = EmbedderSpec.from_dict(header["embedder"])
        count = int(header["count"])
        dim = int(header["dim"])
        row_bytes = dim * 8
        refs: list[ClipRef] = []
        rows: list[np.ndarray] = []
        for _ in range(count):
            (id_len,) = struct.unpack("<I", handle.read(4))
            refs.append(parse_clip_id(handle.read(id_len).decode("utf-8")))
            rows.append(np.frombuffer(handle.read(row_bytes), dtype="<f8"))
        stats_obj = header.get("build_stats", {})
        stats = BuildStats(
            indexed=int(stats_obj.get("indexed", count)),
            skipped=int(stats_obj.get("skipped", 0)),
            empty=bool(stats_obj.get("empty", count == 0)),
        )
        matrix = np.vstack(rows) if rows else np.zeros((0, dim), dtype=np.float64)
        return ModalityIndex(
            source=header["source"],
            embedder=spec,
            clip_refs=refs,
            matrix=matrix,
            build_stats=stats,
        )
