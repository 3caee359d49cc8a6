"""Rank-based fusion of per-modality result lists.

Linear fusion sums (n - rank) contributions per list; reciprocal rank
fusion sums 1/(k + rank). Both are purely rank-driven (no similarity
values), keep per-item provenance of contributing modalities, and order
ties deterministically so reports are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .corpus import ClipRef, Modality
from .index import RankedList

DEFAULT_RRF_K = 60.0


class FusionError(ValueError):
    """Raised for invalid fusion inputs."""


class FusionMethod(str, Enum):
    LINEAR = "linear"
    RRF = "rrf"


@dataclass
class FusedItem:
    ref: ClipRef
    score: float
    #: 1-based rank per contributing modality; absent modalities are omitted.
    provenance: dict[Modality, int]

    def provenance_wire(self) -> dict[str, Optional[int]]:
        """All three modality keys with null for non-contributing ones."""
        return {m.wire: self.provenance.get(m) for m in Modality}


@dataclass
class FusedRanking:
    items: list[FusedItem]
    method: FusionMethod
    depth_n: int

    @property
    def refs(self) -> list[ClipRef]:
        return [item.ref for item in self.items]


def _collect(lists: Sequence[RankedList]) -> dict[ClipRef, dict[Modality, int]]:
    if not lists:
        raise FusionError("fusion requires at least one ranked list")
    if len(lists) > 3:
        raise FusionError(f"fusion takes at most 3 lists, got {len(lists)}")
    seen_modalities = set()
    for ranked in lists:
        if ranked.modality is None:
            raise FusionError("fusion inputs must come from modality indices")
        if ranked.modality in seen_modalities:
            raise FusionError(f"duplicate modality {ranked.modality.wire!r} in fusion input")
        seen_modalities.add(ranked.modality)
    ranks: dict[ClipRef, dict[Modality, int]] = {}
    for ranked in lists:
        for rank, (ref, _score) in enumerate(ranked.items, start=1):
            ranks.setdefault(ref, {})[ranked.modality] = rank
    return ranks


def _order_items(scored: dict[ClipRef, tuple[float, dict[Modality, int]]]) -> list[FusedItem]:
    # Ties: better best-rank first, then more contributing modalities,
    # then ascending canonical clip id.
    def sort_key(ref: ClipRef):
        score, prov = scored[ref]
        return (-score, min(prov.values()), -len(prov), ref.clip_id)

    return [
        FusedItem(ref=ref, score=scored[ref][0], provenance=scored[ref][1])
        for ref in sorted(scored, key=sort_key)
    ]


def linear_fuse(lists: Sequence[RankedList], n: int) -> FusedRanking:
    """Fuse by summing (n - rank) over the lists containing each item.

    Items missing from a list contribute nothing for it; a single input
    list reproduces that list's order with scores n - rank.
    """
    ranks = _collect(lists)
    max_len = max((len(ranked.items) for ranked in lists), default=0)
    if n < max_len:
        raise FusionError(f"depth n={n} is smaller than the longest list ({max_len})")
    scored = {
        ref: (float(sum(n - rank for rank in prov.values())), prov)
        for ref, prov in ranks.items()
    }
    return FusedRanking(items=_order_items(scored), method=FusionMethod.LINEAR, depth_n=n)


def rrf_fuse(lists: Sequence[RankedList], k_const: float = DEFAULT_RRF_K) -> FusedRanking:
    """Fuse by summing 1 / (k_const + rank) over contributing lists."""
    if k_const <= 0:
        raise FusionError(f"rrf constant must be positive, got {k_const}")
    ranks = _collect(lists)
    scored = {
        ref: (float(sum(1.0 / (k_const + rank) for rank in prov.values())), prov)
        for ref, prov in ranks.items()
    }
    depth = max((ranked.depth for ranked in lists), default=0)
    return FusedRanking(items=_order_items(scored), method=FusionMethod.RRF, depth_n=depth)


def fuse(
    lists: Sequence[RankedList],
    method: FusionMethod,
    n: int,
    rrf_k: float = DEFAULT_RRF_K,
) -> FusedRanking:
    """Dispatch to the configured fusion method."""
    if method is FusionMethod.LINEAR:
        return linear_fuse(lists, n)
    return rrf_fuse(lists, k_const=rrf_k)
