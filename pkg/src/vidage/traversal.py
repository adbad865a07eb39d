"""Aging delta from neighbor sets and linear traversal in feature space."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gallery import AlignmentOp, Gallery, GalleryError

__all__ = ["NeighborSets", "TraversalConfig", "aging_delta", "traverse"]


@dataclass(frozen=True)
class NeighborSets:
    young: tuple
    old: tuple

    def __post_init__(self):
        object.__setattr__(self, "young", tuple(self.young))
        object.__setattr__(self, "old", tuple(self.old))
        if len(self.young) != len(self.old):
            raise ValueError("young and old lists must have the same size")
        if len(set(self.young)) != len(self.young) or len(set(self.old)) != len(self.old):
            raise ValueError("neighbor lists must not contain duplicates")

    @property
    def k(self) -> int:
        return len(self.young)

    def group(self, which: str) -> tuple:
        return self.young if which == "young" else self.old

    def replace(self, which: str, members) -> "NeighborSets":
        if which == "young":
            return NeighborSets(members, self.old)
        return NeighborSets(self.young, members)

    def to_dict(self) -> dict:
        return {"young": list(self.young), "old": list(self.old)}

    @classmethod
    def from_dict(cls, d) -> "NeighborSets":
        return cls(d["young"], d["old"])


@dataclass(frozen=True)
class TraversalConfig:
    alpha: float = 1.0
    K: int = 5
    young_group: int = 0
    old_group: int = 10
    alignment: AlignmentOp = field(default_factory=AlignmentOp)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def _check_sets(gallery: Gallery, sets: NeighborSets, cfg: TraversalConfig):
    if sets.k != cfg.K:
        raise ValueError(f"neighbor sets have {sets.k} members, config expects K={cfg.K}")
    for ids, group in ((sets.young, cfg.young_group), (sets.old, cfg.old_group)):
        for i in ids:
            if gallery[i].age_group != group:
                raise GalleryError(f"entry {i!r} is not in age group {group}")


def aging_delta(gallery: Gallery, sets: NeighborSets, reference, cfg: TraversalConfig) -> np.ndarray:
    """Mean aligned old-neighbor embedding minus mean aligned young-neighbor embedding."""
    _check_sets(gallery, sets, cfg)
    op = cfg.alignment
    old = sum(gallery.aligned_synthesis(i, reference, op) for i in sets.old)
    young = sum(gallery.aligned_synthesis(i, reference, op) for i in sets.young)
    return (old - young) / cfg.K


def traverse(embedding, delta, alpha: float) -> np.ndarray:
    embedding = np.asarray(embedding, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if embedding.shape != delta.shape:
        raise ValueError(f"length mismatch: {embedding.shape} vs {delta.shape}")
    return embedding + alpha * delta
