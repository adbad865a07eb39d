"""Age-grouped reference gallery, closeness criteria and alignment."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedder import EmbedderSpec, check_frame, make_embedder

__all__ = [
    "GalleryError",
    "AgeGroup",
    "default_age_groups",
    "AlignmentOp",
    "GalleryEntry",
    "Gallery",
    "ingest",
    "write_gallery",
    "parse_attributes",
    "format_attributes",
    "cosine_distance",
    "cosine_distances",
    "attribute_matches",
    "rank",
    "knn",
    "align",
    "CRITERIA",
]

CRITERIA = ("attributes-first", "cosine-only")


class GalleryError(ValueError):
    """Malformed gallery file or query the gallery cannot answer."""


@dataclass(frozen=True)
class AgeGroup:
    index: int
    label: str


def default_age_groups(count: int = 11, start: int = 10, span: int = 5) -> list[AgeGroup]:
    """Five-year bands ``10-14, 15-19, ..., 60-64`` by default."""
    if count < 2:
        raise ValueError("need at least two age groups")
    return [AgeGroup(i, f"{start + i * span}-{start + (i + 1) * span - 1}") for i in range(count)]


@dataclass(frozen=True)
class AlignmentOp:
    """Either ``identity`` or an ``integer-shift`` by ``offset = (dy, dx)`` with zero fill."""

    kind: str = "identity"
    offset: tuple = (0, 0)

    def __post_init__(self):
        if self.kind not in ("identity", "integer-shift"):
            raise ValueError(f"unknown alignment kind {self.kind!r}")
        object.__setattr__(self, "offset", (int(self.offset[0]), int(self.offset[1])))

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity" or self.offset == (0, 0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offset": list(self.offset)}

    @classmethod
    def from_dict(cls, d: dict) -> "AlignmentOp":
        return cls(d.get("kind", "identity"), tuple(d.get("offset", (0, 0))))


@dataclass
class GalleryEntry:
    id: str
    age_group: int
    attributes: np.ndarray
    frame: np.ndarray | None = None
    emb_s: np.ndarray | None = None
    emb_p: np.ndarray | None = None

    @property
    def has_frame(self) -> bool:
        return self.frame is not None


def parse_attributes(bits) -> np.ndarray:
    if isinstance(bits, str):
        if bits and set(bits) - {"0", "1"}:
            raise GalleryError(f"attribute string must be 0/1 characters, got {bits!r}")
        return np.array([ch == "1" for ch in bits], dtype=bool)
    return np.asarray(bits, dtype=bool)


def format_attributes(bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits, dtype=bool))


def cosine_distance(a, b) -> float:
    """``1 - <a, b> / (|a| |b|)``, clipped to ``[0, 2]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance is undefined for a zero vector")
    return float(min(2.0, max(0.0, 1.0 - float(a @ b) / (na * nb))))


def cosine_distances(matrix, q) -> np.ndarray:
    """Cosine distance from each row of ``matrix`` to ``q``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nq = np.linalg.norm(q)
    nm = np.linalg.norm(matrix, axis=1)
    if nq == 0.0 or np.any(nm == 0.0):
        raise ValueError("cosine distance is undefined for a zero vector")
    return np.clip(1.0 - (matrix @ q) / (nm * nq), 0.0, 2.0)


def attribute_matches(a, b) -> int:
    a = parse_attributes(a)
    b = parse_attributes(b)
    if a.shape != b.shape:
        raise ValueError(f"attribute length mismatch: {a.size} vs {b.size}")
    return int(np.sum(a == b))


class Gallery:
    """Immutable collection of entries with cached embeddings, grouped by age."""

    def __init__(self, entries, embedder):
        self.embedder = embedder
        self.entries: dict[str, GalleryEntry] = {}
        self.groups: dict[int, list[str]] = {}
        kinds = set()
        m = None
        for e in entries:
            if e.id in self.entries:
                raise GalleryError(f"duplicate entry id {e.id!r}")
            if m is None:
                m = e.attributes.size
            elif e.attributes.size != m:
                raise GalleryError(f"entry {e.id!r} has {e.attributes.size} attributes, expected {m}")
            kinds.add(e.has_frame)
            if e.has_frame:
                e.frame = check_frame(e.frame, embedder.shape)
                e.emb_s = embedder.synthesis(e.frame)
                e.emb_p = embedder.policy(e.frame)
            else:
                e.emb_s = np.asarray(e.emb_s, dtype=np.float64)
                e.emb_p = np.asarray(e.emb_p, dtype=np.float64)
                if e.emb_s.size != embedder.synthesis_dim or e.emb_p.size != embedder.policy_dim:
                    raise GalleryError(f"entry {e.id!r} has embeddings of the wrong length")
            self.entries[e.id] = e
            self.groups.setdefault(e.age_group, []).append(e.id)
        if not self.entries:
            raise GalleryError("gallery has no entries")
        if len(kinds) > 1:
            raise GalleryError("gallery mixes frame and embedding payloads")
        self.attribute_length = m
        self.has_frames = kinds == {True}
        self._matrices: dict[int, tuple] = {}
        self._aligned: dict[tuple, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, entry_id: str) -> GalleryEntry:
        try:
            return self.entries[entry_id]
        except KeyError:
            raise GalleryError(f"unknown entry id {entry_id!r}") from None

    def group_ids(self, group: int) -> list[str]:
        ids = self.groups.get(int(group))
        if not ids:
            raise GalleryError(f"age group {group} is empty")
        return ids

    def group_arrays(self, group: int):
        """``(ids, synthesis matrix, attribute matrix)`` for one group."""
        group = int(group)
        if group not in self._matrices:
            ids = self.group_ids(group)
            S = np.stack([self.entries[i].emb_s for i in ids])
            A = np.stack([self.entries[i].attributes for i in ids])
            self._matrices[group] = (ids, S, A)
        return self._matrices[group]

    def synthesis(self, entry_id: str) -> np.ndarray:
        return self[entry_id].emb_s

    def policy(self, entry_id: str) -> np.ndarray:
        return self[entry_id].emb_p

    def aligned_synthesis(self, entry_id: str, reference, op: AlignmentOp) -> np.ndarray:
        """Synthesis embedding of the entry after alignment to ``reference``."""
        if op.is_identity:
            return self[entry_id].emb_s
        key = (entry_id, op.kind, op.offset)
        if key not in self._aligned:
            frame = align(self[entry_id], reference, op)
            self._aligned[key] = self.embedder.synthesis(frame)
        return self._aligned[key]

    def fingerprint(self) -> np.ndarray:
        """All cached embeddings stacked in entry order (for stability checks)."""
        return np.concatenate([np.concatenate([e.emb_s, e.emb_p]) for e in self.entries.values()])


def _entry_from_record(rec: dict, lineno: int) -> GalleryEntry:
    try:
        entry_id = str(rec["id"])
        group = int(rec["age_group"])
        attrs = parse_attributes(rec["attributes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GalleryError(f"line {lineno}: {exc}") from exc
    if "frame" in rec:
        fr = rec["frame"]
        try:
            frame = np.asarray(fr["values"], dtype=np.float64).reshape(int(fr["h"]), int(fr["w"]))
        except (KeyError, ValueError) as exc:
            raise GalleryError(f"line {lineno}: bad frame payload ({exc})") from exc
        if "emb_s" in rec or "emb_p" in rec:
            raise GalleryError(f"line {lineno}: entry mixes frame and embedding payloads")
        return GalleryEntry(entry_id, group, attrs, frame=frame)
    if "emb_s" in rec and "emb_p" in rec:
        return GalleryEntry(entry_id, group, attrs, emb_s=np.asarray(rec["emb_s"], float),
                            emb_p=np.asarray(rec["emb_p"], float))
    raise GalleryError(f"line {lineno}: entry has neither a frame nor an embedding pair")


def ingest(path, embedder) -> Gallery:
    """Read a JSON-lines gallery file and cache embeddings for every entry.

    ``embedder`` may be an :class:`EmbedderSpec` or a built embedder.
    """
    if isinstance(embedder, EmbedderSpec):
        embedder = make_embedder(embedder)
    path = Path(path)
    if not path.exists():
        raise GalleryError(f"gallery file {path} does not exist")
    entries = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GalleryError(f"line {lineno}: {exc}") from exc
            entries.append(_entry_from_record(rec, lineno))
    return Gallery(entries, embedder)


def write_gallery(path, entries) -> None:
    """Write entries (``GalleryEntry`` or plain dict records) as JSON lines."""
    with Path(path).open("w") as fh:
        for e in entries:
            if isinstance(e, GalleryEntry):
                rec = {"id": e.id, "age_group": e.age_group,
                       "attributes": format_attributes(e.attributes)}
                if e.frame is not None:
                    h, w = e.frame.shape
                    rec["frame"] = {"h": h, "w": w, "values": [float(v) for v in e.frame.ravel()]}
                else:
                    rec["emb_s"] = [float(v) for v in e.emb_s]
                    rec["emb_p"] = [float(v) for v in e.emb_p]
                e = rec
            fh.write(json.dumps(e) + "\n")


def rank(gallery: Gallery, query_emb, group: int, attributes=None,
         criterion: str = "attributes-first") -> list[str]:
    """All ids of ``group`` ordered by (matches desc, cosine distance asc, id asc)."""
    if criterion not in CRITERIA:
        raise ValueError(f"unknown criterion {criterion!r}")
    ids, S, A = gallery.group_arrays(group)
    dist = cosine_distances(S, query_emb)
    if attributes is None or criterion == "cosine-only":
        matches = np.zeros(len(ids), dtype=int)
    else:
        q = parse_attributes(attributes)
        if q.size != A.shape[1]:
            raise ValueError("query attribute length differs from the gallery's")
        matches = np.sum(A == q, axis=1)
    order = sorted(range(len(ids)), key=lambda i: (-int(matches[i]), float(dist[i]), ids[i]))
    return [ids[i] for i in order]


def knn(gallery: Gallery, query, group: int, k: int, attributes=None,
        criterion: str = "attributes-first") -> list[str]:
    """The ``k`` closest entries of ``group`` to a query frame.

    ``query`` may also be a precomputed synthesis embedding (1-D array).
    """
    q = np.asarray(query, dtype=np.float64)
    if q.ndim == 2:
        q = gallery.embedder.synthesis(q)
    size = len(gallery.group_ids(group))
    if k < 1 or k > size:
        raise GalleryError(f"age group {group} has {size} entries, cannot return {k}")
    return rank(gallery, q, group, attributes, criterion)[:k]


def align(entry: GalleryEntry, reference, op: AlignmentOp) -> np.ndarray:
    """Position the entry's frame relative to ``reference``.

    Only identity and integer translation are supported; the translation moves
    content by ``op.offset`` rows/columns and fills vacated pixels with zero.
    """
    if op.kind == "identity":
        if entry.frame is None:
            return entry.emb_s
        return entry.frame
    if entry.frame is None:
        raise GalleryError("alignment requires frame payloads")
    src = entry.frame
    dy, dx = op.offset
    h, w = src.shape
    out = np.zeros_like(src)
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    if abs(dy) < h and abs(dx) < w:
        out[yd, xd] = src[ys, xs]
    return out
