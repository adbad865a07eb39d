"""Feature embedders.

Two embeddings are produced for every frame: a synthesis embedding (the
concatenation of several blocks computed at increasing pooling strides) used
for neighbor distances, aging deltas and inversion, and a compact policy
embedding used as input to the selection policy.

The synthetic embedder computes, for block ``b`` with pooling stride ``s_b``::

    tanh(A_b @ pool_{s_b}(x) + c_b)

where ``pool_s`` averages the frame over ``s x s`` cells (cells at the right
and bottom edges may be smaller) and ``A_b``, ``c_b`` are drawn once from a
seeded generator.  Pooling is linear, so each block is an affine map followed
by ``tanh`` and the vector-Jacobian product is analytic.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "ShapeError",
    "EmbedderSpec",
    "SyntheticEmbedder",
    "PassThroughEmbedder",
    "AffineEmbedder",
    "make_embedder",
    "embed_synthesis",
    "embed_policy",
    "embed_vjp",
    "check_frame",
    "pooling_matrix",
]

MIN_SIDE = 4


class ShapeError(ValueError):
    """Input does not have the shape the embedder was built for."""


def check_frame(frame, shape=None, min_side=MIN_SIDE) -> np.ndarray:
    """Validate a frame and return it as a float64 array."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"frame must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < min_side or arr.shape[1] < min_side:
        raise ShapeError(f"frame sides must be >= {min_side}, got {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeError(f"expected frame of shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("frame contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("frame values must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class EmbedderSpec:
    """Serializable description of an embedder.

    ``kind="synthetic"`` builds a :class:`SyntheticEmbedder` whose weights are
    fully determined by ``seed``.  ``kind="file-backed"`` is the pass-through
    embedder used with galleries that carry precomputed vectors: frames are
    vectorized as is, so both dimensions equal ``height * width``.
    """

    kind: str = "synthetic"
    seed: int = 0
    height: int = 16
    width: int = 16
    block_dims: tuple = (32, 16, 8)
    strides: tuple = (1, 2, 4)
    pool_dim: int = 16
    pool_stride: int = 4
    zero_bias: bool = False
    bias_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "block_dims", tuple(int(d) for d in self.block_dims))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if self.kind not in ("synthetic", "file-backed"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.height < MIN_SIDE or self.width < MIN_SIDE:
            raise ValueError("embedder input sides must be >= 4")
        if self.kind == "synthetic":
            if len(self.block_dims) != len(self.strides):
                raise ValueError("block_dims and strides must have equal length")
            if min(self.block_dims) < 1 or self.pool_dim < 1:
                raise ValueError("embedding dimensions must be positive")
            if min(self.strides) < 1 or self.pool_stride < 1:
                raise ValueError("strides must be positive")

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    @property
    def synthesis_dim(self) -> int:
        if self.kind == "file-backed":
            return self.height * self.width
        return sum(self.block_dims)

    @property
    def policy_dim(self) -> int:
        if self.kind == "file-backed":
            return self.height * self.width
        return self.pool_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_dims"] = list(self.block_dims)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmbedderSpec":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def pooling_matrix(height: int, width: int, stride: int) -> np.ndarray:
    """Matrix averaging a row-major vectorized frame over ``stride x stride`` cells."""
    rows = -(-height // stride)
    cols = -(-width // stride)
    P = np.zeros((rows * cols, height * width))
    for r in range(rows):
        for c in range(cols):
            ys = range(r * stride, min((r + 1) * stride, height))
            xs = range(c * stride, min((c + 1) * stride, width))
            idx = [y * width + x for y in ys for x in xs]
            P[r * cols + c, idx] = 1.0 / len(idx)
    return P


class SyntheticEmbedder:
    """Seeded multi-block affine+tanh embedder."""

    def __init__(self, spec: EmbedderSpec):
        if spec.kind != "synthetic":
            raise ValueError("SyntheticEmbedder needs a synthetic spec")
        self.spec = spec
        self.shape = spec.shape
        rng = np.random.default_rng(spec.seed)
        # draw order: (A_b, c_b) per block, then (A_p, c_p) for the policy block
        self.weights = []
        for dim, stride in zip(spec.block_dims, spec.strides):
            self.weights.append(self._draw(rng, dim, stride))
        self.policy_weights = self._draw(rng, spec.pool_dim, spec.pool_stride)
        # fold pooling into the affine maps once
        self._maps = [(A @ P, c) for A, c, P in self.weights]
        A, c, P = self.policy_weights
        self._policy_map = (A @ P, c)

    def _draw(self, rng, dim, stride):
        P = pooling_matrix(self.spec.height, self.spec.width, stride)
        cells = P.shape[0]
        A = rng.standard_normal((dim, cells)) / np.sqrt(cells)
        c = rng.standard_normal(dim) * self.spec.bias_scale
        if self.spec.zero_bias:
            c = np.zeros(dim)
        return A, c, P

    @property
    def synthesis_dim(self) -> int:
        return self.spec.synthesis_dim

    @property
    def policy_dim(self) -> int:
        return self.spec.policy_dim

    def synthesis(self, frame) -> np.ndarray:
        x = check_frame(frame, self.shape).ravel()
        return np.concatenate([np.tanh(M @ x + c) for M, c in self._maps])

    def policy(self, frame) -> np.ndarray:
        x = check_frame(frame, self.shape).ravel()
        M, c = self._policy_map
        return np.tanh(M @ x + c)

    def vjp(self, frame, cotangent) -> np.ndarray:
        x = check_frame(frame, self.shape).ravel()
        cot = _check_cotangent(cotangent, self.synthesis_dim)
        grad = np.zeros_like(x)
        start = 0
        for M, c in self._maps:
            stop = start + M.shape[0]
            y = np.tanh(M @ x + c)
            grad += M.T @ ((1.0 - y * y) * cot[start:stop])
            start = stop
        return grad.reshape(self.shape)


class PassThroughEmbedder:
    """Identity embedding on the vectorized frame (``file-backed`` kind)."""

    def __init__(self, spec: EmbedderSpec):
        self.spec = spec
        self.shape = spec.shape

    @property
    def synthesis_dim(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def policy_dim(self) -> int:
        return self.synthesis_dim

    def synthesis(self, frame) -> np.ndarray:
        return check_frame(frame, self.shape).ravel().copy()

    def policy(self, frame) -> np.ndarray:
        return self.synthesis(frame)

    def vjp(self, frame, cotangent) -> np.ndarray:
        check_frame(frame, self.shape)
        return _check_cotangent(cotangent, self.synthesis_dim).reshape(self.shape).copy()


@dataclass
class AffineEmbedder:
    """``F(x) = matrix @ vec(x) + offset``; the policy embedding is the same map."""

    matrix: np.ndarray
    offset: np.ndarray
    shape: tuple
    spec: EmbedderSpec | None = field(default=None, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        self.shape = tuple(self.shape)
        if self.matrix.shape != (self.offset.size, self.shape[0] * self.shape[1]):
            raise ShapeError("matrix, offset and frame shape are inconsistent")

    @property
    def synthesis_dim(self) -> int:
        return self.offset.size

    @property
    def policy_dim(self) -> int:
        return self.offset.size

    def synthesis(self, frame) -> np.ndarray:
        return self.matrix @ check_frame(frame, self.shape).ravel() + self.offset

    def policy(self, frame) -> np.ndarray:
        return self.synthesis(frame)

    def vjp(self, frame, cotangent) -> np.ndarray:
        check_frame(frame, self.shape)
        cot = _check_cotangent(cotangent, self.synthesis_dim)
        return (self.matrix.T @ cot).reshape(self.shape)


def _check_cotangent(cotangent, dim):
    cot = np.asarray(cotangent, dtype=np.float64).ravel()
    if cot.size != dim:
        raise ShapeError(f"cotangent length {cot.size} != embedding length {dim}")
    return cot


@lru_cache(maxsize=32)
def make_embedder(spec: EmbedderSpec):
    """Build (and memoize) the embedder described by ``spec``."""
    if spec.kind == "synthetic":
        return SyntheticEmbedder(spec)
    return PassThroughEmbedder(spec)


def _resolve(spec_or_embedder):
    if isinstance(spec_or_embedder, EmbedderSpec):
        return make_embedder(spec_or_embedder)
    return spec_or_embedder


def embed_synthesis(spec, frame) -> np.ndarray:
    return _resolve(spec).synthesis(frame)


def embed_policy(spec, frame) -> np.ndarray:
    return _resolve(spec).policy(frame)


def embed_vjp(spec, frame, cotangent) -> np.ndarray:
    """Gradient of ``<F(frame), cotangent>`` with respect to the frame."""
    return _resolve(spec).vjp(frame, cotangent)
