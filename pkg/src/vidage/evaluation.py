"""Video-level metrics: aging consistency, temporal smoothness, matching score."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "aging_consistency",
    "block_flow",
    "temporal_smoothness",
    "matching_score",
    "metrics_report",
]


def aging_consistency(deltas, epsilon: float = 1e-2) -> float:
    """Mean over consecutive frames of ``|delta_t - delta_{t-1}| + epsilon``.

    This is the mean inverse reward; smaller is better.
    """
    D = np.asarray([np.asarray(d, dtype=np.float64) for d in deltas])
    if D.shape[0] < 2:
        raise ValueError("need at least two deltas")
    gaps = np.linalg.norm(np.diff(D, axis=0), axis=1)
    return float(np.mean(gaps) + epsilon)


def _displacements(radius):
    offs = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    return sorted(offs, key=lambda d: (d[0] ** 2 + d[1] ** 2, d[0], d[1]))


def block_flow(a, b, patch: int = 3, radius: int = 2) -> np.ndarray:
    """Integer block-matching flow from ``a`` to ``b``.

    For every pixel, the displacement ``(dy, dx)`` within ``radius`` whose
    ``patch x patch`` neighborhood in ``b`` has the smallest sum of squared
    differences to the one around the pixel in ``a``.  Frames are edge-padded.
    Ties go to the smaller displacement, then row-major order.  Returns an
    integer array of shape ``(h, w, 2)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if patch < 1 or patch % 2 == 0:
        raise ValueError("patch size must be a positive odd number")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    h, w = a.shape
    half = patch // 2
    pa = np.pad(a, half, mode="edge")
    pb = np.pad(b, half + radius, mode="edge")
    flow = np.zeros((h, w, 2), dtype=np.int64)
    best = None
    for dy, dx in _displacements(radius):
        shifted = pb[radius + dy: radius + dy + h + 2 * half, radius + dx: radius + dx + w + 2 * half]
        sq = (pa - shifted) ** 2
        ssd = sliding_window_view(sq, (patch, patch)).sum(axis=(2, 3))
        if best is None:
            best = ssd
            continue
        better = ssd < best
        best = np.where(better, ssd, best)
        flow[better] = (dy, dx)
    return flow


def temporal_smoothness(original, synthesized, patch: int = 3, radius: int = 2) -> float:
    """Mean over consecutive frame pairs of ``|flow_original - flow_synthesized|_2``."""
    original = [np.asarray(f, dtype=np.float64) for f in original]
    synthesized = [np.asarray(f, dtype=np.float64) for f in synthesized]
    if len(original) != len(synthesized):
        raise ValueError("videos differ in length")
    if len(original) < 2:
        raise ValueError("need at least two frames")
    if any(o.shape != s.shape for o, s in zip(original, synthesized)):
        raise ValueError("videos differ in frame shape")
    diffs = []
    for t in range(len(original) - 1):
        fo = block_flow(original[t], original[t + 1], patch, radius)
        fs = block_flow(synthesized[t], synthesized[t + 1], patch, radius)
        diffs.append(np.linalg.norm((fo - fs).astype(np.float64)))
    return float(np.mean(diffs))


def matching_score(frame, references, embedder):
    """Mean and standard deviation of cosine similarities in synthesis-embedding space."""
    if len(references) == 0:
        raise ValueError("need at least one reference")
    q = embedder.synthesis(frame)
    sims = []
    for ref in references:
        r = embedder.synthesis(ref)
        sims.append(float(q @ r) / (np.linalg.norm(q) * np.linalg.norm(r)))
    sims = np.asarray(sims)
    return float(sims.mean()), float(sims.std())


def metrics_report(deltas, epsilon, original, synthesized, embedder=None, references=None,
                   patch: int = 3, radius: int = 2) -> dict:
    """JSON-ready report ``{consistency, smoothness, matching, per_frame}``."""
    D = [np.asarray(d, dtype=np.float64) for d in deltas]
    per_frame = [{"frame": 0, "delta_norm": float(np.linalg.norm(D[0]))}]
    for t in range(1, len(D)):
        per_frame.append({"frame": t, "delta_norm": float(np.linalg.norm(D[t])),
                          "inverse_reward": float(np.linalg.norm(D[t] - D[t - 1]) + epsilon)})
    report = {
        "consistency": aging_consistency(D, epsilon) if len(D) >= 2 else None,
        "smoothness": temporal_smoothness(original, synthesized, patch, radius)
        if len(original) >= 2 else None,
        "matching": None,
        "per_frame": per_frame,
    }
    if embedder is not None and references:
        scores = [matching_score(f, references, embedder)[0] for f in synthesized]
        report["matching"] = {"mean": float(np.mean(scores)), "std": float(np.std(scores))}
    return report
