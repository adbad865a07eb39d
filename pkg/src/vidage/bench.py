"""Synthetic benchmark: an age-grouped gallery with a known aging direction and
smooth videos to age.

Young entries are smooth textures scattered around a few cluster centers.
Each old entry is the counterpart of one young entry shifted by a fixed
ground-truth direction ``g`` plus independent noise, so the true aging
direction is known.  Videos are smooth trajectories around a new subject:
a slow sinusoidal drift plus small per-frame perturbations.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .gallery import GalleryEntry, format_attributes, write_gallery
from .io import VideoSequence, write_json, write_video

__all__ = ["BenchmarkSizes", "Benchmark", "generate_synthetic_benchmark", "write_benchmark",
           "quantize"]


def quantize(x) -> np.ndarray:
    """Snap to the 16-bit grid used by the frame files so round trips are exact."""
    return np.rint(np.clip(x, 0.0, 1.0) * 65535.0) / 65535.0


@dataclass(frozen=True)
class BenchmarkSizes:
    entries_per_group: int = 60
    videos: int = 4
    frames: int = 20
    height: int = 12
    width: int = 12
    clusters: int = 4
    attributes: int = 6
    spread: float = 0.06
    noise: float = 0.03
    drift: float = 0.04
    jitter: float = 0.015
    young_group: int = 1
    old_group: int = 9

    def __post_init__(self):
        for name in ("entries_per_group", "videos", "frames", "clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.height < 4 or self.width < 4:
            raise ValueError("frames must be at least 4x4")
        if self.attributes < 0:
            raise ValueError("attributes must be >= 0")


@dataclass
class Benchmark:
    entries: list
    videos: list
    direction: np.ndarray
    counterpart: dict
    sizes: BenchmarkSizes
    seed: int


def _smooth(rng, shape, sigma=1.5):
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return f / (np.abs(f).max() + 1e-12)


def generate_synthetic_benchmark(seed: int, sizes: BenchmarkSizes | None = None) -> Benchmark:
    sizes = sizes or BenchmarkSizes()
    rng = np.random.default_rng(seed)
    shape = (sizes.height, sizes.width)
    centers = [0.38 + 0.12 * _smooth(rng, shape, 2.0) for _ in range(sizes.clusters)]
    g = quantize(0.12 + 0.08 * _smooth(rng, shape, 1.0))

    entries, counterpart = [], {}
    for i in range(sizes.entries_per_group):
        c = centers[i % sizes.clusters]
        young = quantize(c + sizes.spread * _smooth(rng, shape))
        old_noise = sizes.noise * _smooth(rng, shape, 1.0) if sizes.noise else 0.0
        old = quantize(young + g + old_noise)
        attrs = rng.random(sizes.attributes) < 0.5
        yid, oid = f"y{i:04d}", f"o{i:04d}"
        entries.append(GalleryEntry(yid, sizes.young_group, attrs, frame=young))
        entries.append(GalleryEntry(oid, sizes.old_group, attrs.copy(), frame=old))
        counterpart[yid] = oid

    videos = []
    for v in range(sizes.videos):
        c = centers[int(rng.integers(sizes.clusters))]
        base = c + sizes.spread * _smooth(rng, shape)
        drift_dir = _smooth(rng, shape, 2.0)
        phase = rng.uniform(0, 2 * np.pi)
        frames = []
        for t in range(sizes.frames):
            x = base + sizes.drift * np.sin(phase + 2 * np.pi * t / max(sizes.frames, 2)) * drift_dir
            x = x + sizes.jitter * _smooth(rng, shape, 1.0)
            frames.append(quantize(x))
        attrs = format_attributes(rng.random(sizes.attributes) < 0.5)
        videos.append(VideoSequence(frames, attrs, f"video_{v:02d}"))
    return Benchmark(entries, videos, g, counterpart, sizes, seed)


def write_benchmark(out_dir, bench: Benchmark) -> dict:
    """Write ``gallery.jsonl``, ``videos/<name>/`` and ``ground_truth.json``; return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_gallery(out / "gallery.jsonl", bench.entries)
    video_dirs = []
    for video in bench.videos:
        video_dirs.append(str(write_video(out / "videos" / video.name, video).relative_to(out)))
    write_json(out / "ground_truth.json", {
        "seed": bench.seed,
        "sizes": asdict(bench.sizes),
        "direction": [float(v) for v in bench.direction.ravel()],
        "counterpart": bench.counterpart,
    })
    return {"gallery": "gallery.jsonl", "videos": video_dirs, "ground_truth": "ground_truth.json"}
