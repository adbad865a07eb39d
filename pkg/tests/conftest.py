import sys

import numpy as np
import pytest

from vidage.bench import BenchmarkSizes, generate_synthetic_benchmark
from vidage.embedder import EmbedderSpec, PassThroughEmbedder, make_embedder
from vidage.gallery import Gallery, GalleryEntry
from vidage.mdp import RewardConfig, SelectionConfig, init_state
from vidage.policy import greedy_baseline
from vidage.traversal import aging_delta


def embedding_gallery(rng, per_group=6, side=4, groups=(0, 1), m=4, positive=True):
    """Gallery with precomputed embeddings under the pass-through embedder.

    Embedding length is ``side * side``; vectors are drawn positive by default
    so cosine distances stay away from the [0, 2] clip.
    """
    rng = np.random.default_rng(rng)
    emb = PassThroughEmbedder(EmbedderSpec(kind="file-backed", height=side, width=side))
    entries = []
    for g in groups:
        for i in range(per_group):
            v = rng.random(side * side) + (0.1 if positive else -0.5)
            entries.append(GalleryEntry(f"g{g}_{i:03d}", g, rng.random(m) < 0.5,
                                        emb_s=v, emb_p=v.copy()))
    return Gallery(entries, emb)


def tiny_world(seed=0, per_group=12, side=8, frames=4, attributes=3):
    """Small synthetic benchmark plus its gallery (synthetic embedder)."""
    sizes = BenchmarkSizes(entries_per_group=per_group, videos=1, frames=frames, height=side,
                           width=side, clusters=2, attributes=attributes)
    bench = generate_synthetic_benchmark(seed, sizes)
    spec = EmbedderSpec(kind="synthetic", seed=seed, height=side, width=side)
    return bench, Gallery(bench.entries, make_embedder(spec))


def frame_pair_state(seed=0, K=2, n=2, per_group=12, side=8, t=1, epsilon=1e-2):
    """Initial selection state for frame ``t`` of a tiny benchmark video."""
    bench, gallery = tiny_world(seed, per_group, side)
    cfg = SelectionConfig(K=K, n=n, young_group=bench.sizes.young_group,
                          old_group=bench.sizes.old_group)
    video = bench.videos[0]
    prev = greedy_baseline(video.frames[t - 1], gallery, cfg, video.attributes)
    prev_delta = aging_delta(gallery, prev, video.frames[t - 1], cfg.traversal())
    return init_state(video.frames[t], video.frames[t - 1], prev, prev_delta, gallery, cfg,
                      RewardConfig(epsilon), video.attributes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gradcheck_fraction(analytic: dict, params, fn, h=1e-5, rtol=1e-3, atol=1e-9, sample=None,
                       rng=None):
    """Fraction of parameters whose analytic gradient matches central differences of ``fn``.

    ``sample`` limits the check to that many randomly chosen coordinates.
    """
    flat = params.ravel()
    grad = np.concatenate([analytic[k].ravel() for k in params.tensors()])
    idx = np.arange(flat.size)
    if sample is not None and sample < flat.size:
        idx = np.random.default_rng(rng).choice(flat.size, sample, replace=False)
    ok = 0
    for i in idx:
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        fd = (fn(params.unravel(up)) - fn(params.unravel(dn))) / (2 * h)
        err = abs(fd - grad[i])
        ok += err <= atol or err <= rtol * max(abs(fd), abs(grad[i]))
    return ok / len(idx)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
