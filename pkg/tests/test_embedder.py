import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidage.embedder import (
    AffineEmbedder,
    EmbedderSpec,
    PassThroughEmbedder,
    ShapeError,
    check_frame,
    embed_policy,
    embed_synthesis,
    embed_vjp,
    make_embedder,
)


def reference_embed(spec, frame):
    """Straight-line reimplementation: explicit cell loops, same RNG draw order."""
    rng = np.random.default_rng(spec.seed)
    h, w = frame.shape

    def pooled(stride):
        vals = []
        for r in range(0, h, stride):
            for c in range(0, w, stride):
                cell = [frame[y, x] for y in range(r, min(r + stride, h))
                        for x in range(c, min(c + stride, w))]
                vals.append(sum(cell) / len(cell))
        return np.array(vals)

    def block(dim, stride):
        p = pooled(stride)
        A = rng.standard_normal((dim, p.size)) / np.sqrt(p.size)
        c = rng.standard_normal(dim) * spec.bias_scale
        if spec.zero_bias:
            c = np.zeros(dim)
        out = []
        for i in range(dim):
            out.append(np.tanh(sum(A[i, j] * p[j] for j in range(p.size)) + c[i]))
        return np.array(out)

    synth = np.concatenate([block(d, s) for d, s in zip(spec.block_dims, spec.strides)])
    pol = block(spec.pool_dim, spec.pool_stride)
    return synth, pol


def test_dimension_is_sum_of_blocks():
    spec = EmbedderSpec(seed=1, height=8, width=8, block_dims=(8, 4, 2), strides=(1, 2, 4))
    assert embed_synthesis(spec, np.full((8, 8), 0.5)).shape == (14,)
    assert spec.synthesis_dim == 14


def test_policy_dimension():
    spec = EmbedderSpec(seed=1, height=8, width=8, pool_dim=16)
    assert embed_policy(spec, np.full((8, 8), 0.5)).shape == (16,)


def test_zero_frame_zero_bias_gives_zero():
    spec = EmbedderSpec(seed=3, height=6, width=6, zero_bias=True)
    z = np.zeros((6, 6))
    assert np.all(embed_synthesis(spec, z) == 0.0)
    assert np.all(embed_policy(spec, z) == 0.0)


def test_seed7_matches_straight_line_oracle():
    spec = EmbedderSpec(seed=7, height=4, width=4, block_dims=(8, 4, 2), strides=(1, 2, 4),
                        pool_dim=3, pool_stride=2)
    frame = (np.arange(16) / 16.0).reshape(4, 4)
    want_s, want_p = reference_embed(spec, frame)
    np.testing.assert_allclose(embed_synthesis(spec, frame), want_s, rtol=0, atol=1e-14)
    np.testing.assert_allclose(embed_policy(spec, frame), want_p, rtol=0, atol=1e-14)


def test_ragged_cells_match_oracle():
    spec = EmbedderSpec(seed=2, height=7, width=5, block_dims=(5, 4, 3), strides=(1, 3, 4),
                        pool_dim=4, pool_stride=3)
    frame = np.random.default_rng(0).random((7, 5))
    want_s, want_p = reference_embed(spec, frame)
    np.testing.assert_allclose(embed_synthesis(spec, frame), want_s, atol=1e-13)
    np.testing.assert_allclose(embed_policy(spec, frame), want_p, atol=1e-13)


@pytest.mark.parametrize("seed", range(10))
def test_vjp_matches_finite_differences(seed):
    spec = EmbedderSpec(seed=seed, height=6, width=6)
    rng = np.random.default_rng(100 + seed)
    x = rng.uniform(0.1, 0.9, (6, 6))
    c = rng.standard_normal(spec.synthesis_dim)
    g = embed_vjp(spec, x, c)
    h = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd[idx] = (embed_synthesis(spec, xp) @ c - embed_synthesis(spec, xm) @ c) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)


def test_vjp_zero_cotangent():
    spec = EmbedderSpec(seed=0, height=6, width=6)
    g = embed_vjp(spec, np.full((6, 6), 0.3), np.zeros(spec.synthesis_dim))
    assert np.all(g == 0)


def test_passthrough_vjp_is_reshaped_cotangent():
    spec = EmbedderSpec(kind="file-backed", height=4, width=5)
    c = np.arange(20.0)
    np.testing.assert_array_equal(embed_vjp(spec, np.zeros((4, 5)), c), c.reshape(4, 5))
    assert isinstance(make_embedder(spec), PassThroughEmbedder)


def test_vjp_length_mismatch():
    spec = EmbedderSpec(seed=0, height=6, width=6)
    with pytest.raises(ShapeError):
        embed_vjp(spec, np.zeros((6, 6)), np.zeros(3))


def test_affine_vjp_is_transpose():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((5, 16))
    emb = AffineEmbedder(A, rng.standard_normal(5), (4, 4))
    c = rng.standard_normal(5)
    np.testing.assert_allclose(emb.vjp(np.zeros((4, 4)), c), (A.T @ c).reshape(4, 4))


@pytest.mark.parametrize("bad", [np.zeros((3, 8)), np.zeros(16)])
def test_frame_shape_validation(bad):
    with pytest.raises(ShapeError):
        check_frame(bad)


@pytest.mark.parametrize("bad", [np.full((4, 4), 1.5), np.full((4, 4), np.nan),
                                 np.full((4, 4), -0.1)])
def test_frame_value_validation(bad):
    with pytest.raises(ValueError):
        check_frame(bad)


def test_shape_mismatch_rejected():
    spec = EmbedderSpec(seed=0, height=6, width=6)
    with pytest.raises(ShapeError):
        embed_synthesis(spec, np.zeros((6, 7)))


def test_unknown_kind():
    with pytest.raises(ValueError):
        EmbedderSpec(kind="vgg")


def test_spec_round_trip():
    spec = EmbedderSpec(seed=4, height=9, width=7, block_dims=(3, 2), strides=(1, 2))
    assert EmbedderSpec.from_dict(spec.to_dict()) == spec


def test_determinism_across_instances():
    spec = EmbedderSpec(seed=11, height=6, width=6)
    x = np.random.default_rng(0).random((6, 6))
    a = make_embedder(spec).synthesis(x)
    make_embedder.cache_clear()
    b = make_embedder(spec).synthesis(x)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), y=st.integers(0, 5), x=st.integers(0, 5),
       bump=st.floats(0.05, 0.4))
def test_single_pixel_changes_embedding(seed, y, x, bump):
    spec = EmbedderSpec(seed=seed, height=6, width=6)
    frame = np.full((6, 6), 0.5)
    other = frame.copy()
    other[y, x] += bump
    assert not np.array_equal(embed_synthesis(spec, frame), embed_synthesis(spec, other))
