import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidage.embedder import EmbedderSpec, make_embedder
from vidage.gallery import Gallery, GalleryEntry, GalleryError
from vidage.mdp import (
    IllegalActionError,
    RewardConfig,
    SelectionConfig,
    action_mask,
    encode_features,
    feature_dim,
    init_state,
    is_terminal,
    legal_actions,
    replay,
    reward,
    state_delta,
    trace_to_json,
    transition,
)
from vidage.traversal import NeighborSets, aging_delta

from conftest import frame_pair_state, tiny_world


def _state_for(bench, gallery, K, n, t=1, epsilon=1e-2):
    cfg = SelectionConfig(K=K, n=n, young_group=bench.sizes.young_group,
                          old_group=bench.sizes.old_group)
    v = bench.videos[0]
    from vidage.policy import greedy_baseline

    prev = greedy_baseline(v.frames[t - 1], gallery, cfg, v.attributes)
    pd = aging_delta(gallery, prev, v.frames[t - 1], cfg.traversal())
    return init_state(v.frames[t], v.frames[t - 1], prev, pd, gallery, cfg,
                      RewardConfig(epsilon), v.attributes)


def _scan(gallery, frame, group, attributes):
    """Exhaustive (matches desc, distance asc, id asc) ordering of one group."""
    q = gallery.embedder.synthesis(frame)
    qa = np.array([c == "1" for c in attributes])
    rows = []
    for eid, e in gallery.entries.items():
        if e.age_group == group:
            d = 1 - e.emb_s @ q / (np.linalg.norm(e.emb_s) * np.linalg.norm(q))
            rows.append((-int(np.sum(e.attributes == qa)), d, eid))
    return [r[2] for r in sorted(rows)]


def test_extended_lists_match_exhaustive_scan():
    bench, g = tiny_world(seed=4, per_group=30)
    s = _state_for(bench, g, K=3, n=4)
    v = bench.videos[0]
    assert list(s.extended.young) == _scan(g, v.frames[1], bench.sizes.young_group,
                                           v.attributes)[:12]
    assert list(s.extended.old) == _scan(g, v.frames[1], bench.sizes.old_group,
                                         v.attributes)[:12]
    assert s.current_sets.young == s.extended.young[:3]


def test_n_equals_k_only_noop():
    s = frame_pair_state(K=3, n=1)
    assert not s.mask.any()
    assert legal_actions(s) == [s.N]


def test_k1_n2_one_masked_candidate_per_group():
    s = frame_pair_state(K=1, n=2)
    assert s.mask.tolist() == [False, True, False, True]


def test_undersized_group_rejected():
    with pytest.raises(GalleryError):
        frame_pair_state(K=3, n=5, per_group=12)


def test_fresh_state_not_terminal_and_features():
    s = frame_pair_state(K=2, n=2)
    assert not is_terminal(s)
    u, v = encode_features(s)
    P = s.ctx.gallery.embedder.policy_dim
    assert u.size == 2 * P
    assert u.size + v.size == feature_dim(P, 2, 4)
    assert np.all((v[:4] >= 0) & (v[:4] <= 2))


def test_features_match_recomputation():
    s = frame_pair_state(seed=2, K=2, n=2)
    g = s.ctx.gallery
    emb = g.embedder
    q = emb.synthesis(s.current_frame)

    def d(i):
        e = g[i].emb_s
        return 1 - e @ q / (np.linalg.norm(e) * np.linalg.norm(q))

    u, v = encode_features(s)
    want_u = np.concatenate([emb.policy(s.current_frame) - emb.policy(s.previous_frame),
                             emb.policy(g[s.prev_sets.young[0]].frame)])
    cur = [d(i) for i in s.current_sets.young + s.current_sets.old]
    ext = [d(i) for i in s.extended.young + s.extended.old]
    want_v = np.concatenate([cur, ext, s.mask.astype(float)])
    np.testing.assert_allclose(u, want_u, atol=1e-12)
    np.testing.assert_allclose(v, want_v, atol=1e-12)


def test_equal_frames_zero_motion_features():
    bench, g = tiny_world(seed=1)
    cfg = SelectionConfig(K=2, n=2, young_group=1, old_group=9)
    f = bench.videos[0].frames[0]
    from vidage.policy import greedy_baseline

    prev = greedy_baseline(f, g, cfg)
    s = init_state(f, f, prev, None, g, cfg)
    u, _ = encode_features(s)
    assert np.all(u[:g.embedder.policy_dim] == 0.0)


def test_noop_transition():
    s = frame_pair_state(K=2, n=2)
    t = transition(s, s.N)
    assert t.current_sets == s.current_sets
    assert t.cursor == s.cursor + 1
    np.testing.assert_array_equal(t.mask, s.mask)


def test_k1_candidate_replaces_single_member():
    s = frame_pair_state(K=1, n=2)
    t = transition(s, 1)
    assert t.current_sets.young == (s.extended.young[1],)
    assert t.current_sets.old == s.current_sets.old
    # the incoming slot closes, the evicted member's slot reopens
    assert t.mask.tolist() == [True, False, False, True]


def test_k3_eviction_matches_distance_scan():
    bench, g = tiny_world(seed=6, per_group=20)
    s = _state_for(bench, g, K=3, n=2)
    q = g.embedder.synthesis(s.current_frame)
    members = s.current_sets.young
    dists = {i: 1 - g[i].emb_s @ q / (np.linalg.norm(g[i].emb_s) * np.linalg.norm(q))
             for i in members}
    worst = max(members, key=lambda i: (dists[i], [-ord(c) for c in i]))
    a = legal_actions(s)[0]
    t = transition(s, a)
    assert worst not in t.current_sets.young
    assert s.extended.young[a] in t.current_sets.young
    assert t.current_sets.young.index(s.extended.young[a]) == members.index(worst)


def test_masked_and_out_of_range_actions_rejected():
    s = frame_pair_state(K=2, n=2)
    with pytest.raises(IllegalActionError):
        transition(s, 0)
    with pytest.raises(IllegalActionError):
        transition(s, s.N + 1)
    with pytest.raises(IllegalActionError):
        transition(s, -1)


def test_old_step_uses_old_list():
    s = frame_pair_state(K=1, n=2)
    s = transition(s, s.N)
    assert s.cursor_group == "old"
    assert action_mask(s).tolist() == [False, True, True]
    t = transition(s, 1)
    assert t.current_sets.old == (s.extended.old[1],)


def test_terminal_after_2k_steps():
    s = frame_pair_state(K=2, n=2)
    for _ in range(4):
        assert not is_terminal(s)
        s = transition(s, s.N)
    assert is_terminal(s)
    with pytest.raises(IllegalActionError):
        transition(s, s.N)


def test_reward_identical_sets_is_inverse_epsilon():
    bench, g = tiny_world(seed=3)
    cfg = SelectionConfig(K=2, n=2, young_group=1, old_group=9)
    f = bench.videos[0].frames[1]
    from vidage.policy import greedy_baseline

    prev = greedy_baseline(f, g, cfg, bench.videos[0].attributes)
    s = init_state(f, bench.videos[0].frames[0], prev, None, g, cfg,
                   attributes=bench.videos[0].attributes)
    assert reward(transition(s, s.N)) == pytest.approx(100.0, rel=0, abs=1e-9)


def test_reward_known_distance():
    """Previous young neighbor differs from the current one by 2 along one axis."""
    emb = make_embedder(EmbedderSpec(kind="file-backed", height=4, width=4))
    base = np.full(16, 1.0)
    far = base.copy()
    far[0] += 2.0
    old = np.full(16, 3.0)
    entries = [GalleryEntry("ya", 0, np.zeros(0, bool), emb_s=base, emb_p=base),
               GalleryEntry("yb", 0, np.zeros(0, bool), emb_s=far, emb_p=far),
               GalleryEntry("oa", 1, np.zeros(0, bool), emb_s=old, emb_p=old)]
    g = Gallery(entries, emb)
    cfg = SelectionConfig(K=1, n=1, young_group=0, old_group=1)
    frame = np.full((4, 4), 0.5)
    s = init_state(frame, frame, NeighborSets(["yb"], ["oa"]), None, g, cfg, RewardConfig(0.01))
    assert s.current_sets.young == ("ya",)
    assert reward(transition(s, s.N)) == pytest.approx(1 / 2.01, rel=1e-12)


def test_reward_matches_end_to_end_recomputation():
    s = frame_pair_state(seed=9, K=2, n=2)
    g = s.ctx.gallery
    v = s.current_frame
    # rebuild from raw embeddings: knn of the current frame, then both deltas
    bench, _ = tiny_world(seed=9)
    attrs = bench.videos[0].attributes
    young = _scan(g, v, 1, attrs)[:2]
    old = _scan(g, v, 9, attrs)[:2]

    def delta(ys, os):
        return (sum(g[i].emb_s for i in os) - sum(g[i].emb_s for i in ys)) / 2

    want = 1 / (np.linalg.norm(delta(young, old) - delta(s.prev_sets.young, s.prev_sets.old))
                + 0.01)
    t = transition(s, s.N)
    assert reward(t) == pytest.approx(want, rel=1e-12)


def test_reward_uses_overridden_epsilon():
    s = transition(frame_pair_state(K=1, n=2), 1)
    d = np.linalg.norm(state_delta(s) - s.ctx.prev_delta_aligned)
    assert reward(s, 0.5) == pytest.approx(1 / (d + 0.5))


def _random_episode(state, rng):
    actions = []
    while not is_terminal(state):
        a = int(rng.choice(legal_actions(state)))
        actions.append(a)
        state = transition(state, a)
    return actions


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), K=st.integers(1, 3), n=st.integers(1, 3))
def test_random_episodes_invariants(seed, K, n):
    s0 = frame_pair_state(seed=seed % 7, K=K, n=n, per_group=10)
    rng = np.random.default_rng(seed)
    actions = _random_episode(s0, rng)
    assert len(actions) == 2 * K
    states, rewards = replay(s0, actions)
    assert is_terminal(states[-1])
    for st_ in states:
        sets = st_.current_sets
        assert len(set(sets.young)) == K and len(set(sets.old)) == K
        assert all(i in s0.extended.young for i in sets.young)
        assert all(i in s0.extended.old for i in sets.old)
        # mask is 0 exactly on extended candidates that are currently members
        want = [i not in sets.young for i in s0.extended.young]
        want += [i not in sets.old for i in s0.extended.old]
        assert st_.mask.tolist() == want
    assert all(0 < r <= 1 / 0.01 + 1e-9 for r in rewards)
    again = replay(s0, actions)[1]
    assert again == rewards


def test_all_noop_keeps_initial_delta():
    s = frame_pair_state(seed=5, K=2, n=3)
    d0 = state_delta(s)
    states, _ = replay(s, [s.N] * 4)
    for st_ in states:
        np.testing.assert_array_equal(state_delta(st_), d0)


def test_trace_json():
    s = frame_pair_state(K=1, n=2)
    states, rewards = replay(s, [1, 2])
    doc = json.loads(trace_to_json(states, [1, 2], rewards))
    assert [st_["action"] for st_ in doc["steps"]] == [1, 2]
    assert doc["steps"][0]["mask"] == "1001"
    assert doc["steps"][-1]["reward"] == rewards[-1]


def test_config_validation():
    with pytest.raises(ValueError):
        SelectionConfig(K=0)
    with pytest.raises(ValueError):
        RewardConfig(0.0)
