"""Sequential neighbor-selection environment.

An episode for frame ``t`` walks a cursor over the previous frame's neighbors
(young list first, then old).  At each step the agent either keeps the
current sets (NoOp) or brings one extended candidate of the cursor's age group
into that group's set, evicting the member least similar to the current frame.
The reward is the inverse distance between the current aging delta and the
previous frame's delta, both aligned to the current frame.

States are immutable; :func:`transition` returns a new state.  Actions are
integers ``0..N-1`` (candidate index within the cursor group's extended list)
or ``N`` for NoOp.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .gallery import AlignmentOp, Gallery, GalleryError, cosine_distances, rank
from .traversal import NeighborSets, TraversalConfig, aging_delta

__all__ = [
    "IllegalActionError",
    "SelectionConfig",
    "RewardConfig",
    "ExtendedNeighbors",
    "SelectionState",
    "init_state",
    "encode_features",
    "feature_dim",
    "action_mask",
    "transition",
    "reward",
    "state_delta",
    "is_terminal",
    "legal_actions",
    "replay",
    "trace_to_json",
]

GROUPS = ("young", "old")


class IllegalActionError(ValueError):
    """Action selects a masked candidate or is out of range."""


@dataclass(frozen=True)
class SelectionConfig:
    K: int = 5
    n: int = 4
    young_group: int = 0
    old_group: int = 10
    criterion: str = "attributes-first"
    alignment: AlignmentOp = field(default_factory=AlignmentOp)

    def __post_init__(self):
        if self.K < 1 or self.n < 1:
            raise ValueError("K and n must be >= 1")

    @property
    def N(self) -> int:
        return self.n * self.K

    def group_index(self, which: str) -> int:
        return self.young_group if which == "young" else self.old_group

    def traversal(self, alpha: float = 1.0) -> TraversalConfig:
        return TraversalConfig(alpha=alpha, K=self.K, young_group=self.young_group,
                               old_group=self.old_group, alignment=self.alignment)


@dataclass(frozen=True)
class RewardConfig:
    epsilon: float = 1e-2

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class ExtendedNeighbors:
    young: tuple
    old: tuple

    def group(self, which: str) -> tuple:
        return self.young if which == "young" else self.old

    @property
    def N(self) -> int:
        return len(self.young)


class _Context:
    """Quantities fixed for the whole episode, computed once in :func:`init_state`."""

    def __init__(self, gallery, cfg, reward_cfg, current, previous, prev_sets, attributes):
        self.gallery = gallery
        self.cfg = cfg
        self.reward_cfg = reward_cfg
        self.attributes = attributes
        emb = gallery.embedder
        self.query = emb.synthesis(current)
        self.pool_delta = emb.policy(current) - emb.policy(previous)
        tcfg = cfg.traversal()
        lists = {}
        for which in GROUPS:
            group = cfg.group_index(which)
            size = len(gallery.group_ids(group))
            if size < cfg.N:
                raise GalleryError(f"age group {group} has {size} entries, need N={cfg.N}")
            lists[which] = tuple(rank(gallery, self.query, group, attributes, cfg.criterion)[:cfg.N])
        self.extended = ExtendedNeighbors(lists["young"], lists["old"])
        all_ids = self.extended.young + self.extended.old
        S = np.stack([gallery.synthesis(i) for i in all_ids])
        d = cosine_distances(S, self.query)
        self.ext_dist = d
        self.dist = dict(zip(all_ids, d.tolist()))
        self.index = {which: {i: j for j, i in enumerate(self.extended.group(which))}
                      for which in GROUPS}
        op = cfg.alignment
        self.aligned = {i: gallery.aligned_synthesis(i, current, op)
                        for i in set(all_ids) | set(prev_sets.young) | set(prev_sets.old)}
        self.prev_delta_aligned = aging_delta(gallery, prev_sets, current, tcfg)
        self.prev_pool = {i: gallery.policy(i) for i in prev_sets.young + prev_sets.old}


@dataclass(frozen=True, eq=False)
class SelectionState:
    """One step of the selection episode for the current frame."""

    current_frame: np.ndarray = field(repr=False)
    previous_frame: np.ndarray = field(repr=False)
    cursor: int
    current_sets: NeighborSets
    extended: ExtendedNeighbors = field(repr=False)
    mask: np.ndarray = field(repr=False)
    prev_sets: NeighborSets
    prev_delta: np.ndarray = field(repr=False)
    ctx: _Context = field(repr=False, compare=False)

    @property
    def K(self) -> int:
        return self.ctx.cfg.K

    @property
    def N(self) -> int:
        return self.ctx.cfg.N

    @property
    def cursor_group(self) -> str:
        return "young" if self.cursor < self.K else "old"

    @property
    def considered_id(self) -> str:
        """Id of the previous-frame neighbor under the cursor."""
        if is_terminal(self):
            raise IndexError("terminal state has no considered neighbor")
        if self.cursor < self.K:
            return self.prev_sets.young[self.cursor]
        return self.prev_sets.old[self.cursor - self.K]

    def same_as(self, other: "SelectionState") -> bool:
        return (self.cursor == other.cursor and self.current_sets == other.current_sets
                and np.array_equal(self.mask, other.mask))


def _frozen(arr):
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


def init_state(current, previous, prev_sets: NeighborSets, prev_delta, gallery: Gallery,
               cfg: SelectionConfig, reward_cfg: RewardConfig | None = None,
               attributes=None) -> SelectionState:
    """Initial state: plain K-NN sets, N-NN extended lists, present candidates masked."""
    reward_cfg = reward_cfg or RewardConfig()
    if prev_sets.k != cfg.K:
        raise ValueError(f"previous sets have {prev_sets.k} members, expected K={cfg.K}")
    emb = gallery.embedder
    current = np.asarray(current, dtype=np.float64)
    previous = np.asarray(previous, dtype=np.float64)
    ctx = _Context(gallery, cfg, reward_cfg, current, previous, prev_sets, attributes)
    sets = NeighborSets(ctx.extended.young[:cfg.K], ctx.extended.old[:cfg.K])
    mask = np.ones(2 * cfg.N, dtype=bool)
    mask[:cfg.K] = False
    mask[cfg.N:cfg.N + cfg.K] = False
    if prev_delta is None:
        prev_delta = ctx.prev_delta_aligned
    prev_delta = np.asarray(prev_delta, dtype=np.float64)
    if prev_delta.size != emb.synthesis_dim:
        raise ValueError("previous delta has the wrong length")
    return SelectionState(_frozen(current), _frozen(previous), 0, sets, ctx.extended,
                          _frozen(mask), prev_sets, _frozen(prev_delta), ctx)


def is_terminal(state: SelectionState) -> bool:
    return state.cursor >= 2 * state.K


def action_mask(state: SelectionState) -> np.ndarray:
    """Availability of the ``N + 1`` actions at this step (NoOp always available)."""
    N = state.N
    off = 0 if state.cursor_group == "young" else N
    return np.append(state.mask[off:off + N], True)


def legal_actions(state: SelectionState) -> list[int]:
    return [int(a) for a in np.flatnonzero(action_mask(state))]


def feature_dim(policy_dim: int, K: int, N: int) -> int:
    return 2 * policy_dim + 2 * K + 4 * N


def encode_features(state: SelectionState):
    """Policy inputs ``(u, v)``.

    ``u`` stacks the policy-embedding change between frames and the policy
    embedding of the considered neighbor; ``v`` stacks cosine distances of the
    current sets and the extended lists to the current frame, then the mask.
    """
    ctx = state.ctx
    u = np.concatenate([ctx.pool_delta, ctx.prev_pool[state.considered_id]])
    cur = [ctx.dist[i] for i in state.current_sets.young + state.current_sets.old]
    v = np.concatenate([np.asarray(cur), ctx.ext_dist, state.mask.astype(np.float64)])
    return u, v


def transition(state: SelectionState, action: int) -> SelectionState:
    if is_terminal(state):
        raise IllegalActionError("episode already terminated")
    N = state.N
    action = int(action)
    if action < 0 or action > N:
        raise IllegalActionError(f"action {action} outside 0..{N}")
    if action == N:
        return replace(state, cursor=state.cursor + 1)
    which = state.cursor_group
    off = 0 if which == "young" else N
    if not state.mask[off + action]:
        raise IllegalActionError(f"candidate {action} of the {which} list is masked")
    ctx = state.ctx
    incoming = state.extended.group(which)[action]
    members = list(state.current_sets.group(which))
    evict = min(range(len(members)), key=lambda p: (-ctx.dist[members[p]], members[p]))
    evicted = members[evict]
    members[evict] = incoming
    mask = state.mask.copy()
    mask[off + action] = False
    j = ctx.index[which].get(evicted)
    if j is not None:
        mask[off + j] = True
    return replace(state, cursor=state.cursor + 1,
                   current_sets=state.current_sets.replace(which, members), mask=_frozen(mask))


def state_delta(state: SelectionState) -> np.ndarray:
    """Aging delta of the state's current sets, aligned to the current frame."""
    a = state.ctx.aligned
    sets = state.current_sets
    return (sum(a[i] for i in sets.old) - sum(a[i] for i in sets.young)) / state.K


def reward(state: SelectionState, epsilon: float | None = None) -> float:
    """``1 / (|delta_now - delta_prev| + epsilon)``."""
    eps = state.ctx.reward_cfg.epsilon if epsilon is None else epsilon
    diff = state_delta(state) - state.ctx.prev_delta_aligned
    return 1.0 / (float(np.linalg.norm(diff)) + eps)


def replay(state: SelectionState, actions):
    """Apply ``actions`` from ``state``; return ``(states, rewards)``."""
    states, rewards = [state], []
    for a in actions:
        state = transition(state, a)
        states.append(state)
        rewards.append(reward(state))
    return states, rewards


def trace_to_json(states, actions, rewards) -> str:
    """Episode trace with states referenced by entry ids."""
    steps = []
    for s, a, r in zip(states[1:], actions, rewards):
        steps.append({"cursor": s.cursor, "action": int(a), "reward": float(r),
                      "sets": s.current_sets.to_dict(),
                      "mask": "".join("1" if m else "0" for m in s.mask)})
    s0 = states[0]
    return json.dumps({"extended": {"young": list(s0.extended.young), "old": list(s0.extended.old)},
                       "initial_sets": s0.current_sets.to_dict(),
                       "prev_sets": s0.prev_sets.to_dict(), "steps": steps}, indent=1)
