"""Neighbor-selection policy: MLP with masked softmax, rollouts and REINFORCE.

The network maps the concatenated state encoding ``[u; v]`` through two ReLU
layers to ``N + 1`` logits (``N`` candidates of the cursor's group plus NoOp).
Unavailable candidates get ``-inf`` logits so their probability is exactly 0.
Backpropagation is written out by hand in numpy.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gallery import Gallery, knn
from .mdp import (
    SelectionConfig,
    SelectionState,
    action_mask,
    encode_features,
    feature_dim,
    is_terminal,
    reward,
    transition,
)
from .traversal import NeighborSets

__all__ = [
    "BudgetExceeded",
    "PolicyParams",
    "policy_forward",
    "log_prob_gradient",
    "select_action",
    "StepRecord",
    "EpisodeTrace",
    "rollout",
    "TrainConfig",
    "step_returns",
    "policy_gradient",
    "reinforce_update",
    "Trainer",
    "enumerate_paths",
    "expected_return",
    "exact_policy_gradient",
    "bruteforce_optimal",
    "greedy_baseline",
    "save_checkpoint",
    "load_checkpoint",
    "check_compatible",
]

CHECKPOINT_FORMAT = "vidage-policy"
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wout", "bout")


class BudgetExceeded(ValueError):
    """Exhaustive search would enumerate more sequences than allowed."""


@dataclass
class PolicyParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    Wout: np.ndarray
    bout: np.ndarray
    # fixed input standardization, not trained
    x_shift: np.ndarray | None = field(default=None, repr=False)
    x_scale: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.x_shift is None:
            self.x_shift = np.zeros(self.W1.shape[1])
        if self.x_scale is None:
            self.x_scale = np.ones(self.W1.shape[1])

    @classmethod
    def init(cls, input_dim: int, n_actions: int, hidden=(64, 32), rng=None,
             output_scale: float = 0.0) -> "PolicyParams":
        """He-initialized hidden layers; output layer scaled by ``output_scale``.

        With the default ``output_scale=0`` the initial policy is uniform over
        the legal actions.
        """
        rng = np.random.default_rng(rng)
        h1, h2 = hidden
        return cls(
            W1=rng.standard_normal((h1, input_dim)) * math.sqrt(2.0 / input_dim),
            b1=np.zeros(h1),
            W2=rng.standard_normal((h2, h1)) * math.sqrt(2.0 / h1),
            b2=np.zeros(h2),
            Wout=rng.standard_normal((n_actions, h2)) * output_scale / math.sqrt(h2),
            bout=np.zeros(n_actions),
        )

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def n_actions(self) -> int:
        return self.Wout.shape[0]

    @property
    def hidden(self) -> tuple:
        return (self.W1.shape[0], self.W2.shape[0])

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def _with(self, tensors: dict) -> "PolicyParams":
        return PolicyParams(**tensors, x_shift=self.x_shift, x_scale=self.x_scale)

    def copy(self) -> "PolicyParams":
        return self._with({k: v.copy() for k, v in self.tensors().items()})

    def fit_normalizer(self, X) -> "PolicyParams":
        """Standardize inputs with the mean and spread of the feature rows ``X``.

        Features that never vary keep unit scale.
        """
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        out = self.copy()
        out.x_shift = X.mean(axis=0)
        out.x_scale = np.where(std > 1e-12, std, 1.0)
        return out

    def ravel(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors().values()])

    def unravel(self, flat) -> "PolicyParams":
        out, pos = {}, 0
        for name, t in self.tensors().items():
            out[name] = np.asarray(flat[pos:pos + t.size], dtype=np.float64).reshape(t.shape)
            pos += t.size
        return self._with(out)

    def axpy(self, scale: float, grads: dict) -> "PolicyParams":
        return self._with({k: v + scale * grads[k] for k, v in self.tensors().items()})


def _forward(params: PolicyParams, X: np.ndarray, masks: np.ndarray):
    """Batched forward pass; returns probabilities and the activations needed for backprop."""
    X = (X - params.x_shift) / params.x_scale
    a1 = X @ params.W1.T + params.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ params.W2.T + params.b2
    h2 = np.maximum(a2, 0.0)
    z = h2 @ params.Wout.T + params.bout
    z = np.where(masks, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p, (h1, h2)


def policy_forward(params: PolicyParams, u, v, mask) -> np.ndarray:
    """Action distribution over ``N + 1`` actions; masked entries get probability 0."""
    x = np.concatenate([np.asarray(u, float), np.asarray(v, float)])
    mask = np.asarray(mask, dtype=bool)
    if x.size != params.input_dim:
        raise ValueError(f"input length {x.size} != network input {params.input_dim}")
    if mask.size != params.n_actions:
        raise ValueError(f"mask length {mask.size} != {params.n_actions} actions")
    mask = mask.copy()
    mask[-1] = True
    p, _ = _forward(params, x[None, :], mask[None, :])
    return p[0]


def _backward(params: PolicyParams, X, masks, actions, weights, entropy_coef: float = 0.0) -> dict:
    """Gradient of ``sum_i weights[i] * log pi(actions[i] | X[i])``.

    With ``entropy_coef > 0`` the gradient of ``entropy_coef * sum_i H(pi(.|X[i]))``
    is added.
    """
    p, (h1, h2) = _forward(params, X, masks)
    X = (X - params.x_shift) / params.x_scale
    dz = -p * weights[:, None]
    dz[np.arange(len(actions)), actions] += weights
    if entropy_coef:
        logp = np.log(np.where(p > 0, p, 1.0))
        H = -np.sum(p * logp, axis=1, keepdims=True)
        dz -= entropy_coef * p * (logp + H)
    gWout = dz.T @ h2
    gbout = dz.sum(axis=0)
    dh2 = (dz @ params.Wout) * (h2 > 0)
    gW2 = dh2.T @ h1
    gb2 = dh2.sum(axis=0)
    dh1 = (dh2 @ params.W2) * (h1 > 0)
    gW1 = dh1.T @ X
    gb1 = dh1.sum(axis=0)
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2, "Wout": gWout, "bout": gbout}


def log_prob_gradient(params: PolicyParams, u, v, mask, action: int) -> dict:
    x = np.concatenate([np.asarray(u, float), np.asarray(v, float)])
    m = np.asarray(mask, dtype=bool).copy()
    m[-1] = True
    return _backward(params, x[None, :], m[None, :], np.array([action]), np.ones(1))


def select_action(probs, mode: str = "sample", rng=None) -> int:
    """Draw an action (0-based index; the last index is NoOp)."""
    probs = np.asarray(probs, dtype=np.float64)
    if mode == "argmax":
        return int(np.argmax(probs))
    if mode != "sample":
        raise ValueError(f"unknown selection mode {mode!r}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return int(rng.choice(probs.size, p=probs))


@dataclass
class StepRecord:
    cursor: int
    action: int
    reward: float
    log_prob: float
    features: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)


@dataclass
class EpisodeTrace:
    steps: list
    final_state: SelectionState = field(repr=False)

    @property
    def total_return(self) -> float:
        return float(sum(s.reward for s in self.steps))

    @property
    def actions(self) -> list[int]:
        return [s.action for s in self.steps]

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    def to_dict(self) -> dict:
        return {"actions": self.actions, "rewards": self.rewards,
                "log_probs": [s.log_prob for s in self.steps], "return": self.total_return,
                "final_sets": self.final_state.current_sets.to_dict()}


def rollout(state: SelectionState, params: PolicyParams | None, mode: str = "sample",
            rng=None) -> EpisodeTrace:
    """Run one episode to termination.

    ``params=None`` is the all-NoOp policy (the frame-independent baseline).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    steps = []
    N = state.N
    while not is_terminal(state):
        mask = action_mask(state)
        if params is None:
            action, logp, x = N, 0.0, np.zeros(0)
        else:
            u, v = encode_features(state)
            x = np.concatenate([u, v])
            p, _ = _forward(params, x[None, :], mask[None, :])
            p = p[0]
            action = select_action(p, mode, rng)
            logp = float(np.log(p[action]))
        cursor = state.cursor
        state = transition(state, action)
        steps.append(StepRecord(cursor, action, reward(state), logp, x, mask))
    return EpisodeTrace(steps, state)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    episodes: int = 2000
    batch_size: int = 16
    baseline_momentum: float = 0.9
    seed: int = 0
    return_mode: str = "to-go"
    optimizer: str = "sgd"
    hidden: tuple = (64, 32)
    entropy_coef: float = 0.0
    normalize_advantages: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.baseline_momentum < 1.0:
            raise ValueError("baseline_momentum must lie in [0, 1)")
        if self.return_mode not in ("total", "to-go"):
            raise ValueError(f"unknown return_mode {self.return_mode!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.hidden = tuple(self.hidden)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d


def step_returns(trace: EpisodeTrace, mode: str = "to-go") -> np.ndarray:
    r = np.asarray(trace.rewards, dtype=np.float64)
    if mode == "total":
        return np.full(r.size, r.sum())
    return np.cumsum(r[::-1])[::-1]


def _stack(traces, weights_per_trace):
    X = np.stack([s.features for t in traces for s in t.steps])
    M = np.stack([s.mask for t in traces for s in t.steps])
    A = np.array([s.action for t in traces for s in t.steps])
    W = np.concatenate(weights_per_trace)
    return X, M, A, W


def policy_gradient(params: PolicyParams, traces, baseline=None, mode: str = "to-go",
                    trace_weights=None, entropy_coef: float = 0.0,
                    normalize: bool = False) -> dict:
    """REINFORCE gradient ``sum_steps (G - b) grad log pi``, averaged over traces.

    ``trace_weights`` replaces the ``1/len(traces)`` average (used for the
    exact expectation over enumerated paths).  ``normalize`` divides the
    advantages by their standard deviation over the batch.
    """
    if not traces:
        raise ValueError("need at least one trace")
    if trace_weights is None:
        trace_weights = np.full(len(traces), 1.0 / len(traces))
    b = 0.0 if baseline is None else np.asarray(baseline, dtype=np.float64)
    adv = [step_returns(t, mode) - b for t in traces]
    if normalize:
        scale = np.concatenate(adv).std()
        if scale > 0:
            adv = [a / scale for a in adv]
    adv = [a * w for a, w in zip(adv, trace_weights)]
    X, M, A, W = _stack(traces, adv)
    return _backward(params, X, M, A, W, entropy_coef / len(traces))


def _updated_baseline(baseline, traces, mode, momentum):
    G = np.mean([step_returns(t, mode) for t in traces], axis=0)
    if baseline is None:
        return G
    return momentum * np.asarray(baseline) + (1.0 - momentum) * G


def reinforce_update(params: PolicyParams, traces, cfg: TrainConfig, baseline=None):
    """One plain gradient-ascent step; returns ``(new_params, new_baseline)``.

    ``baseline`` holds one moving-average return per step index; when it is
    ``None`` it is initialized from this batch before computing advantages.
    """
    if not traces:
        raise ValueError("need at least one trace")
    if baseline is None:
        baseline = _updated_baseline(None, traces, cfg.return_mode, cfg.baseline_momentum)
    grads = policy_gradient(params, traces, baseline, cfg.return_mode,
                            entropy_coef=cfg.entropy_coef, normalize=cfg.normalize_advantages)
    new = params.axpy(cfg.learning_rate, grads)
    return new, _updated_baseline(baseline, traces, cfg.return_mode, cfg.baseline_momentum)


class Trainer:
    """REINFORCE training loop over a sampler of initial states."""

    def __init__(self, params: PolicyParams, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.baseline = None
        self.rng = np.random.default_rng(cfg.seed)
        self._m = None
        self._v = None
        self._t = 0
        self.log = []
        self.episodes = 0

    def step(self, traces) -> None:
        cfg = self.cfg
        if cfg.optimizer == "sgd":
            self.params, self.baseline = reinforce_update(self.params, traces, cfg, self.baseline)
            return
        if self.baseline is None:
            self.baseline = _updated_baseline(None, traces, cfg.return_mode, cfg.baseline_momentum)
        grads = policy_gradient(self.params, traces, self.baseline, cfg.return_mode,
                                entropy_coef=cfg.entropy_coef,
                                normalize=cfg.normalize_advantages)
        if self._m is None:
            self._m = {k: np.zeros_like(g) for k, g in grads.items()}
            self._v = {k: np.zeros_like(g) for k, g in grads.items()}
        self._t += 1
        b1, b2 = 0.9, 0.999
        step = {}
        for k, g in grads.items():
            self._m[k] = b1 * self._m[k] + (1 - b1) * g
            self._v[k] = b2 * self._v[k] + (1 - b2) * g * g
            mhat = self._m[k] / (1 - b1 ** self._t)
            vhat = self._v[k] / (1 - b2 ** self._t)
            step[k] = mhat / (np.sqrt(vhat) + 1e-8)
        self.params = self.params.axpy(cfg.learning_rate, step)
        self.baseline = _updated_baseline(self.baseline, traces, cfg.return_mode,
                                          cfg.baseline_momentum)

    def fit(self, make_trace, episodes: int | None = None):
        """Train for ``episodes`` episodes.

        ``make_trace(params, rng)`` must return one sampled :class:`EpisodeTrace`
        generated with ``params``; traces are grouped into batches of
        ``batch_size`` and each batch triggers one update.
        """
        episodes = self.cfg.episodes if episodes is None else episodes
        done = 0
        while done < episodes:
            n = min(self.cfg.batch_size, episodes - done)
            traces = [make_trace(self.params, self.rng) for _ in range(n)]
            self.step(traces)
            done += n
            self.episodes += n
            mean_ret = float(np.mean([t.total_return for t in traces]))
            self.log.append((self.episodes, mean_ret, float(np.mean(self.baseline))))
        return self.params

    def train(self, sample_state, episodes: int | None = None):
        """Train on episodes started from ``sample_state(rng)``."""
        return self.fit(lambda params, rng: rollout(sample_state(rng), params, "sample", rng),
                        episodes)

    def write_log(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "mean_return", "baseline"])
            w.writerows(self.log)


def enumerate_paths(state: SelectionState, params: PolicyParams | None = None):
    """Every legal action sequence from ``state`` with its probability under ``params``.

    Yields ``(probability, trace)``; with ``params=None`` probabilities are 1.
    """
    def walk(s, prob, steps):
        if is_terminal(s):
            yield prob, EpisodeTrace(list(steps), s)
            return
        mask = action_mask(s)
        if params is not None:
            u, v = encode_features(s)
            x = np.concatenate([u, v])
            p = _forward(params, x[None, :], mask[None, :])[0][0]
        else:
            x, p = np.zeros(0), mask.astype(float)
        for a in np.flatnonzero(mask):
            a = int(a)
            nxt = transition(s, a)
            rec = StepRecord(s.cursor, a, reward(nxt), float(np.log(p[a])), x, mask)
            steps.append(rec)
            yield from walk(nxt, prob * p[a], steps)
            steps.pop()

    yield from walk(state, 1.0, [])


def expected_return(state: SelectionState, params: PolicyParams) -> float:
    return float(sum(p * t.total_return for p, t in enumerate_paths(state, params)))


def exact_policy_gradient(state: SelectionState, params: PolicyParams, mode: str = "to-go") -> dict:
    """Policy gradient of the expected return, by summing over all paths."""
    paths = list(enumerate_paths(state, params))
    probs = np.array([p for p, _ in paths])
    return policy_gradient(params, [t for _, t in paths], None, mode, trace_weights=probs)


def bruteforce_optimal(state: SelectionState, budget: int):
    """Best action sequence by exhaustive search: ``(actions, return)``.

    Ties resolve to the lexicographically smallest sequence.  Raises
    :class:`BudgetExceeded` when ``(N + 1) ** (2K)`` exceeds ``budget``.
    """
    size = (state.N + 1) ** (2 * state.K - state.cursor)
    if budget < 1 or size > budget:
        raise BudgetExceeded(f"{size} sequences exceed the budget of {budget}")
    best_actions, best_ret = None, -math.inf
    for _, trace in enumerate_paths(state, None):
        ret = trace.total_return
        if ret > best_ret:
            best_actions, best_ret = trace.actions, ret
    return best_actions, best_ret


def greedy_baseline(frame, gallery: Gallery, cfg: SelectionConfig, attributes=None) -> NeighborSets:
    """Plain per-frame K-NN sets, no temporal coupling."""
    q = gallery.embedder.synthesis(frame)
    return NeighborSets(knn(gallery, q, cfg.young_group, cfg.K, attributes, cfg.criterion),
                        knn(gallery, q, cfg.old_group, cfg.K, attributes, cfg.criterion))


def save_checkpoint(path, params: PolicyParams, meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": params.input_dim,
        "hidden": list(params.hidden),
        "n_actions": params.n_actions,
        "meta": meta or {},
        "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                    for k, v in params.tensors().items()},
        "normalizer": {"shift": params.x_shift.tolist(), "scale": params.x_scale.tolist()},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a policy checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    tensors = {k: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
               for k, t in doc["tensors"].items()}
    norm = doc.get("normalizer", {})
    params = PolicyParams(**tensors, x_shift=np.asarray(norm["shift"]) if norm else None,
                          x_scale=np.asarray(norm["scale"]) if norm else None)
    return params, doc.get("meta", {})


def check_compatible(params: PolicyParams, policy_dim: int, K: int, N: int) -> None:
    want = feature_dim(policy_dim, K, N)
    if params.input_dim != want or params.n_actions != N + 1:
        raise ValueError(f"policy expects input {params.input_dim}/{params.n_actions} actions, "
                         f"environment gives {want}/{N + 1}")
