"""End-to-end orchestration: neighbor selection, traversal and inversion per frame."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .embedder import EmbedderSpec, make_embedder
from .evaluation import aging_consistency
from .gallery import AlignmentOp, Gallery
from .inversion import InversionConfig, invert
from .io import VideoSequence
from .mdp import RewardConfig, SelectionConfig, encode_features, feature_dim, init_state
from .policy import PolicyParams, TrainConfig, Trainer, greedy_baseline, rollout
from .traversal import aging_delta, traverse

__all__ = [
    "SCHEMA_VERSION",
    "PipelineError",
    "RunConfig",
    "load_config",
    "synthesize_video",
    "invert_frame",
    "build_gallery",
    "initial_states",
    "train_policy",
    "new_policy",
]

SCHEMA_VERSION = 1


class PipelineError(RuntimeError):
    """A frame failed; ``manifest`` holds the records produced before the failure."""

    def __init__(self, message, manifest):
        super().__init__(message)
        self.manifest = manifest


@dataclass
class RunConfig:
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    gallery: str = "gallery.jsonl"
    young_group: int = 1
    old_group: int = 9
    K: int = 5
    n: int = 4
    alpha: float = 1.0
    epsilon: float = 1e-2
    criterion: str = "attributes-first"
    alignment: AlignmentOp = field(default_factory=AlignmentOp)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    policy_checkpoint: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    train_videos: list = field(default_factory=list)
    flow_patch: int = 3
    flow_radius: int = 2
    seed: int = 0
    base_dir: str = "."

    def __post_init__(self):
        if self.K < 1 or self.n < 1:
            raise ValueError("K and n must be >= 1")

    @property
    def N(self) -> int:
        return self.K * self.n

    @property
    def selection(self) -> SelectionConfig:
        return SelectionConfig(K=self.K, n=self.n, young_group=self.young_group,
                               old_group=self.old_group, criterion=self.criterion,
                               alignment=self.alignment)

    @property
    def reward_cfg(self) -> RewardConfig:
        return RewardConfig(self.epsilon)

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "embedder": self.embedder.to_dict(),
            "gallery": self.gallery,
            "young_group": self.young_group,
            "old_group": self.old_group,
            "K": self.K,
            "n": self.n,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "criterion": self.criterion,
            "alignment": self.alignment.to_dict(),
            "inversion": self.inversion.to_dict(),
            "policy_checkpoint": self.policy_checkpoint,
            "train": self.train.to_dict(),
            "train_videos": list(self.train_videos),
            "flow_patch": self.flow_patch,
            "flow_radius": self.flow_radius,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema_version {version}")
        kw = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "embedder" in kw:
            kw["embedder"] = EmbedderSpec.from_dict(kw["embedder"])
        if "alignment" in kw:
            kw["alignment"] = AlignmentOp.from_dict(kw["alignment"])
        if "inversion" in kw:
            kw["inversion"] = InversionConfig.from_dict(kw["inversion"])
        if "train" in kw:
            kw["train"] = TrainConfig(**{k: v for k, v in kw["train"].items()
                                         if k in TrainConfig.__dataclass_fields__})
        kw["base_dir"] = str(base_dir)
        return cls(**kw)

    def with_overrides(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_config(path) -> RunConfig:
    path = Path(path)
    return RunConfig.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def new_policy(cfg: RunConfig, embedder) -> PolicyParams:
    dim = feature_dim(embedder.policy_dim, cfg.K, cfg.N)
    return PolicyParams.init(dim, cfg.N + 1, cfg.train.hidden, rng=cfg.train.seed)


def synthesize_video(video: VideoSequence, gallery: Gallery, policy: PolicyParams | None,
                     cfg: RunConfig):
    """Age every frame of ``video``; returns ``(aged video, manifest)``.

    Frame 0 uses plain K-NN sets.  Every later frame runs one argmax episode
    starting from the previous frame's final sets.  ``policy=None`` keeps the
    initial sets at every step, which is the frame-independent baseline.
    """
    emb = gallery.embedder
    sel = cfg.selection
    tcfg = sel.traversal(cfg.alpha)
    attrs = video.attributes
    records, deltas, out_frames = [], [], []
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "video": video.name,
        "mode": "rl" if policy is not None else "no-rl",
        "status": "ok",
        "frames": records,
    }
    prev_sets = prev_delta = None
    for t, frame in enumerate(video.frames):
        try:
            frame = np.asarray(frame, dtype=np.float64)
            rec = {"t": t}
            if t == 0:
                sets = greedy_baseline(frame, gallery, sel, attrs)
                rec.update(actions=[], rewards=[])
            else:
                state = init_state(frame, video.frames[t - 1], prev_sets, prev_delta, gallery,
                                   sel, cfg.reward_cfg, attrs)
                trace = rollout(state, policy, "argmax")
                sets = trace.final_state.current_sets
                rec.update(actions=trace.actions, rewards=trace.rewards)
            delta = aging_delta(gallery, sets, frame, tcfg)
            target = traverse(emb.synthesis(frame), delta, cfg.alpha)
            result = invert(target, emb, cfg.inversion, frame)
        except Exception as exc:
            manifest["status"] = "failed"
            manifest["error"] = f"frame {t}: {exc}"
            raise PipelineError(manifest["error"], manifest) from exc
        rec.update(sets=sets.to_dict(), delta=[float(x) for x in delta],
                   delta_norm=float(np.linalg.norm(delta)),
                   inversion_objective=result.objective,
                   inversion_iterations=result.iterations)
        records.append(rec)
        deltas.append(delta)
        out_frames.append(result.frame)
        prev_sets, prev_delta = sets, delta
    manifest["metrics"] = {
        "consistency": aging_consistency(deltas, cfg.epsilon) if len(deltas) >= 2 else None,
    }
    aged = VideoSequence(out_frames, video.attributes, f"{video.name}_aged")
    return aged, manifest


def invert_frame(frame, gallery: Gallery, cfg: RunConfig):
    """Greedy-set traversal and inversion of a single frame; returns ``(aged, record)``."""
    frame = np.asarray(frame, dtype=np.float64)
    tcfg = cfg.selection.traversal(cfg.alpha)
    sets = greedy_baseline(frame, gallery, cfg.selection)
    delta = aging_delta(gallery, sets, frame, tcfg)
    target = traverse(gallery.embedder.synthesis(frame), delta, cfg.alpha)
    result = invert(target, gallery.embedder, cfg.inversion, frame)
    record = {"sets": sets.to_dict(), "delta_norm": float(np.linalg.norm(delta)),
              "inversion_objective": result.objective,
              "inversion_iterations": result.iterations}
    return result.frame, record


def initial_states(videos, gallery: Gallery, cfg: RunConfig):
    """One initial state per frame pair, with the previous frame's greedy sets as history."""
    sel = cfg.selection
    tcfg = sel.traversal(cfg.alpha)
    states = []
    for video in videos:
        frames = [np.asarray(f, dtype=np.float64) for f in video.frames]
        prev = greedy_baseline(frames[0], gallery, sel, video.attributes)
        for t in range(1, len(frames)):
            prev_delta = aging_delta(gallery, prev, frames[t - 1], tcfg)
            states.append(init_state(frames[t], frames[t - 1], prev, prev_delta, gallery, sel,
                                     cfg.reward_cfg, video.attributes))
            prev = greedy_baseline(frames[t], gallery, sel, video.attributes)
    return states


class VideoEpisodes:
    """On-policy episode source that walks whole videos frame by frame.

    Each call returns the episode for the next frame of the current video,
    started from the neighbor sets the policy itself chose on the previous
    frame, which is the situation the policy faces during synthesis.
    """

    def __init__(self, videos, gallery: Gallery, cfg: RunConfig):
        self.videos = [v for v in videos if len(v) >= 2]
        if not self.videos:
            raise ValueError("training needs videos with at least two frames")
        self.gallery = gallery
        self.cfg = cfg
        self.sel = cfg.selection
        self.tcfg = self.sel.traversal(cfg.alpha)
        self._video = None
        self._t = 0

    def _start(self, rng):
        self._video = self.videos[int(rng.integers(len(self.videos)))]
        frame = np.asarray(self._video.frames[0], dtype=np.float64)
        self._sets = greedy_baseline(frame, self.gallery, self.sel, self._video.attributes)
        self._delta = aging_delta(self.gallery, self._sets, frame, self.tcfg)
        self._t = 1

    def __call__(self, params, rng):
        if self._video is None or self._t >= len(self._video):
            self._start(rng)
        v, t = self._video, self._t
        state = init_state(v.frames[t], v.frames[t - 1], self._sets, self._delta, self.gallery,
                           self.sel, self.cfg.reward_cfg, v.attributes)
        trace = rollout(state, params, "sample", rng)
        self._sets = trace.final_state.current_sets
        self._delta = aging_delta(self.gallery, self._sets, v.frames[t], self.tcfg)
        self._t += 1
        return trace


def train_policy(videos, gallery: Gallery, cfg: RunConfig, params: PolicyParams | None = None,
                 episodes: int | None = None) -> Trainer:
    """REINFORCE over on-policy passes through ``videos``."""
    source = VideoEpisodes(videos, gallery, cfg)
    if params is None:
        states = initial_states(source.videos, gallery, cfg)
        params = new_policy(cfg, gallery.embedder).fit_normalizer(
            [np.concatenate(encode_features(s)) for s in states])
    trainer = Trainer(params, cfg.train)
    trainer.fit(source, episodes)
    return trainer


def build_gallery(cfg: RunConfig) -> Gallery:
    from .gallery import ingest

    return ingest(cfg.resolve(cfg.gallery), make_embedder(cfg.embedder))
