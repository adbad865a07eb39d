"""Feature inversion: recover a frame whose embedding matches a target.

Minimizes ``0.5 * |target - F(x)|^2 + lambda_tv * TV_beta(x)`` by projected
gradient descent on ``[0, 1]`` pixels with step halving on objective increase.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedder import check_frame

__all__ = [
    "InversionDivergence",
    "InversionConfig",
    "InversionResult",
    "tv_value",
    "tv_gradient",
    "objective",
    "invert",
]


class InversionDivergence(RuntimeError):
    """The objective became non-finite during descent."""


@dataclass(frozen=True)
class InversionConfig:
    lambda_tv: float = 1e-2
    beta: float = 2.0
    step_size: float = 1.0
    max_iters: int = 300
    init: str = "input-frame"
    tol: float = 1e-9

    def __post_init__(self):
        if self.lambda_tv < 0:
            raise ValueError("lambda_tv must be >= 0")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.init not in ("input-frame", "zeros"):
            raise ValueError(f"unknown init {self.init!r}")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "InversionConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _diffs(x):
    # forward differences with zero difference past the last row/column
    dh = np.zeros_like(x)
    dv = np.zeros_like(x)
    dh[:, :-1] = x[:, 1:] - x[:, :-1]
    dv[:-1, :] = x[1:, :] - x[:-1, :]
    return dh, dv


def tv_value(frame, beta: float = 2.0) -> float:
    """``sum_ij ((x[i,j+1]-x[i,j])^2 + (x[i+1,j]-x[i,j])^2) ** (beta/2)``.

    Differences that would leave the frame count as zero.
    """
    x = np.asarray(frame, dtype=np.float64)
    dh, dv = _diffs(x)
    s = dh * dh + dv * dv
    if beta == 2.0:
        return float(s.sum())
    return float(np.sum(s ** (beta / 2.0)))


def tv_gradient(frame, beta: float = 2.0) -> np.ndarray:
    """Analytic gradient of :func:`tv_value`; 0 is used where a pixel term is non-smooth."""
    x = np.asarray(frame, dtype=np.float64)
    dh, dv = _diffs(x)
    s = dh * dh + dv * dv
    if beta == 2.0:
        w = np.ones_like(s)
    else:
        w = np.zeros_like(s)
        pos = s > 0
        w[pos] = (beta / 2.0) * s[pos] ** (beta / 2.0 - 1.0)
    # d s_ij / d x: 2 dh_ij (e_{i,j+1} - e_{ij}) + 2 dv_ij (e_{i+1,j} - e_{ij})
    gh = 2.0 * w * dh
    gv = 2.0 * w * dv
    g = -gh - gv
    g[:, 1:] += gh[:, :-1]
    g[1:, :] += gv[:-1, :]
    return g


def objective(x, target, embedder, lambda_tv: float, beta: float) -> float:
    r = embedder.synthesis(x) - target
    return 0.5 * float(r @ r) + lambda_tv * tv_value(x, beta)


def _gradient(x, target, embedder, lambda_tv, beta):
    r = embedder.synthesis(x) - target
    g = embedder.vjp(x, r)
    if lambda_tv:
        g = g + lambda_tv * tv_gradient(x, beta)
    return g


@dataclass
class InversionResult:
    frame: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    iterations: int = 0

    def to_dict(self) -> dict:
        return {"objective": self.objective, "iterations": self.iterations,
                "history": self.history}


def invert(target, embedder, cfg: InversionConfig, init_frame=None) -> InversionResult:
    """Projected gradient descent from ``init_frame`` (or zeros).

    The returned frame is the lowest-objective iterate seen; ``history`` holds
    the objective of every accepted iterate.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.size != embedder.synthesis_dim:
        raise ValueError(f"target length {target.size} != embedding length {embedder.synthesis_dim}")
    if cfg.init == "zeros" or init_frame is None:
        x = np.zeros(embedder.shape)
    else:
        x = check_frame(init_frame, embedder.shape).copy()
    lam, beta = cfg.lambda_tv, cfg.beta
    f = objective(x, target, embedder, lam, beta)
    if not np.isfinite(f):
        raise InversionDivergence("objective is not finite at the initial frame")
    history = [f]
    step = cfg.step_size
    it = 0
    for it in range(1, cfg.max_iters + 1):
        g = _gradient(x, target, embedder, lam, beta)
        if not np.all(np.isfinite(g)):
            raise InversionDivergence(f"non-finite gradient at iteration {it}; "
                                      f"objective history {history[:3]}...{history[-3:]}")
        # projected-gradient stationarity: the step the projection would actually take
        pg = x - np.clip(x - g, 0.0, 1.0)
        if np.linalg.norm(pg) <= cfg.tol:
            break
        while True:
            cand = np.clip(x - step * g, 0.0, 1.0)
            fc = objective(cand, target, embedder, lam, beta)
            if np.isnan(fc):
                raise InversionDivergence(f"objective became NaN at iteration {it}; "
                                          f"objective history {history[:3]}...{history[-3:]}")
            if fc <= f:
                break
            step *= 0.5
            if step < 1e-14:
                break
        if fc > f:
            break
        moved = not np.array_equal(cand, x)
        x, f = cand, fc
        history.append(f)
        if not moved:
            break
    return InversionResult(x, f, history, it)
