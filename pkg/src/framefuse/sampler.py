"""Synchronized denoising loop.

Each frame carries its own noisy state; every step the denoiser predicts
clean frames, the fusion stage reconciles them across the clip, and a
deterministic DDIM update (eta = 0 by default, eta = 1 recovers ancestral
sampling) re-noises the reconciled predictions to the next level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .denoise import Denoiser
from .fusion import (
    DETAIL,
    SEMANTIC,
    ClipGeometry,
    FusionConfig,
    build_candidates,
    fuse_detail,
    fuse_semantic,
    select_anchor,
    stage_for_step,
)
from .image import FlowField, Frame, OcclusionMask
from .poisson import SolverConfig

DEFAULT_STEPS = 20
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2
DEFAULT_TRAIN_STEPS = 1000

FUSION_MODES = ("two-stage", "semantic", "detail", "off")
_INIT_STREAM = 0
_STEP_STREAM = 1


@dataclass(frozen=True)
class SamplerSchedule:
    """Strided slice of a linear-beta train schedule.

    Arrays are indexed by sampling position: index 0 is the noisiest step
    (largest t), the last index is t's smallest value, so alpha_bars
    increases along the arrays while it decreases in t.
    """

    timesteps: tuple[int, ...]
    betas: np.ndarray
    alpha_bars: np.ndarray

    def __post_init__(self):
        n = len(self.timesteps)
        if n < 1:
            raise ValueError("schedule needs at least one step")
        if len(self.betas) != n or len(self.alpha_bars) != n:
            raise ValueError("schedule arrays disagree on length")
        if any(t2 >= t1 for t1, t2 in zip(self.timesteps, self.timesteps[1:])):
            raise ValueError("timesteps must be strictly descending")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie strictly inside (0, 1)")
        ab = self.alpha_bars
        if np.any(ab <= 0) or np.any(ab > 1):
            raise ValueError("alpha_bars must lie in (0, 1]")
        if np.any(np.diff(ab) <= 0):
            raise ValueError("alpha_bars must increase as t decreases")
        if np.any(ab[:-1] >= 1):
            raise ValueError("alpha_bar = 1 before the final step divides by zero")

    @property
    def n_steps(self) -> int:
        return len(self.timesteps)

    @classmethod
    def build(
        cls,
        n_steps: int = DEFAULT_STEPS,
        beta_start: float = DEFAULT_BETA_START,
        beta_end: float = DEFAULT_BETA_END,
        train_steps: int = DEFAULT_TRAIN_STEPS,
    ) -> "SamplerSchedule":
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if train_steps < n_steps:
            raise ValueError("train_steps must be >= n_steps")
        if not 0 < beta_start < 1 or not 0 < beta_end < 1:
            raise ValueError("beta endpoints must lie in (0, 1)")
        betas_train = np.linspace(beta_start, beta_end, train_steps, dtype=np.float64)
        alpha_bars_train = np.cumprod(1.0 - betas_train)
        picks = np.arange(0, train_steps, train_steps // n_steps)[:n_steps][::-1]
        return cls(
            timesteps=tuple(int(t) for t in picks),
            betas=betas_train[picks],
            alpha_bars=alpha_bars_train[picks],
        )


@dataclass(frozen=True)
class DiffusionState:
    frames: tuple[Frame, ...]
    t_index: int
    seed: int

    def __post_init__(self):
        if not self.frames:
            raise ValueError("state needs at least one frame")
        first = self.frames[0]
        if any(not first.same_shape(f) for f in self.frames[1:]):
            raise ValueError("state frames disagree on dimensions")


def init_noise(n_frames: int, height: int, width: int, channels: int,
               seed: int) -> DiffusionState:
    """Standard-normal start; each frame draws from its own (seed, index)
    substream so clip length never shifts another frame's noise."""
    if n_frames < 1 or height < 1 or width < 1:
        raise ValueError("dimensions must be positive")
    frames = tuple(
        Frame(
            np.random.default_rng([seed, _INIT_STREAM, i])
            .standard_normal((height, width, channels))
            .astype(np.float32)
        )
        for i in range(n_frames)
    )
    return DiffusionState(frames, 0, seed)


def _step_noise(seed: int, frame_index: int, t_index: int, shape) -> np.ndarray:
    rng = np.random.default_rng([seed, _STEP_STREAM, frame_index, t_index])
    return rng.standard_normal(shape)


def predict_x0(
    state: DiffusionState,
    denoiser: Denoiser,
    schedule: SamplerSchedule,
    clip_range: tuple[float, float] | None = None,
) -> list[Frame]:
    k = state.t_index
    preds = denoiser.predict_batch(
        list(state.frames), k, schedule.timesteps[k], float(schedule.alpha_bars[k])
    )
    if len(preds) != len(state.frames):
        raise ValueError(
            f"denoiser returned {len(preds)} frames for {len(state.frames)} states"
        )
    for i, (p, x) in enumerate(zip(preds, state.frames)):
        if not p.same_shape(x):
            raise ValueError(f"prediction {i} has shape {p.shape}, expected {x.shape}")
    if clip_range is not None:
        lo, hi = clip_range
        preds = [Frame(np.clip(p.data, lo, hi)) for p in preds]
    return preds


def ddim_step(
    x_t: Frame,
    x0_hat: Frame,
    t_index: int,
    schedule: SamplerSchedule,
    eta: float = 0.0,
    noise: np.ndarray | None = None,
) -> Frame:
    """One re-noising update; the final step returns x0_hat exactly."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if not 0 <= t_index < schedule.n_steps:
        raise ValueError(f"t_index {t_index} outside the schedule")
    if t_index == schedule.n_steps - 1:
        return x0_hat
    ab_t = float(schedule.alpha_bars[t_index])
    ab_prev = float(schedule.alpha_bars[t_index + 1])
    if ab_t >= 1.0:
        raise ValueError("alpha_bar = 1 at a non-final step")

    x = x_t.data.astype(np.float64)
    x0 = x0_hat.data.astype(np.float64)
    eps = (x - np.sqrt(ab_t) * x0) / np.sqrt(1.0 - ab_t)
    sigma = (
        eta
        * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t))
        * np.sqrt(1.0 - ab_t / ab_prev)
    )
    out = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev - sigma**2) * eps
    if sigma > 0:
        z = noise if noise is not None else np.random.default_rng().standard_normal(x.shape)
        out = out + sigma * z
    return Frame(out.astype(np.float32))


def _fuse_step(predictions, geometry, flows, occlusions, fusion_cfg, solver_cfg,
               mode, step_index, n_steps, workers):
    if mode == "off" or len(predictions) == 1:
        return list(predictions)
    stage = stage_for_step(fusion_cfg, step_index, n_steps)
    if mode == SEMANTIC:
        stage = SEMANTIC
    elif mode == DETAIL:
        stage = DETAIL
    sets = build_candidates(predictions, flows, occlusions, solver_cfg,
                            geometry=geometry, workers=workers)
    if stage == SEMANTIC:
        return [fuse_semantic(s) for s in sets]
    anchor = select_anchor(fusion_cfg, step_index, len(predictions))
    return fuse_detail(sets, anchor)


def run(
    video: Sequence[Frame],
    flows: Mapping[tuple[int, int], FlowField],
    occlusions: Mapping[tuple[int, int], OcclusionMask],
    denoiser: Denoiser,
    schedule: SamplerSchedule | None = None,
    fusion_cfg: FusionConfig | None = None,
    solver_cfg: SolverConfig | None = None,
    seed: int = 0,
    eta: float = 0.0,
    fusion_mode: str = "two-stage",
    x0_clip: tuple[float, float] | None = None,
    workers: int = 1,
) -> list[Frame]:
    """Full synchronized sampling; returns one output frame per input frame,
    clamped to [0, 1] for emission."""
    if not video:
        raise ValueError("empty clip")
    if fusion_mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion_mode {fusion_mode!r}")
    schedule = schedule or SamplerSchedule.build()
    fusion_cfg = fusion_cfg or FusionConfig(rng_seed=seed)
    solver_cfg = solver_cfg or SolverConfig()

    n = len(video)
    h, w, c = video[0].shape
    geometry = None
    if fusion_mode != "off" and n > 1:
        geometry = ClipGeometry(n, flows, occlusions)

    state = init_noise(n, h, w, c, seed)
    for k in range(schedule.n_steps):
        t_value = schedule.timesteps[k]
        try:
            preds = predict_x0(state, denoiser, schedule, x0_clip)
            fused = _fuse_step(preds, geometry, flows, occlusions, fusion_cfg,
                               solver_cfg, fusion_mode, k, schedule.n_steps, workers)
        except Exception as exc:
            raise RuntimeError(f"step {k} (t={t_value}): {exc}") from exc
        next_frames = []
        for i, (x_t, x0_hat) in enumerate(zip(state.frames, fused)):
            noise = _step_noise(seed, i, k, x_t.shape) if eta > 0 else None
            try:
                next_frames.append(ddim_step(x_t, x0_hat, k, schedule, eta, noise))
            except Exception as exc:
                raise RuntimeError(
                    f"step {k} (t={t_value}), frame {i}: {exc}"
                ) from exc
        state = DiffusionState(tuple(next_frames), min(k + 1, schedule.n_steps - 1),
                               seed)
    return [Frame(np.clip(f.data, 0.0, 1.0)) for f in state.frames]
