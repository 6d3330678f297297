"""Temporal-consistency measurement.

mont_mse compares the dense motion of an edited clip against the original's;
overlap_mad measures how much frames disagree where they see the same
surface. A classical variational flow estimator is built in so the motion
metric needs no external dependency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .image import FlowField, Frame, OcclusionMask
from .warp import backward_warp

DEFAULT_SMOOTHNESS = 15.0
DEFAULT_ITERATIONS = 200
DEFAULT_LEVELS = 3

# classic 3x3 neighbor average for the smoothness term
_AVG_KERNEL = np.array(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]]
)


@dataclass(frozen=True)
class FlowEstimatorConfig:
    smoothness: float = DEFAULT_SMOOTHNESS
    iterations: int = DEFAULT_ITERATIONS
    levels: int = DEFAULT_LEVELS

    def __post_init__(self):
        if self.smoothness <= 0:
            raise ValueError("smoothness must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


def _luma255(frame: Frame) -> np.ndarray:
    data = frame.data.astype(np.float64)
    if frame.channels == 1:
        plane = data[..., 0]
    else:
        plane = 0.299 * data[..., 0] + 0.587 * data[..., 1] + 0.114 * data[..., 2]
    return plane * 255.0


def _resize(plane: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    factors = (shape[0] / plane.shape[0], shape[1] / plane.shape[1])
    return ndimage.zoom(plane, factors, order=1, mode="nearest", grid_mode=True)


def _warp_plane(plane: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    yy, xx = np.mgrid[0:h, 0:w]
    return ndimage.map_coordinates(plane, [yy + v, xx + u], order=1, mode="nearest")


def _hs_level(a: np.ndarray, b: np.ndarray, alpha: float, iterations: int):
    """One Horn-Schunck solve between already-aligned images; derivatives use
    the original 2x2 cube averages, the update is the standard Jacobi form."""
    kx = 0.25 * np.array([[-1.0, 1.0], [-1.0, 1.0]])
    ky = 0.25 * np.array([[-1.0, -1.0], [1.0, 1.0]])
    kt = 0.25 * np.ones((2, 2))
    opts = dict(mode="nearest", origin=(0, 0))
    ex = ndimage.correlate(a, kx, **opts) + ndimage.correlate(b, kx, **opts)
    ey = ndimage.correlate(a, ky, **opts) + ndimage.correlate(b, ky, **opts)
    et = ndimage.correlate(b, kt, **opts) - ndimage.correlate(a, kt, **opts)

    u = np.zeros_like(a)
    v = np.zeros_like(a)
    denom = alpha**2 + ex**2 + ey**2
    for _ in range(iterations):
        u_avg = ndimage.correlate(u, _AVG_KERNEL, mode="nearest")
        v_avg = ndimage.correlate(v, _AVG_KERNEL, mode="nearest")
        t = (ex * u_avg + ey * v_avg + et) / denom
        u = u_avg - ex * t
        v = v_avg - ey * t
    return u, v


def estimate_flow_hs(
    a: Frame, b: Frame, cfg: FlowEstimatorConfig | None = None
) -> FlowField:
    """Dense forward motion of `a` toward `b` (coarse-to-fine with warping).

    Intensities are rescaled to [0, 255] before differentiation so the
    smoothness weight operates in its conventional units; adding a constant
    to both inputs therefore cannot change the result.
    """
    cfg = cfg or FlowEstimatorConfig()
    if not a.same_shape(b):
        raise ValueError("frames differ in shape")
    ia, ib = _luma255(a), _luma255(b)

    shapes = [ia.shape]
    for _ in range(cfg.levels - 1):
        h, w = shapes[-1]
        if min(h, w) < 8:
            break
        shapes.append(((h + 1) // 2, (w + 1) // 2))
    shapes.reverse()

    u = np.zeros(shapes[0])
    v = np.zeros(shapes[0])
    for idx, shape in enumerate(shapes):
        if idx > 0:
            su = shape[1] / u.shape[1]
            sv = shape[0] / u.shape[0]
            u = _resize(u, shape) * su
            v = _resize(v, shape) * sv
        pa = _resize(ia, shape) if shape != ia.shape else ia
        pb = _resize(ib, shape) if shape != ib.shape else ib
        pb_warped = _warp_plane(pb, u, v)
        du, dv = _hs_level(pa, pb_warped, cfg.smoothness, cfg.iterations)
        u = u + du
        v = v + dv
    return FlowField(u.astype(np.float32), v.astype(np.float32))


def mont_mse(
    original: Sequence[Frame],
    edited: Sequence[Frame],
    cfg: FlowEstimatorConfig | None = None,
) -> float:
    """Mean squared flow-vector distance over consecutive pairs and pixels."""
    if len(original) != len(edited):
        raise ValueError(
            f"clip lengths differ: {len(original)} original vs {len(edited)} edited"
        )
    if len(original) < 2:
        raise ValueError("need at least two frames per clip")
    total = 0.0
    for k in range(len(original) - 1):
        fo = estimate_flow_hs(original[k], original[k + 1], cfg)
        fe = estimate_flow_hs(edited[k], edited[k + 1], cfg)
        du = fo.u.astype(np.float64) - fe.u
        dv = fo.v.astype(np.float64) - fe.v
        total += float(np.mean(du**2 + dv**2))
    return total / (len(original) - 1)


def overlap_mad(
    frames: Sequence[Frame],
    flows: Mapping[tuple[int, int], FlowField],
    occlusions: Mapping[tuple[int, int], OcclusionMask],
) -> tuple[float, dict[tuple[int, int], float]]:
    """Mean |warp(frame_j to pose i) - frame_i| over reliable pixels.

    Returns the scalar (mean over ordered pairs) plus an unordered-pair
    breakdown. Pairs whose reliable region is empty are skipped; if every
    pair is fully occluded the metric is undefined and raises.
    """
    n = len(frames)
    if n < 2:
        raise ValueError("need at least two frames")
    directed: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            flow = flows.get((j, i))
            occ = occlusions.get((j, i))
            if flow is None or occ is None:
                raise KeyError(f"missing flow/occlusion for pair ({j}, {i})")
            res = backward_warp(frames[j], flow)
            good = ~(occ.bits | res.validity.bits)
            if not good.any():
                continue
            diff = np.abs(
                res.warped.data.astype(np.float64) - frames[i].data
            )[good]
            directed[(j, i)] = float(diff.mean())
    if not directed:
        raise ValueError("every pair is fully occluded; overlap metric undefined")
    scalar = float(np.mean(list(directed.values())))
    breakdown: dict[tuple[int, int], float] = {}
    for j in range(n):
        for i in range(j + 1, n):
            vals = [directed[p] for p in ((j, i), (i, j)) if p in directed]
            if vals:
                breakdown[(j, i)] = float(np.mean(vals))
    return scalar, breakdown


@dataclass(frozen=True)
class ConsistencyReport:
    mont_mse: float
    overlap_mad: float
    pairs: dict[tuple[int, int], float] = field(default_factory=dict)

    def to_keyvalues(self) -> str:
        lines = [
            f"mont_mse={self.mont_mse:.6g}",
            f"overlap_mad={self.overlap_mad:.6g}",
        ]
        for (j, i), v in sorted(self.pairs.items()):
            lines.append(f"overlap_mad_{j}_{i}={v:.6g}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = [
            "metric            value",
            f"mont_mse          {self.mont_mse:.6g}",
            f"overlap_mad       {self.overlap_mad:.6g}",
        ]
        for (j, i), v in sorted(self.pairs.items()):
            lines.append(f"overlap ({j},{i})     {v:.6g}")
        return "\n".join(lines) + "\n"


def build_report(
    original: Sequence[Frame],
    edited: Sequence[Frame],
    flows: Mapping[tuple[int, int], FlowField],
    occlusions: Mapping[tuple[int, int], OcclusionMask],
    cfg: FlowEstimatorConfig | None = None,
) -> ConsistencyReport:
    scalar, pairs = overlap_mad(edited, flows, occlusions)
    return ConsistencyReport(mont_mse(original, edited, cfg), scalar, pairs)
