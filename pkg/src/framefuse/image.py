"""Raster and flow containers shared by every other module.

Frames are stored as (height, width, channels) float32 arrays, row-major and
channel-interleaved. Intensities are nominally in [0, 1] but the containers
only enforce finiteness: intermediate diffusion states live far outside the
nominal range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates


def _as_float32(arr, name: str) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    return out


@dataclass(frozen=True)
class Frame:
    """Image raster: (H, W, C) float32, C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"frame data must be HxWxC, got shape {data.shape}")
        if data.shape[2] not in (1, 3):
            raise ValueError(f"frame must have 1 or 3 channels, got {data.shape[2]}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"frame must be at least 1x1, got shape {data.shape}")
        object.__setattr__(self, "data", _as_float32(data, "frame"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def same_shape(self, other: "Frame") -> bool:
        return self.shape == other.shape

    @classmethod
    def constant(cls, height: int, width: int, values) -> "Frame":
        values = np.atleast_1d(np.asarray(values, dtype=np.float32))
        return cls(np.broadcast_to(values, (height, width, values.size)).copy())


@dataclass(frozen=True)
class FlowField:
    """Dense correspondence field defined on the target frame's pixel grid.

    For a field with direction (j, i) — content moving from frame j to
    frame i — the vectors live on frame i's grid: pixel p of frame i
    corresponds to position p + (u(p), v(p)) in frame j. Backward warping
    frame j's content onto frame i samples at exactly those positions.
    """

    u: np.ndarray
    v: np.ndarray
    direction: tuple[int, int] | None = field(default=None)

    def __post_init__(self):
        u = np.asarray(self.u)
        v = np.asarray(self.v)
        if u.ndim != 2 or v.ndim != 2 or u.shape != v.shape:
            raise ValueError(
                f"flow components must be matching HxW arrays, got {u.shape} and {v.shape}"
            )
        object.__setattr__(self, "u", _as_float32(u, "flow u"))
        object.__setattr__(self, "v", _as_float32(v, "flow v"))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @classmethod
    def constant(cls, height: int, width: int, du: float, dv: float,
                 direction: tuple[int, int] | None = None) -> "FlowField":
        return cls(
            np.full((height, width), du, dtype=np.float32),
            np.full((height, width), dv, dtype=np.float32),
            direction,
        )

    @classmethod
    def zero(cls, height: int, width: int,
             direction: tuple[int, int] | None = None) -> "FlowField":
        return cls.constant(height, width, 0.0, 0.0, direction)


@dataclass(frozen=True)
class OcclusionMask:
    """Per-pixel validity map; True marks pixels with no reliable correspondence."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be HxW, got shape {bits.shape}")
        object.__setattr__(self, "bits", np.ascontiguousarray(bits, dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def empty(cls, height: int, width: int) -> "OcclusionMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, height: int, width: int) -> "OcclusionMask":
        return cls(np.ones((height, width), dtype=bool))

    def union(self, other: "OcclusionMask") -> "OcclusionMask":
        if self.bits.shape != other.bits.shape:
            raise ValueError("mask dimensions differ")
        return OcclusionMask(self.bits | other.bits)


def sample_bilinear(frame: Frame, x: float, y: float, channel: int = 0) -> float:
    """Bilinear sample of one channel at real coordinates, clamp-to-edge borders."""
    h, w = frame.height, frame.width
    x = min(max(float(x), 0.0), w - 1.0)
    y = min(max(float(y), 0.0), h - 1.0)
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    d = frame.data[:, :, channel]
    top = (1.0 - fx) * float(d[y0, x0]) + fx * float(d[y0, x1])
    bot = (1.0 - fx) * float(d[y1, x0]) + fx * float(d[y1, x1])
    return (1.0 - fy) * top + fy * bot


def sample_plane(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Clamp-to-edge bilinear sampling of a single 2D plane at coordinate arrays."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ValueError("coordinate arrays must share a shape")
    coords = np.stack([ys.ravel(), xs.ravel()])
    # order=1 with edge padding == coordinate clamping for bilinear.
    out = map_coordinates(np.asarray(plane), coords, order=1, mode="nearest")
    return out.reshape(xs.shape)


def sample_grid(frame: Frame, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized clamp-to-edge bilinear sampling at coordinate arrays.

    Returns an array shaped like xs with a trailing channel axis.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape:
        raise ValueError("coordinate arrays must share a shape")
    out = np.empty(xs.shape + (frame.channels,), dtype=np.float32)
    for c in range(frame.channels):
        out[..., c] = sample_plane(frame.data[:, :, c], xs, ys)
    return out


def gradient(frame: Frame) -> tuple[Frame, Frame]:
    """Forward-difference gradients (gx, gy); last column/row zeroed.

    Paired with the backward-difference divergence in the blending solver so
    that div(grad(f)) reproduces the 5-point Laplacian exactly.
    """
    d = frame.data
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    gx[:, :-1, :] = d[:, 1:, :] - d[:, :-1, :]
    gy[:-1, :, :] = d[1:, :, :] - d[:-1, :, :]
    return Frame(gx), Frame(gy)
