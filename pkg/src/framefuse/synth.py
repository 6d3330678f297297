"""Synthetic clips with exact analytic flows.

Each scenario renders a continuous pattern at translated sample positions,
so the true flow between any two frames is the known camera translation and
no estimator is ever involved. Scenarios return frames plus complete
all-pairs flow/occlusion tables and can be saved as a manifest directory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .image import FlowField, Frame, OcclusionMask
from .io import save_flow, save_frame_png, save_manifest, save_mask_png

SCENARIOS = ("translate", "flicker", "car3")


@dataclass(frozen=True)
class SyntheticClip:
    name: str
    frames: tuple[Frame, ...]
    flows: dict[tuple[int, int], FlowField]
    occlusions: dict[tuple[int, int], OcclusionMask]
    dx: float
    dy: float


def _tables(n: int, h: int, w: int, dx: float, dy: float):
    """All-pairs translation tables: entry (j, i) warps frame j to pose i."""
    flows = {}
    occlusions = {}
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            flows[(j, i)] = FlowField.constant(h, w, (i - j) * dx, (i - j) * dy,
                                               direction=(j, i))
            occlusions[(j, i)] = OcclusionMask.empty(h, w)
    return flows, occlusions


def _render(pattern: Callable[[np.ndarray, np.ndarray], np.ndarray],
            n: int, h: int, w: int, dx: float, dy: float) -> list[Frame]:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return [
        Frame(pattern(xx + k * dx, yy + k * dy).astype(np.float32))
        for k in range(n)
    ]


def _smooth_rgb(xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    """Gentle low-frequency color pattern; periods are long enough that
    sub-pixel resampling barely dents it."""
    r = 0.5 + 0.20 * np.sin(2 * np.pi * xx / 24) * np.cos(2 * np.pi * yy / 32)
    g = 0.5 + 0.18 * np.cos(2 * np.pi * (xx + yy) / 28)
    b = 0.5 + 0.20 * np.sin(2 * np.pi * yy / 26 + 1.0)
    return np.stack([r, g, b], axis=-1)


def translate(seed: int = 0, n: int = 6, size: int = 64,
              dx: float = 2.0, dy: float = 1.0) -> SyntheticClip:
    """Camera panning over a smooth texture; whole-frame translation flows."""
    frames = _render(_smooth_rgb, n, size, size, dx, dy)
    flows, occ = _tables(n, size, size, dx, dy)
    return SyntheticClip("translate", tuple(frames), flows, occ, dx, dy)


def flicker(seed: int = 0, n: int = 8, size: int = 128,
            dx: float = 1.5, dy: float = 0.75) -> SyntheticClip:
    """Sub-pixel pan across a smooth texture; the planted toy targets add
    per-frame color casts on top, so unfused runs flicker by construction."""
    frames = _render(_smooth_rgb, n, size, size, dx, dy)
    flows, occ = _tables(n, size, size, dx, dy)
    return SyntheticClip("flicker", tuple(frames), flows, occ, dx, dy)


def car3(seed: int = 0, size: int = 48, dx: float = 3.0, dy: float = 2.0) -> SyntheticClip:
    """Three frames, each a distinctly colored square riding over a distinct
    constant background; integer translation keeps warps exact.

    Unlike the panning scenarios the OBJECT moves +d per frame, so the
    backward-warp table entry (j, i) is (j - i) * d: warping frame j onto
    pose i samples back along the square's motion."""
    n = 3
    backgrounds = [(0.15, 0.15, 0.2), (0.8, 0.75, 0.7), (0.2, 0.55, 0.25)]
    squares = [(0.9, 0.1, 0.1), (0.1, 0.2, 0.85), (0.95, 0.85, 0.1)]
    side = 16
    x0, y0 = 10, 12  # square stays clear of every shifted border strip
    frames = []
    for k in range(n):
        data = np.empty((size, size, 3), np.float32)
        data[:] = backgrounds[k]
        sx = x0 + int(k * dx)
        sy = y0 + int(k * dy)
        data[sy:sy + side, sx:sx + side] = squares[k]
        frames.append(Frame(data))
    flows, occ = _tables(n, size, size, -dx, -dy)
    return SyntheticClip("car3", tuple(frames), flows, occ, dx, dy)


def detail_texture(seed: int = 0, n: int = 8, size: int = 96,
                   misalignment: float = 0.6) -> SyntheticClip:
    """Static clip with a fine sine carrier, but deliberately misaligned
    flow tables: warping any neighbor shifts its texture off-phase, so
    indiscriminate averaging smears the carrier while anchored overwrite
    keeps it. Used to probe the two fusion stages against each other."""
    period = 12.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    carrier = 0.15 * np.sin(2 * np.pi * xx / period)
    base = 0.5 + carrier + 0.05 * np.cos(2 * np.pi * yy / 48)
    data = np.stack([base, base, base], axis=-1).astype(np.float32)
    frames = tuple(Frame(data.copy()) for _ in range(n))
    flows, occ = _tables(n, size, size, misalignment, 0.0)
    return SyntheticClip("detail-texture", frames, flows, occ, misalignment, 0.0)


def make(scenario: str, seed: int = 0) -> SyntheticClip:
    if scenario == "translate":
        return translate(seed)
    if scenario == "flicker":
        return flicker(seed)
    if scenario == "car3":
        return car3(seed)
    raise ValueError(f"unknown scenario {scenario!r}")


def save_clip(clip: SyntheticClip, out_dir: str | Path) -> Path:
    """Write frames, flows, and masks plus a manifest.json; returns the
    manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"frames": [], "flows": {}, "occlusions": {}}
    for k, frame in enumerate(clip.frames):
        name = f"frame_{k:03d}.png"
        save_frame_png(out / name, frame)
        doc["frames"].append(name)
    for (j, i), flow in clip.flows.items():
        name = f"flow_{j}_{i}.flo"
        save_flow(out / name, flow)
        doc["flows"][f"{j}->{i}"] = name
    for (j, i), mask in clip.occlusions.items():
        name = f"occ_{j}_{i}.png"
        save_mask_png(out / name, mask)
        doc["occlusions"][f"{j}->{i}"] = name
    manifest = out / "manifest.json"
    save_manifest(manifest, doc)
    return manifest
