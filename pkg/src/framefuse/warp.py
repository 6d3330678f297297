"""Flow-guided backward warping and forward-backward occlusion detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation

from .image import Frame, FlowField, OcclusionMask, sample_grid, sample_plane

DEFAULT_OCCLUSION_TOLERANCE_PX = 1.0


@dataclass(frozen=True)
class WarpResult:
    warped: Frame
    validity: OcclusionMask  # True where the sample point fell outside the source


def _grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def backward_warp(source: Frame, flow: FlowField) -> WarpResult:
    """Pull source content onto the flow's grid: out(p) = source(p + flow(p)).

    Samples are bilinear with clamp-to-edge borders; pixels whose sample
    point falls outside the source rectangle are flagged in the validity
    mask (their clamped values are still emitted).
    """
    if (flow.height, flow.width) != (source.height, source.width):
        raise ValueError(
            f"flow is {flow.width}x{flow.height} but source is "
            f"{source.width}x{source.height}"
        )
    xs, ys = _grid(flow.height, flow.width)
    sx = xs + flow.u
    sy = ys + flow.v
    outside = (sx < 0) | (sx > source.width - 1) | (sy < 0) | (sy > source.height - 1)
    warped = sample_grid(source, sx, sy)
    return WarpResult(Frame(warped), OcclusionMask(outside))


def occlusion_mask(
    flow_fwd: FlowField,
    flow_bwd: FlowField,
    tolerance_px: float = DEFAULT_OCCLUSION_TOLERANCE_PX,
) -> OcclusionMask:
    """Forward-backward consistency check.

    A pixel is occluded when the round trip p -> p + fwd(p) -> back along the
    bilinearly sampled backward flow misses p by more than tolerance_px
    (Euclidean), or when the forward-mapped point leaves the image.
    """
    if (flow_fwd.height, flow_fwd.width) != (flow_bwd.height, flow_bwd.width):
        raise ValueError("forward and backward flows have different dimensions")
    if tolerance_px < 0:
        raise ValueError(f"tolerance_px must be >= 0, got {tolerance_px}")
    h, w = flow_fwd.height, flow_fwd.width
    xs, ys = _grid(h, w)
    mx = xs + flow_fwd.u
    my = ys + flow_fwd.v
    off_image = (mx < 0) | (mx > w - 1) | (my < 0) | (my > h - 1)

    ru = flow_fwd.u + sample_plane(flow_bwd.u, mx, my)
    rv = flow_fwd.v + sample_plane(flow_bwd.v, mx, my)
    residual = np.sqrt(ru.astype(np.float64) ** 2 + rv.astype(np.float64) ** 2)
    return OcclusionMask((residual > tolerance_px) | off_image)


def dilate_mask(mask: OcclusionMask, radius: int) -> OcclusionMask:
    """Grow occluded regions by a square radius; radius 0 is the identity."""
    if radius < 0:
        raise ValueError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0 or mask.count == 0:
        return mask
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    return OcclusionMask(binary_dilation(mask.bits, structure=structure))
