"""framefuse: flow-synchronized multi-frame diffusion sampling.

Per-frame diffusion chains exchange their clean-frame predictions at every
denoising step: each prediction is warped to every other frame's pose,
seam-repaired by gradient-domain blending, then reconciled by averaging
(early steps) or anchored overwrite (late steps).
"""

from .denoise import BridgeDenoiser, IdentityDenoiser, ToyDenoiser, plant_targets
from .fusion import (
    CandidateSet,
    ClipGeometry,
    FusionConfig,
    build_candidates,
    fuse_detail,
    fuse_semantic,
    select_anchor,
)
from .image import FlowField, Frame, OcclusionMask, gradient, sample_bilinear
from .metrics import ConsistencyReport, estimate_flow_hs, mont_mse, overlap_mad
from .poisson import BlendRegion, BlendResult, SolverConfig, candidate, poisson_blend
from .sampler import DiffusionState, SamplerSchedule, ddim_step, init_noise, run
from .warp import WarpResult, backward_warp, dilate_mask, occlusion_mask

__version__ = "0.1.0"

__all__ = [
    "BlendRegion",
    "BlendResult",
    "BridgeDenoiser",
    "CandidateSet",
    "ClipGeometry",
    "ConsistencyReport",
    "DiffusionState",
    "FlowField",
    "Frame",
    "FusionConfig",
    "IdentityDenoiser",
    "OcclusionMask",
    "SamplerSchedule",
    "SolverConfig",
    "ToyDenoiser",
    "WarpResult",
    "backward_warp",
    "build_candidates",
    "candidate",
    "ddim_step",
    "dilate_mask",
    "estimate_flow_hs",
    "fuse_detail",
    "fuse_semantic",
    "gradient",
    "init_noise",
    "mont_mse",
    "occlusion_mask",
    "overlap_mad",
    "plant_targets",
    "poisson_blend",
    "run",
    "sample_bilinear",
    "select_anchor",
]
