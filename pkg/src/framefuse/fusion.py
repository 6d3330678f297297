"""Per-timestep information sharing across frames.

Every frame's clean prediction is warped to every other frame's pose and
seam-repaired, giving each target an N-entry candidate set. Early steps
average the sets (consensus on layout and color); late steps overwrite every
frame with one randomly anchored frame's content (consensus on fine detail).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import ceil
from typing import Mapping, Sequence

import numpy as np

from .image import FlowField, Frame, OcclusionMask, sample_grid
from .poisson import BlendRegion, PoissonSystem, SolverConfig

SEMANTIC = "semantic"
DETAIL = "detail"
ANCHOR_POLICIES = ("uniform-random", "round-robin")
_ANCHOR_STREAM = 2


@dataclass(frozen=True)
class FusionConfig:
    stage_boundary_fraction: float = 0.5  # leading fraction of steps that average
    rng_seed: int = 0
    anchor_policy: str = "uniform-random"

    def __post_init__(self):
        if not 0.0 < self.stage_boundary_fraction <= 1.0:
            raise ValueError("stage_boundary_fraction must lie in (0, 1]")
        if self.anchor_policy not in ANCHOR_POLICIES:
            raise ValueError(f"unknown anchor_policy {self.anchor_policy!r}")


@dataclass(frozen=True)
class CandidateSet:
    """All N renderings of one target pose; entry j carries frame j's
    appearance, entry target_index is the unmodified prediction."""

    target_index: int
    candidates: tuple[Frame, ...]

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("candidate set must not be empty")
        if not 0 <= self.target_index < len(self.candidates):
            raise ValueError("target_index outside the candidate list")
        first = self.candidates[0]
        if any(not first.same_shape(c) for c in self.candidates[1:]):
            raise ValueError("candidates disagree on dimensions")


def stage_for_step(cfg: FusionConfig, step_index: int, n_steps: int) -> str:
    if not 0 <= step_index < n_steps:
        raise ValueError(f"step index {step_index} outside schedule of {n_steps}")
    return SEMANTIC if step_index < ceil(cfg.stage_boundary_fraction * n_steps) else DETAIL


def select_anchor(cfg: FusionConfig, timestep_index: int, n_frames: int) -> int:
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if cfg.anchor_policy == "round-robin":
        return timestep_index % n_frames
    rng = np.random.default_rng([cfg.rng_seed, _ANCHOR_STREAM, timestep_index])
    return int(rng.integers(0, n_frames))


def _table_entry(table: Mapping, j: int, i: int, what: str):
    try:
        return table[(j, i)]
    except KeyError:
        raise KeyError(f"missing {what} for pair ({j}, {i})") from None


class _PairPlan:
    """Cached geometry for warping frame j onto pose i: sample coordinates,
    the blend region, and its assembled solver."""

    __slots__ = ("xs", "ys", "region", "system", "degenerate")

    def __init__(self, flow: FlowField, occlusion: OcclusionMask):
        h, w = flow.height, flow.width
        if (occlusion.height, occlusion.width) != (h, w):
            raise ValueError("occlusion mask dimensions do not match the flow")
        yy, xx = np.mgrid[0:h, 0:w]
        self.xs = (xx + flow.u).astype(np.float64)
        self.ys = (yy + flow.v).astype(np.float64)
        outside = (
            (self.xs < 0) | (self.xs > w - 1) | (self.ys < 0) | (self.ys > h - 1)
        )
        self.region = BlendRegion(occlusion.union(OcclusionMask(outside)))
        self.degenerate = bool(self.region.mask.bits.all())
        self.system = None if self.degenerate else PoissonSystem(self.region, h, w)

    def candidate(self, source: Frame, target: Frame, cfg: SolverConfig) -> Frame:
        if self.degenerate:
            return target  # nothing visible to inherit from the source
        warped = Frame(sample_grid(source, self.xs, self.ys))
        return self.system.solve(target, warped, cfg).frame


class ClipGeometry:
    """Per-clip cache: flows and occlusions are fixed for the whole run, so
    warp coordinates and Poisson systems are assembled once and reused at
    every denoising step."""

    def __init__(
        self,
        n_frames: int,
        flows: Mapping[tuple[int, int], FlowField],
        occlusions: Mapping[tuple[int, int], OcclusionMask],
    ):
        if n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        self.n_frames = n_frames
        self.pairs: dict[tuple[int, int], _PairPlan] = {}
        for i in range(n_frames):
            for j in range(n_frames):
                if i == j:
                    continue
                flow = _table_entry(flows, j, i, "flow")
                occ = _table_entry(occlusions, j, i, "occlusion mask")
                self.pairs[(j, i)] = _PairPlan(flow, occ)


def build_candidates(
    predictions: Sequence[Frame],
    flows: Mapping[tuple[int, int], FlowField],
    occlusions: Mapping[tuple[int, int], OcclusionMask],
    cfg: SolverConfig | None = None,
    geometry: ClipGeometry | None = None,
    workers: int = 1,
) -> list[CandidateSet]:
    """Construct the full N x N candidate table for one timestep.

    Entry (j, i) is frame j's prediction warped to pose i and seam-repaired
    against prediction i; entry (i, i) is prediction i itself. Pair jobs are
    independent and run on a thread pool when workers > 1 (results are
    written into pre-assigned slots, so scheduling cannot reorder anything).
    """
    cfg = cfg or SolverConfig()
    n = len(predictions)
    if n < 1:
        raise ValueError("need at least one prediction")
    if geometry is None:
        geometry = ClipGeometry(n, flows, occlusions) if n > 1 else ClipGeometry(1, {}, {})
    elif geometry.n_frames != n:
        raise ValueError(
            f"geometry prepared for {geometry.n_frames} frames, got {n} predictions"
        )

    table: dict[tuple[int, int], Frame] = {}
    jobs = [(j, i) for i in range(n) for j in range(n) if j != i]

    def _build(pair):
        j, i = pair
        return geometry.pairs[pair].candidate(predictions[j], predictions[i], cfg)

    if workers > 1 and jobs:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for pair, frame in zip(jobs, pool.map(_build, jobs)):
                table[pair] = frame
    else:
        for pair in jobs:
            table[pair] = _build(pair)

    return [
        CandidateSet(
            i,
            tuple(
                predictions[j] if j == i else table[(j, i)] for j in range(n)
            ),
        )
        for i in range(n)
    ]


def fuse_semantic(cset: CandidateSet) -> Frame:
    """Pixelwise mean of all N candidates (the self-candidate included, so
    the sum has exactly N terms and N=1 degenerates to the identity)."""
    acc = np.zeros(cset.candidates[0].shape, dtype=np.float64)
    for c in cset.candidates:
        acc += c.data
    return Frame((acc / len(cset.candidates)).astype(np.float32))


def fuse_detail(sets: Sequence[CandidateSet], anchor: int) -> list[Frame]:
    """Anchor overwrite: the anchor keeps its own prediction; every other
    frame is replaced by the anchor's candidate at its pose."""
    n = len(sets)
    if not 0 <= anchor < n:
        raise ValueError(f"anchor {anchor} outside [0, {n})")
    out = []
    for i, cset in enumerate(sets):
        if cset.target_index != i:
            raise ValueError("candidate sets out of order")
        out.append(cset.candidates[anchor])
    return out
