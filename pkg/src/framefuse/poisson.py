"""Gradient-domain blending.

Reconstructs a masked region so that its interior follows the guidance
image's gradients while its boundary matches the surrounding target values,
leaving no visible seam. The discrete system uses the 5-point Laplacian with
a backward-difference divergence matched to the forward-difference gradients
of :func:`framefuse.image.gradient`, so div(grad(f)) = Laplacian(f) holds
exactly and consistent inputs are a fixed point of the solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.ndimage import label

from .image import Frame, OcclusionMask
from .warp import WarpResult

DEFAULT_RESIDUAL_TOLERANCE = 1e-5
MAX_DENSE_UNKNOWNS = 4096

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "cg"  # "cg" | "direct" (direct is dense, small grids only)
    max_iterations: int | None = None  # None: 10*sqrt(|region|) + 1000 per component
    residual_tolerance: float = DEFAULT_RESIDUAL_TOLERANCE

    def __post_init__(self):
        if self.method not in ("cg", "direct"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.residual_tolerance <= 0:
            raise ValueError("residual_tolerance must be > 0")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def iteration_cap(self, n_unknowns: int) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return int(10 * np.sqrt(n_unknowns)) + 1000


@dataclass(frozen=True)
class BlendRegion:
    """Region to reconstruct; boundary is the 4-connected ring just outside."""

    mask: OcclusionMask

    @property
    def count(self) -> int:
        return self.mask.count


@dataclass(frozen=True)
class BlendResult:
    frame: Frame
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0
    degenerate: bool = False  # region covered the whole frame; nothing to inherit


class _Component:
    """Assembled linear system for one connected component of the region."""

    __slots__ = ("rows", "matrix", "boundary", "n")

    def __init__(self, bits: np.ndarray, comp_mask: np.ndarray):
        h, w = bits.shape
        self.n = int(comp_mask.sum())
        flat_idx = np.flatnonzero(comp_mask.ravel())
        self.rows = flat_idx  # flat grid positions of the unknowns

        local = -np.ones(h * w, dtype=np.int64)
        local[flat_idx] = np.arange(self.n)

        diag = np.zeros(self.n, dtype=np.float64)
        off_r: list[np.ndarray] = []
        off_c: list[np.ndarray] = []
        bnd_r: list[np.ndarray] = []
        bnd_c: list[np.ndarray] = []

        ys, xs = np.unravel_index(flat_idx, (h, w))
        for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            ny, nx = ys + dy, xs + dx
            in_grid = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
            diag += in_grid  # degree counts in-grid neighbors only (Neumann at image border)
            nflat = np.where(in_grid, ny * w + nx, 0)
            neigh_local = np.where(in_grid, local[nflat], -1)
            inside = in_grid & (neigh_local >= 0)
            outside = in_grid & (neigh_local < 0)
            off_r.append(np.arange(self.n)[inside])
            off_c.append(neigh_local[inside])
            bnd_r.append(np.arange(self.n)[outside])
            bnd_c.append(nflat[outside])

        rows = np.concatenate([np.arange(self.n)] + off_r)
        cols = np.concatenate([np.arange(self.n)] + off_c)
        vals = np.concatenate([diag, -np.ones(sum(len(r) for r in off_r))])
        self.matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

        brows = np.concatenate(bnd_r) if bnd_r else np.empty(0, dtype=np.int64)
        bcols = np.concatenate(bnd_c) if bnd_c else np.empty(0, dtype=np.int64)
        self.boundary = sparse.csr_matrix(
            (np.ones(len(brows)), (brows, bcols)), shape=(self.n, h * w)
        )


class PoissonSystem:
    """Reusable solver for a fixed region; assembly happens once.

    The fusion loop blends the same occlusion geometry at every denoising
    step, so the sparse systems are built per clip and reused per step.
    """

    def __init__(self, region: BlendRegion, height: int, width: int):
        bits = region.mask.bits
        if bits.shape != (height, width):
            raise ValueError(
                f"region is {bits.shape[1]}x{bits.shape[0]} but frame is {width}x{height}"
            )
        self.height = height
        self.width = width
        self.bits = bits
        self.empty = not bits.any()
        self.full = bool(bits.all())
        self.components: list[_Component] = []
        if not self.empty and not self.full:
            labels, n_comp = label(bits, structure=_CROSS)
            for k in range(1, n_comp + 1):
                self.components.append(_Component(bits, labels == k))

    def solve(self, guidance: Frame, dirichlet: Frame, cfg: SolverConfig) -> BlendResult:
        if guidance.shape != dirichlet.shape:
            raise ValueError("guidance and dirichlet frames differ in shape")
        if (guidance.height, guidance.width) != (self.height, self.width):
            raise ValueError("frame dimensions do not match the prepared region")
        if self.empty:
            return BlendResult(dirichlet)
        if self.full:
            raise ValueError(
                "region covers the whole frame; no Dirichlet boundary exists"
            )

        h, w, c = guidance.shape
        div = _divergence(guidance.data.astype(np.float64))
        dir_flat = dirichlet.data.astype(np.float64).reshape(h * w, c)
        out = dirichlet.data.copy()

        converged = True
        total_iter = 0
        worst_residual = 0.0
        for comp in self.components:
            b = -div.reshape(h * w, c)[comp.rows] + comp.boundary @ dir_flat
            x0 = dir_flat[comp.rows]
            if cfg.method == "direct":
                x = _solve_direct(comp.matrix, b)
                res = 0.0
                iters = 0
            else:
                x, iters, res = _solve_cg(
                    comp.matrix, b, x0, cfg.residual_tolerance,
                    cfg.iteration_cap(comp.n),
                )
                converged &= res <= cfg.residual_tolerance
                total_iter += iters
                worst_residual = max(worst_residual, res)
            ys, xs = np.unravel_index(comp.rows, (h, w))
            out[ys, xs, :] = x.astype(np.float32)

        return BlendResult(Frame(out), converged, total_iter, worst_residual)


def _divergence(data: np.ndarray) -> np.ndarray:
    """Backward-difference divergence of the forward-difference gradient."""
    gx = np.zeros_like(data)
    gy = np.zeros_like(data)
    gx[:, :-1] = data[:, 1:] - data[:, :-1]
    gy[:-1, :] = data[1:, :] - data[:-1, :]
    div = gx.copy()
    div[:, 1:] -= gx[:, :-1]
    div += gy
    div[1:, :] -= gy[:-1, :]
    return div


def _solve_direct(matrix: sparse.csr_matrix, b: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    if n > MAX_DENSE_UNKNOWNS:
        raise ValueError(
            f"direct-dense solver capped at {MAX_DENSE_UNKNOWNS} unknowns, got {n}"
        )
    return np.linalg.solve(matrix.toarray(), b)


def _solve_cg(matrix, b, x0, tol, max_iter):
    """Plain conjugate gradients, all channels advanced in lockstep.

    Returns (x, iterations, worst relative residual). The final iterate is
    returned even when the tolerance was not met within the cap.
    """
    x = x0.copy()
    r = b - matrix @ x
    p = r.copy()
    rs = np.einsum("ij,ij->j", r, r)
    b_norm = np.sqrt(np.einsum("ij,ij->j", b, b))
    scale = np.where(b_norm > 0, b_norm, 1.0)
    thresh_sq = (tol * scale) ** 2

    it = 0
    while np.any(rs > thresh_sq) and it < max_iter:
        ap = matrix @ p
        pap = np.einsum("ij,ij->j", p, ap)
        alpha = np.where(pap > 0, rs / np.where(pap <= 0, 1.0, pap), 0.0)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.einsum("ij,ij->j", r, r)
        beta = np.where(rs > 0, rs_new / np.where(rs <= 0, 1.0, rs), 0.0)
        p = r + beta * p
        rs = rs_new
        it += 1

    residual = float(np.max(np.sqrt(rs) / scale))
    return x, it, residual


def poisson_blend(
    guidance_source: Frame,
    dirichlet_target: Frame,
    region: BlendRegion,
    cfg: SolverConfig | None = None,
) -> BlendResult:
    """Reconstruct the region from guidance gradients and boundary values.

    Outside the region the output is bit-identical to dirichlet_target;
    inside it solves Laplacian(f) = div(grad(guidance)) with Dirichlet
    values taken from dirichlet_target on the region's outer ring,
    per channel.
    """
    cfg = cfg or SolverConfig()
    system = PoissonSystem(region, guidance_source.height, guidance_source.width)
    return system.solve(guidance_source, dirichlet_target, cfg)


def candidate(
    current: Frame,
    warped: WarpResult,
    occlusion: OcclusionMask,
    cfg: SolverConfig | None = None,
) -> BlendResult:
    """Seam-free candidate: warped content outside the unreliable region,
    current-frame structure inside it.

    The reconstruction region is the union of the occlusion mask and the
    warp's own out-of-view pixels; the warped frame provides the Dirichlet
    values, the current prediction provides the interior gradients. When the
    union covers the whole frame there is nothing to inherit and the current
    frame is returned unchanged with the degenerate flag set.
    """
    cfg = cfg or SolverConfig()
    if (occlusion.height, occlusion.width) != (current.height, current.width):
        raise ValueError("occlusion mask dimensions do not match the frame")
    if not current.same_shape(warped.warped):
        raise ValueError("warped frame dimensions do not match the current frame")
    region = BlendRegion(occlusion.union(warped.validity))
    if region.mask.bits.all():
        return BlendResult(current, degenerate=True)
    return poisson_blend(current, warped.warped, region, cfg)


def cross_boundary_jump(frame: Frame, region: BlendRegion) -> float:
    """Mean absolute difference across the region boundary.

    Averages |f(p) - f(q)| over 4-adjacent pairs with p inside the region
    and q outside (and in-grid), over all channels. Quantifies the seam a
    blend leaves behind; zero pairs yields 0.
    """
    bits = region.mask.bits
    data = frame.data.astype(np.float64)
    total = 0.0
    count = 0
    for dy, dx in ((0, 1), (1, 0)):
        a = bits[: bits.shape[0] - dy, : bits.shape[1] - dx]
        b = bits[dy:, dx:]
        cross = a != b
        if not cross.any():
            continue
        fa = data[: data.shape[0] - dy, : data.shape[1] - dx][cross]
        fb = data[dy:, dx:][cross]
        total += float(np.abs(fa - fb).sum())
        count += fa.size
    return total / count if count else 0.0
