"""File formats and clip assembly.

Frames travel as 8-bit PNG or binary PPM/PGM (value/255 scaling), flows as
Middlebury .flo, masks as 8-bit PNG (white = occluded). A JSON manifest
names the clip's files; when only consecutive flows are given the all-pairs
table is synthesized by composition, and missing occlusion masks are derived
from forward-backward consistency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .image import FlowField, Frame, OcclusionMask, sample_plane
from .warp import DEFAULT_OCCLUSION_TOLERANCE_PX, dilate_mask, occlusion_mask

FLO_MAGIC = 202021.25
FLO_UNKNOWN = 1e9  # components at or beyond this magnitude mean "no data"


class FileFormatError(Exception):
    pass


# ---------------------------------------------------------------- frames

def load_frame(path: str | Path) -> Frame:
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    if img.mode in ("P", "RGBA", "LA", "CMYK"):
        img = img.convert("RGB")
    if img.mode not in ("L", "RGB"):
        raise FileFormatError(f"{path}: unsupported image mode {img.mode!r} (8-bit only)")
    data = np.asarray(img, dtype=np.float32) / 255.0
    return Frame(data)


def save_frame_png(path: str | Path, frame: Frame) -> None:
    data = np.clip(frame.data, 0.0, 1.0)
    pixels = np.round(data * 255.0).astype(np.uint8)
    if frame.channels == 1:
        Image.fromarray(pixels[..., 0], mode="L").save(path)
    else:
        Image.fromarray(pixels, mode="RGB").save(path)


def save_frame_raw(path: str | Path, frame: Frame) -> None:
    """Lossless float32 dump for chaining runs without 8-bit quantization."""
    np.save(path, frame.data)


def load_frame_raw(path: str | Path) -> Frame:
    return Frame(np.load(path).astype(np.float32))


# ----------------------------------------------------------------- masks

def load_mask(path: str | Path) -> OcclusionMask:
    path = Path(path)
    try:
        img = Image.open(path).convert("L")
    except Exception as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    return OcclusionMask(np.asarray(img) > 127)


def save_mask_png(path: str | Path, mask: OcclusionMask) -> None:
    Image.fromarray(np.where(mask.bits, 255, 0).astype(np.uint8), mode="L").save(path)


# ----------------------------------------------------------------- flows

def load_flow(path: str | Path) -> tuple[FlowField, OcclusionMask]:
    """Read a .flo file; returns the field plus a mask of unknown vectors
    (components beyond the sentinel magnitude, zeroed in the field)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise FileFormatError(f"{path}: header needs 12 bytes, file has {len(raw)}")
    magic = np.frombuffer(raw, "<f4", count=1)[0]
    if abs(float(magic) - FLO_MAGIC) > 1e-3:
        raise FileFormatError(f"{path}: bad magic {float(magic)!r} at byte 0")
    w, h = (int(x) for x in np.frombuffer(raw, "<i4", count=2, offset=4))
    if w < 1 or h < 1:
        raise FileFormatError(f"{path}: nonsensical dimensions {w}x{h} at byte 4")
    expected = 12 + w * h * 8
    if len(raw) != expected:
        raise FileFormatError(
            f"{path}: expected {expected} bytes for {w}x{h}, got {len(raw)}"
        )
    data = np.frombuffer(raw, "<f4", offset=12).reshape(h, w, 2).astype(np.float32)
    unknown = np.abs(data) >= FLO_UNKNOWN
    unknown_mask = unknown.any(axis=-1)
    data = np.where(unknown, 0.0, data)
    return (
        FlowField(data[..., 0], data[..., 1]),
        OcclusionMask(unknown_mask),
    )


def save_flow(path: str | Path, flow: FlowField) -> None:
    with open(path, "wb") as fh:
        fh.write(np.array([FLO_MAGIC], "<f4").tobytes())
        fh.write(np.array([flow.width, flow.height], "<i4").tobytes())
        fh.write(
            np.stack([flow.u, flow.v], axis=-1).astype("<f4").tobytes()
        )


def compose_flows(first: FlowField, second: FlowField) -> tuple[FlowField, OcclusionMask]:
    """Chain two hops: result(p) = first(p) + second sampled at p + first(p).

    `first` must live on the composition's target grid; `second` is sampled
    at the intermediate position. Compositions stepping outside `second`'s
    grid are flagged occluded.
    """
    if (first.height, first.width) != (second.height, second.width):
        raise ValueError(
            f"flow grids differ: {first.width}x{first.height} vs "
            f"{second.width}x{second.height}"
        )
    h, w = first.height, first.width
    yy, xx = np.mgrid[0:h, 0:w]
    mx = xx + first.u
    my = yy + first.v
    off = (mx < 0) | (mx > w - 1) | (my < 0) | (my > h - 1)
    u = first.u + sample_plane(second.u, mx, my).astype(np.float32)
    v = first.v + sample_plane(second.v, mx, my).astype(np.float32)
    return FlowField(u, v), OcclusionMask(off)


# -------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ClipManifest:
    frames: tuple[Path, ...]
    flows: dict[tuple[int, int], Path] = field(default_factory=dict)
    occlusions: dict[tuple[int, int], Path] = field(default_factory=dict)
    compose_missing: bool = False
    occlusion_tolerance_px: float = DEFAULT_OCCLUSION_TOLERANCE_PX
    occlusion_dilation: int = 0


@dataclass(frozen=True)
class Clip:
    frames: tuple[Frame, ...]
    flows: dict[tuple[int, int], FlowField]
    occlusions: dict[tuple[int, int], OcclusionMask]


def _parse_pair(key: str, n: int) -> tuple[int, int]:
    try:
        j_s, i_s = key.split("->")
        j, i = int(j_s), int(i_s)
    except ValueError:
        raise FileFormatError(f"pair key {key!r} is not of the form 'j->i'") from None
    if not (0 <= j < n and 0 <= i < n) or j == i:
        raise FileFormatError(f"pair key {key!r} outside the {n}-frame clip")
    return j, i


def load_manifest(path: str | Path) -> ClipManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    base = path.parent
    frames = doc.get("frames")
    if not frames:
        raise FileFormatError(f"{path}: manifest lists no frames")
    frame_paths = tuple(base / f for f in frames)
    n = len(frame_paths)
    flows = {
        _parse_pair(k, n): base / v for k, v in doc.get("flows", {}).items()
    }
    occlusions = {
        _parse_pair(k, n): base / v for k, v in doc.get("occlusions", {}).items()
    }
    return ClipManifest(
        frames=frame_paths,
        flows=flows,
        occlusions=occlusions,
        compose_missing=bool(doc.get("compose_missing", False)),
        occlusion_tolerance_px=float(
            doc.get("occlusion_tolerance_px", DEFAULT_OCCLUSION_TOLERANCE_PX)
        ),
        occlusion_dilation=int(doc.get("occlusion_dilation", 0)),
    )


def save_manifest(path: str | Path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _compose_chain(flows, unknowns, j: int, i: int):
    """Build entry (j, i) by chaining consecutive hops from i back to j;
    out-of-bounds compositions and hops through unknown vectors are flagged."""
    step = -1 if j < i else 1
    m = i + step
    flow = flows[(m, i)]
    h, w = flow.height, flow.width
    occ = unknowns.get((m, i), OcclusionMask.empty(h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    while m != j:
        hop = (m + step, m)
        hop_unknown = unknowns.get(hop)
        if hop_unknown is not None and hop_unknown.count:
            bad = sample_plane(
                hop_unknown.bits.astype(np.float64), xx + flow.u, yy + flow.v
            ) > 0
            occ = occ.union(OcclusionMask(bad))
        flow, off = compose_flows(flow, flows[hop])
        occ = occ.union(off)
        m += step
    return flow, occ


def load_clip(manifest: ClipManifest) -> Clip:
    frames = tuple(load_frame(p) for p in manifest.frames)
    n = len(frames)
    h, w = frames[0].height, frames[0].width
    for p, f in zip(manifest.frames, frames):
        if (f.height, f.width) != (h, w):
            raise FileFormatError(
                f"{p}: frame is {f.width}x{f.height}, clip is {w}x{h}"
            )

    flows: dict[tuple[int, int], FlowField] = {}
    extra_occ: dict[tuple[int, int], OcclusionMask] = {}
    for pair, fpath in manifest.flows.items():
        flow, unknown = load_flow(fpath)
        if (flow.height, flow.width) != (h, w):
            raise FileFormatError(
                f"{fpath}: flow is {flow.width}x{flow.height}, clip is {w}x{h}"
            )
        flows[pair] = flow
        extra_occ[pair] = unknown

    if n > 1:
        missing = [
            (j, i) for i in range(n) for j in range(n)
            if j != i and (j, i) not in flows
        ]
        if missing and not manifest.compose_missing:
            j, i = missing[0]
            raise FileFormatError(
                f"manifest lacks flow for pair ({j}, {i}) and compose_missing is off"
            )
        for j, i in missing:
            for m in _consecutive_hops(j, i):
                if m not in flows:
                    raise FileFormatError(
                        f"cannot compose pair ({j}, {i}): missing consecutive flow "
                        f"{m[0]}->{m[1]}"
                    )
            flows[(j, i)], extra_occ[(j, i)] = _compose_chain(flows, extra_occ, j, i)

    occlusions: dict[tuple[int, int], OcclusionMask] = {}
    for pair in flows:
        j, i = pair
        if pair in manifest.occlusions:
            mask = load_mask(manifest.occlusions[pair])
            if (mask.height, mask.width) != (h, w):
                raise FileFormatError(
                    f"{manifest.occlusions[pair]}: mask is {mask.width}x{mask.height}, "
                    f"clip is {w}x{h}"
                )
        else:
            mask = occlusion_mask(
                flows[(j, i)], flows[(i, j)], manifest.occlusion_tolerance_px
            )
        if pair in extra_occ:
            mask = mask.union(extra_occ[pair])
        if manifest.occlusion_dilation > 0:
            mask = dilate_mask(mask, manifest.occlusion_dilation)
        occlusions[pair] = mask
    return Clip(frames, flows, occlusions)


def _consecutive_hops(j: int, i: int) -> list[tuple[int, int]]:
    step = 1 if j < i else -1
    return [(m, m + step) for m in range(j, i, step)]
