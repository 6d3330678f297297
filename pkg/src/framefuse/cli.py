"""Command-line surface: warp, blend, fuse, run, metrics, synth."""

from __future__ import annotations

import argparse
import shlex
import sys
from pathlib import Path

import numpy as np

from . import bridge, io, synth
from .config import RunConfig, default_config_text, load_config
from .denoise import BridgeDenoiser, IdentityDenoiser, ToyDenoiser
from .fusion import DETAIL, SEMANTIC, build_candidates, fuse_detail, fuse_semantic
from .image import Frame, OcclusionMask
from .metrics import build_report
from .poisson import BlendRegion, SolverConfig, poisson_blend
from .sampler import run as run_engine
from .warp import backward_warp


def _load_any_frame(path: str) -> Frame:
    if path.endswith(".npy"):
        return io.load_frame_raw(path)
    return io.load_frame(path)


def _cmd_warp(args) -> int:
    source = _load_any_frame(args.source)
    flow, unknown = io.load_flow(args.flow)
    result = backward_warp(source, flow)
    io.save_frame_png(args.out, result.warped)
    mask_path = args.mask_out or str(Path(args.out).with_suffix("")) + "_validity.png"
    io.save_mask_png(mask_path, result.validity.union(unknown))
    return 0


def _cmd_blend(args) -> int:
    current = _load_any_frame(args.current)
    warped = _load_any_frame(args.warped)
    mask = io.load_mask(args.mask)
    cfg = SolverConfig(
        max_iterations=args.max_iters, residual_tolerance=args.tol
    )
    result = poisson_blend(current, warped, BlendRegion(mask), cfg)
    if not result.converged:
        print(
            f"warning: solver stopped at residual {result.residual:.3g} "
            f"after {result.iterations} iterations",
            file=sys.stderr,
        )
    io.save_frame_png(args.out, result.frame)
    return 0


def _cmd_fuse(args) -> int:
    clip = io.load_clip(io.load_manifest(args.manifest))
    sets = build_candidates(list(clip.frames), clip.flows, clip.occlusions)
    if args.step_mode == SEMANTIC:
        fused = [fuse_semantic(s) for s in sets]
    else:
        if args.anchor is None:
            raise ValueError("detail mode needs --anchor")
        fused = fuse_detail(sets, args.anchor)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(fused):
        io.save_frame_png(out / f"frame_{k:03d}.png", frame)
    return 0


def _make_denoiser(cfg: RunConfig, video):
    if cfg.denoiser == "toy":
        return ToyDenoiser.from_video(video, cfg.seed, cfg.toy_lambda)
    if cfg.denoiser == "identity":
        return IdentityDenoiser()
    if cfg.bridge_host:
        client = bridge.TcpBridgeClient(cfg.bridge_host, cfg.bridge_port)
    else:
        client = bridge.StdioBridgeClient(shlex.split(cfg.bridge_command))
    return BridgeDenoiser(client, cfg.conditioning.encode("utf-8"),
                          run_token=cfg.seed)


def _cmd_run(args) -> int:
    if args.print_defaults:
        sys.stdout.write(default_config_text())
        return 0
    for name in ("manifest", "config", "out_dir"):
        if getattr(args, name) is None:
            raise ValueError(f"--{name.replace('_', '-')} is required")
    cfg = load_config(args.config)
    manifest = io.load_manifest(args.manifest)
    manifest = io.ClipManifest(
        frames=manifest.frames,
        flows=manifest.flows,
        occlusions=manifest.occlusions,
        compose_missing=manifest.compose_missing,
        occlusion_tolerance_px=cfg.occlusion_tolerance_px,
        occlusion_dilation=cfg.occlusion_dilation,
    )
    clip = io.load_clip(manifest)
    denoiser = _make_denoiser(cfg, clip.frames)
    try:
        outputs = run_engine(
            list(clip.frames),
            clip.flows,
            clip.occlusions,
            denoiser,
            schedule=cfg.schedule(),
            fusion_cfg=cfg.fusion(),
            solver_cfg=cfg.solver(),
            seed=cfg.seed,
            eta=cfg.eta,
            fusion_mode=cfg.fusion_mode,
            x0_clip=cfg.parse_x0_clip(),
            workers=cfg.workers,
        )
    finally:
        denoiser.close()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for k, frame in enumerate(outputs):
        names.append(f"frame_{k:03d}.png")
        io.save_frame_png(out / names[-1], frame)
        if cfg.save_raw:
            io.save_frame_raw(out / f"frame_{k:03d}.npy", frame)
    # a frames-only manifest, so the output feeds straight into `metrics`
    io.save_manifest(out / "manifest.json", {"frames": names})
    return 0


def _cmd_metrics(args) -> int:
    original = io.load_clip(io.load_manifest(args.original))
    edited_manifest = io.load_manifest(args.edited)
    edited_frames = tuple(io.load_frame(p) for p in edited_manifest.frames)
    report = build_report(
        list(original.frames), list(edited_frames), original.flows, original.occlusions
    )
    Path(args.report).write_text(report.to_keyvalues())
    sys.stdout.write(report.to_table())
    return 0


def _cmd_synth(args) -> int:
    clip = synth.make(args.scenario, args.seed)
    manifest = synth.save_clip(clip, args.out_dir)
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framefuse",
        description="Flow-synchronized multi-frame diffusion sampling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("warp", help="backward-warp one frame along a flow")
    p.add_argument("--source", required=True)
    p.add_argument("--flow", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out")
    p.set_defaults(handler=_cmd_warp)

    p = sub.add_parser("blend", help="gradient-domain blend of one masked region")
    p.add_argument("--current", required=True, help="guidance gradients inside the mask")
    p.add_argument("--warped", required=True, help="boundary/outside content")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, default=SolverConfig().residual_tolerance)
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(handler=_cmd_blend)

    p = sub.add_parser("fuse", help="one fusion round over loaded predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--step-mode", choices=[SEMANTIC, DETAIL], required=True)
    p.add_argument("--anchor", type=int, default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=_cmd_fuse)

    p = sub.add_parser("run", help="full synchronized sampling over a clip")
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.add_argument("--print-defaults", action="store_true",
                   help="print the default configuration and exit")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("metrics", help="consistency report for an edited clip")
    p.add_argument("--original", required=True)
    p.add_argument("--edited", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(handler=_cmd_metrics)

    p = sub.add_parser("synth", help="generate a synthetic test clip")
    p.add_argument("--scenario", choices=list(synth.SCENARIOS), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:  # uniform failure surface for scripting
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
