"""Run configuration: a flat key-value file with embedded defaults.

Format: one `key = value` per line, `#` starts a comment, unknown keys are
rejected. Every default is printable via the CLI so a config file is never
required to reproduce a run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .denoise import DEFAULT_TOY_LAMBDA
from .fusion import ANCHOR_POLICIES, FusionConfig
from .poisson import DEFAULT_RESIDUAL_TOLERANCE, SolverConfig
from .sampler import (
    DEFAULT_BETA_END,
    DEFAULT_BETA_START,
    DEFAULT_STEPS,
    DEFAULT_TRAIN_STEPS,
    FUSION_MODES,
    SamplerSchedule,
)
from .warp import DEFAULT_OCCLUSION_TOLERANCE_PX

DENOISER_KINDS = ("toy", "identity", "bridge")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    n_steps: int = DEFAULT_STEPS
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    train_steps: int = DEFAULT_TRAIN_STEPS
    eta: float = 0.0
    stage_boundary_fraction: float = 0.5
    anchor_policy: str = "uniform-random"
    fusion_mode: str = "two-stage"
    solver_method: str = "cg"
    residual_tolerance: float = DEFAULT_RESIDUAL_TOLERANCE
    max_iterations: int = 0  # 0 = automatic cap from region size
    occlusion_tolerance_px: float = DEFAULT_OCCLUSION_TOLERANCE_PX
    occlusion_dilation: int = 0
    denoiser: str = "toy"
    toy_lambda: float = DEFAULT_TOY_LAMBDA
    bridge_command: str = ""
    bridge_host: str = ""
    bridge_port: int = 0
    conditioning: str = ""
    x0_clip: str = "none"  # "none" or "low,high"
    workers: int = 1
    save_raw: bool = False

    def validate(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        if self.n_steps < 1:
            raise ConfigError("n_steps: must be >= 1")
        if not 0 < self.beta_start < 1:
            raise ConfigError("beta_start: must lie in (0, 1)")
        if not 0 < self.beta_end < 1:
            raise ConfigError("beta_end: must lie in (0, 1)")
        if self.train_steps < self.n_steps:
            raise ConfigError("train_steps: must be >= n_steps")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError("eta: must lie in [0, 1]")
        if not 0.0 < self.stage_boundary_fraction <= 1.0:
            raise ConfigError("stage_boundary_fraction: must lie in (0, 1]")
        if self.anchor_policy not in ANCHOR_POLICIES:
            raise ConfigError(
                f"anchor_policy: must be one of {', '.join(ANCHOR_POLICIES)}"
            )
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode: must be one of {', '.join(FUSION_MODES)}")
        if self.solver_method not in ("cg", "direct"):
            raise ConfigError("solver_method: must be cg or direct")
        if self.residual_tolerance <= 0:
            raise ConfigError("residual_tolerance: must be > 0")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations: must be >= 0 (0 = automatic)")
        if self.occlusion_tolerance_px < 0:
            raise ConfigError("occlusion_tolerance_px: must be >= 0")
        if self.occlusion_dilation < 0:
            raise ConfigError("occlusion_dilation: must be >= 0")
        if self.denoiser not in DENOISER_KINDS:
            raise ConfigError(f"denoiser: must be one of {', '.join(DENOISER_KINDS)}")
        if not 0.0 <= self.toy_lambda <= 1.0:
            raise ConfigError("toy_lambda: must lie in [0, 1]")
        if self.denoiser == "bridge" and not self.bridge_command and not self.bridge_host:
            raise ConfigError(
                "bridge_command: required (or bridge_host/bridge_port) when denoiser = bridge"
            )
        if self.bridge_host and not 0 < self.bridge_port < 65536:
            raise ConfigError("bridge_port: must lie in (0, 65536) when bridge_host is set")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        self.parse_x0_clip()

    def parse_x0_clip(self) -> tuple[float, float] | None:
        text = self.x0_clip.strip().lower()
        if text in ("none", "off", ""):
            return None
        try:
            lo_s, hi_s = text.split(",")
            lo, hi = float(lo_s), float(hi_s)
        except ValueError:
            raise ConfigError("x0_clip: expected 'none' or 'low,high'") from None
        if lo >= hi:
            raise ConfigError("x0_clip: low bound must be below high bound")
        return lo, hi

    def schedule(self) -> SamplerSchedule:
        return SamplerSchedule.build(
            self.n_steps, self.beta_start, self.beta_end, self.train_steps
        )

    def fusion(self) -> FusionConfig:
        return FusionConfig(
            stage_boundary_fraction=self.stage_boundary_fraction,
            rng_seed=self.seed,
            anchor_policy=self.anchor_policy,
        )

    def solver(self) -> SolverConfig:
        return SolverConfig(
            method=self.solver_method,
            max_iterations=self.max_iterations or None,
            residual_tolerance=self.residual_tolerance,
        )


def _coerce(name: str, kind: type, raw: str):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{name}: expected {kind.__name__}, got {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    # dataclass field types arrive as strings under `from __future__ annotations`
    kinds = {"int": int, "float": float, "str": str, "bool": bool}
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kind = kinds[types[key]] if isinstance(types[key], str) else types[key]
        setattr(cfg, key, _coerce(key, kind, raw))
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def default_config_text() -> str:
    cfg = RunConfig()
    lines = ["# framefuse run configuration (defaults)"]
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
