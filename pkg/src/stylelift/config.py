"""Pipeline configuration: dataclasses, JSON loading, strict validation.

Validation errors always name the offending key so CLI users can fix the
config file without reading a stack trace.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigValidationError

_STRATEGIES = ("last", "all", "ours")
_DIRECTIONS = ("forward", "backward", "both")
_SCHEDULES = ("linear-beta", "cosine")
_POLICIES = ("global", "keep")


@dataclass
class DiffusionParams:
    steps: int = 50
    kind: str = "linear-beta"
    beta_start: float = 1e-4
    beta_end: float = 0.02
    alpha: float = 7.5
    lambda_s: float = 0.5
    lambda_d: float = 0.5
    strength: float = 0.3


@dataclass
class WarpParams:
    sharpness: float = 10.0
    gamma: float = 1.0
    eps_cov: float = 1e-4
    strategy: str = "ours"
    direction: str = "forward"
    flow_margin: float = 0.0
    z_min: float = 1e-6


@dataclass
class AttentionParams:
    d: int = 8
    temperature: float = 1.0
    unmatched: str = "global"


@dataclass
class PipelineConfig:
    diffusion: DiffusionParams = field(default_factory=DiffusionParams)
    warp: WarpParams = field(default_factory=WarpParams)
    attention: AttentionParams = field(default_factory=AttentionParams)
    seed: int = 0
    threads: int | None = None

    def validate(self) -> "PipelineConfig":
        d = self.diffusion
        if d.steps < 1:
            raise ConfigValidationError("diffusion.steps must be >= 1")
        if d.kind not in _SCHEDULES:
            raise ConfigValidationError(
                f"diffusion.kind must be one of {_SCHEDULES}")
        if not 0.0 < d.beta_start < 1.0 or not 0.0 < d.beta_end < 1.0:
            raise ConfigValidationError(
                "diffusion.beta_start/beta_end must lie in (0, 1)")
        if abs(d.lambda_s + d.lambda_d - 1.0) > 1e-9:
            raise ConfigValidationError(
                "diffusion.lambda_s + diffusion.lambda_d must sum to 1, got "
                f"{d.lambda_s + d.lambda_d!r}")
        if not math.isfinite(d.alpha):
            raise ConfigValidationError("diffusion.alpha must be finite")
        if not 0.0 <= d.strength <= 1.0:
            raise ConfigValidationError("diffusion.strength must lie in [0, 1]")
        w = self.warp
        if w.sharpness < 0.0:
            raise ConfigValidationError("warp.sharpness must be >= 0")
        if w.gamma < 0.0:
            raise ConfigValidationError("warp.gamma must be >= 0")
        if w.eps_cov <= 0.0:
            raise ConfigValidationError("warp.eps_cov must be > 0")
        if w.strategy not in _STRATEGIES:
            raise ConfigValidationError(
                f"warp.strategy must be one of {_STRATEGIES}")
        if w.direction not in _DIRECTIONS:
            raise ConfigValidationError(
                f"warp.direction must be one of {_DIRECTIONS}")
        if w.flow_margin < 0.0:
            raise ConfigValidationError("warp.flow_margin must be >= 0")
        if w.z_min <= 0.0:
            raise ConfigValidationError("warp.z_min must be > 0")
        a = self.attention
        if a.d < 1:
            raise ConfigValidationError("attention.d must be >= 1")
        if a.temperature <= 0.0:
            raise ConfigValidationError("attention.temperature must be > 0")
        if a.unmatched not in _POLICIES:
            raise ConfigValidationError(
                f"attention.unmatched must be one of {_POLICIES}")
        if self.seed < 0:
            raise ConfigValidationError("seed must be >= 0")
        if self.threads is not None and self.threads < 1:
            raise ConfigValidationError("threads must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _fill_section(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigValidationError(
            f"unknown key '{section}.{sorted(unknown)[0]}'")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigValidationError(f"bad section '{section}': {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigValidationError("config root must be an object")
    known = {"diffusion", "warp", "attention", "seed", "threads"}
    unknown = set(data) - known
    if unknown:
        raise ConfigValidationError(f"unknown key '{sorted(unknown)[0]}'")
    for section in ("diffusion", "warp", "attention"):
        if section in data and not isinstance(data[section], dict):
            raise ConfigValidationError(f"'{section}' must be an object")
    cfg = PipelineConfig(
        diffusion=_fill_section(DiffusionParams, data.get("diffusion", {}),
                                "diffusion"),
        warp=_fill_section(WarpParams, data.get("warp", {}), "warp"),
        attention=_fill_section(AttentionParams, data.get("attention", {}),
                                "attention"),
        seed=data.get("seed", 0),
        threads=data.get("threads"))
    if not isinstance(cfg.seed, int):
        raise ConfigValidationError("seed must be an integer")
    if cfg.threads is not None and not isinstance(cfg.threads, int):
        raise ConfigValidationError("threads must be an integer")
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigValidationError(f"config file not found: {path}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigValidationError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)
