"""Training configuration: a flat ``key = value`` text format with unit-named keys."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable

from .errors import ConfigError

PRECISIONS = ("float32", "float64")
BACKGROUNDS = ("white", "black")


@dataclass(slots=True)
class TrainConfig:
    # run
    steps: int = 5000
    seed: int = 0
    model: str = "particles"
    precision: str = "float32"
    batch_rays: int = 1024
    samples_per_ray: int = 128
    background: str = "white"
    # representation
    particles: int = 20000
    feature_dim: int = 12
    hidden_width: int = 64
    freq_position: int = 10
    freq_time: int = 8
    freq_direction: int = 4
    freq_feature: int = 2
    density_shift: float = -10.0
    feature_init_std: float = 0.01
    # optimizer
    lr_features: float = 0.005
    lr_starts: float = 0.001
    lr_motion: float = 0.001
    lr_grid: float = 0.1
    lr_heads: float = 8e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    lr_decay_factor: float = 0.1
    # coarse-to-fine
    grid_voxels: tuple[int, ...] = (24**3, 36**3, 48**3)
    grid_milestone_fractions: tuple[float, ...] = (0.25, 0.5)
    # lifecycle
    removal_every_steps: int = 2000
    eps_alpha: float = 1e-4
    eps_traj_bbox_units: float = 0.1
    resample_radius_voxels: float = 0.1
    trajectory_samples: int = 16
    # losses
    weight_ptrgb: float = 0.01
    weight_bg: float = 0.001
    weight_tvf: float = 0.01
    weight_tvm: float = 0.01
    # outputs
    log_every_steps: int = 100
    checkpoint_every_steps: int = 1000
    validation_every_steps: int = 1000

    def __post_init__(self) -> None:
        validate_config(self)

    def milestone_steps(self) -> list[int]:
        """Steps at which the grid grows to the next entry of ``grid_voxels``."""
        return [int(round(f * self.steps)) for f in self.grid_milestone_fractions]

    def grid_voxels_at(self, step: int) -> int:
        level = sum(1 for m in self.milestone_steps() if step >= m and self.steps > 0)
        return int(self.grid_voxels[min(level, len(self.grid_voxels) - 1)])

    def replace(self, **changes: Any) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}


def _plain(value: Any) -> Any:
    return list(value) if isinstance(value, tuple) else value


def validate_config(cfg: TrainConfig) -> None:
    if cfg.steps < 0:
        raise ConfigError("steps must be >= 0")
    for name in ("batch_rays", "feature_dim", "hidden_width", "freq_position", "freq_time", "freq_direction"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.freq_feature < 0:
        raise ConfigError("freq_feature must be >= 0")
    if cfg.samples_per_ray < 2:
        raise ConfigError("samples_per_ray must be >= 2")
    if cfg.particles < 0:
        raise ConfigError("particles must be >= 0")
    if str(cfg.precision).strip().lower() not in PRECISIONS:
        raise ConfigError(f"precision must be one of {', '.join(PRECISIONS)}")
    if str(cfg.background).strip().lower() not in BACKGROUNDS:
        raise ConfigError(f"background must be one of {', '.join(BACKGROUNDS)}")
    for name in ("lr_features", "lr_starts", "lr_motion", "lr_grid", "lr_heads"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be >= 0")
    if not (0.0 <= cfg.adam_beta1 < 1.0 and 0.0 <= cfg.adam_beta2 < 1.0):
        raise ConfigError("adam betas must lie in [0, 1)")
    if cfg.adam_eps <= 0 or cfg.lr_decay_factor <= 0:
        raise ConfigError("adam_eps and lr_decay_factor must be > 0")
    if not cfg.grid_voxels or any(v < 8 for v in cfg.grid_voxels):
        raise ConfigError("grid_voxels entries must be >= 8")
    if any(b < a for a, b in zip(cfg.grid_voxels, cfg.grid_voxels[1:])):
        raise ConfigError("grid_voxels must be non-decreasing")
    if len(cfg.grid_milestone_fractions) != len(cfg.grid_voxels) - 1:
        raise ConfigError("grid_milestone_fractions needs exactly one entry per grid growth")
    fracs = list(cfg.grid_milestone_fractions)
    if any(not (0.0 < f < 1.0) for f in fracs) or any(b <= a for a, b in zip(fracs, fracs[1:])):
        raise ConfigError("grid_milestone_fractions must be strictly increasing inside (0, 1)")
    if cfg.removal_every_steps < 1:
        raise ConfigError("removal_every_steps must be >= 1")
    if cfg.eps_alpha < 0 or cfg.eps_traj_bbox_units < 0:
        raise ConfigError("eps_alpha and eps_traj_bbox_units must be >= 0")
    if cfg.resample_radius_voxels <= 0:
        raise ConfigError("resample_radius_voxels must be > 0")
    if cfg.trajectory_samples < 2:
        raise ConfigError("trajectory_samples must be >= 2")
    for name in ("weight_ptrgb", "weight_bg", "weight_tvf", "weight_tvm"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be >= 0")
    for name in ("log_every_steps", "checkpoint_every_steps", "validation_every_steps"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be >= 0")


_DEFAULTS = TrainConfig()
_KINDS: dict[str, Any] = {}
for _f in fields(TrainConfig):
    _default = getattr(_DEFAULTS, _f.name)
    if isinstance(_default, tuple):
        _KINDS[_f.name] = (tuple, type(_default[0]))
    else:
        _KINDS[_f.name] = type(_default)


def _coerce(key: str, raw: str, line: int | None) -> Any:
    kind = _KINDS[key]
    text = raw.strip()
    try:
        if isinstance(kind, tuple):
            item = kind[1]
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(_scalar(item, p) for p in parts)
        return _scalar(kind, text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw.strip()!r}", line=line) from exc


def _scalar(kind: type, text: str) -> Any:
    if kind is int:
        value = float(text)
        if not value.is_integer():
            raise ValueError(text)
        return int(value)
    if kind is float:
        return float(text)
    if kind is str:
        return str(text or "").strip().lower()
    raise ValueError(text)


def parse_config_text(text: str, *, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines over ``base`` (defaults when omitted)."""
    changes: dict[str, Any] = {}
    for number, raw_line in enumerate(str(text or "").splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw_line.strip()!r}", line=number)
        key, value = line.split("=", 1)
        key = key.strip().lower()
        if key not in _KINDS:
            raise ConfigError(f"unknown config key {key!r}", line=number)
        changes[key] = _coerce(key, value, number)
    start = base if base is not None else TrainConfig()
    return start.replace(**changes) if changes else start


def load_config(path: str | Path, *, base: TrainConfig | None = None) -> TrainConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from exc
    return parse_config_text(text, base=base)


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(cfg: TrainConfig) -> str:
    """Echo ``cfg`` in the file format; ``parse_config_text`` reads it back unchanged."""
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def apply_overrides(cfg: TrainConfig, overrides: Iterable[tuple[str, Any]]) -> TrainConfig:
    """Apply CLI flag values that are not None, on top of file values."""
    changes = {k: v for k, v in overrides if v is not None}
    unknown = [k for k in changes if k not in _KINDS]
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    return cfg.replace(**changes) if changes else cfg


def grid_schedule_for(final_resolution: int) -> tuple[int, ...]:
    """``--grid N``: grow (N/2)^3 -> (3N/4)^3 -> N^3."""
    n = int(final_resolution)
    if n < 2:
        raise ConfigError("--grid must be >= 2")
    half = max(2, int(round(n / 2)))
    three_quarter = max(half, int(round(3 * n / 4)))
    return (half**3, three_quarter**3, n**3)
