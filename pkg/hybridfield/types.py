from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(slots=True)
class BoundingBox:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self) -> None:
        self.minimum = np.asarray(self.minimum, dtype=np.float64).reshape(3)
        self.maximum = np.asarray(self.maximum, dtype=np.float64).reshape(3)

    @property
    def extent(self) -> np.ndarray:
        return self.maximum - self.minimum

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.minimum + self.maximum)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(points)
        return np.all((pts >= self.minimum - tol) & (pts <= self.maximum + tol), axis=-1)

    def to_dict(self) -> dict[str, list[float]]:
        return {"min": [float(v) for v in self.minimum], "max": [float(v) for v in self.maximum]}

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> BoundingBox:
        return cls(np.asarray(payload["min"], dtype=np.float64), np.asarray(payload["max"], dtype=np.float64))


@dataclass(slots=True)
class CameraPose:
    """Pinhole camera; rotation is world-from-camera with columns (right, down, forward)."""

    rotation: np.ndarray
    position: np.ndarray
    focal_px: float
    width: int
    height: int

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.focal_px = float(self.focal_px)
        self.width = int(self.width)
        self.height = int(self.height)


@dataclass(slots=True)
class Frame:
    image: np.ndarray
    pose: CameraPose
    time: float
    file: str = ""


@dataclass(slots=True)
class LossRecord:
    step: int
    photo: float
    ptrgb: float = 0.0
    bg: float = 0.0
    tvf: float = 0.0
    tvm: float = 0.0
    total: float = 0.0
    lr: float = 0.0
    alive_particles: int = 0

    CSV_COLUMNS = ("step", "L_photo", "L_ptrgb", "L_bg", "L_tvf", "L_tvm", "total", "lr", "alive_particles")

    def as_row(self) -> list[Any]:
        return [
            self.step,
            f"{self.photo:.8g}",
            f"{self.ptrgb:.8g}",
            f"{self.bg:.8g}",
            f"{self.tvf:.8g}",
            f"{self.tvm:.8g}",
            f"{self.total:.8g}",
            f"{self.lr:.8g}",
            self.alive_particles,
        ]


@dataclass(slots=True)
class LifecycleEvent:
    step: int
    removed: int
    resampled: int
    alive: int
    occupied_nodes: int = 0
    removed_free_space: int = 0
    removed_immobile: int = 0

    CSV_COLUMNS = ("step", "removed", "resampled", "alive", "occupied_nodes", "removed_free_space", "removed_immobile")

    def as_row(self) -> list[Any]:
        return [
            self.step,
            self.removed,
            self.resampled,
            self.alive,
            self.occupied_nodes,
            self.removed_free_space,
            self.removed_immobile,
        ]


@dataclass(slots=True)
class RunManifest:
    command: str
    config: dict[str, Any]
    seed: int
    started_at: str
    finished_at: str = ""
    artifacts: dict[str, str] = field(default_factory=dict)
    software_version: str = ""
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config": dict(self.config),
            "seed": int(self.seed),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "artifacts": dict(self.artifacts),
            "software_version": self.software_version,
            "metadata": dict(self.metadata),
        }


@dataclass(slots=True)
class VelocityField:
    """Voxel grid of velocities (bbox units per unit time); invalid voxels hold zero vectors."""

    vectors: np.ndarray
    valid: np.ndarray
    bbox: BoundingBox

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.vectors.shape != self.valid.shape + (3,):
            raise ValueError(f"velocity field shape {self.vectors.shape} does not match validity {self.valid.shape}")
        self.vectors = np.where(self.valid[..., None], self.vectors, 0.0)

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.valid.shape)  # type: ignore[return-value]
