from __future__ import annotations

from typing import Any, Protocol

import numpy as np

from . import ndiff as nd
from .config import TrainConfig
from .grids import GridSpec
from .layers import RadianceOutput
from .types import BoundingBox, VelocityField


class FieldSnapshot(Protocol):
    """The field frozen at one time: superposed grid plus the shared heads."""

    t: float

    def query(self, points: nd.Tensor, dirs: nd.Tensor) -> RadianceOutput:
        ...

    def density(self, points: nd.Tensor) -> nd.Tensor:
        ...


class FieldModel(Protocol):
    model_id: str
    dtype: np.dtype
    bbox: BoundingBox
    grid_spec: GridSpec

    def prepare(self, t: float, *, component: str = "full") -> FieldSnapshot:
        ...

    def regularizers(self, snapshot: FieldSnapshot) -> tuple[nd.Tensor | None, nd.Tensor | None]:
        ...

    def parameter_groups(self) -> dict[str, list[nd.Tensor]]:
        ...

    def set_grid_extents(self, extents: tuple[int, int, int]) -> None:
        ...

    def resize_grid(self, voxels: int) -> bool:
        ...

    def velocity_field(self, t: float, dt: float, resolution: int) -> VelocityField:
        ...

    def meta(self) -> dict[str, Any]:
        ...


class ModelFactory(Protocol):
    model_id: str

    @classmethod
    def create(cls, config: TrainConfig, bbox: BoundingBox, rng: np.random.Generator) -> FieldModel:
        ...
