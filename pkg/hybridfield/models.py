"""Field models trained by the shared loop.

``particles`` is the full hybrid field: a static feature grid superposed with
a dynamic grid scattered from moving appearance particles. ``static`` is the
same model with no particles. ``deformation`` warps query points into a
canonical static grid through an Eulerian displacement network and serves as
the motion baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from . import ndiff as nd
from . import radiance
from .config import TrainConfig
from .evaluation import deformation_velocity_field, particle_velocity_field
from .grids import (
    GridSpec,
    ScatterResult,
    empty_scatter,
    motion_grid,
    resize,
    scatter,
    shape_from_bbox,
    superpose,
)
from .layers import MLP, EncodingSpec, MotionNet, RadianceNets, RadianceOutput, encode, encoded_size
from .losses import tv
from .particles import ParticleSet, check_time, init_particles
from .scene import voxel_centers
from .selector import select_dtype
from .types import BoundingBox, VelocityField


def _encoding(config: TrainConfig) -> EncodingSpec:
    return EncodingSpec(
        position=config.freq_position,
        time=config.freq_time,
        direction=config.freq_direction,
        feature=config.freq_feature,
    )


@dataclass
class HybridSnapshot:
    t: float
    field: nd.Tensor
    spec: GridSpec
    nets: RadianceNets
    scatter: ScatterResult
    positions: nd.Tensor | None = None
    offsets: nd.Tensor | None = None

    def query(self, points: nd.Tensor, dirs: nd.Tensor) -> RadianceOutput:
        return radiance.query(points, dirs, self.field, self.spec, self.nets)

    def density(self, points: nd.Tensor) -> nd.Tensor:
        return radiance.density(points, self.field, self.spec, self.nets)


class HybridFieldModel:
    model_id = "particles"

    def __init__(self, config: TrainConfig, bbox: BoundingBox, rng: np.random.Generator, *,
                 particle_count: int | None = None) -> None:
        self.config = config
        self.dtype = select_dtype(config.precision)
        self.bbox = bbox
        self.grid_spec = GridSpec(shape_from_bbox(bbox, config.grid_voxels[0]), bbox)
        enc = _encoding(config)
        count = config.particles if particle_count is None else int(particle_count)
        self.particles: ParticleSet = init_particles(
            count, bbox, config.feature_dim, rng=rng, dtype=self.dtype, feature_std=config.feature_init_std
        )
        self.motion = MotionNet(width=config.hidden_width, enc=enc, rng=rng, dtype=self.dtype)
        self.static_grid = nd.parameter(np.zeros((self.grid_spec.node_count, config.feature_dim), dtype=self.dtype),
                                        name="static_grid")
        self.nets = RadianceNets(config.feature_dim, config.hidden_width, enc, rng, self.dtype,
                                 density_shift=config.density_shift)

    @classmethod
    def create(cls, config: TrainConfig, bbox: BoundingBox, rng: np.random.Generator) -> HybridFieldModel:
        return cls(config, bbox, rng)

    def prepare(self, t: float, *, component: str = "full") -> HybridSnapshot:
        t = check_time(t)
        alive = self.particles.alive_indices()
        if alive.size == 0:
            result = empty_scatter(self.grid_spec, self.config.feature_dim, self.dtype)
            return HybridSnapshot(t, superpose(self.static_grid, result, component=component), self.grid_spec,
                                  self.nets, result)
        starts = nd.gather(self.particles.starts, alive)
        offsets = self.motion.offsets(starts, t)
        positions = nd.add(starts, offsets)
        result = scatter(self.grid_spec, positions, nd.gather(self.particles.features, alive))
        field = superpose(self.static_grid, result, component=component)
        return HybridSnapshot(t, field, self.grid_spec, self.nets, result, positions, offsets)

    def regularizers(self, snapshot: HybridSnapshot) -> tuple[nd.Tensor | None, nd.Tensor | None]:
        tvf = tv(snapshot.field, self.grid_spec.extents)
        tvm = None
        if snapshot.positions is not None and snapshot.offsets is not None:
            mg = motion_grid(self.grid_spec, snapshot.positions, snapshot.offsets)
            tvm = tv(mg.grid, self.grid_spec.extents, mg.valid)
        return tvf, tvm

    def parameter_groups(self) -> dict[str, list[nd.Tensor]]:
        return {
            "features": [self.particles.features],
            "starts": [self.particles.starts],
            "motion": self.motion.parameters(),
            "grid": [self.static_grid],
            "heads": self.nets.parameters(),
        }

    def set_grid_extents(self, extents: tuple[int, int, int]) -> None:
        self.grid_spec = GridSpec(tuple(extents), self.bbox)  # type: ignore[arg-type]
        self.static_grid = nd.parameter(
            np.zeros((self.grid_spec.node_count, self.config.feature_dim), dtype=self.dtype), name="static_grid"
        )

    def resize_grid(self, voxels: int) -> bool:
        extents = shape_from_bbox(self.bbox, voxels)
        if tuple(extents) == tuple(self.grid_spec.extents):
            return False
        self.grid_spec, values = resize(self.grid_spec, self.static_grid.data, extents)
        self.static_grid = nd.parameter(values, name="static_grid")
        return True

    def velocity_field(self, t: float, dt: float, resolution: int) -> VelocityField:
        return particle_velocity_field(self.particles, self.motion, t, dt, resolution)

    def meta(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "grid_extents": list(self.grid_spec.extents),
            "capacity": self.particles.capacity,
            "alive": self.particles.alive_count,
        }


class StaticFieldModel(HybridFieldModel):
    """Static-field-only ablation: the hybrid model without particles."""

    model_id = "static"

    @classmethod
    def create(cls, config: TrainConfig, bbox: BoundingBox, rng: np.random.Generator) -> StaticFieldModel:
        return cls(config, bbox, rng, particle_count=0)


@dataclass
class DeformationSnapshot:
    t: float
    model: DeformationFieldModel

    def _canonical(self, points: nd.Tensor) -> nd.Tensor:
        moved = nd.add(points, self.model.displacement(points, self.t))
        return nd.clip(moved, self.model.bbox.minimum, self.model.bbox.maximum)

    def query(self, points: nd.Tensor, dirs: nd.Tensor) -> RadianceOutput:
        canon = self._canonical(points)
        return radiance.query(canon, dirs, self.model.static_grid, self.model.grid_spec, self.model.nets)

    def density(self, points: nd.Tensor) -> nd.Tensor:
        canon = self._canonical(points)
        return radiance.density(canon, self.model.static_grid, self.model.grid_spec, self.model.nets)

    @property
    def field(self) -> nd.Tensor:
        return self.model.static_grid


class DeformationFieldModel:
    """Backward deformation into a canonical grid; velocity comes from finite differences of the displacement."""

    model_id = "deformation"
    occupancy_alpha = 0.01

    def __init__(self, config: TrainConfig, bbox: BoundingBox, rng: np.random.Generator) -> None:
        self.config = config
        self.dtype = select_dtype(config.precision)
        self.bbox = bbox
        self.grid_spec = GridSpec(shape_from_bbox(bbox, config.grid_voxels[0]), bbox)
        self.enc = _encoding(config)
        width = config.hidden_width
        self.deform = MLP(
            [encoded_size(3, self.enc.position) + encoded_size(1, self.enc.time), width, width, 3],
            rng=rng,
            dtype=self.dtype,
            zero_last=True,
        )
        self.static_grid = nd.parameter(np.zeros((self.grid_spec.node_count, config.feature_dim), dtype=self.dtype),
                                        name="static_grid")
        self.nets = RadianceNets(config.feature_dim, width, self.enc, rng, self.dtype,
                                 density_shift=config.density_shift)

    @classmethod
    def create(cls, config: TrainConfig, bbox: BoundingBox, rng: np.random.Generator) -> DeformationFieldModel:
        return cls(config, bbox, rng)

    def displacement(self, points: nd.Tensor, t: float) -> nd.Tensor:
        times = nd.constant(np.full((points.shape[0], 1), t, dtype=self.dtype))
        return self.deform(nd.concat([encode(points, self.enc.position), encode(times, self.enc.time)], axis=1))

    def prepare(self, t: float, *, component: str = "full") -> DeformationSnapshot:
        return DeformationSnapshot(check_time(t), self)

    def regularizers(self, snapshot: DeformationSnapshot) -> tuple[nd.Tensor | None, nd.Tensor | None]:
        return tv(self.static_grid, self.grid_spec.extents), None

    def parameter_groups(self) -> dict[str, list[nd.Tensor]]:
        return {
            "features": [],
            "starts": [],
            "motion": self.deform.parameters(),
            "grid": [self.static_grid],
            "heads": self.nets.parameters(),
        }

    def set_grid_extents(self, extents: tuple[int, int, int]) -> None:
        self.grid_spec = GridSpec(tuple(extents), self.bbox)  # type: ignore[arg-type]
        self.static_grid = nd.parameter(
            np.zeros((self.grid_spec.node_count, self.config.feature_dim), dtype=self.dtype), name="static_grid"
        )

    def resize_grid(self, voxels: int) -> bool:
        extents = shape_from_bbox(self.bbox, voxels)
        if tuple(extents) == tuple(self.grid_spec.extents):
            return False
        self.grid_spec, values = resize(self.grid_spec, self.static_grid.data, extents)
        self.static_grid = nd.parameter(values, name="static_grid")
        return True

    def velocity_field(self, t: float, dt: float, resolution: int) -> VelocityField:
        centers = voxel_centers(self.bbox, resolution).reshape(-1, 3)
        delta = float(np.mean(self.bbox.extent)) / float(resolution)
        snapshot = self.prepare(t)

        def df(points: np.ndarray, time: float) -> np.ndarray:
            return self.displacement(nd.constant(points, dtype=self.dtype), time).data.astype(np.float64)

        sigma = snapshot.density(nd.constant(centers, dtype=self.dtype)).data.astype(np.float64)
        occupied = (1.0 - np.exp(-sigma * delta)) >= self.occupancy_alpha
        return deformation_velocity_field(df, t, dt, resolution, self.bbox, occupied)

    def meta(self) -> dict[str, Any]:
        return {"model_id": self.model_id, "grid_extents": list(self.grid_spec.extents), "capacity": 0, "alive": 0}
