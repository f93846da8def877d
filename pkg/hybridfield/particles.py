"""Appearance particles: start positions, time-invariant features and their lifecycle."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import ndiff as nd
from .errors import InputError
from .grids import trilinear_stencil
from .layers import MotionNet
from .types import BoundingBox

if TYPE_CHECKING:
    from .radiance import OccupancyMask

log = logging.getLogger(__name__)


@dataclass
class ParticleSet:
    starts: nd.Tensor
    features: nd.Tensor
    alive: np.ndarray
    bbox: BoundingBox

    @property
    def capacity(self) -> int:
        return int(self.alive.shape[0])

    @property
    def alive_count(self) -> int:
        return int(np.count_nonzero(self.alive))

    def alive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    def alive_features(self) -> nd.Tensor:
        return nd.gather(self.features, self.alive_indices())


def init_particles(
    count: int,
    bbox: BoundingBox,
    channels: int,
    *,
    rng: np.random.Generator,
    dtype: np.dtype,
    feature_std: float = 0.01,
) -> ParticleSet:
    """Starts uniform in ``bbox``; features zero-mean Gaussian."""
    starts = rng.uniform(bbox.minimum, bbox.maximum, size=(int(count), 3)).astype(dtype)
    features = (rng.standard_normal((int(count), int(channels))) * feature_std).astype(dtype)
    return ParticleSet(
        starts=nd.parameter(starts, name="starts"),
        features=nd.parameter(features, name="features"),
        alive=np.ones(int(count), dtype=bool),
        bbox=bbox,
    )


def check_time(t: float) -> float:
    value = float(t)
    if not np.isfinite(value) or value < 0.0 or value > 1.0:
        raise InputError(f"time {t} outside [0, 1]")
    return value


def offsets_at(particles: ParticleSet, net: MotionNet, t: float) -> nd.Tensor:
    starts = nd.gather(particles.starts, particles.alive_indices())
    return net.offsets(starts, check_time(t))


def position_at(particles: ParticleSet, net: MotionNet, t: float) -> nd.Tensor:
    """``s + offset(t, s)`` for alive particles, in ascending index order."""
    starts = nd.gather(particles.starts, particles.alive_indices())
    return nd.add(starts, net.offsets(starts, check_time(t)))


def sample_times(samples: int) -> np.ndarray:
    if samples < 2:
        raise InputError("trajectory sampling needs at least 2 times")
    return np.linspace(0.0, 1.0, int(samples))


def sampled_positions(particles: ParticleSet, net: MotionNet, samples: int) -> np.ndarray:
    """``(K, A, 3)`` alive positions at K uniform times, evaluated without a graph."""
    return np.stack([position_at(particles, net, float(t)).data for t in sample_times(samples)])


def trajectory_lengths(particles: ParticleSet, net: MotionNet, samples: int = 16) -> np.ndarray:
    pos = sampled_positions(particles, net, samples)
    if pos.shape[1] == 0:
        return np.zeros(0)
    return np.sum(np.linalg.norm(np.diff(pos.astype(np.float64), axis=0), axis=-1), axis=0)


def trajectory_length(particles: ParticleSet, net: MotionNet, index: int, samples: int = 16) -> float:
    if index < 0 or index >= particles.capacity or not particles.alive[index]:
        raise InputError(f"particle {index} is not alive")
    single = ParticleSet(particles.starts, particles.features, np.zeros_like(particles.alive), particles.bbox)
    single.alive[index] = True
    return float(trajectory_lengths(single, net, samples)[0])


@dataclass(slots=True)
class RemovalResult:
    removed: np.ndarray
    free_space: int
    immobile: int


def remove(
    particles: ParticleSet,
    net: MotionNet,
    occupancy: OccupancyMask,
    *,
    eps_traj: float,
    samples: int = 16,
) -> RemovalResult:
    """Kill particles sitting in known free space at every sample time, or barely moving.

    A position counts as free when none of its 8 surrounding nodes is occupied.
    """
    if eps_traj < 0:
        raise InputError("eps_traj must be >= 0")
    alive_idx = particles.alive_indices()
    if alive_idx.size == 0:
        return RemovalResult(np.zeros(0, dtype=np.int64), 0, 0)
    pos = sampled_positions(particles, net, samples)
    k, a, _ = pos.shape
    stencil = trilinear_stencil(occupancy.spec, nd.Tensor(pos.reshape(k * a, 3)))
    touched = occupancy.occupied[stencil.index].any(axis=1).reshape(k, a)
    free_always = ~touched.any(axis=0)
    lengths = np.sum(np.linalg.norm(np.diff(pos.astype(np.float64), axis=0), axis=-1), axis=0)
    immobile = lengths < eps_traj
    doomed = free_always | immobile
    removed = alive_idx[doomed]
    particles.alive[removed] = False
    return RemovalResult(removed=removed, free_space=int(free_always.sum()), immobile=int(immobile.sum()))


def sample_ball(rng: np.random.Generator, count: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((count, 3))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    direction = direction / np.where(norms > 0, norms, 1.0)
    return direction * (radius * np.cbrt(rng.uniform(0.0, 1.0, size=(count, 1))))


def resample(particles: ParticleSet, count: int, radius: float, *, rng: np.random.Generator) -> np.ndarray:
    """Refill ``count`` dead slots next to random survivors, inheriting their features.

    Returns the refilled slot indices (ascending).
    """
    if count <= 0:
        return np.zeros(0, dtype=np.int64)
    if radius <= 0:
        raise InputError("resample radius must be > 0")
    survivors = particles.alive_indices()
    if survivors.size == 0:
        log.warning("[lifecycle] no surviving particles; skipping resampling of %d slots", count)
        return np.zeros(0, dtype=np.int64)
    slots = np.flatnonzero(~particles.alive)[: int(count)]
    parents = survivors[rng.integers(0, survivors.size, size=slots.size)]
    starts = particles.starts.data
    new_starts = starts[parents].astype(np.float64) + sample_ball(rng, slots.size, radius)
    new_starts = np.clip(new_starts, particles.bbox.minimum, particles.bbox.maximum)
    starts[slots] = new_starts.astype(starts.dtype)
    particles.features.data[slots] = particles.features.data[parents]
    particles.alive[slots] = True
    return slots


def write_trajectories_csv(path: str | Path, particles: ParticleSet, net: MotionNet, samples: int = 16) -> int:
    """Rows ``particle_id, t, x, y, z``; returns the number of rows written."""
    times = sample_times(samples)
    pos = sampled_positions(particles, net, samples)
    ids = particles.alive_indices()
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["particle_id", "t", "x", "y", "z"])
        for col, pid in enumerate(ids):
            for ti, t in enumerate(times):
                x, y, z = pos[ti, col]
                writer.writerow([int(pid), f"{t:.6g}", f"{x:.9g}", f"{y:.9g}", f"{z:.9g}"])
                rows += 1
    return rows


def write_particles_ply(path: str | Path, positions: np.ndarray, ids: np.ndarray) -> None:
    """ASCII PLY point cloud with ``x y z particle_id`` vertices."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "property int particle_id",
        "end_header",
    ]
    lines.extend(f"{x:.9g} {y:.9g} {z:.9g} {int(i)}" for (x, y, z), i in zip(pts, ids))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
