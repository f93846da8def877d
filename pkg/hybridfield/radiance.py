"""Ray sampling, volume-rendering quadrature and the occupancy mask."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Callable

import numpy as np

from . import ndiff as nd
from .grids import GridSpec, interp, node_positions
from .layers import RadianceNets, RadianceOutput
from .scene import pixel_grid, ray_box_interval, rays_for_pixels
from .types import BoundingBox, CameraPose

if TYPE_CHECKING:
    from .model_interface import FieldModel

log = logging.getLogger(__name__)

OCCUPANCY_TIMES = (0.0, 0.25, 0.5, 0.75, 1.0)
MISS_INTERVAL = (1.0, 2.0)
BACKGROUNDS = {"white": (1.0, 1.0, 1.0), "black": (0.0, 0.0, 0.0)}

QueryFn = Callable[[nd.Tensor, nd.Tensor], RadianceOutput]


def background_color(name: str) -> np.ndarray:
    key = str(name or "white").strip().lower()
    if key not in BACKGROUNDS:
        raise ValueError(f"unknown background {name!r}")
    return np.asarray(BACKGROUNDS[key], dtype=np.float64)


@dataclass(slots=True)
class RaySampleSet:
    origins: np.ndarray
    dirs: np.ndarray
    depths: np.ndarray
    deltas: np.ndarray
    hit: np.ndarray

    @property
    def rays(self) -> int:
        return int(self.depths.shape[0])

    @property
    def samples(self) -> int:
        return int(self.depths.shape[1])

    def points(self) -> np.ndarray:
        return self.origins[:, None, :] + self.depths[..., None] * self.dirs[:, None, :]


@dataclass(slots=True)
class OccupancyMask:
    spec: GridSpec
    occupied: np.ndarray
    eps_alpha: float

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.occupied))


def stratified_depths(near: np.ndarray, far: np.ndarray, count: int, rng: np.random.Generator | None) -> np.ndarray:
    """One draw per equal sub-interval of ``[near, far]``; midpoints when ``rng`` is None."""
    if count < 2:
        raise ValueError("need at least 2 samples per ray")
    near = np.asarray(near, dtype=np.float64).reshape(-1, 1)
    far = np.asarray(far, dtype=np.float64).reshape(-1, 1)
    if np.any(far <= near) or np.any(near <= 0):
        raise ValueError("sample interval must satisfy far > near > 0")
    width = (far - near) / count
    lower = near + width * np.arange(count)[None, :]
    jitter = np.full(lower.shape, 0.5) if rng is None else rng.uniform(0.0, 1.0, size=lower.shape)
    return lower + width * jitter


def segment_lengths(depths: np.ndarray, near: np.ndarray, far: np.ndarray) -> np.ndarray:
    """Lengths between sample midpoints, with the outer boundaries at near and far."""
    near = np.asarray(near, dtype=np.float64).reshape(-1, 1)
    far = np.asarray(far, dtype=np.float64).reshape(-1, 1)
    mids = 0.5 * (depths[:, 1:] + depths[:, :-1])
    bounds = np.concatenate([near, mids, far], axis=1)
    return np.diff(bounds, axis=1)


def sample_rays(
    origins: np.ndarray,
    dirs: np.ndarray,
    bbox: BoundingBox,
    count: int,
    rng: np.random.Generator | None = None,
) -> RaySampleSet:
    """Stratified samples inside the bbox span of each ray; misses get a dummy interval."""
    near, far, hit = ray_box_interval(origins, dirs, bbox)
    near = np.where(hit, near, MISS_INTERVAL[0])
    far = np.where(hit, far, MISS_INTERVAL[1])
    depths = stratified_depths(near, far, count, rng)
    return RaySampleSet(origins, dirs, depths, segment_lengths(depths, near, far), hit)


def sample_ray(
    origin: np.ndarray,
    direction: np.ndarray,
    near: float,
    far: float,
    count: int,
    rng: np.random.Generator | None = None,
) -> RaySampleSet:
    depths = stratified_depths(np.array([near]), np.array([far]), count, rng)
    return RaySampleSet(
        origins=np.asarray(origin, dtype=np.float64).reshape(1, 3),
        dirs=np.asarray(direction, dtype=np.float64).reshape(1, 3),
        depths=depths,
        deltas=segment_lengths(depths, np.array([near]), np.array([far])),
        hit=np.ones(1, dtype=bool),
    )


@dataclass(slots=True)
class RenderOutput:
    color: nd.Tensor
    weights: nd.Tensor
    t_far: nd.Tensor
    sample_colors: nd.Tensor
    sigma: nd.Tensor


def composite(sigma: nd.Tensor, colors: nd.Tensor, deltas: np.ndarray, background: np.ndarray) -> RenderOutput:
    """Alpha compositing of ``(R, N)`` densities and ``(R, N, 3)`` colors over ``background``."""
    r, n = sigma.shape
    tau = nd.mul(sigma, nd.constant(deltas, like=sigma))
    alpha = nd.sub(1.0, nd.exp(nd.neg(tau)))
    transmittance = nd.exp(nd.neg(nd.cumsum(tau, axis=1, exclusive=True)))
    weights = nd.mul(transmittance, alpha)
    t_far = nd.exp(nd.neg(nd.sum(tau, axis=1)))
    shaded = nd.sum(nd.mul(nd.reshape(weights, (r, n, 1)), colors), axis=1)
    bg = nd.mul(nd.reshape(t_far, (r, 1)), nd.constant(np.asarray(background).reshape(1, 3), like=sigma))
    return RenderOutput(color=nd.add(shaded, bg), weights=weights, t_far=t_far, sample_colors=colors, sigma=sigma)


def render_rays(samples: RaySampleSet, query: QueryFn, background: np.ndarray, *, dtype: np.dtype) -> RenderOutput:
    r, n = samples.rays, samples.samples
    points = nd.constant(samples.points().reshape(r * n, 3), dtype=dtype)
    dirs = nd.constant(np.repeat(samples.dirs, n, axis=0), dtype=dtype)
    out = query(points, dirs)
    sigma = nd.reshape(out.sigma, (r, n))
    if not samples.hit.all():
        sigma = nd.mul(sigma, nd.constant(samples.hit.astype(dtype)[:, None]))
    colors = nd.reshape(out.color, (r, n, 3))
    return composite(sigma, colors, samples.deltas.astype(dtype), background)


def render_image(
    query: QueryFn,
    pose: CameraPose,
    bbox: BoundingBox,
    *,
    samples: int,
    background: np.ndarray,
    dtype: np.dtype,
    chunk: int = 4096,
    dump_path: str | Path | None = None,
) -> np.ndarray:
    """Render a full frame eagerly in ray chunks; optional per-sample CSV dump."""
    px, py = pixel_grid(pose)
    origins, dirs = rays_for_pixels(pose, px, py)
    image = np.empty((origins.shape[0], 3), dtype=np.float64)
    writer = None
    handle = None
    if dump_path is not None:
        handle = open(dump_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(handle)
        writer.writerow(["ray", "px", "py", "sample", "depth", "sigma", "weight"])
    try:
        for start in range(0, origins.shape[0], max(1, int(chunk))):
            stop = min(origins.shape[0], start + int(chunk))
            rs = sample_rays(origins[start:stop], dirs[start:stop], bbox, samples)
            out = render_rays(rs, query, background, dtype=dtype)
            image[start:stop] = out.color.data
            if writer is not None:
                for local in range(stop - start):
                    ray = start + local
                    for k in range(rs.samples):
                        writer.writerow([
                            ray, int(px[ray]), int(py[ray]), k,
                            f"{rs.depths[local, k]:.9g}",
                            f"{out.sigma.data[local, k]:.9g}",
                            f"{out.weights.data[local, k]:.9g}",
                        ])
    finally:
        if handle is not None:
            handle.close()
    return np.clip(image, 0.0, 1.0).reshape(pose.height, pose.width, 3)


def update_occupancy(
    model: FieldModel,
    eps_alpha: float,
    *,
    times: tuple[float, ...] = OCCUPANCY_TIMES,
    chunk: int = 8192,
) -> OccupancyMask:
    """Mark nodes whose alpha over one voxel edge reaches ``eps_alpha`` at any of ``times``."""
    spec = model.grid_spec
    nodes = node_positions(spec)
    delta = spec.voxel_edge
    best = np.zeros(spec.node_count)
    for t in times:
        snapshot = model.prepare(float(t))
        for start in range(0, nodes.shape[0], chunk):
            pts = nd.constant(nodes[start:start + chunk], dtype=model.dtype)
            sigma = snapshot.density(pts).data.astype(np.float64)
            alpha = 1.0 - np.exp(-sigma * delta)
            best[start:start + chunk] = np.maximum(best[start:start + chunk], alpha)
    mask = OccupancyMask(spec=spec, occupied=best >= eps_alpha, eps_alpha=float(eps_alpha))
    log.debug("[lifecycle] occupancy: %d / %d nodes occupied", mask.occupied_count, spec.node_count)
    return mask


def query(points: nd.Tensor, dirs: nd.Tensor, field: nd.Tensor, spec: GridSpec, nets: RadianceNets) -> RadianceOutput:
    """Density and color at ``points`` from an already superposed field."""
    return nets(interp(field, spec, points), points, dirs)


def density(points: nd.Tensor, field: nd.Tensor, spec: GridSpec, nets: RadianceNets) -> nd.Tensor:
    return nets.density(interp(field, spec, points), points)
