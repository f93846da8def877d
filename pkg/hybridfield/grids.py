"""Eulerian lattices: trilinear gather/scatter, superposition, motion grid and resizing."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndiff as nd
from .errors import InputError, NonFiniteError, ShapeError
from .types import BoundingBox

log = logging.getLogger(__name__)

GRID_MAGIC = b"GRD1"


@dataclass(slots=True)
class GridSpec:
    """Node lattice over ``bbox``: node (i, j, k) sits at ``bbox.minimum + (i, j, k) * cell``."""

    extents: tuple[int, int, int]
    bbox: BoundingBox

    def __post_init__(self) -> None:
        self.extents = tuple(int(n) for n in self.extents)  # type: ignore[assignment]
        if len(self.extents) != 3 or min(self.extents) < 2:
            raise InputError(f"grid extents must be three values >= 2, got {self.extents}")

    @property
    def cell(self) -> np.ndarray:
        return self.bbox.extent / (np.asarray(self.extents, dtype=np.float64) - 1.0)

    @property
    def node_count(self) -> int:
        nx, ny, nz = self.extents
        return nx * ny * nz

    @property
    def voxel_edge(self) -> float:
        return float(np.mean(self.cell))

    def flat_index(self, i: np.ndarray, j: np.ndarray, k: np.ndarray) -> np.ndarray:
        _, ny, nz = self.extents
        return (np.asarray(i) * ny + np.asarray(j)) * nz + np.asarray(k)

    def to_dict(self) -> dict[str, object]:
        return {"extents": list(self.extents), "bbox": self.bbox.to_dict()}


def shape_from_bbox(bbox: BoundingBox, voxels: int) -> tuple[int, int, int]:
    """Per-axis extents ``ceil(L / s)`` with ``s = cbrt(Lx * Ly * Lz / voxels)``, each at least 2."""
    if voxels < 8:
        raise InputError("target voxel count must be >= 8")
    ext = bbox.extent
    if np.any(ext <= 0):
        raise InputError(f"degenerate bounding box extent {ext.tolist()}")
    s = float(np.cbrt(np.prod(ext) / float(voxels)))
    return tuple(max(2, int(math.ceil(float(length) / s - 1e-9))) for length in ext)  # type: ignore[return-value]


def node_positions(spec: GridSpec) -> np.ndarray:
    axes = [spec.bbox.minimum[a] + np.arange(spec.extents[a]) * spec.cell[a] for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=1)


@dataclass(slots=True)
class Stencil:
    index: np.ndarray
    weights: nd.Tensor
    clamped: int


def trilinear_stencil(spec: GridSpec, positions: nd.Tensor) -> Stencil:
    """Corner node indices ``(P, 8)`` and differentiable trilinear weights for ``positions``.

    Positions are clamped to the bbox for the lookup only. Corner order runs
    ``dk`` fastest, then ``dj``, then ``di``.
    """
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ShapeError("trilinear", f"positions must be (P, 3), got {positions.shape}")
    if np.isnan(positions.data).any():
        graph = nd.active_graph()
        raise NonFiniteError("trilinear", len(graph.nodes) if graph is not None else -1, "NaN coordinate")
    p = positions.shape[0]
    lo = spec.bbox.minimum.astype(positions.dtype)
    hi = spec.bbox.maximum.astype(positions.dtype)
    outside = (positions.data < lo) | (positions.data > hi)
    clamped = int(np.count_nonzero(np.any(outside, axis=1)))
    inside = nd.clip(positions, lo, hi)
    u = nd.div(nd.sub(inside, lo), spec.cell.astype(positions.dtype))
    upper = np.asarray(spec.extents) - 2
    base = np.clip(np.floor(u.data).astype(np.int64), 0, upper)
    frac = nd.sub(u, base.astype(positions.dtype))

    per_axis = []
    for a in range(3):
        f = nd.slice_axis(frac, a, a + 1, axis=1)
        per_axis.append(nd.concat([nd.sub(1.0, f), f], axis=1))
    w = nd.mul(
        nd.mul(nd.reshape(per_axis[0], (p, 2, 1, 1)), nd.reshape(per_axis[1], (p, 1, 2, 1))),
        nd.reshape(per_axis[2], (p, 1, 1, 2)),
    )
    offsets = np.array([(di, dj, dk) for di in (0, 1) for dj in (0, 1) for dk in (0, 1)], dtype=np.int64)
    corners = base[:, None, :] + offsets[None, :, :]
    index = spec.flat_index(corners[..., 0], corners[..., 1], corners[..., 2])
    return Stencil(index=index, weights=nd.reshape(w, (p, 8)), clamped=clamped)


def interp(values: nd.Tensor, spec: GridSpec, points: nd.Tensor) -> nd.Tensor:
    """Trilinear query of node features ``values`` (``(nodes, C)``) at ``points`` (``(M, 3)``)."""
    if values.ndim != 2 or values.shape[0] != spec.node_count:
        raise ShapeError("interp", f"grid values {values.shape} vs {spec.node_count} nodes")
    st = trilinear_stencil(spec, points)
    m = points.shape[0]
    corner_feats = nd.gather(values, st.index)
    return nd.sum(nd.mul(corner_feats, nd.reshape(st.weights, (m, 8, 1))), axis=1)


@dataclass(slots=True)
class ScatterResult:
    grid: nd.Tensor
    weight_sums: np.ndarray
    mask: np.ndarray
    clamped: int = 0


def scatter(spec: GridSpec, positions: nd.Tensor, features: nd.Tensor) -> ScatterResult:
    """Unnormalized particle-to-grid transfer of ``features`` through trilinear weights."""
    if features.shape[0] != positions.shape[0]:
        raise ShapeError("scatter", f"{positions.shape[0]} positions vs {features.shape[0]} features")
    st = trilinear_stencil(spec, positions)
    grid = nd.scatter_weighted(features, st.weights, st.index, spec.node_count)
    sums = np.bincount(st.index.reshape(-1), weights=st.weights.data.reshape(-1).astype(np.float64),
                       minlength=spec.node_count)
    if st.clamped:
        log.debug("[grid] %d particle positions clamped to the bounding box", st.clamped)
    return ScatterResult(grid=grid, weight_sums=sums, mask=sums > 0.0, clamped=st.clamped)


def empty_scatter(spec: GridSpec, channels: int, dtype: np.dtype) -> ScatterResult:
    return ScatterResult(
        grid=nd.constant(np.zeros((spec.node_count, channels), dtype=dtype)),
        weight_sums=np.zeros(spec.node_count),
        mask=np.zeros(spec.node_count, dtype=bool),
    )


def superpose(static: nd.Tensor, result: ScatterResult, *, component: str = "full") -> nd.Tensor:
    """``(1 - m) * static + m * dynamic`` node-wise; the mask carries no gradient.

    ``component`` restricts the field to ``static`` (the static grid alone) or
    ``dynamic`` (``m * dynamic``) for decomposed renders.
    """
    if static.shape != result.grid.shape:
        raise ShapeError("superpose", f"static {static.shape} vs dynamic {result.grid.shape}")
    part = str(component or "full").strip().lower()
    m = nd.constant(result.mask.astype(static.dtype)[:, None], like=static)
    if part == "static":
        return static
    if part == "dynamic":
        return nd.mul(m, result.grid)
    if part != "full":
        raise InputError(f"unknown field component {component!r}")
    return nd.add(nd.mul(nd.sub(1.0, m), static), nd.mul(m, result.grid))


@dataclass(slots=True)
class MotionGrid:
    grid: nd.Tensor
    valid: np.ndarray


def motion_grid(spec: GridSpec, positions: nd.Tensor, offsets: nd.Tensor) -> MotionGrid:
    """Weight-normalized mean of particle offsets per node; untouched nodes are invalid."""
    st = trilinear_stencil(spec, positions)
    numerator = nd.scatter_weighted(offsets, st.weights, st.index, spec.node_count)
    ones = nd.constant(np.ones((positions.shape[0], 1)), like=offsets)
    sums = nd.scatter_weighted(ones, st.weights, st.index, spec.node_count)
    valid = sums.data[:, 0] > 0.0
    # untouched nodes divide 0 by 1
    denom = nd.add(sums, nd.constant((~valid).astype(offsets.dtype)[:, None]))
    return MotionGrid(grid=nd.div(numerator, denom), valid=valid)


def resize(spec: GridSpec, values: np.ndarray, extents: tuple[int, int, int]) -> tuple[GridSpec, np.ndarray]:
    """Resample node features onto a finer lattice over the same bbox."""
    new_spec = GridSpec(tuple(extents), spec.bbox)  # type: ignore[arg-type]
    if new_spec.node_count < spec.node_count:
        raise InputError(f"grid resize cannot shrink {spec.extents} to {new_spec.extents}")
    if new_spec.extents == spec.extents:
        return new_spec, np.array(values, copy=True)
    old = nd.Tensor(values)
    points = nd.Tensor(node_positions(new_spec).astype(values.dtype))
    new_values = interp(old, spec, points).data.astype(values.dtype)
    log.info("[grid] resized %s -> %s", spec.extents, new_spec.extents)
    return new_spec, new_values


def save_grid(path: str | Path, spec: GridSpec, values: np.ndarray) -> None:
    """Header (magic, extents, C, bbox) then row-major little-endian float32 node features."""
    data = np.asarray(values)
    if data.shape[0] != spec.node_count or data.ndim != 2:
        raise ShapeError("save_grid", f"values {data.shape} vs {spec.node_count} nodes")
    header = GRID_MAGIC + struct.pack("<3i", *spec.extents) + struct.pack("<i", data.shape[1])
    header += struct.pack("<6f", *spec.bbox.minimum.tolist(), *spec.bbox.maximum.tolist())
    Path(path).write_bytes(header + data.astype("<f4").tobytes(order="C"))


def load_grid(path: str | Path) -> tuple[GridSpec, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != GRID_MAGIC:
        raise InputError(f"{path} is not a static-grid file")
    nx, ny, nz = struct.unpack_from("<3i", raw, 4)
    (channels,) = struct.unpack_from("<i", raw, 16)
    box = struct.unpack_from("<6f", raw, 20)
    spec = GridSpec((nx, ny, nz), BoundingBox(np.array(box[:3]), np.array(box[3:])))
    values = np.frombuffer(raw, dtype="<f4", offset=44).reshape(spec.node_count, channels)
    return spec, values.astype(np.float32)
