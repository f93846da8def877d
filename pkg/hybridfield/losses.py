from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndiff as nd
from .errors import NonFiniteError, ShapeError

ENTROPY_CLAMP = 1e-6


@dataclass(slots=True)
class LossWeights:
    ptrgb: float = 0.01
    bg: float = 0.001
    tvf: float = 0.01
    tvm: float = 0.01

    def __post_init__(self) -> None:
        for name in ("ptrgb", "bg", "tvf", "tvm"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


@dataclass(slots=True)
class LossTerms:
    photo: nd.Tensor
    ptrgb: nd.Tensor | None = None
    bg: nd.Tensor | None = None
    tvf: nd.Tensor | None = None
    tvm: nd.Tensor | None = None

    def values(self) -> dict[str, float]:
        return {
            name: (0.0 if term is None else float(term.data))
            for name, term in (("photo", self.photo), ("ptrgb", self.ptrgb), ("bg", self.bg),
                               ("tvf", self.tvf), ("tvm", self.tvm))
        }


def photometric(rendered: nd.Tensor, target: np.ndarray) -> nd.Tensor:
    """Mean over rays of the squared RGB distance."""
    if rendered.shape != np.shape(target):
        raise ShapeError("photometric", f"{rendered.shape} vs {np.shape(target)}")
    diff = nd.sub(rendered, nd.constant(target, like=rendered))
    return nd.mean(nd.sum(nd.square(diff), axis=1))


def per_point_rgb(sample_colors: nd.Tensor, weights: nd.Tensor, target: np.ndarray) -> nd.Tensor:
    """Every sample's color pulled toward the pixel target, weighted by (detached) render weights."""
    r, n, _ = sample_colors.shape
    tgt = nd.constant(np.asarray(target).reshape(r, 1, 3), like=sample_colors)
    dist = nd.sum(nd.square(nd.sub(sample_colors, tgt)), axis=2)
    return nd.mean(nd.sum(nd.mul(nd.stop_gradient(weights), dist), axis=1))


def bg_entropy(t_far: nd.Tensor) -> nd.Tensor:
    p = nd.clip(t_far, ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP)
    q = nd.sub(1.0, p)
    ent = nd.add(nd.mul(p, nd.log(p)), nd.mul(q, nd.log(q)))
    return nd.neg(nd.mean(ent))


def tv(grid: nd.Tensor, extents: tuple[int, int, int], valid: np.ndarray | None = None) -> nd.Tensor:
    """Sum of neighbor-pair feature-difference norms over the three axes, per valid node.

    A pair counts only when both nodes are valid.
    """
    nx, ny, nz = (int(e) for e in extents)
    channels = grid.shape[1]
    if grid.shape[0] != nx * ny * nz:
        raise ShapeError("tv", f"{grid.shape[0]} nodes vs extents {extents}")
    cube = nd.reshape(grid, (nx, ny, nz, channels))
    mask = np.ones((nx, ny, nz), dtype=bool) if valid is None else np.asarray(valid, dtype=bool).reshape(nx, ny, nz)
    count = max(int(np.count_nonzero(mask)), 1)
    total: nd.Tensor | None = None
    for axis, extent in enumerate((nx, ny, nz)):
        if extent < 2:
            continue
        diff = nd.sub(nd.slice_axis(cube, 1, extent, axis=axis), nd.slice_axis(cube, 0, extent - 1, axis=axis))
        lead = [slice(None)] * 3
        trail = [slice(None)] * 3
        lead[axis] = slice(1, extent)
        trail[axis] = slice(0, extent - 1)
        pair = (mask[tuple(lead)] & mask[tuple(trail)]).astype(grid.dtype)
        term = nd.sum(nd.mul(nd.norm(diff, axis=-1), nd.constant(pair, like=grid)))
        total = term if total is None else nd.add(total, term)
    if total is None:
        return nd.constant(np.zeros((), dtype=grid.dtype))
    return nd.div(total, float(count))


def total(terms: LossTerms, weights: LossWeights) -> nd.Tensor:
    """``photo + w1 * ptrgb + w2 * bg + w3 * tvf + w4 * tvm``; absent terms contribute nothing."""
    for name, value in terms.values().items():
        if not np.isfinite(value):
            graph = nd.active_graph()
            raise NonFiniteError(f"loss:{name}", len(graph.nodes) if graph is not None else -1, f"value {value!r}")
    out = terms.photo
    for term, w in ((terms.ptrgb, weights.ptrgb), (terms.bg, weights.bg), (terms.tvf, weights.tvf), (terms.tvm, weights.tvm)):
        if term is None or w == 0.0:
            continue
        out = nd.add(out, nd.mul(term, float(w)))
    return out
