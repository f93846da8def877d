"""Central finite differences, the oracle every backward pass is checked against."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from . import ndiff as nd
from .errors import NonDeterministicLossError

LossFn = Callable[[], float]


def _scalar(value: object) -> float:
    if isinstance(value, nd.Tensor):
        return float(np.sum(value.data))
    return float(np.sum(np.asarray(value)))


def finite_difference_gradient(
    loss_fn: Callable[[], object],
    params: Sequence[nd.Tensor],
    step: float,
    *,
    indices: Mapping[int, Sequence[int]] | None = None,
) -> list[np.ndarray]:
    """Central-difference gradient of ``loss_fn`` with respect to each tensor in ``params``.

    ``loss_fn`` takes no arguments and reads the parameters in place. When
    ``indices`` maps a parameter position to flat element indices, only those
    entries are differenced and the rest of that gradient stays zero.
    """
    if step <= 0:
        raise ValueError("finite-difference step must be > 0")
    first = _scalar(loss_fn())
    second = _scalar(loss_fn())
    if np.float64(first).tobytes() != np.float64(second).tobytes():
        raise NonDeterministicLossError(f"loss_fn returned {first!r} then {second!r} for identical parameters")

    grads: list[np.ndarray] = []
    for position, param in enumerate(params):
        flat = param.data.reshape(-1)
        grad = np.zeros(flat.shape, dtype=np.float64)
        entries = range(flat.size) if indices is None or position not in indices else indices[position]
        for i in entries:
            original = flat[i]
            flat[i] = original + step
            plus = _scalar(loss_fn())
            flat[i] = original - step
            minus = _scalar(loss_fn())
            flat[i] = original
            grad[i] = (plus - minus) / (2.0 * step)
        grads.append(grad.reshape(param.shape))
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, *, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def gradient_check(
    build: Callable[[], nd.Tensor],
    params: Sequence[nd.Tensor],
    *,
    step: float = 1e-4,
    indices: Mapping[int, Sequence[int]] | None = None,
) -> list[float]:
    """Compare backward() with central differences for each parameter.

    ``build`` returns a scalar loss tensor; it runs eagerly for the numeric
    gradient and under a recording graph for the analytic one. Returns one
    relative error per parameter, restricted to ``indices`` where given.
    """
    numeric = finite_difference_gradient(lambda: build().data, params, step, indices=indices)
    graph = nd.Graph()
    for p in params:
        p.zero_grad()
    loss = graph.forward(build)
    grads = graph.backward(loss)
    errors: list[float] = []
    for position, param in enumerate(params):
        analytic = grads.get(param, np.zeros_like(param.data)).astype(np.float64)
        if indices is not None and position in indices:
            sel = np.asarray(list(indices[position]), dtype=np.int64)
            errors.append(relative_error(analytic.reshape(-1)[sel], numeric[position].reshape(-1)[sel]))
        else:
            errors.append(relative_error(analytic, numeric[position]))
    return errors
