"""Minimal reverse-mode differentiation over dense numpy arrays.

A :class:`Graph` is a tape. While it is recording, every primitive applied to a
tensor that requires gradients appends one node; :meth:`Graph.backward` then
sweeps the tape once in reverse order. Outside a recording graph the same
primitives evaluate eagerly and record nothing, which is how evaluation,
occupancy updates and exports run.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from .errors import GraphStateError, NonFiniteError, ShapeError

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_ACTIVE: contextvars.ContextVar["Graph | None"] = contextvars.ContextVar("hybridfield_graph", default=None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")

    def __init__(
        self,
        data: Any,
        *,
        requires_grad: bool = False,
        dtype: Any = None,
        name: str = "",
    ) -> None:
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Any) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


@dataclass(slots=True)
class Node:
    index: int
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Backward
    graph: "Graph"


GradientMap = dict[Tensor, np.ndarray]


class Graph:
    """Ordered record of primitive applications plus the leaves they consumed."""

    def __init__(self, *, check_finite: bool = True) -> None:
        self.nodes: list[Node] = []
        self.leaves: dict[int, Tensor] = {}
        self.check_finite = bool(check_finite)
        self._executed = False

    @contextmanager
    def recording(self) -> Iterator[Graph]:
        token = _ACTIVE.set(self)
        try:
            yield self
        finally:
            _ACTIVE.reset(token)
            self._executed = True

    def reset(self) -> None:
        self.nodes.clear()
        self.leaves.clear()
        self._executed = False

    def forward(self, fn: Callable[..., Any], *inputs: Any) -> Any:
        """Record ``fn(*inputs)`` on a fresh tape and return its outputs."""
        self.reset()
        with self.recording():
            return fn(*inputs)

    def _record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward: Backward) -> None:
        for tensor in inputs:
            if tensor.requires_grad and (tensor._node is None or tensor._node.graph is not self):
                self.leaves.setdefault(id(tensor), tensor)
        node = Node(index=len(self.nodes), op=op, inputs=inputs, output=output, backward=backward, graph=self)
        output._node = node
        self.nodes.append(node)

    def backward(self, output: Tensor, seed: Any = None) -> GradientMap:
        """Propagate ``seed`` from ``output`` to every requires_grad leaf.

        Leaves that do not influence ``output`` receive zero gradients. Gradients
        are also accumulated into ``leaf.grad``.
        """
        if not self._executed or not self.nodes:
            raise GraphStateError("backward() called before forward() recorded anything")
        node = output._node
        if node is None or node.graph is not self:
            raise GraphStateError("output tensor was not produced by this graph")
        if seed is None:
            seed_arr = np.ones_like(output.data)
        else:
            seed_arr = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=output.dtype)
            if seed_arr.shape != output.shape:
                raise GraphStateError(f"seed shape {seed_arr.shape} does not match output shape {output.shape}")

        grads: dict[int, np.ndarray] = {id(output): seed_arr}
        for current in reversed(self.nodes[: node.index + 1]):
            g = grads.pop(id(current.output), None)
            if g is None:
                continue
            input_grads = current.backward(g)
            for tensor, tg in zip(current.inputs, input_grads):
                if tg is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + tg
                else:
                    grads[key] = tg

        result: GradientMap = {}
        for key, leaf in self.leaves.items():
            g = grads.get(key)
            g = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            result[leaf] = g
        return result


def active_graph() -> Graph | None:
    return _ACTIVE.get()


def _emit(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, backward: Backward) -> Tensor:
    graph = _ACTIVE.get()
    needs_grad = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    if graph is not None:
        if graph.check_finite and not np.all(np.isfinite(out.data)):
            raise NonFiniteError(op, len(graph.nodes), f"output shape {out.shape}")
        if needs_grad:
            graph._record(op, inputs, out, backward)
    return out


def _lift(value: Any, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    if isinstance(b, Tensor):
        return _lift(a, b), b
    return _lift(a), _lift(b)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError as exc:
        raise ShapeError(op, f"{a.shape} vs {b.shape}") from exc


def _segment_sum(index: np.ndarray, values: np.ndarray, rows: int) -> np.ndarray:
    """Row-wise sum of ``values`` into ``rows`` buckets, in ascending input order."""
    flat_index = np.asarray(index, dtype=np.int64).reshape(-1)
    vals = values.reshape(flat_index.shape[0], -1)
    out = np.empty((rows, vals.shape[1]), dtype=values.dtype)
    for c in range(vals.shape[1]):
        out[:, c] = np.bincount(flat_index, weights=vals[:, c], minlength=rows)
    return out


# -- elementwise binary ---------------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit("mul", (a, b), ad * bd, backward)


def div(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _emit("div", (a, b), out, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"{a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


# -- elementwise unary ----------------------------------------------------


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("square", (a,), ad * ad, lambda g: (2.0 * ad * g,))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    # subgradient 0 at the kink
    return _emit("relu", (a,), np.maximum(ad, 0.0).astype(ad.dtype), lambda g: (g * (ad > 0),))


def sin(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("sin", (a,), np.sin(ad), lambda g: (g * np.cos(ad),))


def cos(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("cos", (a,), np.cos(ad), lambda g: (-g * np.sin(ad),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _emit("log", (a,), out, lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit("sqrt", (a,), out, lambda g: (0.5 * g / out,))


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    return _emit("softplus", (a,), np.logaddexp(0.0, ad).astype(ad.dtype), lambda g: (g * expit(ad),))


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    return _emit("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, low: Any, high: Any) -> Tensor:
    ad = a.data
    lo = np.asarray(low, dtype=ad.dtype)
    hi = np.asarray(high, dtype=ad.dtype)
    inside = (ad >= lo) & (ad <= hi)
    return _emit("clip", (a,), np.clip(ad, lo, hi), lambda g: (g * inside,))


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data, requires_grad=False)


# -- reductions and structure ---------------------------------------------


def sum(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", (a,), np.sum(a.data, axis=axis, keepdims=keepdims), backward)


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return div(sum(a, axis=axis, keepdims=keepdims), float(max(count, 1)))


def norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the zero vector is 0."""
    ad = a.data
    out = np.sqrt(np.sum(ad * ad, axis=axis))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        denom = np.expand_dims(out, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(denom > 0, ad / np.where(denom > 0, denom, 1.0), 0.0)
        return (np.expand_dims(g, axis) * unit,)

    return _emit("norm", (a,), out, backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError("reshape", f"{src} -> {tuple(shape)}") from exc
    return _emit("reshape", (a,), out, lambda g: (g.reshape(src),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = np.broadcast_to(a.data, tuple(shape)).copy()
    except ValueError as exc:
        raise ShapeError("broadcast_to", f"{src} -> {tuple(shape)}") from exc
    return _emit("broadcast_to", (a,), out, lambda g: (_unbroadcast(g, src),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(tensors)
    if not parts:
        raise ShapeError("concat", "no operands")
    ndim = parts[0].ndim
    ax = axis % ndim
    for t in parts[1:]:
        if t.ndim != ndim or any(t.shape[d] != parts[0].shape[d] for d in range(ndim) if d != ax):
            raise ShapeError("concat", " vs ".join(str(p.shape) for p in parts))
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return list(np.split(g, bounds, axis=ax))

    dtype = np.result_type(*[p.dtype for p in parts])
    return _emit("concat", parts, np.concatenate([p.data.astype(dtype, copy=False) for p in parts], axis=ax), backward)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    ax = axis % a.ndim
    key = (slice(None),) * ax + (slice(start, stop),)
    shape = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return _emit("slice", (a,), a.data[key].copy(), backward)


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``a`` selected by an integer array of any shape."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("gather", f"index out of range for {a.shape[0]} rows")
    shape = a.shape

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        rows = _segment_sum(idx, g.reshape(idx.size, -1), shape[0])
        return (rows.reshape(shape),)

    return _emit("gather", (a,), a.data[idx], backward)


def cumsum(a: Tensor, axis: int = -1, exclusive: bool = False) -> Tensor:
    ad = a.data
    out = np.cumsum(ad, axis=axis)
    if exclusive:
        out = out - ad

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev - g if exclusive else rev,)

    return _emit("cumsum", (a,), out, backward)


def scatter_weighted(values: Tensor, weights: Tensor, index: np.ndarray, rows: int) -> Tensor:
    """Weighted scatter-add: ``out[n] = sum over (i, k) with index[i, k] == n of weights[i, k] * values[i]``.

    Accumulation runs in ascending ``i`` order. The backward pass reaches both
    ``values`` and ``weights``.
    """
    idx = np.asarray(index, dtype=np.int64)
    if values.ndim != 2 or weights.ndim != 2 or idx.shape != weights.shape or weights.shape[0] != values.shape[0]:
        raise ShapeError("scatter_weighted", f"values {values.shape}, weights {weights.shape}, index {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise ShapeError("scatter_weighted", f"index out of range for {rows} rows")
    vd, wd = values.data, weights.data
    contributions = wd[:, :, None] * vd[:, None, :]
    out = _segment_sum(idx, contributions.reshape(-1, vd.shape[1]), int(rows))

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gathered = g[idx]
        grad_values = np.einsum("pk,pkc->pc", wd, gathered)
        grad_weights = np.einsum("pkc,pc->pk", gathered, vd)
        return grad_values, grad_weights

    return _emit("scatter_weighted", (values, weights), out, backward)


def constant(value: Any, *, like: Tensor | None = None, dtype: Any = None) -> Tensor:
    if dtype is None and like is not None:
        dtype = like.dtype
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value, requires_grad=False)


def parameter(value: Any, *, dtype: Any = None, name: str = "") -> Tensor:
    return Tensor(np.array(value, dtype=dtype, copy=True), requires_grad=True, name=name)


__all__ = [
    "Graph",
    "GradientMap",
    "Node",
    "Tensor",
    "active_graph",
    "add",
    "broadcast_to",
    "clip",
    "concat",
    "constant",
    "cos",
    "cumsum",
    "div",
    "exp",
    "gather",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "norm",
    "parameter",
    "relu",
    "reshape",
    "scatter_weighted",
    "sigmoid",
    "sin",
    "slice_axis",
    "softplus",
    "sqrt",
    "square",
    "stop_gradient",
    "sub",
    "sum",
]
