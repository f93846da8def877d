"""Small fully-connected networks built on ndiff: encoding, motion net and radiance heads."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndiff as nd


def encoded_size(dim: int, freqs: int) -> int:
    return int(dim) * (1 + 2 * int(freqs))


def encode(x: nd.Tensor, freqs: int) -> nd.Tensor:
    """Raw input followed by ``sin(2^l pi x), cos(2^l pi x)`` for l < freqs, per component.

    ``x`` is ``(N, D)``; the result is ``(N, D * (1 + 2 * freqs))``.
    """
    if freqs < 0:
        raise ValueError("frequency count must be >= 0")
    if freqs == 0:
        return x
    n, d = x.shape
    bands = (2.0 ** np.arange(freqs, dtype=x.dtype)) * np.pi
    scaled = nd.mul(nd.reshape(x, (n, d, 1)), nd.constant(bands, like=x))
    pair = nd.concat([nd.reshape(nd.sin(scaled), (n, d, freqs, 1)), nd.reshape(nd.cos(scaled), (n, d, freqs, 1))], axis=3)
    return nd.concat([x, nd.reshape(pair, (n, d * freqs * 2))], axis=1)


class Linear:
    __slots__ = ("weight", "bias")

    def __init__(self, fan_in: int, fan_out: int, *, rng: np.random.Generator, dtype: np.dtype, zero: bool = False) -> None:
        if zero:
            w = np.zeros((fan_in, fan_out), dtype=dtype)
            b = np.zeros((fan_out,), dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
            b = rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype)
        self.weight = nd.parameter(w)
        self.bias = nd.parameter(b)

    def __call__(self, x: nd.Tensor) -> nd.Tensor:
        return nd.add(nd.matmul(x, self.weight), self.bias)


class MLP:
    """ReLU between layers; ``activate_last`` applies ReLU after the final layer too."""

    def __init__(
        self,
        sizes: list[int],
        *,
        rng: np.random.Generator,
        dtype: np.dtype,
        zero_last: bool = False,
        activate_last: bool = False,
    ) -> None:
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        self.activate_last = bool(activate_last)
        last = len(sizes) - 2
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng=rng, dtype=dtype, zero=zero_last and i == last)
            for i in range(len(sizes) - 1)
        ]

    def __call__(self, x: nd.Tensor) -> nd.Tensor:
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1 or self.activate_last:
                h = nd.relu(h)
        return h

    def parameters(self) -> list[nd.Tensor]:
        out: list[nd.Tensor] = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out


@dataclass(slots=True)
class EncodingSpec:
    position: int = 10
    time: int = 8
    direction: int = 4
    feature: int = 2


class MotionNet:
    """Shared offset predictor: a time branch feeding a position branch with a zero final layer."""

    def __init__(self, *, width: int, enc: EncodingSpec, rng: np.random.Generator, dtype: np.dtype) -> None:
        self.enc = enc
        self.dtype = np.dtype(dtype)
        self.time_net = MLP([encoded_size(1, enc.time), width, width], rng=rng, dtype=dtype, activate_last=True)
        self.motion_net = MLP(
            [encoded_size(3, enc.position) + width, width, width, 3],
            rng=rng,
            dtype=dtype,
            zero_last=True,
        )

    def offsets(self, starts: nd.Tensor, t: float) -> nd.Tensor:
        n = starts.shape[0]
        t_enc = encode(nd.constant(np.full((1, 1), t, dtype=self.dtype)), self.enc.time)
        t_feat = nd.broadcast_to(self.time_net(t_enc), (n, self.time_net.sizes[-1]))
        return self.motion_net(nd.concat([encode(starts, self.enc.position), t_feat], axis=1))

    def parameters(self) -> list[nd.Tensor]:
        return self.time_net.parameters() + self.motion_net.parameters()


@dataclass(slots=True)
class RadianceOutput:
    sigma: nd.Tensor
    color: nd.Tensor


@dataclass
class RadianceNets:
    feature_dim: int
    width: int
    enc: EncodingSpec
    rng: np.random.Generator
    dtype: np.dtype
    density_shift: float = -10.0
    zero_heads: bool = True
    feature_net: MLP = field(init=False)
    density_head: MLP = field(init=False)
    color_head: MLP = field(init=False)

    def __post_init__(self) -> None:
        in_dim = encoded_size(self.feature_dim, self.enc.feature) + encoded_size(3, self.enc.position)
        self.feature_net = MLP([in_dim, self.width, self.width], rng=self.rng, dtype=self.dtype, activate_last=True)
        self.density_head = MLP([self.width, 1], rng=self.rng, dtype=self.dtype, zero_last=self.zero_heads)
        self.color_head = MLP(
            [self.width + encoded_size(3, self.enc.direction), self.width, 3],
            rng=self.rng,
            dtype=self.dtype,
            zero_last=self.zero_heads,
        )

    def _hidden(self, features: nd.Tensor, points: nd.Tensor) -> nd.Tensor:
        return self.feature_net(nd.concat([encode(features, self.enc.feature), encode(points, self.enc.position)], axis=1))

    def _sigma(self, h: nd.Tensor) -> nd.Tensor:
        raw = self.density_head(h)
        return nd.softplus(nd.add(nd.reshape(raw, (raw.shape[0],)), float(self.density_shift)))

    def density(self, features: nd.Tensor, points: nd.Tensor) -> nd.Tensor:
        return self._sigma(self._hidden(features, points))

    def __call__(self, features: nd.Tensor, points: nd.Tensor, dirs: nd.Tensor) -> RadianceOutput:
        h = self._hidden(features, points)
        color = nd.sigmoid(self.color_head(nd.concat([h, encode(dirs, self.enc.direction)], axis=1)))
        return RadianceOutput(sigma=self._sigma(h), color=color)

    def parameters(self) -> list[nd.Tensor]:
        return self.feature_net.parameters() + self.density_head.parameters() + self.color_head.parameters()
