from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndiff as nd


def decay_factor(step: int, total: int, *, final: float = 0.1) -> float:
    """``final ** (step / total)``; 1 when there are no steps."""
    if total <= 0:
        return 1.0
    s = min(max(int(step), 0), int(total))
    return float(final ** (s / total))


def lr_at(step: int, total: int, base_rates: dict[str, float], *, final: float = 0.1) -> dict[str, float]:
    factor = decay_factor(step, total, final=final)
    return {group: float(rate) * factor for group, rate in base_rates.items()}


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray


@dataclass
class Adam:
    """Adam with one shared step counter and per-group rates.

    Parameters are registered under a group name; each ``step`` call receives
    the rate per group so the schedule lives outside the optimizer.
    """

    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    groups: dict[str, list[nd.Tensor]] = field(default_factory=dict)
    state: dict[int, AdamState] = field(default_factory=dict)

    def add_group(self, name: str, params: list[nd.Tensor]) -> None:
        self.groups[name] = list(params)
        for p in params:
            self.state[id(p)] = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))

    def replace_group(self, name: str, params: list[nd.Tensor]) -> None:
        for p in self.groups.get(name, []):
            self.state.pop(id(p), None)
        self.add_group(name, params)

    def reset_rows(self, param: nd.Tensor, rows: np.ndarray) -> None:
        st = self.state[id(param)]
        st.m[rows] = 0.0
        st.v[rows] = 0.0

    def step(self, grads: dict[nd.Tensor, np.ndarray], rates: dict[str, float]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for name, params in self.groups.items():
            lr = float(rates.get(name, 0.0))
            for p in params:
                g = grads.get(p)
                if g is None:
                    continue
                st = self.state[id(p)]
                st.m[...] = b1 * st.m + (1.0 - b1) * g
                st.v[...] = b2 * st.v + (1.0 - b2) * g * g
                if lr == 0.0:
                    continue
                update = lr * (st.m / corr1) / (np.sqrt(st.v / corr2) + self.eps)
                p.data -= update.astype(p.dtype, copy=False)

    def export(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, params in self.groups.items():
            for i, p in enumerate(params):
                st = self.state[id(p)]
                out[f"adam_m/{name}/{i}"] = st.m
                out[f"adam_v/{name}/{i}"] = st.v
        return out

    def load(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = int(t)
        for name, params in self.groups.items():
            for i, p in enumerate(params):
                st = self.state[id(p)]
                st.m[...] = arrays[f"adam_m/{name}/{i}"]
                st.v[...] = arrays[f"adam_v/{name}/{i}"]
