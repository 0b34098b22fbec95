"""Minimal parameter containers for numpy layers."""

from __future__ import annotations

import math

import numpy as np

from . import layers
from .escn import SO2LinearWeights
from .irreps import equivariant_linear


class Module:
    """Holds named float64 arrays and child modules; order of registration is stable."""

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._children: dict[str, "Module"] = {}

    def param(self, name: str, value: np.ndarray) -> np.ndarray:
        value = np.ascontiguousarray(value, dtype=np.float64)
        self._params[name] = value
        return value

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, value in self._params.items():
            yield prefix + name, value
        for name, mod in self._children.items():
            yield from mod.named_parameters(f"{prefix}{name}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            if own[name].shape != np.shape(value):
                raise ValueError(f"{name}: shape {np.shape(value)} != {own[name].shape}")
            own[name][...] = value

    def num_parameters(self) -> int:
        return sum(v.size for _, v in self.named_parameters())

    def zero_(self) -> "Module":
        for _, v in self.named_parameters():
            v[...] = 0.0
        return self


def uniform(rng, shape, fan_in):
    bound = math.sqrt(3.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, shape)


class Linear(Module):
    def __init__(self, c_in, c_out, rng, bias=True):
        super().__init__()
        self.weight = self.param("weight", uniform(rng, (c_out, c_in), c_in))
        self.bias = self.param("bias", np.zeros(c_out)) if bias else None

    def __call__(self, x):
        y = x @ self.weight.T
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, channels):
        super().__init__()
        self.gamma = self.param("gamma", np.ones(channels))
        self.beta = self.param("beta", np.zeros(channels))

    def __call__(self, x):
        return layers.layer_norm(x, self.gamma, self.beta)


class SeparableLayerNorm(Module):
    def __init__(self, lmax, channels):
        super().__init__()
        self.gamma = self.param("gamma", np.ones((lmax + 1, channels)))
        self.beta = self.param("beta", np.zeros(channels))

    def __call__(self, x):
        return layers.separable_layer_norm(x, layers.NormParams(self.gamma, self.beta))


class EquivariantLinear(Module):
    """Degree-wise linear layer; optional extra invariant outputs from degree 0."""

    def __init__(self, lmax, c_in, c_out, rng, bias=True, extra_scalars=0):
        super().__init__()
        self.lmax = lmax
        self.weight = self.param("weight", uniform(rng, (lmax + 1, c_out, c_in), c_in))
        self.bias = self.param("bias", np.zeros(c_out)) if bias else None
        self.extra = None
        if extra_scalars:
            self.extra = self.child("extra", Linear(c_in, extra_scalars, rng))

    def __call__(self, x):
        y = equivariant_linear(x, self.weight, self.bias)
        if self.extra is None:
            return y
        return y, self.extra(x[..., 0, :])


class SO2Linear(Module):
    """Trainable wrapper around :class:`~equikernel.escn.SO2LinearWeights`."""

    def __init__(self, lmax_in, lmax_out, mmax, c_in, c_out, rng, extra_out=0):
        super().__init__()
        w = SO2LinearWeights.random(lmax_in, lmax_out, mmax, c_in, c_out, rng, extra_out)
        self.weights = w
        self.param("w0", w.w0)
        w.w0 = self._params["w0"]
        for m in range(1, mmax + 1):
            wp, wn = w.wm[m - 1]
            w.wm[m - 1] = (self.param(f"w{m}_pos", wp), self.param(f"w{m}_neg", wn))

    def __call__(self, x):
        return self.weights.apply(x)
