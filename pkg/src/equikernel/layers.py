"""Equivariant activations and normalisations for irreps features.

Features are ``(..., (lmax+1)**2, C)`` arrays (see :mod:`equikernel.irreps`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import so3
from .errors import ConfigurationError
from .irreps import lmax_of

EPS = 1e-8


def silu(x):
    return x / (1.0 + np.exp(-x))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def leaky_relu(x, negative_slope: float = 0.2):
    return np.where(x >= 0, x, negative_slope * x)


# --------------------------------------------------------------------------
# sphere grid
# --------------------------------------------------------------------------


class S2Grid:
    """Equiangular latitude-longitude grid with exact quadrature up to ``lmax``.

    Latitudes sit at ``beta_i = pi (i + 1/2) / n_lat`` and carry Fejer
    first-rule weights, which integrate polynomials in ``cos(beta)`` of degree
    ``< n_lat`` exactly; longitudes ``alpha_j = 2 pi j / n_lon`` are uniform.
    A product of two band-``lmax`` harmonics is integrated exactly when
    ``n_lat >= 2*lmax + 1`` and ``n_lon >= 2*lmax + 1``, which is asserted.
    """

    def __init__(self, lmax: int, n_lat: int, n_lon: int | None = None):
        n_lon = n_lat if n_lon is None else n_lon
        need = 2 * lmax + 1
        if n_lat < need or n_lon < need:
            raise ConfigurationError(
                f"grid {n_lat}x{n_lon} is too coarse for lmax={lmax}; need at least {need}x{need}"
            )
        self.lmax = lmax
        self.n_lat = n_lat
        self.n_lon = n_lon
        beta = math.pi * (np.arange(n_lat) + 0.5) / n_lat
        alpha = 2.0 * math.pi * np.arange(n_lon) / n_lon
        k = np.arange(1, n_lat // 2 + 1)
        w_lat = (2.0 / n_lat) * (
            1.0 - 2.0 * (np.cos(2.0 * np.outer(beta, k)) / (4.0 * k * k - 1.0)).sum(axis=1)
        )
        b, a = np.meshgrid(beta, alpha, indexing="ij")
        self.points = np.stack(
            [np.sin(b) * np.sin(a), np.cos(b), np.sin(b) * np.cos(a)], axis=-1
        ).reshape(-1, 3)
        self.points /= np.linalg.norm(self.points, axis=1, keepdims=True)
        self.weights = np.repeat(w_lat, n_lon) * (2.0 * math.pi / n_lon)
        # (P, K) synthesis table and (K, P) analysis table
        self.to_grid = so3.spherical_harmonics(self.points, lmax)
        degree = np.repeat(np.arange(lmax + 1), 2 * np.arange(lmax + 1) + 1)
        self.from_grid = ((2 * degree + 1) / (4.0 * math.pi))[:, None] * (
            self.to_grid.T * self.weights[None, :]
        )
        for arr in (self.points, self.weights, self.to_grid, self.from_grid):
            arr.setflags(write=False)

    @classmethod
    def from_resolution(cls, lmax: int, resolution: int) -> "S2Grid":
        """``resolution`` R means an ``R x R`` grid."""
        return cls(lmax, resolution, resolution)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]


def _check_grid(x: np.ndarray, grid: S2Grid) -> int:
    lmax = lmax_of(x)
    if lmax != grid.lmax:
        raise ConfigurationError(f"feature lmax {lmax} does not match grid lmax {grid.lmax}")
    return lmax


def s2_project(x: np.ndarray, grid: S2Grid) -> np.ndarray:
    """Sample each channel on the grid: ``(..., K, C) -> (..., P, C)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_grid(x, grid)
    return grid.to_grid @ x


def s2_reconstruct(samples: np.ndarray, grid: S2Grid) -> np.ndarray:
    """Quadrature projection back onto degrees ``0..lmax``: ``(..., P, C) -> (..., K, C)``."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[-2] != grid.num_points:
        raise ConfigurationError("sample count does not match grid")
    return grid.from_grid @ samples


def s2_activation(x: np.ndarray, F: Callable, grid: S2Grid) -> np.ndarray:
    """``reconstruct(F(project(x)))``; ``F`` maps ``(..., P, C)`` to ``(..., P, C')``."""
    return s2_reconstruct(F(s2_project(x, grid)), grid)


def separable_s2_activation(
    scalars: np.ndarray, x: np.ndarray, F: Callable, grid: S2Grid
) -> np.ndarray:
    """SiLU on ``scalars`` for degree 0, S2 activation of ``x`` for degrees > 0.

    ``scalars`` is the first part of the degree-0 channels; the degree-0 row
    of ``x`` is the second part, which feeds the sphere activation and is then
    discarded.
    """
    scalars = np.asarray(scalars, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = s2_activation(x, F, grid)
    if scalars.shape[-1] != y.shape[-1] or scalars.shape[:-1] != x.shape[:-2]:
        raise ValueError(
            f"scalar part {scalars.shape} does not match activation output channels {y.shape}"
        )
    y[..., 0, :] = silu(scalars)
    return y


def gate_activation(scalars: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gate nonlinearity.

    ``scalars`` holds ``C + lmax*C`` channels: the first ``C`` pass through
    SiLU and become the degree-0 output, the remaining ``lmax`` groups of
    ``C`` are squashed by a sigmoid and scale the channels of degrees
    ``1..lmax`` of ``x``. The degree-0 row of ``x`` is ignored.
    """
    scalars = np.asarray(scalars, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    lmax = lmax_of(x)
    C = x.shape[-1]
    if scalars.shape[-1] != C * (lmax + 1):
        raise ValueError(
            f"gate needs {C * (lmax + 1)} scalar channels ({C} + {lmax}x{C}), got {scalars.shape[-1]}"
        )
    out = np.empty_like(x)
    out[..., 0, :] = silu(scalars[..., :C])
    for L in range(1, lmax + 1):
        g = sigmoid(scalars[..., L * C : (L + 1) * C])
        out[..., so3.degree_slice(L), :] = x[..., so3.degree_slice(L), :] * g[..., None, :]
    return out


# --------------------------------------------------------------------------
# normalisation
# --------------------------------------------------------------------------


@dataclass
class NormParams:
    gamma: np.ndarray  # (lmax + 1, C)
    beta: np.ndarray  # (C,), degree 0 only

    @classmethod
    def unit(cls, lmax: int, channels: int) -> "NormParams":
        return cls(np.ones((lmax + 1, channels)), np.zeros(channels))


def _std_guard(var):
    return np.maximum(np.sqrt(var), EPS)


def _scalar_layer_norm(x0, gamma, beta):
    mu = x0.mean(axis=-1, keepdims=True)
    xc = x0 - mu
    sigma = _std_guard((xc * xc).mean(axis=-1, keepdims=True))
    return xc / sigma * gamma + beta


def layer_norm(x: np.ndarray, gamma=None, beta=None) -> np.ndarray:
    """Plain layer norm over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    gamma = 1.0 if gamma is None else gamma
    beta = 0.0 if beta is None else beta
    return _scalar_layer_norm(x, gamma, beta)


def equivariant_layer_norm(x: np.ndarray, params: NormParams) -> np.ndarray:
    """Per-degree normalisation.

    Degree 0 is a standard layer norm. Degree ``L > 0`` is divided by the
    root mean square over channels of the L2 norms of its type-L vectors,
    then scaled by ``gamma[L]``.
    """
    x = np.asarray(x, dtype=np.float64)
    lmax = lmax_of(x)
    out = np.empty_like(x)
    out[..., 0, :] = _scalar_layer_norm(x[..., 0, :], params.gamma[0], params.beta)
    for L in range(1, lmax + 1):
        xl = x[..., so3.degree_slice(L), :]
        sq_norm = (xl * xl).sum(axis=-2)  # (..., C)
        rms = _std_guard(sq_norm.mean(axis=-1))[..., None, None]
        out[..., so3.degree_slice(L), :] = xl / rms * params.gamma[L][..., None, :]
    return out


def separable_layer_norm(x: np.ndarray, params: NormParams) -> np.ndarray:
    """Layer norm on degree 0; one shared RMS for all degrees > 0.

    ``sigma_L`` is the RMS over channels and orders of degree ``L`` and the
    shared statistic is ``sqrt(mean_{L=1..lmax} sigma_L^2)``.
    """
    x = np.asarray(x, dtype=np.float64)
    lmax = lmax_of(x)
    out = np.empty_like(x)
    out[..., 0, :] = _scalar_layer_norm(x[..., 0, :], params.gamma[0], params.beta)
    if lmax == 0:
        return out
    var = 0.0
    for L in range(1, lmax + 1):
        xl = x[..., so3.degree_slice(L), :]
        var = var + (xl * xl).mean(axis=(-2, -1))
    sigma = _std_guard(var / lmax)[..., None, None]
    for L in range(1, lmax + 1):
        sl = so3.degree_slice(L)
        out[..., sl, :] = x[..., sl, :] / sigma * params.gamma[L][..., None, :]
    return out
