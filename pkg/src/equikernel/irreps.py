"""Irreps features and reference SO(3) operations.

A feature with maximum degree ``lmax`` and ``C`` channels is a float64 array
of shape ``(..., (lmax+1)**2, C)``. Row ``L*L + L + m`` holds order ``m`` of
degree ``L``, so the flattened memory order is (degree, order, channel) with
contiguous degree blocks. Leading axes are batch axes (nodes or edges).

:func:`so3_convolution` is the dense tensor-product convolution. It is kept
deliberately naive: it is the oracle the eSCN kernels are checked against and
the baseline of the complexity benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, so3
from .errors import DegenerateEdgeError


@dataclass(frozen=True)
class IrrepsLayout:
    lmax: int
    channels: int

    def __post_init__(self):
        if self.lmax < 0 or self.channels < 1:
            raise ValueError(f"invalid layout {self}")

    @property
    def num_components(self) -> int:
        return (self.lmax + 1) ** 2

    @property
    def size(self) -> int:
        return self.num_components * self.channels

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_components, self.channels)

    def zeros(self, *batch: int) -> np.ndarray:
        return np.zeros(batch + self.shape)

    def check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-2:] != self.shape:
            raise ValueError(f"feature shape {x.shape[-2:]} does not match layout {self.shape}")
        return x


def lmax_of(x: np.ndarray) -> int:
    K = x.shape[-2]
    lmax = math.isqrt(K) - 1
    if (lmax + 1) ** 2 != K:
        raise ValueError(f"{K} rows is not a valid (lmax+1)**2 irreps layout")
    return lmax


def rotate(x: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """Apply ``D(R)`` block-wise to a feature (any leading batch shape)."""
    x = np.asarray(x, dtype=np.float64)
    lmax = lmax_of(x)
    packed = so3.wigner_packed(rotation, lmax)
    flat = x.reshape((-1,) + x.shape[-2:])
    packed = np.broadcast_to(packed, (flat.shape[0], packed.shape[-1]))
    return kernels.rotate(flat, packed, lmax).reshape(x.shape)


def equivariant_linear(x: np.ndarray, weights, bias: np.ndarray | None = None) -> np.ndarray:
    """Degree-wise linear map; ``weights[L]`` has shape ``(C_out, C_in)``.

    ``bias`` (length ``C_out``) is added to degree 0 only.
    """
    x = np.asarray(x, dtype=np.float64)
    lmax = lmax_of(x)
    if len(weights) != lmax + 1:
        raise ValueError(f"need {lmax + 1} weight matrices, got {len(weights)}")
    c_in = x.shape[-1]
    c_out = np.shape(weights[0])[0]
    out = np.empty(x.shape[:-1] + (c_out,))
    for L in range(lmax + 1):
        W = np.asarray(weights[L])
        if W.shape != (c_out, c_in):
            raise ValueError(f"degree {L} weight has shape {W.shape}, expected {(c_out, c_in)}")
        sl = so3.degree_slice(L)
        out[..., sl, :] = x[..., sl, :] @ W.T
    if bias is not None:
        bias = np.asarray(bias)
        if bias.shape != (c_out,):
            raise ValueError(f"bias must have shape {(c_out,)}")
        out[..., 0, :] += bias
    return out


def triangle(l1: int, l2: int, l3: int) -> bool:
    return abs(l1 - l2) <= l3 <= l1 + l2


@dataclass
class PathWeights:
    """Learnable weights ``w[(L_in, L_filter, L_out)]`` of a tensor-product convolution.

    Each entry is a ``(C_out, C_in)`` matrix, or a length-``C`` vector when
    ``depthwise`` is set. Every path contribution is divided by
    ``sqrt(number of paths ending in L_out)``.
    """

    lmax_in: int
    lmax_filter: int
    lmax_out: int
    c_in: int
    c_out: int
    weights: dict = field(default_factory=dict)
    depthwise: bool = False

    def __post_init__(self):
        if self.depthwise and self.c_in != self.c_out:
            raise ValueError("depthwise paths need c_in == c_out")
        shape = (self.c_out,) if self.depthwise else (self.c_out, self.c_in)
        for (li, lf, lo), w in self.weights.items():
            if not triangle(li, lf, lo):
                raise ValueError(f"path {(li, lf, lo)} violates the triangle rule")
            if li > self.lmax_in or lf > self.lmax_filter or lo > self.lmax_out:
                raise ValueError(f"path {(li, lf, lo)} exceeds the layout degrees")
            if np.shape(w) != shape:
                raise ValueError(f"path {(li, lf, lo)} weight shape {np.shape(w)} != {shape}")
        self._compiled = None

    @staticmethod
    def all_paths(lmax_in: int, lmax_filter: int, lmax_out: int):
        return [
            (li, lf, lo)
            for li in range(lmax_in + 1)
            for lf in range(lmax_filter + 1)
            for lo in range(lmax_out + 1)
            if triangle(li, lf, lo)
        ]

    @classmethod
    def random(
        cls,
        lmax: int,
        c_in: int,
        c_out: int | None = None,
        rng: np.random.Generator | None = None,
        lmax_filter: int | None = None,
        lmax_out: int | None = None,
        depthwise: bool = False,
    ) -> "PathWeights":
        rng = np.random.default_rng() if rng is None else rng
        c_out = c_in if c_out is None else c_out
        lf = lmax if lmax_filter is None else lmax_filter
        lo = lmax if lmax_out is None else lmax_out
        shape = (c_out,) if depthwise else (c_out, c_in)
        w = {p: rng.normal(size=shape) for p in cls.all_paths(lmax, lf, lo)}
        return cls(lmax, lf, lo, c_in, c_out, w, depthwise)

    def path_scale(self, lo: int) -> float:
        n = sum(1 for (_, _, l3) in self.weights if l3 == lo)
        return 1.0 / math.sqrt(n) if n else 0.0

    def compiled(self):
        """Path table, flat CG buffer, stacked weights and scales for the kernels."""
        if self._compiled is None or self._compiled[-1] != so3.cg_corrupted():
            paths = sorted(self.weights)
            table = np.zeros((len(paths), 4), dtype=np.int64)
            cgs = []
            off = 0
            for i, (li, lf, lo) in enumerate(paths):
                c = so3.clebsch_gordan(li, lf, lo)
                table[i] = (li, lf, lo, off)
                cgs.append(c.reshape(-1))
                off += c.size
            cg = np.concatenate(cgs) if cgs else np.zeros(0)
            if paths:
                W = np.stack([np.asarray(self.weights[p], dtype=np.float64) for p in paths])
            else:
                W = np.zeros((0,) + ((self.c_out,) if self.depthwise else (self.c_out, self.c_in)))
            scale = np.array([self.path_scale(p[2]) for p in paths])
            self._compiled = (table, cg, W, scale, so3.cg_corrupted())
        return self._compiled[:4]


def _edge_directions(relative_vector) -> np.ndarray:
    r = np.asarray(relative_vector, dtype=np.float64).reshape(-1, 3)
    norms = np.linalg.norm(r, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateEdgeError("relative vector has zero length")
    return r / norms


def _batched(x, relative_vector):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    r = _edge_directions(relative_vector)
    if r.shape[0] != xb.shape[0]:
        raise ValueError("one relative vector per feature is required")
    return xb, r, single


def so3_convolution(x_source, relative_vector, weights: PathWeights, lmax_out: int | None = None):
    """Tensor-product message ``sum_paths w (x^(L_in) (x) Y^(L_f)(r_hat))^(L_out)``.

    ``x_source`` is ``(K, C_in)`` or ``(E, K, C_in)`` with one relative vector
    per row of the batch. Degrees above ``lmax_out`` are never formed.
    Cost grows as ``O(lmax^6)``.
    """
    xb, r, single = _batched(x_source, relative_vector)
    if weights.depthwise:
        raise ValueError("use depthwise_tensor_product for depthwise path weights")
    if lmax_of(xb) != weights.lmax_in or xb.shape[-1] != weights.c_in:
        raise ValueError("input layout does not match path weights")
    lo = weights.lmax_out if lmax_out is None else min(lmax_out, weights.lmax_out)
    Y = so3.spherical_harmonics(r, weights.lmax_filter)
    table, cg, W, scale = weights.compiled()
    keep = table[:, 2] <= lo
    out = kernels.so3_tensor_product(xb, Y, table[keep], cg, W[keep], scale[keep], (lo + 1) ** 2)
    return out[0] if single else out


def depthwise_tensor_product(x, y, weights: PathWeights, lmax_out: int | None = None):
    """Channel-wise tensor product of ``x`` with spherical-harmonic samples ``y``.

    Output channel ``c`` depends on input channel ``c`` only. ``y`` is
    ``(K_f,)`` or ``(E, K_f)`` with ``K_f = (lmax_filter+1)**2``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    yb = y[None] if y.ndim == 1 else y
    if not weights.depthwise:
        raise ValueError("depthwise_tensor_product needs depthwise path weights")
    if xb.shape[-1] != weights.c_in:
        raise ValueError(f"x has {xb.shape[-1]} channels, weights expect {weights.c_in}")
    if lmax_of(xb) != weights.lmax_in or yb.shape[-1] != (weights.lmax_filter + 1) ** 2:
        raise ValueError("input layout does not match path weights")
    if yb.shape[0] != xb.shape[0]:
        raise ValueError("batch sizes of x and y differ")
    lo = weights.lmax_out if lmax_out is None else min(lmax_out, weights.lmax_out)
    table, cg, W, scale = weights.compiled()
    keep = table[:, 2] <= lo
    out = kernels.depthwise_tensor_product(xb, yb, table[keep], cg, W[keep], scale[keep], (lo + 1) ** 2)
    return out[0] if single else out
