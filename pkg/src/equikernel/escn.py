"""eSCN convolutions: rotate into the edge frame, apply an SO(2) linear map, rotate back.

In the edge-aligned frame the edge direction is ``+y`` and a residual rotation
about ``y`` acts on each ``(m, -m)`` pair as a 2x2 rotation by ``m * angle``.
The SO(2) linear map treats each pair as a complex number and multiplies it
by ``w_m + i w_{-m}``, so it commutes with that residual rotation. Orders with
``|m| > mmax`` are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, so3
from .irreps import PathWeights, _edge_directions, lmax_of


def _order_rows(lmax: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat rows of orders ``+m`` and ``-m`` for degrees ``m..lmax``."""
    ls = np.arange(m, lmax + 1)
    return ls * ls + ls + m, ls * ls + ls - m


@dataclass
class SO2LinearWeights:
    """Weights of one SO(2) linear layer.

    ``w0`` maps the order-0 components, shape
    ``((lmax_out+1)*c_out + extra_out, (lmax_in+1)*c_in)``; rows and columns
    are ``(degree - m) * channels + channel``. ``wm[m-1] = (w_pos, w_neg)``
    for ``m = 1..mmax`` holds the real and imaginary parts of the complex
    multiplier, each ``((lmax_out-m+1)*c_out, (lmax_in-m+1)*c_in)``.

    ``extra_out`` appends invariant scalar outputs computed from the order-0
    inputs; :meth:`apply` returns them separately.
    """

    lmax_in: int
    lmax_out: int
    mmax: int
    c_in: int
    c_out: int
    w0: np.ndarray
    wm: list = field(default_factory=list)
    extra_out: int = 0

    def __post_init__(self):
        if self.mmax < 0 or self.mmax > min(self.lmax_in, self.lmax_out):
            raise ValueError(f"mmax={self.mmax} must lie in [0, min(lmax_in, lmax_out)]")
        exp0 = ((self.lmax_out + 1) * self.c_out + self.extra_out, (self.lmax_in + 1) * self.c_in)
        if self.w0.shape != exp0:
            raise ValueError(f"w0 has shape {self.w0.shape}, expected {exp0}")
        if len(self.wm) != self.mmax:
            raise ValueError(f"expected {self.mmax} order blocks, got {len(self.wm)}")
        for m, (wp, wn) in enumerate(self.wm, start=1):
            exp = ((self.lmax_out - m + 1) * self.c_out, (self.lmax_in - m + 1) * self.c_in)
            if wp.shape != exp or wn.shape != exp:
                raise ValueError(f"order {m} blocks must have shape {exp}")

    @classmethod
    def zeros(cls, lmax_in, lmax_out, mmax, c_in, c_out, extra_out=0):
        w0 = np.zeros(((lmax_out + 1) * c_out + extra_out, (lmax_in + 1) * c_in))
        wm = [
            (
                np.zeros(((lmax_out - m + 1) * c_out, (lmax_in - m + 1) * c_in)),
                np.zeros(((lmax_out - m + 1) * c_out, (lmax_in - m + 1) * c_in)),
            )
            for m in range(1, mmax + 1)
        ]
        return cls(lmax_in, lmax_out, mmax, c_in, c_out, w0, wm, extra_out)

    @classmethod
    def random(cls, lmax_in, lmax_out, mmax, c_in, c_out, rng, extra_out=0):
        """Uniform init in ``+-sqrt(3 / fan_in)`` per order block."""
        out = cls.zeros(lmax_in, lmax_out, mmax, c_in, c_out, extra_out)
        bound = math.sqrt(3.0 / out.w0.shape[1])
        out.w0[...] = rng.uniform(-bound, bound, out.w0.shape)
        for wp, wn in out.wm:
            bound = math.sqrt(3.0 / (2 * wp.shape[1]))
            wp[...] = rng.uniform(-bound, bound, wp.shape)
            wn[...] = rng.uniform(-bound, bound, wn.shape)
        return out

    @classmethod
    def identity(cls, lmax, mmax, channels):
        out = cls.zeros(lmax, lmax, mmax, channels, channels)
        out.w0[...] = np.eye(out.w0.shape[0])
        for wp, _ in out.wm:
            wp[...] = np.eye(wp.shape[0])
        return out

    def block(self, l_in: int, l_out: int, m: int) -> np.ndarray:
        """The 2x2-structured ``(2*C_out, 2*C_in)`` block (or the m=0 ``C_out x C_in`` block)."""
        ci, co = self.c_in, self.c_out
        if m == 0:
            return self.w0[l_out * co : (l_out + 1) * co, l_in * ci : (l_in + 1) * ci]
        wp, wn = self.wm[m - 1]
        r = slice((l_out - m) * co, (l_out - m + 1) * co)
        c = slice((l_in - m) * ci, (l_in - m + 1) * ci)
        a, b = wp[r, c], wn[r, c]
        return np.block([[a, -b], [b, a]])

    def truncated(self, mmax: int) -> "SO2LinearWeights":
        if mmax > self.mmax:
            raise ValueError("cannot raise mmax by truncation")
        return SO2LinearWeights(
            self.lmax_in, self.lmax_out, mmax, self.c_in, self.c_out,
            self.w0.copy(), [(a.copy(), b.copy()) for a, b in self.wm[:mmax]], self.extra_out,
        )

    def apply(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(y, extra)`` with ``y`` of shape ``(..., (lmax_out+1)**2, c_out)``."""
        x = np.asarray(x, dtype=np.float64)
        if lmax_of(x) != self.lmax_in or x.shape[-1] != self.c_in:
            raise ValueError(
                f"input {x.shape[-2:]} does not match weights (lmax_in={self.lmax_in}, c_in={self.c_in})"
            )
        batch = x.shape[:-2]
        out = np.zeros(batch + ((self.lmax_out + 1) ** 2, self.c_out))
        rows_in, _ = _order_rows(self.lmax_in, 0)
        rows_out, _ = _order_rows(self.lmax_out, 0)
        y0 = x[..., rows_in, :].reshape(batch + (rows_in.size * self.c_in,)) @ self.w0.T
        n_main = (self.lmax_out + 1) * self.c_out
        out[..., rows_out, :] = y0[..., :n_main].reshape(batch + (rows_out.size, self.c_out))
        extra = y0[..., n_main:]
        for m, (wp, wn) in enumerate(self.wm, start=1):
            pin, nin = _order_rows(self.lmax_in, m)
            pout, nout = _order_rows(self.lmax_out, m)
            xp = x[..., pin, :].reshape(batch + (pin.size * self.c_in,))
            xn = x[..., nin, :].reshape(batch + (nin.size * self.c_in,))
            yp = xp @ wp.T - xn @ wn.T
            yn = xp @ wn.T + xn @ wp.T
            out[..., pout, :] = yp.reshape(batch + (pout.size, self.c_out))
            out[..., nout, :] = yn.reshape(batch + (nout.size, self.c_out))
        return out, extra


def so2_linear(x_aligned: np.ndarray, weights: SO2LinearWeights) -> np.ndarray:
    """SO(2) linear map of a feature already expressed in the edge frame."""
    return weights.apply(x_aligned)[0]


def edge_wigner(relative_vector, lmax: int, gauge: np.ndarray | None = None):
    """Alignment rotations and packed Wigner blocks for a batch of edges.

    ``gauge`` optionally prepends a fixed rotation about ``y`` (or one per
    edge) to every alignment rotation.
    """
    r = _edge_directions(relative_vector)
    R = so3.alignment_rotation(r)
    if gauge is not None:
        R = np.asarray(gauge) @ R
    return R, so3.wigner_packed(R, lmax, validate=False)


def escn_convolution(
    x_source: np.ndarray,
    relative_vector,
    weights: SO2LinearWeights,
    gauge: np.ndarray | None = None,
) -> np.ndarray:
    """``D(R)^-1 so2_linear(D(R) x)`` with ``R`` aligning each edge to ``+y``."""
    x = np.asarray(x_source, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    lmax = max(weights.lmax_in, weights.lmax_out)
    _, packed = edge_wigner(relative_vector, lmax, gauge)
    if packed.shape[0] != xb.shape[0]:
        raise ValueError("one relative vector per feature is required")
    off = so3.wigner_offsets(lmax)
    x_rot = kernels.rotate(xb, packed[:, : off[weights.lmax_in + 1]], weights.lmax_in)
    y = so2_linear(x_rot, weights)
    out = kernels.rotate(y, packed[:, : off[weights.lmax_out + 1]], weights.lmax_out, transpose=True)
    return out[0] if single else out


def reparametrize_weights(path_weights: PathWeights, mmax: int | None = None) -> SO2LinearWeights:
    """SO(2) weights equivalent to a dense tensor-product convolution.

    ``w_m = sum_Lf w C^{(Lo, m)}_{(Li, m)(Lf, 0)}`` and
    ``w_-m = sum_Lf w C^{(Lo, -m)}_{(Li, m)(Lf, 0)}``; the order-0 block is a
    single scalar per ``(Li, Lo)``. Path normalisation is folded in.
    """
    pw = path_weights
    if pw.depthwise:
        raise ValueError("reparametrization expects channel-mixing path weights")
    mmax = min(pw.lmax_in, pw.lmax_out) if mmax is None else mmax
    out = SO2LinearWeights.zeros(pw.lmax_in, pw.lmax_out, mmax, pw.c_in, pw.c_out)
    ci, co = pw.c_in, pw.c_out
    for (li, lf, lo), w in pw.weights.items():
        C = so3.clebsch_gordan(li, lf, lo)
        w = pw.path_scale(lo) * np.asarray(w)
        out.w0[lo * co : (lo + 1) * co, li * ci : (li + 1) * ci] += w * C[li, lf, lo]
        for m in range(1, min(li, lo, mmax) + 1):
            wp, wn = out.wm[m - 1]
            r = slice((lo - m) * co, (lo - m + 1) * co)
            c = slice((li - m) * ci, (li - m + 1) * ci)
            wp[r, c] += w * C[li + m, lf, lo + m]
            wn[r, c] += w * C[li + m, lf, lo - m]
    return out
