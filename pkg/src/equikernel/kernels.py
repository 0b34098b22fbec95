"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The active implementation is chosen at import time (see
:mod:`equikernel._backend`) and can be switched at runtime with
:func:`set_backend` for benchmarking. Both paths compute the same
quantities; tests compare them against each other.

Array conventions: irreps features are ``(E, K, C)`` with ``K = (lmax+1)**2``
rows ordered by ``L*L + L + m``; Wigner blocks are packed per row as in
:func:`equikernel.so3.wigner_offsets`.
"""

from __future__ import annotations

import numpy as np

from . import _backend
from ._backend import njit

# --------------------------------------------------------------------------
# spherical harmonics
# --------------------------------------------------------------------------


@njit
def _sh_nb(d, lmax, norms):
    n = d.shape[0]
    K = (lmax + 1) * (lmax + 1)
    out = np.zeros((n, K))
    q = np.zeros((lmax + 1, lmax + 1))
    for e in range(n):
        x = d[e, 0]
        t = d[e, 1]
        z = d[e, 2]
        # q[l, m] = P_l^m(t) / sin^m, no Condon-Shortley phase
        dfact = 1.0
        for m in range(lmax + 1):
            if m > 0:
                dfact *= 2.0 * m - 1.0
            q[m, m] = dfact
            if m + 1 <= lmax:
                q[m + 1, m] = (2.0 * m + 1.0) * t * dfact
            for l in range(m + 2, lmax + 1):
                q[l, m] = ((2.0 * l - 1.0) * t * q[l - 1, m] - (l + m - 1.0) * q[l - 2, m]) / (l - m)
        a = 1.0
        b = 0.0
        for m in range(lmax + 1):
            for l in range(m, lmax + 1):
                base = l * l + l
                if m == 0:
                    out[e, base] = q[l, 0]
                else:
                    out[e, base + m] = norms[base + m] * q[l, m] * a
                    out[e, base - m] = norms[base - m] * q[l, m] * b
            # (z + i x)^(m+1)
            a, b = z * a - x * b, z * b + x * a
    return out


def _sh_np(d, lmax, norms):
    n = d.shape[0]
    K = (lmax + 1) ** 2
    out = np.zeros((n, K))
    x, t, z = d[:, 0], d[:, 1], d[:, 2]
    a = np.ones(n)
    b = np.zeros(n)
    dfact = 1.0
    for m in range(lmax + 1):
        if m > 0:
            dfact *= 2.0 * m - 1.0
        q_prev2 = None
        q_prev = np.full(n, dfact)
        for l in range(m, lmax + 1):
            if l == m:
                q = q_prev
            elif l == m + 1:
                q = (2.0 * m + 1.0) * t * dfact
            else:
                q = ((2.0 * l - 1.0) * t * q_prev - (l + m - 1.0) * q_prev2) / (l - m)
            if l > m:
                q_prev2, q_prev = q_prev, q
            base = l * l + l
            if m == 0:
                out[:, base] = q
            else:
                out[:, base + m] = norms[base + m] * q * a
                out[:, base - m] = norms[base - m] * q * b
        a, b = z * a - x * b, z * b + x * a
    return out


# --------------------------------------------------------------------------
# Wigner-D recursion D^L = M (D^{L-1} (x) R) M^T with sparse M
# --------------------------------------------------------------------------


@njit
def _wigner_nb(R, lmax, p1, p2, val):
    n = R.shape[0]
    total = 0
    for L in range(lmax + 1):
        total += (2 * L + 1) * (2 * L + 1)
    out = np.zeros((n, total))
    width = p1.shape[1]
    for e in range(n):
        out[e, 0] = 1.0
        if lmax >= 1:
            for i in range(3):
                for j in range(3):
                    out[e, 1 + 3 * i + j] = R[e, i, j]
        prev_off = 1
        off = 10
        for L in range(2, lmax + 1):
            dim = 2 * L + 1
            pdim = 2 * L - 1
            row0 = L * L
            for a in range(dim):
                for b in range(dim):
                    s = 0.0
                    for i in range(width):
                        va = val[row0 + a, i]
                        if va == 0.0:
                            continue
                        a1 = p1[row0 + a, i]
                        a2 = p2[row0 + a, i]
                        for j in range(width):
                            vb = val[row0 + b, j]
                            if vb == 0.0:
                                continue
                            s += (
                                va
                                * vb
                                * out[e, prev_off + a1 * pdim + p1[row0 + b, j]]
                                * R[e, a2, p2[row0 + b, j]]
                            )
                    out[e, off + a * dim + b] = s
            prev_off = off
            off += dim * dim
    return out


def _wigner_np(R, lmax, p1, p2, val):
    n = R.shape[0]
    blocks = [np.ones((n, 1, 1))]
    if lmax >= 1:
        blocks.append(R.copy())
    for L in range(2, lmax + 1):
        rows = slice(L * L, (L + 1) * (L + 1))
        P1, P2, V = p1[rows], p2[rows], val[rows]
        prev = blocks[-1]
        g1 = prev[:, P1[:, :, None, None], P1[None, None, :, :]]
        g2 = R[:, P2[:, :, None, None], P2[None, None, :, :]]
        blocks.append(np.einsum("ai,bj,eaibj->eab", V, V, g1 * g2))
    return np.concatenate([b.reshape(n, -1) for b in blocks], axis=1)


# --------------------------------------------------------------------------
# block-diagonal rotation of irreps features
# --------------------------------------------------------------------------


@njit
def _rotate_nb(x, packed, lmax, transpose):
    E, K, C = x.shape
    out = np.zeros((E, K, C))
    for e in range(E):
        off = 0
        for L in range(lmax + 1):
            dim = 2 * L + 1
            r0 = L * L
            for a in range(dim):
                for b in range(dim):
                    if transpose:
                        w = packed[e, off + b * dim + a]
                    else:
                        w = packed[e, off + a * dim + b]
                    for c in range(C):
                        out[e, r0 + a, c] += w * x[e, r0 + b, c]
            off += dim * dim
    return out


def _rotate_np(x, packed, lmax, transpose):
    E = x.shape[0]
    out = np.empty_like(x)
    off = 0
    for L in range(lmax + 1):
        dim = 2 * L + 1
        D = packed[:, off : off + dim * dim].reshape(E, dim, dim)
        if transpose:
            D = np.swapaxes(D, 1, 2)
        sl = slice(L * L, (L + 1) * (L + 1))
        out[:, sl] = D @ x[:, sl]
        off += dim * dim
    return out


# --------------------------------------------------------------------------
# dense SO(3) tensor product x (x) Y -> out, one weight matrix per path
# --------------------------------------------------------------------------


@njit
def _so3_tp_nb(x, Y, paths, cg, W, scale, Ko):
    E = x.shape[0]
    Ci = x.shape[2]
    Co = W.shape[1]
    out = np.zeros((E, Ko, Co))
    for e in range(E):
        for p in range(paths.shape[0]):
            li = paths[p, 0]
            lf = paths[p, 1]
            lo = paths[p, 2]
            off = paths[p, 3]
            n1 = 2 * li + 1
            n2 = 2 * lf + 1
            n3 = 2 * lo + 1
            t = np.zeros((n3, Ci))
            for m1 in range(n1):
                for m2 in range(n2):
                    ym = Y[e, lf * lf + m2]
                    for m3 in range(n3):
                        c = cg[off + (m1 * n2 + m2) * n3 + m3] * ym
                        for k in range(Ci):
                            t[m3, k] += c * x[e, li * li + m1, k]
            s = scale[p]
            for m3 in range(n3):
                for co in range(Co):
                    acc = 0.0
                    for k in range(Ci):
                        acc += W[p, co, k] * t[m3, k]
                    out[e, lo * lo + m3, co] += s * acc
    return out


def _so3_tp_np(x, Y, paths, cg, W, scale, Ko):
    E = x.shape[0]
    Co = W.shape[1]
    out = np.zeros((E, Ko, Co))
    for p in range(paths.shape[0]):
        li, lf, lo, off = (int(v) for v in paths[p])
        n1, n2, n3 = 2 * li + 1, 2 * lf + 1, 2 * lo + 1
        C = cg[off : off + n1 * n2 * n3].reshape(n1, n2, n3)
        t = np.einsum("ijk,eic,ej->ekc", C, x[:, li * li : li * li + n1], Y[:, lf * lf : lf * lf + n2])
        out[:, lo * lo : lo * lo + n3] += scale[p] * (t @ W[p].T)
    return out


@njit
def _dtp_nb(x, Y, paths, cg, W, scale, Ko):
    E = x.shape[0]
    C = x.shape[2]
    out = np.zeros((E, Ko, C))
    for e in range(E):
        for p in range(paths.shape[0]):
            li = paths[p, 0]
            lf = paths[p, 1]
            lo = paths[p, 2]
            off = paths[p, 3]
            n1 = 2 * li + 1
            n2 = 2 * lf + 1
            n3 = 2 * lo + 1
            s = scale[p]
            for m1 in range(n1):
                for m2 in range(n2):
                    ym = Y[e, lf * lf + m2]
                    for m3 in range(n3):
                        c = cg[off + (m1 * n2 + m2) * n3 + m3] * ym * s
                        for k in range(C):
                            out[e, lo * lo + m3, k] += c * W[p, k] * x[e, li * li + m1, k]
    return out


def _dtp_np(x, Y, paths, cg, W, scale, Ko):
    E, _, C = x.shape
    out = np.zeros((E, Ko, C))
    for p in range(paths.shape[0]):
        li, lf, lo, off = (int(v) for v in paths[p])
        n1, n2, n3 = 2 * li + 1, 2 * lf + 1, 2 * lo + 1
        Cg = cg[off : off + n1 * n2 * n3].reshape(n1, n2, n3)
        t = np.einsum("ijk,eic,ej->ekc", Cg, x[:, li * li : li * li + n1], Y[:, lf * lf : lf * lf + n2])
        out[:, lo * lo : lo * lo + n3] += scale[p] * t * W[p]
    return out


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

_IMPLS = {
    "numpy": {
        "sh": _sh_np,
        "wigner": _wigner_np,
        "rotate": _rotate_np,
        "so3_tp": _so3_tp_np,
        "dtp": _dtp_np,
    }
}
if _backend.HAS_NUMBA:
    _IMPLS["numba"] = {
        "sh": _sh_nb,
        "wigner": _wigner_nb,
        "rotate": _rotate_nb,
        "so3_tp": _so3_tp_nb,
        "dtp": _dtp_nb,
    }

_active = "numba" if _backend.HAS_NUMBA else "numpy"


def available_backends() -> list[str]:
    return list(_IMPLS)


def get_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} not available; choose from {available_backends()}")
    _active = name


def spherical_harmonics(d, lmax, norms):
    return _IMPLS[_active]["sh"](d, lmax, norms)


def wigner_packed(R, lmax, p1, p2, val):
    return _IMPLS[_active]["wigner"](R, lmax, p1, p2, val)


def rotate(x, packed, lmax, transpose=False):
    """Apply ``D`` (or ``D^T``) block-wise to ``x`` of shape ``(E, K, C)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _IMPLS[_active]["rotate"](x, np.ascontiguousarray(packed), lmax, bool(transpose))


def so3_tensor_product(x, Y, paths, cg, W, scale, Ko):
    return _IMPLS[_active]["so3_tp"](
        np.ascontiguousarray(x), np.ascontiguousarray(Y), paths, cg, np.ascontiguousarray(W), scale, Ko
    )


def depthwise_tensor_product(x, Y, paths, cg, W, scale, Ko):
    return _IMPLS[_active]["dtp"](
        np.ascontiguousarray(x), np.ascontiguousarray(Y), paths, cg, np.ascontiguousarray(W), scale, Ko
    )
