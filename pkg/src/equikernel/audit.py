"""Rotate-commute audits for every layer plus the eSCN oracle comparison.

Each check returns the worst error over its trials; errors are
``max|a - b| / max(1, max|b|)`` so unit-scale features are compared in
absolute terms and large outputs in relative terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers, so3
from .escn import SO2LinearWeights, escn_convolution, reparametrize_weights
from .graph import build_graph, random_structure
from .irreps import PathWeights, depthwise_tensor_product, equivariant_linear, rotate, so3_convolution
from .model import EquiformerV2, ModelConfig


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).max() / max(1.0, float(np.abs(b).max())))


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<24} max_err={self.max_error:.3e} tol={self.tolerance:.0e}"


def _feature(rng, lmax, c, *batch):
    return rng.normal(size=batch + ((lmax + 1) ** 2, c))


# --------------------------------------------------------------------------
# individual checks: each takes (rng, context) and returns an error
# --------------------------------------------------------------------------


def _check_sh(rng, ctx):
    R = so3.random_rotation(rng)
    d = rng.normal(size=(4, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    lmax = 8
    Y = so3.spherical_harmonics(d, lmax)
    YR = so3.spherical_harmonics(d @ R.T, lmax)
    return rel_err(YR, Y @ so3.block_diagonal(R, lmax).T)


def _check_wigner(rng, ctx):
    A, B = so3.random_rotation(rng), so3.random_rotation(rng)
    err = 0.0
    for L in range(9):
        DA, DB, DAB = so3.wigner_d(A, L), so3.wigner_d(B, L), so3.wigner_d(A @ B, L)
        err = max(err, rel_err(DA @ DB, DAB), rel_err(DA @ DA.T, np.eye(2 * L + 1)))
    return err


def _check_cg(rng, ctx):
    R = so3.random_rotation(rng)
    D = [so3.wigner_d(R, L) for L in range(5)]
    err = 0.0
    for l1 in range(5):
        for l2 in range(5):
            for l3 in range(abs(l1 - l2), min(l1 + l2, 4) + 1):
                C = so3.clebsch_gordan(l1, l2, l3)
                lhs = np.einsum("ai,bj,ijk->abk", D[l1], D[l2], C)
                rhs = np.einsum("abc,ck->abk", C, D[l3])
                err = max(err, rel_err(lhs, rhs))
    return err


def _check_linear(rng, ctx):
    lmax, c = 3, 4
    x = _feature(rng, lmax, c)
    W = rng.normal(size=(lmax + 1, 5, c))
    b = rng.normal(size=5)
    R = so3.random_rotation(rng)
    return rel_err(equivariant_linear(rotate(x, R), W, b), rotate(equivariant_linear(x, W, b), R))


def _check_so3_conv(rng, ctx):
    lmax = 3
    pw = PathWeights.random(lmax, 3, 2, rng)
    x = _feature(rng, lmax, 3, 4)
    r = rng.normal(size=(4, 3))
    R = so3.random_rotation(rng)
    return rel_err(so3_convolution(rotate(x, R), r @ R.T, pw), rotate(so3_convolution(x, r, pw), R))


def _check_depthwise(rng, ctx):
    lmax = 3
    pw = PathWeights.random(lmax, 3, 3, rng, depthwise=True)
    x = _feature(rng, lmax, 3, 4)
    r = rng.normal(size=(4, 3))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    R = so3.random_rotation(rng)
    y = so3.spherical_harmonics(r, lmax)
    yR = so3.spherical_harmonics(r @ R.T, lmax)
    return rel_err(depthwise_tensor_product(rotate(x, R), yR, pw), rotate(depthwise_tensor_product(x, y, pw), R))


def _check_escn(rng, ctx):
    lmax = 3
    w = SO2LinearWeights.random(lmax, lmax, 2, 3, 2, rng)
    x = _feature(rng, lmax, 3, 4)
    r = rng.normal(size=(4, 3))
    R = so3.random_rotation(rng)
    return rel_err(escn_convolution(rotate(x, R), r @ R.T, w), rotate(escn_convolution(x, r, w), R))


def _check_gate(rng, ctx):
    lmax, c = 3, 4
    x = _feature(rng, lmax, c, 3)
    s = rng.normal(size=(3, c * (lmax + 1)))
    R = so3.random_rotation(rng)
    return rel_err(layers.gate_activation(s, rotate(x, R)), rotate(layers.gate_activation(s, x), R))


def _check_s2(rng, ctx):
    grid = ctx["grid"]
    x = _feature(rng, grid.lmax, 4, 3)
    R = so3.random_rotation(rng)
    f = lambda z: layers.s2_activation(z, layers.silu, grid)  # noqa: E731
    return rel_err(f(rotate(x, R)), rotate(f(x), R))


def _check_sep_s2(rng, ctx):
    grid = ctx["grid"]
    x = _feature(rng, grid.lmax, 4, 3)
    s = rng.normal(size=(3, 4))
    R = so3.random_rotation(rng)
    f = lambda z: layers.separable_s2_activation(s, z, layers.silu, grid)  # noqa: E731
    return rel_err(f(rotate(x, R)), rotate(f(x), R))


def _norm_check(fn):
    def check(rng, ctx):
        lmax, c = 3, 6
        p = layers.NormParams(rng.normal(size=(lmax + 1, c)), rng.normal(size=c))
        x = _feature(rng, lmax, c, 3)
        R = so3.random_rotation(rng)
        return rel_err(fn(rotate(x, R), p), rotate(fn(x, p), R))

    return check


def _graph_pair(rng, ctx):
    """A random graph, the same graph rotated, and the rotation."""
    cfg = ctx["config"]
    s = random_structure(rng, int(rng.integers(4, 9)))
    R = so3.random_rotation(rng)
    g = build_graph(s, cfg.cutoff, cfg.max_neighbors)
    gR = build_graph(s.with_positions(s.positions @ R.T), cfg.cutoff, cfg.max_neighbors)
    return g, gR, R


def _model_layer_check(apply):
    def check(rng, ctx):
        model = ctx["model"]
        g, gR, R = _graph_pair(rng, ctx)
        x = _feature(rng, model.config.lmax, model.config.d_embed, g.num_nodes)
        c, cR = model.context(g), model.context(gR)
        return rel_err(apply(model, rotate(x, R), cR), rotate(apply(model, x, c), R))

    return check


def _check_edge_embedding(rng, ctx):
    model = ctx["model"]
    g, gR, R = _graph_pair(rng, ctx)
    return rel_err(model.edge_embed(model.context(gR)), rotate(model.edge_embed(model.context(g)), R))


def _check_model(rng, ctx):
    model = ctx["model"]
    g, gR, R = _graph_pair(rng, ctx)
    e, f = model.forward(g)
    eR, fR = model.forward(gR)
    e_err = abs(eR - e) / max(abs(e), 1e-300)
    f_err = float(np.abs(fR - f @ R.T).max() / max(float(np.abs(f).max()), 1e-300))
    return max(e_err, f_err)


CHECKS: list[tuple[str, float, Callable]] = [
    ("spherical_harmonics", 1e-10, _check_sh),
    ("wigner_d", 1e-10, _check_wigner),
    ("clebsch_gordan", 1e-10, _check_cg),
    ("equivariant_linear", 1e-10, _check_linear),
    ("so3_convolution", 1e-10, _check_so3_conv),
    ("depthwise_tp", 1e-10, _check_depthwise),
    ("escn_convolution", 1e-9, _check_escn),
    ("gate_activation", 1e-10, _check_gate),
    ("s2_activation", 1e-6, _check_s2),
    ("separable_s2", 1e-6, _check_sep_s2),
    ("equivariant_layer_norm", 1e-10, _norm_check(layers.equivariant_layer_norm)),
    ("separable_layer_norm", 1e-10, _norm_check(layers.separable_layer_norm)),
    ("edge_degree_embedding", 1e-9, _check_edge_embedding),
    ("graph_attention", 1e-8, _model_layer_check(lambda m, x, c: m.blocks[0].attn(x, c))),
    ("ffn", 1e-8, _model_layer_check(lambda m, x, c: m.blocks[0].ffn(x))),
    ("transformer_block", 1e-8, _model_layer_check(lambda m, x, c: m.blocks[0](x, c))),
    ("model", 1e-6, _check_model),
]


def check_equivariance(config: ModelConfig | None = None, seed: int = 0, n_trials: int = 5) -> list[CheckResult]:
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    config = ModelConfig.tiny() if config is None else config
    rng = np.random.default_rng(seed)
    model = EquiformerV2(config, seed=seed)
    ctx = {"config": config, "model": model, "grid": model.grid}
    results = []
    for name, tol, fn in CHECKS:
        err = 0.0
        for _ in range(n_trials):
            e = fn(rng, ctx)
            err = e if not np.isfinite(e) else max(err, e)
        results.append(CheckResult(name, err, tol))
    return results


ORACLE_TOL = 1e-8


def check_oracle(lmax: int, seed: int = 0, n_edges: int = 20, channels: int = 3) -> float:
    """Worst ``|escn - so3|`` over random edges, with ``mmax = lmax``."""
    if not 0 <= lmax <= 3:
        raise ValueError("oracle check supports 0 <= L_max <= 3")
    if n_edges < 1:
        raise ValueError("n_edges must be positive")
    rng = np.random.default_rng(seed)
    pw = PathWeights.random(lmax, channels, channels, rng)
    x = _feature(rng, lmax, channels, n_edges)
    r = rng.normal(size=(n_edges, 3))
    return float(np.abs(escn_convolution(x, r, reparametrize_weights(pw)) - so3_convolution(x, r, pw)).max())

