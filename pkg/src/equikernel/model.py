"""EquiformerV2 assembly: embeddings, equivariant graph attention, FFN and output heads.

Edges follow :mod:`equikernel.graph`: messages flow ``src -> dst`` and the
edge vector is ``pos[src] - pos[dst]``. Every edge is processed in its own
aligned frame (edge vector along ``+y``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels, layers, so3
from .errors import ConfigurationError
from .escn import edge_wigner
from .graph import AtomGraph, AtomicStructure, build_graph
from .nn import EquivariantLinear, LayerNorm, Linear, Module, SeparableLayerNorm, SO2Linear

LEAKY_SLOPE = 0.2
CHECKPOINT_LAYOUT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters; defaults are the OC20 S2EF-2M base model."""

    lmax: int = 6
    mmax: int = 2
    num_blocks: int = 12
    d_embed: int = 128
    d_attn_hidden: int = 64
    num_heads: int = 8
    d_attn_alpha: int = 64
    d_attn_value: int = 16
    d_ffn: int = 128
    grid_resolution: int = 18
    num_radial_bases: int = 600
    d_edge: int = 128
    cutoff: float = 12.0
    max_neighbors: int = 20
    num_species: int = 118

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v > 0:
                raise ConfigurationError(f"{f.name} must be positive, got {v}")
        if self.mmax > self.lmax:
            raise ConfigurationError("mmax must not exceed lmax")
        if self.grid_resolution < 2 * self.lmax + 1:
            raise ConfigurationError(
                f"grid_resolution {self.grid_resolution} is below 2*lmax+1 = {2 * self.lmax + 1}"
            )

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Small profile used by the tests and the CLI default.

        The sphere grid is oversampled (64x64 for lmax 2) so that S2 aliasing
        stays below the equivariance tolerances.
        """
        base = dict(
            lmax=2, mmax=2, num_blocks=2, d_embed=16, d_attn_hidden=16, num_heads=2,
            d_attn_alpha=8, d_attn_value=8, d_ffn=16, grid_resolution=64,
            num_radial_bases=64, d_edge=16, cutoff=12.0, max_neighbors=20,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# --------------------------------------------------------------------------
# radial machinery
# --------------------------------------------------------------------------


def gaussian_radial_basis(distance, n_bases: int, cutoff: float) -> np.ndarray:
    """Unnormalised Gaussians centred uniformly on ``[0, cutoff]``, width = spacing."""
    d = np.asarray(distance, dtype=np.float64)
    if n_bases < 2:
        raise ValueError("need at least two radial bases")
    if np.any(d <= 0.0) or np.any(d > cutoff):
        raise ValueError(f"distances must lie in (0, {cutoff}]")
    centers = np.linspace(0.0, cutoff, n_bases)
    width = centers[1] - centers[0]
    return np.exp(-0.5 * ((d[..., None] - centers) / width) ** 2)


class RadialFunction(Module):
    """MLP on ``[basis, embed(z_src), embed(z_dst)]``: (Linear, LN, SiLU) x 2, Linear."""

    def __init__(self, n_bases, num_species, d_edge, d_out, rng):
        super().__init__()
        self.src_embed = self.param("src_embed", rng.normal(size=(num_species, d_edge)))
        self.dst_embed = self.param("dst_embed", rng.normal(size=(num_species, d_edge)))
        self.fc1 = self.child("fc1", Linear(n_bases + 2 * d_edge, d_edge, rng))
        self.ln1 = self.child("ln1", LayerNorm(d_edge))
        self.fc2 = self.child("fc2", Linear(d_edge, d_edge, rng))
        self.ln2 = self.child("ln2", LayerNorm(d_edge))
        self.fc3 = self.child("fc3", Linear(d_edge, d_out, rng))

    def from_embeddings(self, basis, src_embed, dst_embed):
        h = np.concatenate([basis, src_embed, dst_embed], axis=-1)
        h = layers.silu(self.ln1(self.fc1(h)))
        h = layers.silu(self.ln2(self.fc2(h)))
        return self.fc3(h)

    def __call__(self, basis, src_species, dst_species):
        return self.from_embeddings(
            basis, self.src_embed[src_species - 1], self.dst_embed[dst_species - 1]
        )


def radial_function(basis, src_embed, dst_embed, module: RadialFunction):
    """Edge distance embedding from the radial basis and the two species embeddings."""
    return module.from_embeddings(basis, src_embed, dst_embed)


@dataclass
class EdgeContext:
    """Per-edge quantities shared by every layer of one forward pass."""

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    vectors: np.ndarray
    distances: np.ndarray
    rotations: np.ndarray  # (E, 3, 3), R @ r_hat = +y
    wigner: np.ndarray  # packed blocks up to lmax
    basis: np.ndarray  # (E, n_bases)
    src_species: np.ndarray
    dst_species: np.ndarray
    lmax: int

    @classmethod
    def from_graph(cls, graph: AtomGraph, config: ModelConfig) -> "EdgeContext":
        z = graph.structure.species
        if graph.num_edges:
            R, packed = edge_wigner(graph.vectors, config.lmax)
            basis = gaussian_radial_basis(graph.distances, config.num_radial_bases, config.cutoff)
        else:
            R = np.zeros((0, 3, 3))
            packed = np.zeros((0, int(so3.wigner_offsets(config.lmax)[-1])))
            basis = np.zeros((0, config.num_radial_bases))
        return cls(
            graph.num_nodes, graph.src, graph.dst, graph.vectors, graph.distances, R, packed,
            basis, z[graph.src], z[graph.dst], config.lmax,
        )

    @property
    def num_edges(self) -> int:
        return self.src.shape[0]

    def to_edge_frame(self, x):
        return kernels.rotate(x, self.wigner, self.lmax)

    def from_edge_frame(self, x):
        return kernels.rotate(x, self.wigner, self.lmax, transpose=True)

    def scatter(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.num_nodes,) + values.shape[1:])
        np.add.at(out, self.dst, values)
        return out


def segment_softmax(logits: np.ndarray, segments: np.ndarray, num_segments: int) -> np.ndarray:
    """Softmax of ``logits`` (E, H) over edges sharing the same segment id."""
    peak = np.full((num_segments,) + logits.shape[1:], -np.inf)
    np.maximum.at(peak, segments, logits)
    ez = np.exp(logits - peak[segments])
    total = np.zeros_like(peak)
    np.add.at(total, segments, ez)
    return ez / total[segments]


# --------------------------------------------------------------------------
# blocks
# --------------------------------------------------------------------------


class AtomEmbedding(Module):
    def __init__(self, num_species, channels, lmax, rng):
        super().__init__()
        self.lmax = lmax
        self.table = self.param("table", rng.normal(size=(num_species, channels)))

    def __call__(self, species):
        out = np.zeros((len(species), (self.lmax + 1) ** 2, self.table.shape[1]))
        out[:, 0, :] = self.table[np.asarray(species) - 1]
        return out


class EdgeDegreeEmbedding(Module):
    """SO(2) linear map of the edge's species pair, scaled by the distance embedding, rotated back and summed."""

    def __init__(self, config: ModelConfig, rng):
        super().__init__()
        c = config.d_embed
        self.src_embed = self.param("src_embed", rng.normal(size=(config.num_species, c)))
        self.dst_embed = self.param("dst_embed", rng.normal(size=(config.num_species, c)))
        self.radial = self.child(
            "radial", RadialFunction(config.num_radial_bases, config.num_species, config.d_edge, c, rng)
        )
        self.so2 = self.child("so2", SO2Linear(0, config.lmax, 0, 2 * c, c, rng))

    def contributions(self, ctx: EdgeContext, distance_embedding=None) -> np.ndarray:
        """Per-edge messages in the global frame, shape ``(E, K, C)``."""
        if distance_embedding is None:
            distance_embedding = self.radial(ctx.basis, ctx.src_species, ctx.dst_species)
        scalars = np.concatenate(
            [self.src_embed[ctx.src_species - 1], self.dst_embed[ctx.dst_species - 1]], axis=-1
        )
        y, _ = self.so2(scalars[:, None, :])
        y = y * distance_embedding[:, None, :]
        return ctx.from_edge_frame(y)

    def __call__(self, ctx: EdgeContext, distance_embedding=None) -> np.ndarray:
        return ctx.scatter(self.contributions(ctx, distance_embedding))


class GraphAttention(Module):
    """Equivariant graph attention with eSCN convolutions and attention re-normalisation."""

    def __init__(self, config: ModelConfig, rng, c_out=None, grid=None):
        super().__init__()
        cfg = config
        self.config = cfg
        c = cfg.d_embed
        self.c_out = c if c_out is None else c_out
        h, da, dv, dh = cfg.num_heads, cfg.d_attn_alpha, cfg.d_attn_value, cfg.d_attn_hidden
        self.grid = grid or layers.S2Grid.from_resolution(cfg.lmax, cfg.grid_resolution)
        self.radial = self.child(
            "radial", RadialFunction(cfg.num_radial_bases, cfg.num_species, cfg.d_edge, 2 * c, rng)
        )
        self.so2_1 = self.child(
            "so2_1", SO2Linear(cfg.lmax, cfg.lmax, cfg.mmax, 2 * c, dh, rng, extra_out=h * da + dh)
        )
        # one LN shared by all heads, one logit vector per head
        self.alpha_norm = self.child("alpha_norm", LayerNorm(da))
        self.alpha_dot = self.param("alpha_dot", rng.uniform(-math.sqrt(3 / da), math.sqrt(3 / da), (h, da)))
        self.so2_2 = self.child("so2_2", SO2Linear(cfg.lmax, cfg.lmax, cfg.mmax, dh, h * dv, rng))
        self.proj = self.child("proj", EquivariantLinear(cfg.lmax, h * dv, self.c_out, rng, bias=False))

    def __call__(self, x: np.ndarray, ctx: EdgeContext, return_state: bool = False):
        cfg = self.config
        h, da, dv = cfg.num_heads, cfg.d_attn_alpha, cfg.d_attn_value
        N = x.shape[0]
        K = x.shape[1]
        if ctx.num_edges == 0:
            out = np.zeros((N, K, self.c_out))
            return (out, {}) if return_state else out
        pair = np.concatenate([x[ctx.dst], x[ctx.src]], axis=-1)
        pair = ctx.to_edge_frame(pair)
        pair = pair * self.radial(ctx.basis, ctx.src_species, ctx.dst_species)[:, None, :]
        f, extra = self.so2_1(pair)

        alpha = extra[:, : h * da].reshape(-1, h, da)
        alpha_ln = self.alpha_norm(alpha)
        logits = np.einsum("ehd,hd->eh", layers.leaky_relu(alpha_ln, LEAKY_SLOPE), self.alpha_dot)
        weights = segment_softmax(logits, ctx.dst, N)

        value = layers.separable_s2_activation(extra[:, h * da :], f, layers.silu, self.grid)
        value, _ = self.so2_2(value)
        E = value.shape[0]
        msg = (value.reshape(E, K, h, dv) * weights[:, None, :, None]).reshape(E, K, h * dv)
        msg = ctx.from_edge_frame(msg)
        out = self.proj(ctx.scatter(msg))
        if return_state:
            return out, {"alpha_ln": alpha_ln, "logits": logits, "weights": weights}
        return out


class SphereMLP(Module):
    """Pointwise function on sphere samples: Linear, SiLU, Linear, SiLU, Linear."""

    def __init__(self, channels, rng):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(channels, channels, rng))
        self.fc2 = self.child("fc2", Linear(channels, channels, rng))
        self.fc3 = self.child("fc3", Linear(channels, channels, rng))

    def __call__(self, s):
        return self.fc3(layers.silu(self.fc2(layers.silu(self.fc1(s)))))


class FeedForward(Module):
    """Linear -> separable S2 activation (F = sphere MLP) -> linear."""

    def __init__(self, lmax, c_in, d_ffn, c_out, rng, grid):
        super().__init__()
        self.grid = grid
        self.lin1 = self.child("lin1", EquivariantLinear(lmax, c_in, d_ffn, rng, extra_scalars=d_ffn))
        self.mlp = self.child("mlp", SphereMLP(d_ffn, rng))
        self.lin2 = self.child("lin2", EquivariantLinear(lmax, d_ffn, c_out, rng))

    def __call__(self, x):
        y, gate_scalars = self.lin1(x)
        y = layers.separable_s2_activation(gate_scalars, y, self.mlp, self.grid)
        return self.lin2(y)


class TransformerBlock(Module):
    def __init__(self, config: ModelConfig, rng, grid):
        super().__init__()
        cfg = config
        self.norm1 = self.child("norm1", SeparableLayerNorm(cfg.lmax, cfg.d_embed))
        self.attn = self.child("attn", GraphAttention(cfg, rng, grid=grid))
        self.norm2 = self.child("norm2", SeparableLayerNorm(cfg.lmax, cfg.d_embed))
        self.ffn = self.child("ffn", FeedForward(cfg.lmax, cfg.d_embed, cfg.d_ffn, cfg.d_embed, rng, grid))

    def __call__(self, x, ctx: EdgeContext):
        x = x + self.attn(self.norm1(x), ctx)
        return x + self.ffn(self.norm2(x))


class EquiformerV2(Module):
    def __init__(self, config: ModelConfig | None = None, seed: int | None = 0):
        super().__init__()
        cfg = ModelConfig() if config is None else config
        self.config = cfg
        rng = np.random.default_rng(seed)
        self.grid = layers.S2Grid.from_resolution(cfg.lmax, cfg.grid_resolution)
        self.atom_embed = self.child("atom_embed", AtomEmbedding(cfg.num_species, cfg.d_embed, cfg.lmax, rng))
        self.edge_embed = self.child("edge_embed", EdgeDegreeEmbedding(cfg, rng))
        self.blocks = [
            self.child(f"blocks.{i}", TransformerBlock(cfg, rng, self.grid)) for i in range(cfg.num_blocks)
        ]
        self.norm = self.child("norm", SeparableLayerNorm(cfg.lmax, cfg.d_embed))
        self.energy_head = self.child(
            "energy_head", FeedForward(cfg.lmax, cfg.d_embed, cfg.d_ffn, 1, rng, self.grid)
        )
        self.force_head = self.child("force_head", GraphAttention(cfg, rng, c_out=1, grid=self.grid))

    def context(self, graph: AtomGraph) -> EdgeContext:
        return EdgeContext.from_graph(graph, self.config)

    def embed(self, ctx: EdgeContext, species) -> np.ndarray:
        return self.atom_embed(species) + self.edge_embed(ctx)

    def node_features(self, graph: AtomGraph, num_blocks: int | None = None) -> np.ndarray:
        """Node features after ``num_blocks`` Transformer blocks (all by default), before the final norm."""
        ctx = self.context(graph)
        x = self.embed(ctx, graph.structure.species)
        for block in self.blocks[: num_blocks if num_blocks is not None else len(self.blocks)]:
            x = block(x, ctx)
        return x

    def forward(self, graph: AtomGraph) -> tuple[float, np.ndarray]:
        """Energy (eV) and per-atom forces (eV/A) for a prepared graph."""
        ctx = self.context(graph)
        x = self.embed(ctx, graph.structure.species)
        for block in self.blocks:
            x = block(x, ctx)
        x = self.norm(x)
        energy = float(self.energy_head(x)[:, 0, 0].sum())
        forces = self.force_head(x, ctx)[:, 1:4, 0].copy()
        return energy, forces

    def predict(self, structure: AtomicStructure) -> tuple[float, np.ndarray]:
        graph = build_graph(structure, self.config.cutoff, self.config.max_neighbors)
        return self.forward(graph)

    __call__ = forward


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(model: EquiformerV2, path) -> None:
    """Write ``<path>`` (JSON manifest) and ``<path>.bin`` (little-endian float64 tensors)."""
    path = Path(path)
    data_path = path.with_name(path.name + ".bin")
    tensors = []
    offset = 0
    with open(data_path, "wb") as fh:
        for name, value in model.named_parameters():
            raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
            fh.write(raw)
            tensors.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    manifest = {
        "format": "equikernel-checkpoint",
        "layout_version": CHECKPOINT_LAYOUT_VERSION,
        "dtype": "<f8",
        "data_file": data_path.name,
        "config": model.config.to_dict(),
        "tensors": tensors,
    }
    path.write_text(json.dumps(manifest, indent=1) + "\n")


def load_checkpoint(path, config: ModelConfig | None = None) -> EquiformerV2:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("layout_version") != CHECKPOINT_LAYOUT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint layout {manifest.get('layout_version')}")
    stored = ModelConfig.from_dict(manifest["config"])
    if config is not None and config != stored:
        raise ConfigurationError("checkpoint config differs from the requested config")
    raw = (path.parent / manifest["data_file"]).read_bytes()
    model = EquiformerV2(stored, seed=None)
    state = {}
    for t in manifest["tensors"]:
        buf = raw[t["offset"] : t["offset"] + t["nbytes"]]
        state[t["name"]] = np.frombuffer(buf, dtype="<f8").reshape(t["shape"])
    model.load_state_dict(state)
    return model
