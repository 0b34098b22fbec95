"""SO(3)-equivariant kernels, eSCN convolutions and an EquiformerV2 forward pass in numpy."""

from .escn import SO2LinearWeights, escn_convolution, reparametrize_weights, so2_linear
from .graph import AtomGraph, AtomicStructure, build_graph, format_xyz, parse_xyz
from .irreps import IrrepsLayout, PathWeights, depthwise_tensor_product, equivariant_linear, so3_convolution
from .model import EquiformerV2, ModelConfig, load_checkpoint, save_checkpoint
from .relax import RelaxTrace, relax
from .so3 import alignment_rotation, clebsch_gordan, spherical_harmonics, wigner_d

__version__ = "0.1.0"
