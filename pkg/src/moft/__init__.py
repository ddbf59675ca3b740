"""Orthogonal fine-tuning confined to the principal singular subspace of a
frozen weight matrix, with the supporting linear algebra, geometry checks and
cost models."""
__version__ = "0.1.0"

from ._kernels import BACKEND
from .adapter import LoraAdapter, LoraXsAdapter, Method, MoftAdapter, count_params, mse_loss
from .budget import LayerConfig, MemoryEstimate, act_base, act_method, compare
from .cayley import CayleyParams, cayley_backward, cayley_forward, materialize_Q
from .errors import (
    DegenerateColumn, Diverged, FormatError, InvalidBasis, InvalidInput, InvalidRank,
    InvalidRotation, MoftError, NumericalFailure, Overflow, RankDeficientWarning, ShapeError,
)
from .geometry import check_preservation, hyperspherical_energy, pairwise_angles
from .subspace import SubspaceDecomposition, SvdMode, Variant, decompose, embed_full_space, reconstruct
from .tensor import SvdResult, matmul, svd_exact, svd_randomized
from .tensorio import decode_tensor, encode_tensor, read_tensor, write_tensor
from .trainer import PlantedTask, TrainConfig, compare_baselines, generate_task, grad_check, train
