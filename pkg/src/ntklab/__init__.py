"""Empirical neural tangent kernel tools for small fully connected networks."""
__version__ = "0.1.0"

from .estimators import NADTransformer, NTKEigenfunctions, NTKNetworkClassifier
from .kernel import GramMatrix, alignment, alignments, gram, ntk_value, rkhs_norm_empirical
from .nads import NadBasis, nad_basis, stein_check
from .netcore import NetworkSpec, forward, init_params, mixed_jacobian, param_jacobian
from .spectral import EigenSystem, eigendecompose, energy_concentration
from .tasks import Dataset
from .trainer import TrainConfig, TrainRecord, train

__all__ = [
    "Dataset",
    "EigenSystem",
    "GramMatrix",
    "NADTransformer",
    "NTKEigenfunctions",
    "NTKNetworkClassifier",
    "NadBasis",
    "NetworkSpec",
    "TrainConfig",
    "TrainRecord",
    "alignment",
    "alignments",
    "eigendecompose",
    "energy_concentration",
    "forward",
    "gram",
    "init_params",
    "mixed_jacobian",
    "nad_basis",
    "ntk_value",
    "param_jacobian",
    "rkhs_norm_empirical",
    "stein_check",
    "train",
]
