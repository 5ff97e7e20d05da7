"""Exact leave-one-out error for kernel regression with NTK, NNGP and random-feature kernels."""

__version__ = "0.1.0"

from .dataio import Dataset, NoiseSpec, load_csv, load_feature_matrix, randomize_labels, synth_blobs
from .errors import (
    ConfigError,
    ConsistencyError,
    DomainError,
    LooKernelError,
    ParseError,
    SingularityError,
)
from .kernels import KernelMatrix, KernelSpec, gram, linear_kernel, nngp_kernel, ntk_kernel, rank_of
from .loo import LooReport, brute_force_loo, loo_binary, loo_noisy, loo_regularized, loo_zero_reg
from .regression import EigenDecomposition, RidgeModel, eigendecompose, eval_metrics, fit, predict

__all__ = [
    "ConfigError",
    "ConsistencyError",
    "Dataset",
    "DomainError",
    "EigenDecomposition",
    "KernelMatrix",
    "KernelSpec",
    "LooKernelError",
    "LooReport",
    "NoiseSpec",
    "ParseError",
    "RidgeModel",
    "SingularityError",
    "brute_force_loo",
    "eigendecompose",
    "eval_metrics",
    "fit",
    "gram",
    "linear_kernel",
    "load_csv",
    "load_feature_matrix",
    "loo_binary",
    "loo_noisy",
    "loo_regularized",
    "loo_zero_reg",
    "nngp_kernel",
    "ntk_kernel",
    "predict",
    "randomize_labels",
    "rank_of",
    "synth_blobs",
]
