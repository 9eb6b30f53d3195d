"""Kernel cross-view collaborative representation for person re-identification.

Submodules
----------
kernels     Gram matrices (linear, RBF, exponential chi-squared) and bandwidths.
xcrc        The Kernel X-CRC coder: fit, per-pair coding, batched ranking.
baselines   SRC, CRC, C2RC and Kernel C2RC.
subspace    XQDA projection, KISSME and Mahalanobis metrics.
data        Feature files, view pairing, normalization, synthetic data.
evaluation  Splits, CMC curves, repeated trials, lambda tuning.
cli         ``kxcrc synth|tune|eval|rank``.
"""
from .kernels import KernelSpec, gram, median_bandwidth
from .xcrc import (CodingPair, DegenerateCodingError, IllConditionedError, SolverConfig,
                   TrainedSolver, code_pair, fit, rank_all, similarity)

__version__ = "0.1.0"

__all__ = [
    "KernelSpec", "gram", "median_bandwidth",
    "CodingPair", "DegenerateCodingError", "IllConditionedError", "SolverConfig",
    "TrainedSolver", "code_pair", "fit", "rank_all", "similarity",
]
