"""Kernel functions and Gram matrices.

Three kernels are supported: ``linear`` (plain dot product), ``rbf``
(Gaussian) and ``expchi2`` (exponential chi-squared, for nonnegative
histogram-like features).  Bandwidths may be given explicitly or set to
``"auto"``, in which case the median heuristic is applied to the training
samples when a model is fitted.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.spatial.distance import pdist

KINDS = ("linear", "rbf", "expchi2")

# rbf/expchi2 materialise an (rows, n', m) block; keep it around this many floats
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind plus bandwidth (sigma, or ``"auto"``)."""

    kind: str = "rbf"
    bandwidth: Union[float, str] = "auto"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "auto":
                raise ValueError(f"bandwidth must be a positive number or 'auto', got {self.bandwidth!r}")
        elif not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")

    @property
    def is_resolved(self) -> bool:
        return self.kind == "linear" or not isinstance(self.bandwidth, str)

    def resolve(self, A) -> "KernelSpec":
        """Return a copy with ``"auto"`` replaced by the median bandwidth of `A`."""
        if self.is_resolved:
            return self
        return replace(self, bandwidth=median_bandwidth(A, self.kind))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d) -> "KernelSpec":
        if isinstance(d, KernelSpec):
            return d
        return cls(kind=d.get("kind", "rbf"), bandwidth=d.get("bandwidth", "auto"))


def _as_samples(A, name):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2:
        raise ValueError(f"{name} must be a 2-d sample matrix, got shape {A.shape}")
    return A


def _check_nonnegative(A, name):
    if np.any(A < 0):
        raise ValueError(f"expchi2 kernel requires nonnegative entries; {name} has negative values")


def chi2_distances(A, B) -> np.ndarray:
    """Pairwise chi-squared distances sum_d (a_d - b_d)^2 / (a_d + b_d).

    Coordinates where a_d + b_d == 0 contribute nothing.
    """
    A = _as_samples(A, "A")
    B = _as_samples(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} features")
    _check_nonnegative(A, "A")
    _check_nonnegative(B, "B")
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, _CHUNK_ELEMENTS // max(1, B.shape[0] * A.shape[1]))
    for start in range(0, A.shape[0], step):
        a = A[start:start + step, None, :]
        num = (a - B[None, :, :]) ** 2
        den = a + B[None, :, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            terms = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        out[start:start + step] = terms.sum(axis=2)
    return out


def sq_euclidean_distances(A, B) -> np.ndarray:
    """Pairwise squared Euclidean distances, summed from explicit differences.

    The expanded ``|a|^2 + |b|^2 - 2ab`` form is avoided so that the result
    is exactly symmetric under swapping `A` and `B` and never negative.
    """
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, _CHUNK_ELEMENTS // max(1, B.shape[0] * A.shape[1]))
    for start in range(0, A.shape[0], step):
        diff = A[start:start + step, None, :] - B[None, :, :]
        out[start:start + step] = (diff * diff).sum(axis=2)
    return out


def gram(A, B, spec: KernelSpec) -> np.ndarray:
    """Kernel matrix with entry (i, j) = k(A[i], B[j]).

    `A` is n x m and `B` is n' x m (rows are samples); a 1-d input is
    treated as a single sample.  `spec` must have a numeric bandwidth for
    the rbf and expchi2 kernels (call ``spec.resolve`` first).
    """
    A = _as_samples(A, "A")
    B = _as_samples(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} features")
    if spec.kind == "linear":
        return A @ B.T
    if not spec.is_resolved:
        raise ValueError("kernel bandwidth is 'auto'; resolve it on training data first")
    two_s2 = 2.0 * float(spec.bandwidth) ** 2
    if spec.kind == "rbf":
        return np.exp(-sq_euclidean_distances(A, B) / two_s2)
    return np.exp(-chi2_distances(A, B) / two_s2)


def median_bandwidth(A, kind: str = "rbf") -> float:
    """Median heuristic: sigma with 2 sigma^2 = median pairwise distance.

    Distances are squared Euclidean for ``rbf`` and chi-squared for
    ``expchi2``, taken over distinct pairs of rows.  Returns 1.0 when the
    median is zero.
    """
    A = _as_samples(A, "A")
    if A.shape[0] < 2:
        raise ValueError("median bandwidth needs at least 2 samples")
    if kind == "expchi2":
        D = chi2_distances(A, A)
        d = D[np.triu_indices(A.shape[0], k=1)]
    elif kind in ("rbf", "linear"):
        d = pdist(A, "sqeuclidean")
    else:
        raise ValueError(f"unknown kernel kind {kind!r}")
    med = float(np.median(d))
    if not med > 0:
        return 1.0
    return float(np.sqrt(med / 2.0))
