"""Cross-view subspace and metric learners.

* :func:`fit_xqda` -- cross-view quadratic discriminant projection learned
  from intra-person and extra-person difference covariances.
* :func:`fit_kissme` -- KISSME metric ``inv(S_sim) - inv(S_dis)`` clipped
  to the PSD cone.
* :func:`fit_mahalanobis` -- inverse pooled covariance.
* :func:`metric_distance` -- cosine / Mahalanobis / KISSME distances.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg


@dataclass(frozen=True, eq=False)
class SubspaceModel:
    projection: np.ndarray          # m x r
    metric: Optional[np.ndarray] = None  # r x r
    eigenvalues: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.projection.shape[1]

    def to_json(self) -> str:
        P = self.projection
        d = {"kind": "subspace", "input_dim": P.shape[0], "dim": P.shape[1],
             "projection": P.ravel(order="C").tolist()}
        if self.metric is not None:
            d["metric"] = self.metric.ravel(order="C").tolist()
        if self.eigenvalues is not None:
            d["eigenvalues"] = self.eigenvalues.tolist()
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "SubspaceModel":
        d = json.loads(text)
        m, r = d["input_dim"], d["dim"]
        P = np.asarray(d["projection"], dtype=float).reshape(m, r)
        M = np.asarray(d["metric"], dtype=float).reshape(r, r) if "metric" in d else None
        ev = np.asarray(d["eigenvalues"], dtype=float) if "eigenvalues" in d else None
        return cls(projection=P, metric=M, eigenvalues=ev)


@dataclass(frozen=True, eq=False)
class MetricModel:
    M: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"kind": "metric", "dim": self.M.shape[0],
                           "M": self.M.ravel(order="C").tolist()})

    @classmethod
    def from_json(cls, text: str) -> "MetricModel":
        d = json.loads(text)
        return cls(M=np.asarray(d["M"], dtype=float).reshape(d["dim"], d["dim"]))


def _paired(D_x, D_y):
    D_x = np.asarray(D_x, dtype=float)
    D_y = np.asarray(D_y, dtype=float)
    if D_x.ndim != 2 or D_x.shape != D_y.shape:
        raise ValueError(f"paired views must be n x m with equal shapes, got {D_x.shape} and {D_y.shape}")
    return D_x, D_y


def extra_pairs(n, max_pairs=None, seed=0):
    """Index pairs (i, j), i != j.  Subsampled without replacement to
    `max_pairs` with a fixed seed when there are more than that."""
    total = n * (n - 1)
    if max_pairs is None or total <= max_pairs:
        i, j = np.nonzero(~np.eye(n, dtype=bool))
        return i, j
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=max_pairs, replace=False)
    flat.sort()
    i = flat // (n - 1)
    j = flat % (n - 1)
    j = j + (j >= i)
    return i, j


def difference_sets(D_x, D_y, max_extra=None, seed=0):
    """Intra-person ``x_i - y_i`` and extra-person ``x_i - y_j`` differences (rows)."""
    D_x, D_y = _paired(D_x, D_y)
    n = D_x.shape[0]
    if max_extra is None:
        max_extra = 20 * n
    i, j = extra_pairs(n, max_extra, seed)
    return D_x - D_y, D_x[i] - D_y[j]


def _second_moment(Z):
    return Z.T @ Z / Z.shape[0]


def fit_xqda(D_x, D_y, reg: float = 1e-3, dim: Union[int, None] = None,
             max_extra=None, seed: int = 0) -> SubspaceModel:
    """Learn an XQDA projection from paired training views (rows are samples).

    Projection columns are the leading generalized eigenvectors of
    ``S_E v = mu (S_I + reg I) v``, where S_I and S_E are the second-moment
    matrices of the intra- and extra-person differences.  With ``dim=None``
    every direction with ``mu > 1`` is kept (at least one).  The returned
    metric is ``inv(S_I') - inv(S_E')`` in the projected space.
    """
    D_x, D_y = _paired(D_x, D_y)
    n, m = D_x.shape
    if n < 2:
        raise ValueError("XQDA needs at least 2 training pairs")
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    intra, extra = difference_sets(D_x, D_y, max_extra, seed)
    S_I = _second_moment(intra) + reg * np.eye(m)
    S_E = _second_moment(extra)
    try:
        mu, V = linalg.eigh(S_E, S_I)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "intra-person covariance is singular; use a positive reg") from exc
    mu, V = mu[::-1], V[:, ::-1]
    if dim is None:
        r = max(1, int(np.sum(mu > 1.0)))
    else:
        r = int(dim)
        if not 1 <= r <= m:
            raise ValueError(f"requested {r} dimensions but only {m} eigenvectors are available")
    W = V[:, :r]
    metric = (np.linalg.inv(W.T @ S_I @ W) - np.linalg.inv(W.T @ S_E @ W))
    metric = 0.5 * (metric + metric.T)
    return SubspaceModel(projection=W, metric=metric, eigenvalues=mu[:r].copy())


def project(model: SubspaceModel, S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.shape[-1] != model.projection.shape[0]:
        raise ValueError(f"dimension mismatch: samples have {S.shape[-1]} features, "
                         f"projection expects {model.projection.shape[0]}")
    return S @ model.projection


def psd_clip(M) -> np.ndarray:
    """Nearest PSD matrix: negative eigenvalues set to zero."""
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    out = (V * np.maximum(w, 0.0)) @ V.T
    return 0.5 * (out + out.T)


def kissme_from_covariances(cov_similar, cov_dissimilar) -> MetricModel:
    M = np.linalg.inv(cov_similar) - np.linalg.inv(cov_dissimilar)
    return MetricModel(M=psd_clip(M))


def fit_kissme(similar, dissimilar, reg: float = 0.0) -> MetricModel:
    """KISSME from similar and dissimilar difference vectors (rows).

    Covariances are uncentred second moments of the differences; `reg` is
    added to both diagonals.
    """
    S = np.atleast_2d(np.asarray(similar, dtype=float))
    Dd = np.atleast_2d(np.asarray(dissimilar, dtype=float))
    if S.shape[1] != Dd.shape[1]:
        raise ValueError("similar and dissimilar differences must have the same dimension")
    d = S.shape[1]
    cov_s = _second_moment(S) + reg * np.eye(d)
    cov_d = _second_moment(Dd) + reg * np.eye(d)
    for name, C in (("similar", cov_s), ("dissimilar", cov_d)):
        if np.linalg.matrix_rank(C) < d:
            raise np.linalg.LinAlgError(f"{name}-pair covariance is singular; add regularization")
    return kissme_from_covariances(cov_s, cov_d)


def fit_mahalanobis(samples, reg: float = 0.0) -> MetricModel:
    """Inverse of the covariance of `samples` (rows), optionally ridge-regularized."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    C = np.cov(X, rowvar=False).reshape(X.shape[1], X.shape[1]) + reg * np.eye(X.shape[1])
    M = np.linalg.inv(C)
    return MetricModel(M=0.5 * (M + M.T))


def _metric_matrix(M):
    if M is None:
        return None
    return M.M if isinstance(M, MetricModel) else np.asarray(M, dtype=float)


def metric_distance(kind: str, M, a, b) -> float:
    """Distance between two samples under ``cosine``, ``mahalanobis`` or ``kissme``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input")
    if kind == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            raise ValueError("cosine distance undefined for a zero-norm vector")
        return float(1.0 - (a @ b) / (na * nb))
    if kind in ("mahalanobis", "kissme"):
        M = _metric_matrix(M)
        if M is None:
            raise ValueError(f"{kind} distance requires a metric matrix")
        d = a - b
        return float(d @ M @ d)
    raise ValueError(f"unknown metric kind {kind!r}")


def distance_matrix(kind: str, M, X, Y) -> np.ndarray:
    """Distances between every probe row of `Y` and gallery row of `X`, shape (l_p, l_g)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if kind == "cosine":
        nx = np.linalg.norm(X, axis=1)
        ny = np.linalg.norm(Y, axis=1)
        if np.any(nx == 0) or np.any(ny == 0):
            raise ValueError("cosine distance undefined for a zero-norm vector")
        return 1.0 - (Y @ X.T) / (ny[:, None] * nx[None, :])
    M = _metric_matrix(M)
    if M is None:
        raise ValueError(f"{kind} distance requires a metric matrix")
    YM = Y @ M
    XM = X @ M
    return ((YM * Y).sum(1)[:, None] + (XM * X).sum(1)[None, :] - YM @ X.T - Y @ M.T @ X.T)
