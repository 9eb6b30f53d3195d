"""Kernel cross-view collaborative representation (Kernel X-CRC).

A probe ``y`` (camera A) and a gallery sample ``x`` (camera B) are coded
jointly over the paired training sets ``D_y`` and ``D_x``.  The coding
vectors minimise the two kernel-space reconstruction errors plus a ridge
penalty and a coupling term ``|alpha_y - alpha_x|^2``, which leads to the
stationarity system

    P_y alpha_y - alpha_x = k_y,      P_x alpha_x - alpha_y = k_x,

with ``P = K + lam I`` and ``k`` the kernel vector of the query against the
training samples.  Eliminating one unknown gives closed forms in terms of
``Q = I - P_y^-1 P_x^-1`` and ``W = I - P_x^-1 P_y^-1``; everything that does
not depend on the query is folded into four n x n operators at fit time.

Training matrices are stored with one sample per row (n x m), row ``i`` of
``D_x`` and ``D_y`` describing the same subject.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .kernels import KernelSpec, gram


class IllConditionedError(np.linalg.LinAlgError):
    """The coupling matrix Q or W is numerically singular."""


class DegenerateCodingError(ValueError):
    """A coding vector has zero norm, so its cosine similarity is undefined."""


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 1.0
    kernel_x: KernelSpec = field(default_factory=KernelSpec)
    kernel_y: KernelSpec = field(default_factory=KernelSpec)
    condition_limit: float = 1e-12

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not 0 < self.condition_limit < 1:
            raise ValueError(f"condition_limit must lie in (0, 1), got {self.condition_limit}")


@dataclass(frozen=True)
class CodingPair:
    alpha_x: np.ndarray
    alpha_y: np.ndarray


@dataclass(frozen=True, eq=False)
class TrainedSolver:
    """Fitted state; immutable after :func:`fit`.

    ``kernel_x``/``kernel_y`` are the resolved specs (numeric bandwidths),
    frozen from the training data.
    """

    D_x: np.ndarray
    D_y: np.ndarray
    K_x: np.ndarray
    K_y: np.ndarray
    P_x: np.ndarray
    P_y: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    beta_xx: np.ndarray
    beta_xy: np.ndarray
    beta_yy: np.ndarray
    beta_yx: np.ndarray
    kernel_x: KernelSpec
    kernel_y: KernelSpec
    config: SolverConfig
    rcond_Q: float = float("nan")
    rcond_W: float = float("nan")

    @property
    def n(self) -> int:
        return self.D_x.shape[0]

    @property
    def m(self) -> int:
        return self.D_x.shape[1]

    @property
    def lam(self) -> float:
        return self.config.lam

    def kernel_vectors(self, x, y):
        """Return (k_x, k_y): kernel values of x against D_x and y against D_y.

        `x` and `y` may be single vectors (giving length-n results) or
        sample matrices (giving n x l results, one column per sample).
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        for name, v in (("x", x), ("y", y)):
            if v.shape[-1] != self.m:
                raise ValueError(f"dimension mismatch: {name} has {v.shape[-1]} features, training data has {self.m}")
        k_x = gram(self.D_x, x, self.kernel_x)
        k_y = gram(self.D_y, y, self.kernel_y)
        if x.ndim == 1:
            k_x = k_x[:, 0]
        if y.ndim == 1:
            k_y = k_y[:, 0]
        return k_x, k_y


def _check_features(D, name):
    D = np.asarray(D, dtype=float)
    if D.ndim != 2:
        raise ValueError(f"{name} must be an n x m matrix, got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise ValueError(f"{name} contains non-finite features")
    return D


def _lu_with_rcond(A):
    with warnings.catch_warnings():
        # exact singularity is reported through rcond below
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        lu_piv = linalg.lu_factor(A, check_finite=False)
    anorm = np.linalg.norm(A, 1)
    gecon, = linalg.get_lapack_funcs(("gecon",), (A,))
    rcond, info = gecon(lu_piv[0], anorm, norm="1")
    if info != 0:
        raise np.linalg.LinAlgError(f"gecon failed with info={info}")
    return lu_piv, float(rcond)


def fit(D_x, D_y, config: SolverConfig | None = None) -> TrainedSolver:
    """Precompute everything the coder needs from the paired training views.

    Parameters
    ----------
    D_x, D_y : array, shape (n, m)
        Training features from the gallery camera (x) and probe camera (y);
        row i of both belongs to the same subject.
    config : SolverConfig

    Raises
    ------
    IllConditionedError
        If the reciprocal condition number of Q or W is below
        ``config.condition_limit``.
    """
    config = config or SolverConfig()
    D_x = _check_features(D_x, "D_x")
    D_y = _check_features(D_y, "D_y")
    if D_x.shape != D_y.shape:
        raise ValueError(f"paired training views must have equal shapes, got {D_x.shape} and {D_y.shape}")
    n = D_x.shape[0]
    if n < 1:
        raise ValueError("need at least one training pair")

    kx = config.kernel_x.resolve(D_x) if n >= 2 else _fallback(config.kernel_x)
    ky = config.kernel_y.resolve(D_y) if n >= 2 else _fallback(config.kernel_y)
    K_x = gram(D_x, D_x, kx)
    K_y = gram(D_y, D_y, ky)
    eye = np.eye(n)
    P_x = K_x + config.lam * eye
    P_y = K_y + config.lam * eye

    Px_inv = linalg.cho_solve(linalg.cho_factor(P_x, lower=True), eye)
    Py_inv = linalg.cho_solve(linalg.cho_factor(P_y, lower=True), eye)
    Py_inv_Px_inv = Py_inv @ Px_inv
    Px_inv_Py_inv = Px_inv @ Py_inv
    Q = eye - Py_inv_Px_inv
    W = eye - Px_inv_Py_inv

    Q_lu, rcond_Q = _lu_with_rcond(Q)
    if rcond_Q < config.condition_limit:
        raise IllConditionedError(
            f"ill-conditioned coupling: Q has reciprocal condition {rcond_Q:.3g} < {config.condition_limit:g}")
    W_lu, rcond_W = _lu_with_rcond(W)
    if rcond_W < config.condition_limit:
        raise IllConditionedError(
            f"ill-conditioned coupling: W has reciprocal condition {rcond_W:.3g} < {config.condition_limit:g}")

    return TrainedSolver(
        D_x=D_x, D_y=D_y, K_x=K_x, K_y=K_y, P_x=P_x, P_y=P_y, Q=Q, W=W,
        beta_xx=linalg.lu_solve(W_lu, Px_inv),
        beta_xy=linalg.lu_solve(W_lu, Px_inv_Py_inv),
        beta_yy=linalg.lu_solve(Q_lu, Py_inv),
        beta_yx=linalg.lu_solve(Q_lu, Py_inv_Px_inv),
        kernel_x=kx, kernel_y=ky, config=config,
        rcond_Q=rcond_Q, rcond_W=rcond_W,
    )


def _fallback(spec):
    # a single training sample has no pairwise distances to take a median of
    return spec if spec.is_resolved else KernelSpec(spec.kind, 1.0)


def code_pair(solver: TrainedSolver, x, y, coupled: bool = True) -> CodingPair:
    """Coding vectors of gallery sample `x` and probe `y`.

    With ``coupled=False`` the coupling term is dropped and each side is an
    independent kernel ridge code ``(K + lam I)^-1 k``; this reproduces
    Kernel C2RC and exists for diagnostics.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("code_pair expects single feature vectors")
    k_x, k_y = solver.kernel_vectors(x, y)
    if not coupled:
        return CodingPair(alpha_x=np.linalg.solve(solver.P_x, k_x),
                          alpha_y=np.linalg.solve(solver.P_y, k_y))
    alpha_x = solver.beta_xx @ k_x + solver.beta_xy @ k_y
    alpha_y = solver.beta_yx @ k_x + solver.beta_yy @ k_y
    return CodingPair(alpha_x=alpha_x, alpha_y=alpha_y)


def similarity(pair: CodingPair) -> float:
    """Cosine between the two coding vectors."""
    nx = np.linalg.norm(pair.alpha_x)
    ny = np.linalg.norm(pair.alpha_y)
    if nx == 0 or ny == 0:
        raise DegenerateCodingError("degenerate coding: zero-norm coding vector")
    c = float(pair.alpha_x @ pair.alpha_y) / (nx * ny)
    return min(1.0, max(-1.0, c))


def stationarity_residual(solver: TrainedSolver, x, y, pair: CodingPair):
    """Norms of the two stationarity equations evaluated at `pair`.

    Returns ``(r_y, r_x)`` with ``r_y = |P_y a_y - a_x - k_y|`` and
    ``r_x = |P_x a_x - a_y - k_x|``.
    """
    k_x, k_y = solver.kernel_vectors(np.asarray(x, float), np.asarray(y, float))
    a_x = np.asarray(pair.alpha_x, dtype=float)
    a_y = np.asarray(pair.alpha_y, dtype=float)
    if a_x.shape != (solver.n,) or a_y.shape != (solver.n,):
        raise ValueError(f"coding vectors must have length {solver.n}")
    r_y = np.linalg.norm(solver.P_y @ a_y - a_x - k_y)
    r_x = np.linalg.norm(solver.P_x @ a_x - a_y - k_x)
    return float(r_y), float(r_x)


def descending_order(sim) -> np.ndarray:
    """Per-row gallery indices by descending similarity.

    Ties keep ascending gallery index; NaN entries (degenerate pairs) go last.
    """
    sim = np.atleast_2d(np.asarray(sim, dtype=float))
    key = np.where(np.isnan(sim), np.inf, -sim)
    return np.argsort(key, axis=1, kind="stable")


def _cosine_matrix(U, V, A, B):
    """Cosines between alpha_x(i, j) = U_i + V_j and alpha_y(i, j) = A_i + B_j.

    U, A are n x l_g (gallery columns), V, B are n x l_p (probe columns);
    result is l_p x l_g.
    """
    dot = ((U * A).sum(0)[None, :] + V.T @ A + B.T @ U + (V * B).sum(0)[:, None])
    nx2 = (U * U).sum(0)[None, :] + 2.0 * (V.T @ U) + (V * V).sum(0)[:, None]
    ny2 = (A * A).sum(0)[None, :] + 2.0 * (B.T @ A) + (B * B).sum(0)[:, None]
    nx2 = np.maximum(nx2, 0.0)
    ny2 = np.maximum(ny2, 0.0)
    denom = np.sqrt(nx2) * np.sqrt(ny2)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = dot / denom
    sim[denom == 0] = np.nan
    return np.clip(sim, -1.0, 1.0)


def similarity_matrix(solver: TrainedSolver, X, Y, naive: bool = False) -> np.ndarray:
    """All probe/gallery cosine similarities, shape (l_p, l_g).

    By default the pairs are never materialised: alpha_x for pair (i, j) is
    a gallery term plus a probe term, and likewise alpha_y, so the inner
    products and norms reduce to products of four n x l matrices.  With
    ``naive=True`` the explicit double loop over pairs is used instead.
    Degenerate pairs are reported as NaN.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] < 1 or Y.shape[0] < 1:
        raise ValueError("gallery and probe sets must be non-empty")
    if naive:
        sim = np.empty((Y.shape[0], X.shape[0]))
        for j, y in enumerate(Y):
            for i, x in enumerate(X):
                try:
                    sim[j, i] = similarity(code_pair(solver, x, y))
                except DegenerateCodingError:
                    sim[j, i] = np.nan
        return sim
    Kx, Ky = solver.kernel_vectors(X, Y)
    return _cosine_matrix(solver.beta_xx @ Kx, solver.beta_xy @ Ky,
                          solver.beta_yx @ Kx, solver.beta_yy @ Ky)


def rank_all(solver: TrainedSolver, X, Y, naive: bool = False):
    """Rank gallery `X` (l_g x m) for every probe in `Y` (l_p x m).

    Returns
    -------
    sim : array, shape (l_p, l_g)
        ``sim[j, i]`` is the cosine similarity of the codes of (x_i, y_j).
    order : array of int, shape (l_p, l_g)
        Gallery indices per probe, most similar first.
    """
    sim = similarity_matrix(solver, X, Y, naive=naive)
    dead = np.flatnonzero(np.all(np.isnan(sim), axis=1))
    if dead.size:
        raise DegenerateCodingError(f"degenerate coding for every gallery pairing of probe(s) {dead.tolist()}")
    return sim, descending_order(sim)
