"""Comparison coders: SRC, CRC, C2RC and Kernel C2RC.

Dictionaries passed to :func:`crc_code`, :func:`src_code` and
:func:`direct_rank` hold one atom per column (m x n).  The paired-view
coders :func:`c2rc_code` and :func:`kernel_c2rc_code` take training views
with one sample per row, like :func:`kxcrc.xcrc.fit`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .xcrc import CodingPair, TrainedSolver


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    lam: float = 0.1
    norm: str = "l2"
    l1_max_iters: int = 5000
    l1_tolerance: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"norm must be 'l1' or 'l2', got {self.norm!r}")
        if not self.l1_tolerance > 0:
            raise ValueError("l1_tolerance must be positive")
        if self.l1_max_iters < 1:
            raise ValueError("l1_max_iters must be positive")


@dataclass
class LassoInfo:
    objective: list
    n_iter: int
    converged: bool
    optimality: float


def _check_dict(D, y):
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    if D.ndim != 2:
        raise ValueError(f"dictionary must be m x n, got shape {D.shape}")
    if y.shape[0] != D.shape[0]:
        raise ValueError(f"dimension mismatch: dictionary has {D.shape[0]} rows, target has {y.shape[0]}")
    return D, y


def crc_code(D, y, lam):
    """Collaborative code ``(D^T D + lam I)^-1 D^T y``.

    `y` may be a vector or an m x l matrix of targets (one per column).
    """
    D, y = _check_dict(D, y)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    G = D.T @ D
    G[np.diag_indices_from(G)] += lam
    return linalg.cho_solve(linalg.cho_factor(G), D.T @ y)


def lasso_objective(D, y, alpha, lam):
    r = y - D @ alpha
    return float(r @ r + lam * np.abs(alpha).sum())


def lasso_optimality(D, y, alpha, lam):
    """Largest violation of the subgradient conditions for
    ``|y - D a|^2 + lam |a|_1``.

    With ``c = D^T (y - D a)`` optimality means ``c_i = lam/2 sign(a_i)`` on
    the support and ``|c_i| <= lam/2`` elsewhere.
    """
    c = D.T @ (y - D @ alpha)
    half = lam / 2.0
    on = alpha != 0
    viol = np.where(on, np.abs(c - half * np.sign(alpha)), np.maximum(np.abs(c) - half, 0.0))
    return float(viol.max()) if viol.size else 0.0


def src_code(D, y, config: BaselineConfig, return_info: bool = False):
    """Sparse code minimising ``|y - D a|^2 + lam |a|_1``.

    Monotone FISTA: an accelerated proximal-gradient step is accepted only
    if it does not raise the objective; otherwise the momentum is reset and
    the iterate kept (function-value restart), and the following plain
    proximal-gradient step is always accepted (it cannot increase the
    objective beyond rounding).  Stops once the subgradient
    optimality violation is below ``l1_tolerance``, or the relative
    objective decrease is below ``l1_tolerance`` with the violation within
    ten times that.  Emits a :class:`ConvergenceWarning` when the iteration
    budget runs out.

    `y` may be an m x l matrix, in which case every column is solved
    independently (vectorised) and an n x l matrix is returned.
    """
    D, y = _check_dict(D, y)
    single = y.ndim == 1
    Y = y[:, None] if single else y
    A, infos = _fista(D, Y, config)
    bad = [k for k, info in enumerate(infos) if not info.converged]
    if bad:
        worst = max(infos[k].optimality for k in bad)
        warnings.warn(f"SRC solver did not converge in {config.l1_max_iters} iterations for "
                      f"{len(bad)} target(s) (optimality violation up to {worst:.3g})",
                      ConvergenceWarning, stacklevel=2)
    out = A[:, 0] if single else A
    if return_info:
        return out, (infos[0] if single else infos)
    return out


def _objectives(D, Y, A, lam):
    R = Y - D @ A
    return (R * R).sum(0) + lam * np.abs(A).sum(0)


def _violations(D, Y, A, lam):
    C = D.T @ (Y - D @ A)
    half = lam / 2.0
    V = np.where(A != 0, np.abs(C - half * np.sign(A)), np.maximum(np.abs(C) - half, 0.0))
    return V.max(axis=0) if V.size else np.zeros(Y.shape[1])


def _fista(D, Y, config):
    lam, tol = config.lam, config.l1_tolerance
    n, l = D.shape[1], Y.shape[1]
    X = np.zeros((n, l))
    L = 2.0 * np.linalg.norm(D, 2) ** 2
    f = _objectives(D, Y, X, lam)
    if L == 0:
        return X, [LassoInfo([float(v)], 0, True, 0.0) for v in f]
    step = 1.0 / L
    DtD = D.T @ D
    DtY = D.T @ Y
    Z = X.copy()
    t = np.ones(l)
    plain = np.ones(l, dtype=bool)  # Z == X: next step is an unaccelerated prox step
    opt = _violations(D, Y, X, lam)
    history = [[float(v)] for v in f]
    n_iter = np.zeros(l, dtype=int)
    active = opt > tol
    it = 0
    while active.any() and it < config.l1_max_iters:
        it += 1
        idx = np.flatnonzero(active)
        Xa, Za, ta, fa = X[:, idx], Z[:, idx], t[idx], f[idx]
        U = Za - step * 2.0 * (DtD @ Za - DtY[:, idx])
        cand = np.sign(U) * np.maximum(np.abs(U) - lam * step, 0.0)
        f_cand = _objectives(D, Y[:, idx], cand, lam)
        # a plain prox-gradient step is a descent step in exact arithmetic; accepting it
        # unconditionally keeps progress going once objective changes drop below rounding
        ok = (f_cand <= fa) | plain[idx]
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * ta * ta))
        Z_new = np.where(ok, cand + ((ta - 1.0) / t_next) * (cand - Xa), Xa)
        X_new = np.where(ok, cand, Xa)
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(ok, (fa - f_cand) / np.maximum(np.abs(fa), np.finfo(float).tiny), np.inf)
        X[:, idx] = X_new
        Z[:, idx] = Z_new
        t[idx] = np.where(ok, t_next, 1.0)
        plain[idx] = ~ok
        f[idx] = np.where(ok, f_cand, fa)
        n_iter[idx] = it
        for k in idx:
            history[k].append(float(f[k]))
        opt_a = _violations(D, Y[:, idx], X_new, lam)
        opt[idx] = opt_a
        done = (opt_a <= tol) | ((rel < tol) & (opt_a <= 10 * tol))
        active[idx[done]] = False
    return X, [LassoInfo(history[k], int(n_iter[k]), not active[k], float(opt[k])) for k in range(l)]


def direct_rank(X, y, config: BaselineConfig):
    """Rank gallery columns of `X` (m x l_g) by class residual for probe `y`.

    `y` is coded over the whole gallery (CRC or SRC according to
    ``config.norm``); subject i is scored by ``|y - x_i a_i|``.

    Returns
    -------
    order : array of int
        Gallery indices, smallest residual first (ties by index).
    residuals : array
    """
    X, y = _check_dict(X, y)
    if config.norm == "l2":
        alpha = crc_code(X, y, config.lam)
    else:
        alpha = src_code(X, y, config)
    residuals = np.linalg.norm(y[:, None] - X * alpha[None, :], axis=0)
    return np.argsort(residuals, kind="stable"), residuals


def direct_rank_all(X, Y, config: BaselineConfig):
    """:func:`direct_rank` for every probe; `X` is l_g x m, `Y` is l_p x m (rows are samples).

    Returns the l_p x l_g residual matrix and per-probe orderings.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if config.norm == "l2":
        A = crc_code(X.T, Y.T, config.lam).T  # one factorisation shared by all probes
    else:
        A = src_code(X.T, Y.T, config).T
    # |y - a x|^2 expanded; A[j, i] is probe j's coefficient on gallery column i
    res2 = ((Y * Y).sum(1)[:, None] - 2.0 * A * (Y @ X.T) + A * A * (X * X).sum(1)[None, :])
    res = np.sqrt(np.maximum(res2, 0.0))
    return res, np.argsort(res, axis=1, kind="stable")


def c2rc_code(D_x, D_y, x, y, lam) -> CodingPair:
    """Independent per-camera CRC codes of `x` over D_x and `y` over D_y.

    D_x, D_y are n x m (one training sample per row).
    """
    D_x = np.asarray(D_x, dtype=float)
    D_y = np.asarray(D_y, dtype=float)
    if D_x.shape != D_y.shape:
        raise ValueError(f"paired training views must have equal shapes, got {D_x.shape} and {D_y.shape}")
    return CodingPair(alpha_x=crc_code(D_x.T, x, lam), alpha_y=crc_code(D_y.T, y, lam))


def kernel_c2rc_code(solver: TrainedSolver, x, y) -> CodingPair:
    """Independent kernel ridge codes ``(K + lam I)^-1 k`` on each side."""
    k_x, k_y = solver.kernel_vectors(np.asarray(x, float), np.asarray(y, float))
    return CodingPair(
        alpha_x=linalg.cho_solve(linalg.cho_factor(solver.P_x), k_x),
        alpha_y=linalg.cho_solve(linalg.cho_factor(solver.P_y), k_y),
    )


def _cosines(Ax, Ay):
    """Cosine matrix between probe codes Ay (n x l_p) and gallery codes Ax (n x l_g)."""
    denom = np.linalg.norm(Ay, axis=0)[:, None] * np.linalg.norm(Ax, axis=0)[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = (Ay.T @ Ax) / denom
    sim[denom == 0] = np.nan
    return np.clip(sim, -1.0, 1.0)


def kernel_c2rc_similarity(solver: TrainedSolver, X, Y):
    """Cosine similarities of Kernel C2RC codes, shape (l_p, l_g)."""
    Kx, Ky = solver.kernel_vectors(np.atleast_2d(X), np.atleast_2d(Y))
    Ax = linalg.cho_solve(linalg.cho_factor(solver.P_x), Kx)
    Ay = linalg.cho_solve(linalg.cho_factor(solver.P_y), Ky)
    return _cosines(Ax, Ay)


def c2rc_similarity(D_x, D_y, X, Y, lam):
    """Cosine similarities of linear C2RC codes, shape (l_p, l_g)."""
    Ax = crc_code(np.asarray(D_x, float).T, np.atleast_2d(X).T, lam)
    Ay = crc_code(np.asarray(D_y, float).T, np.atleast_2d(Y).T, lam)
    return _cosines(Ax, Ay)
