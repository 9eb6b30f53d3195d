"""Evaluation protocol: random identity splits, matcher pipelines, CMC curves,
repeated trials and single-partition lambda tuning.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import baselines, subspace, xcrc
from .data import CrossViewDataset, SampleSet
from .kernels import KernelSpec

METHODS = ("kernel_xcrc", "xcrc_linear", "kernel_c2rc", "c2rc", "crc_direct",
           "src_direct", "cosine", "mahalanobis", "kissme")


# ------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    train_count: Optional[int] = None
    train_fraction: float = 0.5
    seed: int = 0
    single_shot: bool = True

    def __post_init__(self):
        if self.train_count is None and not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")

    def n_train(self, total: int) -> int:
        k = self.train_count if self.train_count is not None else int(total * self.train_fraction)
        if not 1 <= k < total:
            raise ValueError(f"cannot split {total} identities with {k} for training")
        return k


def _rows_by_id(samples: SampleSet):
    out: Dict[str, list] = {}
    for r, i in enumerate(samples.ids):
        out.setdefault(i, []).append(r)
    return out


def split(dataset: CrossViewDataset, spec: SplitSpec):
    """Identity-disjoint train/test split.

    Paired identities are shuffled with ``spec.seed`` and the first
    ``n_train`` go to training.  With ``single_shot`` one image per identity
    and camera is drawn at random (including distractors); otherwise every
    identity must already have exactly one image per camera.  Distractors
    always go to the test gallery, which is ordered by id.
    """
    rng = np.random.default_rng(spec.seed)
    ids = sorted(dataset.paired_ids)
    if len(ids) < 2:
        raise ValueError("insufficient identities: need at least 2 paired identities")
    k = spec.n_train(len(ids))
    perm = rng.permutation(len(ids))
    train_ids = sorted(ids[p] for p in perm[:k])
    test_ids = sorted(ids[p] for p in perm[k:])
    rows_a = _rows_by_id(dataset.view_a)
    rows_b = _rows_by_id(dataset.view_b)

    def pick(rows, id_list):
        out = []
        for i in id_list:
            rs = rows[i]
            if len(rs) == 1:
                out.append(rs[0])
            elif spec.single_shot:
                out.append(rs[int(rng.integers(len(rs)))])
            else:
                raise ValueError(f"identity {i!r} has {len(rs)} images in one camera; "
                                 "use single_shot=True to sample one")
        return out

    # draw order is fixed (train a, train b, test a, test b, distractors) for reproducibility
    tr_a, tr_b = pick(rows_a, train_ids), pick(rows_b, train_ids)
    te_a, te_b = pick(rows_a, test_ids), pick(rows_b, test_ids)
    dis = sorted(dataset.distractor_ids)
    gallery = te_b + pick(rows_b, dis)
    # gallery sorted by id so index tie-breaks coincide with id tie-breaks
    gallery = [r for _, r in sorted(zip(test_ids + dis, gallery))]
    train = CrossViewDataset(dataset.view_a.subset(tr_a), dataset.view_b.subset(tr_b), [])
    test = CrossViewDataset(dataset.view_a.subset(te_a), dataset.view_b.subset(gallery), dis)
    return train, test


# ---------------------------------------------------------------------- CMC


@dataclass(frozen=True, eq=False)
class CmcCurve:
    """Matching rate at ranks 1..len(rates); ``std`` is across trials."""

    rates: np.ndarray
    std: Optional[np.ndarray] = None
    trials: int = 1

    def rate(self, k: int) -> float:
        if k < 1:
            raise ValueError("rank must be >= 1")
        return float(self.rates[min(k, len(self.rates)) - 1])

    def as_dict(self) -> Dict[int, float]:
        return {k + 1: float(r) for k, r in enumerate(self.rates)}

    def to_csv(self, path) -> None:
        std = self.std if self.std is not None else np.zeros_like(self.rates)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "mean_rate", "std_rate"])
            for k, (r, s) in enumerate(zip(self.rates, std), start=1):
                w.writerow([k, repr(float(r)), repr(float(s))])


def truth_indices(probe_ids: Sequence[str], gallery_ids: Sequence[str]) -> np.ndarray:
    """Index of each probe's true match in the gallery."""
    where = {}
    for g, i in enumerate(gallery_ids):
        where.setdefault(i, g)
    missing = [p for p in probe_ids if p not in where]
    if missing:
        raise ValueError(f"probe(s) without a true match in the gallery: {missing[:5]}")
    return np.array([where[p] for p in probe_ids], dtype=int)


def match_positions(rankings, truth) -> np.ndarray:
    """0-based position of each probe's true match in its ranking."""
    R = np.atleast_2d(np.asarray(rankings))
    t = np.asarray(truth)
    if t.shape != (R.shape[0],):
        raise ValueError("need one true-match index per probe")
    hit = R == t[:, None]
    found = hit.any(axis=1)
    if not found.all():
        raise ValueError(f"probe(s) {np.flatnonzero(~found).tolist()[:5]} have no true match in their ranking")
    return hit.argmax(axis=1)


def cmc(rankings, truth) -> CmcCurve:
    """rate(k) = fraction of probes whose true match is within the top k."""
    R = np.atleast_2d(np.asarray(rankings))
    pos = match_positions(R, truth)
    counts = np.bincount(pos, minlength=R.shape[1])
    return CmcCurve(rates=np.cumsum(counts) / R.shape[0])


# ------------------------------------------------------------------ methods


@dataclass(frozen=True)
class MethodSpec:
    """A matcher pipeline: optional XQDA projection, then a coder or metric.

    ``kernel`` applies to both cameras unless ``kernel_x``/``kernel_y`` is
    given.  ``subspace`` is None or a dict of :func:`fit_xqda` keyword
    arguments (``reg``, ``dim``).
    """

    name: str = "kernel_xcrc"
    lam: float = 1.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    kernel_x: Optional[KernelSpec] = None
    kernel_y: Optional[KernelSpec] = None
    subspace: Optional[dict] = None
    metric_reg: float = 1e-6
    l1_max_iters: int = 5000
    l1_tolerance: float = 1e-8
    condition_limit: float = 1e-12

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; expected one of {METHODS}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("kernel", "kernel_x", "kernel_y"):
            v = getattr(self, k)
            d[k] = v.to_dict() if v is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        d = dict(d)
        for k in ("kernel", "kernel_x", "kernel_y"):
            if d.get(k) is not None:
                d[k] = KernelSpec.from_dict(d[k])
        if "kernel" in d and d["kernel"] is None:
            del d["kernel"]
        return cls(**d)

    def solver_config(self) -> xcrc.SolverConfig:
        if self.name == "xcrc_linear" or self.name == "c2rc":
            kx = ky = KernelSpec("linear")
        else:
            kx = self.kernel_x or self.kernel
            ky = self.kernel_y or self.kernel
        return xcrc.SolverConfig(lam=self.lam, kernel_x=kx, kernel_y=ky,
                                 condition_limit=self.condition_limit)


def score_matrix(method: MethodSpec, train: CrossViewDataset, probes, gallery, naive: bool = False):
    """Fit `method` on `train` and score every (probe, gallery) pair.

    Returns an (l_p, l_g) array where larger means more similar (distances
    and residuals are negated).  Probe features come from camera A and
    gallery features from camera B; training views are paired row by row.
    """
    D_y = train.view_a.features
    D_x = train.view_b.features
    Y = np.atleast_2d(np.asarray(probes, dtype=float))
    X = np.atleast_2d(np.asarray(gallery, dtype=float))
    if method.subspace is not None:
        model = subspace.fit_xqda(D_x, D_y, **method.subspace)
        D_x, D_y = subspace.project(model, D_x), subspace.project(model, D_y)
        X, Y = subspace.project(model, X), subspace.project(model, Y)

    name = method.name
    if name in ("kernel_xcrc", "xcrc_linear"):
        solver = xcrc.fit(D_x, D_y, method.solver_config())
        sim, _ = xcrc.rank_all(solver, X, Y, naive=naive)
        return sim
    if name == "kernel_c2rc":
        solver = xcrc.fit(D_x, D_y, method.solver_config())
        return baselines.kernel_c2rc_similarity(solver, X, Y)
    if name == "c2rc":
        return baselines.c2rc_similarity(D_x, D_y, X, Y, method.lam)
    if name in ("crc_direct", "src_direct"):
        cfg = baselines.BaselineConfig(lam=method.lam, norm="l2" if name == "crc_direct" else "l1",
                                       l1_max_iters=method.l1_max_iters,
                                       l1_tolerance=method.l1_tolerance)
        res, _ = baselines.direct_rank_all(X, Y, cfg)
        return -res
    if name == "cosine":
        return -subspace.distance_matrix("cosine", None, X, Y)
    if name == "mahalanobis":
        pooled = np.vstack([D_x - D_x.mean(0), D_y - D_y.mean(0)])
        M = subspace.fit_mahalanobis(pooled, reg=method.metric_reg)
        return -subspace.distance_matrix("mahalanobis", M, X, Y)
    # kissme
    similar, dissimilar = subspace.difference_sets(D_x, D_y)
    M = subspace.fit_kissme(similar, dissimilar, reg=method.metric_reg)
    return -subspace.distance_matrix("kissme", M, X, Y)


def evaluate_split(method: MethodSpec, train: CrossViewDataset, test: CrossViewDataset,
                   naive: bool = False):
    """Scores, per-probe rankings and CMC curve on one split."""
    scores = score_matrix(method, train, test.view_a.features, test.view_b.features, naive=naive)
    order = xcrc.descending_order(scores)
    truth = truth_indices(test.view_a.ids, test.view_b.ids)
    return scores, order, cmc(order, truth)


# ------------------------------------------------------------------- trials


@dataclass(frozen=True, eq=False)
class TrialsResult:
    mean: CmcCurve
    curves: List[CmcCurve]
    seeds: List[int]
    timings: List[float]

    def manifest(self, method: MethodSpec, split_spec: SplitSpec, base_seed: int) -> dict:
        return {
            "method": method.to_dict(),
            "split": asdict(split_spec),
            "base_seed": base_seed,
            "n_trials": len(self.curves),
            "seeds": list(self.seeds),
            "timings_sec": list(self.timings),
            "rank1_mean": self.mean.rate(1),
            "rank1_per_trial": [c.rate(1) for c in self.curves],
        }


class TrialError(RuntimeError):
    def __init__(self, trial, seed, exc):
        super().__init__(f"trial {trial} (seed {seed}) failed: {exc}")
        self.trial = trial
        self.seed = seed
        self.__cause__ = exc


def trial_seeds(base_seed: int, n_trials: int, exclude: Sequence[int] = ()) -> List[int]:
    """``base_seed + t`` for consecutive t, skipping excluded seeds."""
    ex = set(exclude)
    out, s = [], base_seed
    while len(out) < n_trials:
        if s not in ex:
            out.append(s)
        s += 1
    return out


def run_trials(dataset: CrossViewDataset, spec: SplitSpec, method: MethodSpec,
               n_trials: int = 10, base_seed: int = 0, exclude_seeds: Sequence[int] = (),
               threads: int = 1, naive: bool = False) -> TrialsResult:
    """Repeat split / fit / rank / CMC with seeds ``base_seed + t``.

    ``spec.seed`` is ignored (each trial supplies its own); seeds listed in
    `exclude_seeds` (e.g. the tuning partition) are skipped.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    seeds = trial_seeds(base_seed, n_trials, exclude_seeds)

    def one(t):
        t0 = time.perf_counter()
        try:
            train, test = split(dataset, replace(spec, seed=seeds[t]))
            curve = evaluate_split(method, train, test, naive=naive)[2]
        except Exception as exc:
            raise TrialError(t, seeds[t], exc) from exc
        return curve, time.perf_counter() - t0

    if threads > 1 and n_trials > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_trials)))
    else:
        results = [one(t) for t in range(n_trials)]
    curves = [r[0] for r in results]
    R = np.vstack([c.rates for c in curves])
    mean = CmcCurve(rates=R.mean(axis=0), std=R.std(axis=0), trials=n_trials)
    return TrialsResult(mean=mean, curves=curves, seeds=seeds, timings=[r[1] for r in results])


# ------------------------------------------------------------------- tuning


@dataclass(frozen=True)
class TuneResult:
    best_lambda: float
    grid: List[float]
    rank1: List[float]
    tuning_seed: int

    def to_dict(self) -> dict:
        return {"grid": list(self.grid),
                "rank1_scores": [None if np.isnan(s) else s for s in self.rank1],
                "chosen_lambda": self.best_lambda, "tuning_seed": self.tuning_seed}


def lambda_tune(dataset: CrossViewDataset, spec: SplitSpec, method: MethodSpec,
                grid: Sequence[float]) -> TuneResult:
    """Pick lambda by rank-1 rate on the single partition ``spec.seed``.

    Candidates that raise (e.g. an ill-conditioned solver) score NaN.  Ties
    go to the larger lambda.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    train, test = split(dataset, spec)
    scores = []
    for lam in grid:
        try:
            scores.append(evaluate_split(replace(method, lam=lam), train, test)[2].rate(1))
        except (np.linalg.LinAlgError, ValueError, ArithmeticError):
            scores.append(float("nan"))
    s = np.array(scores)
    if np.all(np.isnan(s)):
        raise RuntimeError("every lambda candidate failed")
    best = max((v, g) for v, g in zip(s, grid) if not np.isnan(v))[1]
    return TuneResult(best_lambda=best, grid=grid, rank1=scores, tuning_seed=spec.seed)
