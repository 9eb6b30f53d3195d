"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
collected in the "acceptance criteria" section of the terminal summary.
Criterion 10 needs user-supplied VIPeR features: point ``KXCRC_VIPER_CONFIG``
at an eval run config (see README) to enable it.
"""
import csv
import itertools
import json
import os
import time
import warnings

import numpy as np
import pytest

from kxcrc import baselines, cli, data, evaluation, subspace, xcrc
from kxcrc.baselines import BaselineConfig, ConvergenceWarning
from kxcrc.evaluation import MethodSpec, SplitSpec
from kxcrc.kernels import KernelSpec
from kxcrc.xcrc import SolverConfig

from .oracles import cmc_scan, coupled_objective_gd, explicit_xcrc, lasso_cd

KINDS = ("linear", "rbf", "expchi2")


def spec(kind):
    return KernelSpec(kind) if kind != "linear" else KernelSpec("linear")


def draw(rng, kind, shape):
    # expchi2 needs nonnegative features
    return rng.uniform(size=shape) if kind == "expchi2" else rng.normal(size=shape)


def block_system(K_x, K_y, lam):
    n = K_x.shape[0]
    return np.block([[K_x + lam * np.eye(n), -np.eye(n)], [-np.eye(n), K_y + lam * np.eye(n)]])


# --------------------------------------------------------------------- 1


def test_criterion_01_stationarity_suite(criterion):
    with criterion(1, "stationarity residuals <= 1e-8 relative on 100 instances, < 10 s") as out:
        grid = list(itertools.product([5, 20, 50], [4, 16], KINDS, [0.5, 1.0, 2.0, 10.0]))
        t0 = time.perf_counter()
        worst, solved, singular = 0.0, 0, 0
        for i in range(100):
            n, m, kind, lam = grid[i % len(grid)]
            rng = np.random.default_rng(1000 + i)
            D_x, D_y = draw(rng, kind, (n, m)), draw(rng, kind, (n, m))
            x, y = draw(rng, kind, m), draw(rng, kind, m)
            cfg = SolverConfig(lam=lam, kernel_x=spec(kind), kernel_y=spec(kind))
            try:
                s = xcrc.fit(D_x, D_y, cfg)
            except xcrc.IllConditionedError:
                # the stationarity system itself must be singular for the refusal to be correct
                K_x, K_y = D_x @ D_x.T, D_y @ D_y.T
                sv = np.linalg.svd(block_system(K_x, K_y, lam), compute_uv=False)
                assert kind == "linear" and sv[-1] <= 1e-12 * sv[0], (n, m, kind, lam)
                singular += 1
                continue
            pair = xcrc.code_pair(s, x, y)
            k_x, k_y = s.kernel_vectors(x, y)
            r_y, r_x = xcrc.stationarity_residual(s, x, y, pair)
            worst = max(worst, r_y / (1 + np.linalg.norm(k_y)), r_x / (1 + np.linalg.norm(k_x)))
            solved += 1
        elapsed = time.perf_counter() - t0
        out.detail = (f"worst {worst:.1e}; {solved} solved, {singular} refused as exactly singular "
                      "(linear kernel, lambda=1, n>2m)")
        assert worst <= 1e-8
        assert elapsed < 10


# --------------------------------------------------------------------- 2


def test_criterion_02_objective_minimizer_oracle(criterion):
    with criterion(2, "matches gradient-descent minimizer (ridge lambda-1) within 1e-6, < 60 s") as out:
        t0 = time.perf_counter()
        worst = 0.0
        for i in range(20):
            rng = np.random.default_rng(2000 + i)
            kind = KINDS[i % 3]
            lam = (1.5, 2.0, 5.0)[i % 3 if i < 9 else (i // 3) % 3]
            n, m = (5, 10, 20)[i % 3], (3, 8)[i % 2]
            D_x, D_y = draw(rng, kind, (n, m)), draw(rng, kind, (n, m))
            x, y = draw(rng, kind, m), draw(rng, kind, m)
            s = xcrc.fit(D_x, D_y, SolverConfig(lam=lam, kernel_x=spec(kind), kernel_y=spec(kind)))
            pair = xcrc.code_pair(s, x, y)
            k_x, k_y = s.kernel_vectors(x, y)
            a_x, a_y = coupled_objective_gd(s.K_x, s.K_y, k_x, k_y, ridge=lam - 1)
            worst = max(worst, np.abs(pair.alpha_x - a_x).max(), np.abs(pair.alpha_y - a_y).max())
        elapsed = time.perf_counter() - t0
        out.detail = f"worst max-norm gap {worst:.1e}"
        assert worst <= 1e-6
        assert elapsed < 60


# --------------------------------------------------------------------- 3


def test_criterion_03_linear_kernel_equivalence(criterion):
    with criterion(3, "linear Kernel X-CRC = explicit X-CRC (1e-8); Kernel C2RC = C2RC (1e-10)") as out:
        worst_x, worst_c = 0.0, 0.0
        lin = KernelSpec("linear")
        for i in range(20):
            rng = np.random.default_rng(3000 + i)
            n = (3, 5, 8, 12)[i % 4]
            m = n + (0, 4, n)[i % 3]
            lam = (0.5, 1.0, 2.0, 10.0)[(i // 4) % 4]
            D_x, D_y = rng.normal(size=(n, m)), rng.normal(size=(n, m))
            x, y = rng.normal(size=m), rng.normal(size=m)
            s = xcrc.fit(D_x, D_y, SolverConfig(lam=lam, kernel_x=lin, kernel_y=lin))
            pair = xcrc.code_pair(s, x, y)
            a_x, a_y = explicit_xcrc(D_x, D_y, x, y, lam)
            worst_x = max(worst_x, np.abs(pair.alpha_x - a_x).max(), np.abs(pair.alpha_y - a_y).max())
            kc = baselines.kernel_c2rc_code(s, x, y)
            c = baselines.c2rc_code(D_x, D_y, x, y, lam)
            worst_c = max(worst_c, np.abs(kc.alpha_x - c.alpha_x).max(), np.abs(kc.alpha_y - c.alpha_y).max())
        out.detail = f"X-CRC gap {worst_x:.1e}, C2RC gap {worst_c:.1e}"
        assert worst_x <= 1e-8
        assert worst_c <= 1e-10


# --------------------------------------------------------------------- 4


def test_criterion_04_batched_equals_naive(criterion):
    with criterion(4, "batched rank_all = naive double loop (exact ranking, 1e-10 similarity)") as out:
        worst, instances = 0.0, 0
        for i in range(12):
            rng = np.random.default_rng(4000 + i)
            kind = KINDS[i % 3]
            n, m = (8, 20, 40)[i % 3], (5, 12)[i % 2]
            D_x, D_y = draw(rng, kind, (n, m)), draw(rng, kind, (n, m))
            X, Y = draw(rng, kind, (10, m)), draw(rng, kind, (10, m))
            s = xcrc.fit(D_x, D_y, SolverConfig(lam=(0.7, 1.5, 4.0)[i % 3], kernel_x=spec(kind),
                                                kernel_y=spec(kind)))
            sim, order = xcrc.rank_all(s, X, Y)
            sim_n, order_n = xcrc.rank_all(s, X, Y, naive=True)
            np.testing.assert_array_equal(order, order_n)
            worst = max(worst, np.abs(sim - sim_n).max())
            instances += 1
        out.detail = f"{instances} instances, rankings identical, worst similarity gap {worst:.1e}"
        assert worst <= 1e-10


# --------------------------------------------------------------------- 5

GRIDS = {
    "kernel_xcrc": [1.05, 1.1, 1.2, 1.3, 1.5, 2.0, 3.0, 5.0],
    "kernel_c2rc": [0.01, 0.03, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 3.0],
    "crc_direct": [0.01, 0.1, 1.0],
    "src_direct": [0.01, 0.1, 1.0],
}


def tuned_rank1(ds, name, tuning_seed):
    tune = evaluation.lambda_tune(ds, SplitSpec(seed=tuning_seed), MethodSpec(name), GRIDS[name])
    res = evaluation.run_trials(ds, SplitSpec(), MethodSpec(name, lam=tune.best_lambda), n_trials=10,
                                base_seed=0, exclude_seeds=[tuning_seed])
    return res.mean.rate(1)


def test_criterion_05_baseline_ordering(criterion):
    with criterion(5, "tanh synthetic: Kernel X-CRC >= Kernel C2RC >= CRC; +10pp over CRC/SRC on >= 8/10, < 5 min") as out:
        t0 = time.perf_counter()
        r1 = {name: [] for name in GRIDS}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            for seed in range(10):
                ds = data.synth_generate(data.SynthConfig(n_identities=100, m_dim=20,
                                                          transition="tanh_nonlinear",
                                                          noise_sigma=0.3, seed=seed))
                for name in GRIDS:
                    r1[name].append(tuned_rank1(ds, name, tuning_seed=1000 + seed))
        elapsed = time.perf_counter() - t0
        # seed means are multiples of 1/(50 probes * 10 trials * 10 seeds); compare on that
        # lattice so float summation order cannot flip a tie
        mean = {k: round(float(np.mean(v)) * 5000) for k, v in r1.items()}
        margin = sum(x - max(c, s) >= 0.10 - 1e-12
                     for x, c, s in zip(r1["kernel_xcrc"], r1["crc_direct"], r1["src_direct"]))
        out.detail = ("mean rank-1 " + ", ".join(f"{k} {np.mean(v):.3f}" for k, v in r1.items())
                      + f"; margin seeds {margin}/10; {len(caught)} SRC budget warnings")
        assert mean["kernel_xcrc"] >= mean["kernel_c2rc"] >= mean["crc_direct"]
        assert margin >= 8
        assert elapsed < 300


# --------------------------------------------------------------------- 6


def test_criterion_06_cmc_correctness(criterion):
    with criterion(6, "CMC = position-scan oracle on 50 sets; monotone; distractors never help") as out:
        for i in range(50):
            rng = np.random.default_rng(6000 + i)
            l_p, l_g = int(rng.integers(1, 30)), int(rng.integers(1, 40))
            R = np.array([rng.permutation(l_g) for _ in range(l_p)])
            truth = rng.integers(0, l_g, size=l_p)
            c = evaluation.cmc(R, truth)
            np.testing.assert_array_equal(c.rates, cmc_scan(R, truth, l_g))
            assert np.all(np.diff(c.rates) >= 0) and c.rate(l_g) == 1.0
        checked = 0
        for i, name in itertools.product(range(6), ("kernel_xcrc", "kernel_c2rc", "cosine", "kissme")):
            ds = data.synth_generate(data.SynthConfig(n_identities=40, m_dim=6, noise_sigma=0.6,
                                                      n_distractors=30, seed=60 + i))
            tr, te = evaluation.split(ds, SplitSpec(seed=i))
            method = MethodSpec(name, lam=1.5)
            with_dis = evaluation.evaluate_split(method, tr, te)[2]
            keep = [k for k, g in enumerate(te.view_b.ids) if g not in set(te.distractor_ids)]
            clean = data.CrossViewDataset(te.view_a, te.view_b.subset(keep))
            without = evaluation.evaluate_split(method, tr, clean)[2]
            assert np.all(with_dis.rates[:len(keep)] <= without.rates)
            checked += 1
        out.detail = f"50 oracle sets exact; distractor invariant on {checked} matcher/split cases"


# --------------------------------------------------------------------- 7


def subgradient_violation(D, y, a, lam):
    g = D.T @ (y - D @ a)
    nz = a != 0
    v = np.where(nz, np.abs(g - lam / 2 * np.sign(a)), np.maximum(np.abs(g) - lam / 2, 0.0))
    return v.max()


def test_criterion_07_src_solver(criterion):
    with criterion(7, "SRC optimality within 10*tol and coordinate-descent agreement 1e-5 on 20 lassos") as out:
        tol = 1e-8
        worst_opt, worst_gap = 0.0, 0.0
        for i in range(20):
            rng = np.random.default_rng(7000 + i)
            m, n = ((30, 12), (20, 30), (50, 50), (15, 8))[i % 4]
            D = rng.normal(size=(m, n))
            truth = np.zeros(n)
            truth[rng.choice(n, 3, replace=False)] = rng.uniform(1, 2, 3) * rng.choice([-1, 1], 3)
            y = D @ truth + 0.05 * rng.normal(size=m)
            lam = float(rng.uniform(0.1, 2.0))
            a, info = baselines.src_code(D, y, BaselineConfig(lam=lam, norm="l1", l1_tolerance=tol,
                                                              l1_max_iters=100_000), return_info=True)
            assert info.converged
            worst_opt = max(worst_opt, subgradient_violation(D, y, a, lam))
            worst_gap = max(worst_gap, np.abs(a - lasso_cd(D, y, lam, tol=1e-10)).max())
        out.detail = f"worst violation {worst_opt:.1e} (limit {10 * tol:.0e}), worst gap {worst_gap:.1e}"
        assert worst_opt <= 10 * tol
        assert worst_gap <= 1e-5


# --------------------------------------------------------------------- 8


def test_criterion_08_subspace_suite(criterion):
    with criterion(8, "XQDA residuals <= 1e-8; KISSME diagonal example exact, dense oracle 1e-10") as out:
        worst_res = 0.0
        for i in range(5):
            rng = np.random.default_rng(8000 + i)
            n, m = 30, (4, 6, 8, 10, 12)[i]
            D_x, D_y = rng.normal(size=(n, m)), rng.normal(size=(n, m))
            model = subspace.fit_xqda(D_x, D_y, dim=m, max_extra=n * (n - 1))
            intra = D_x - D_y
            extra = np.array([D_x[a] - D_y[b] for a in range(n) for b in range(n) if a != b])
            S_I = intra.T @ intra / n + 1e-3 * np.eye(m)
            S_E = extra.T @ extra / len(extra)
            for mu, v in zip(model.eigenvalues, model.projection.T):
                worst_res = max(worst_res, np.linalg.norm(S_E @ v - mu * S_I @ v) / np.linalg.norm(v))
            assert np.all(np.diff(model.eigenvalues) <= 0)
        diag = subspace.kissme_from_covariances(np.diag([1.0, 4.0]), np.diag([4.0, 1.0])).M
        np.testing.assert_array_equal(diag, np.diag([0.75, 0.0]))
        rng = np.random.default_rng(8100)
        sim, dis = rng.normal(size=(300, 5)), 2.5 * rng.normal(size=(300, 5))
        C_s, C_d = sim.T @ sim / 300, dis.T @ dis / 300
        expected = np.linalg.inv(C_s) - np.linalg.inv(C_d)
        gap = np.abs(subspace.fit_kissme(sim, dis).M - expected).max()
        out.detail = f"worst XQDA residual {worst_res:.1e}; KISSME dense gap {gap:.1e}"
        assert worst_res <= 1e-8
        assert np.linalg.eigvalsh(expected).min() > 0  # clipping inactive, so pre-clip values compare
        assert gap <= 1e-10


# --------------------------------------------------------------------- 9


def test_criterion_09_performance(criterion):
    with criterion(9, "rank_all at n=316, l_p=l_g=316 under 5 s") as out:
        rng = np.random.default_rng(9000)
        n, m = 316, 600
        D_x, D_y = rng.normal(size=(n, m)), rng.normal(size=(n, m))
        X, Y = rng.normal(size=(316, m)), rng.normal(size=(316, m))
        cfg = SolverConfig(lam=1.5, kernel_x=KernelSpec("rbf"), kernel_y=KernelSpec("rbf"))
        t0 = time.perf_counter()
        s = xcrc.fit(D_x, D_y, cfg)
        t1 = time.perf_counter()
        sim, order = xcrc.rank_all(s, X, Y)
        t2 = time.perf_counter()
        out.detail = f"rank_all {t2 - t1:.2f}s (fit {t1 - t0:.2f}s), m={m}"
        assert sim.shape == (316, 316) and order.shape == (316, 316)
        assert t2 - t1 < 5.0


# -------------------------------------------------------------------- 10


def test_criterion_10_viper_reproduction(criterion, tmp_path):
    with criterion(10, "optional: VIPeR rank-1 within 2 pp of 51.6% (10 trials)") as out:
        cfg_path = os.environ.get("KXCRC_VIPER_CONFIG")
        if not cfg_path:
            pytest.skip("KXCRC_VIPER_CONFIG not set; user-supplied VIPeR features required")
        code = cli.main(["eval", "-c", cfg_path, "--trials", "10", "--out", str(tmp_path)])
        assert code == 0
        with open(tmp_path / "cmc.csv") as fh:
            rank1 = float(next(csv.DictReader(fh))["mean_rate"])
        lam = json.loads((tmp_path / "run_manifest.json").read_text())["method"]["lam"]
        out.detail = f"rank-1 {100 * rank1:.1f}% (lambda {lam:g})"
        assert abs(rank1 - 0.516) <= 0.02
