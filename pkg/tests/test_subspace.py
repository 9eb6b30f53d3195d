import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from kxcrc import subspace, xcrc
from kxcrc.kernels import KernelSpec
from kxcrc.subspace import MetricModel, SubspaceModel


def all_pair_moments(D_x, D_y):
    """Second moments of intra- and all extra-person differences, by loops."""
    n, m = D_x.shape
    S_I = np.zeros((m, m))
    S_E = np.zeros((m, m))
    for i in range(n):
        d = D_x[i] - D_y[i]
        S_I += np.outer(d, d)
        for j in range(n):
            if i != j:
                e = D_x[i] - D_y[j]
                S_E += np.outer(e, e)
    return S_I / n, S_E / (n * (n - 1))


# -------------------------------------------------------------------- XQDA


def test_xqda_two_groups_align_with_separating_axis(rng):
    # constructed covariances: intra 2s^2 I, extra 2s^2 I + 50 e1 e1^T, so the
    # generalized-eigen oracle gives e1 exactly
    n, m, s = 600, 5, 0.3
    centers = np.zeros((n, m))
    centers[:, 0] = np.where(np.arange(n) % 2 == 0, 5.0, -5.0)
    D_y = centers + s * rng.normal(size=(n, m))
    D_x = centers + s * rng.normal(size=(n, m))
    S_I = 2 * s**2 * np.eye(m)
    S_E = S_I + 50.0 * np.diag([1.0, 0, 0, 0, 0])
    _, V = linalg.eigh(S_E, S_I)
    np.testing.assert_allclose(abs(V[:, -1] / np.linalg.norm(V[:, -1])), np.eye(m)[0], atol=1e-12)
    model = subspace.fit_xqda(D_x, D_y, dim=1)
    w = model.projection[:, 0] / np.linalg.norm(model.projection[:, 0])
    assert abs(w @ V[:, -1]) / np.linalg.norm(V[:, -1]) > 0.99


def test_xqda_large_reg_tends_to_extra_person_eigenvectors(rng):
    D_x, D_y = rng.normal(size=(25, 4)) * [3, 2, 1, 0.5], rng.normal(size=(25, 4))
    model = subspace.fit_xqda(D_x, D_y, reg=1e8, dim=2, max_extra=25 * 24)
    _, S_E = all_pair_moments(D_x, D_y)
    _, V = np.linalg.eigh(S_E)
    for k in range(2):
        w = model.projection[:, k] / np.linalg.norm(model.projection[:, k])
        assert abs(w @ V[:, -1 - k]) > 0.999


def test_xqda_generalized_eigen_residuals(rng):
    D_x, D_y = rng.normal(size=(30, 6)), rng.normal(size=(30, 6))
    reg = 1e-3
    model = subspace.fit_xqda(D_x, D_y, reg=reg, dim=6, max_extra=30 * 29)
    S_I, S_E = all_pair_moments(D_x, D_y)
    S_I = S_I + reg * np.eye(6)
    for mu, v in zip(model.eigenvalues, model.projection.T):
        assert np.linalg.norm(S_E @ v - mu * S_I @ v) <= 1e-8 * np.linalg.norm(v)
    assert np.all(np.diff(model.eigenvalues) <= 0)


def test_xqda_default_keeps_eigenvalues_above_one(rng):
    n = 30
    shared = rng.normal(size=(n, 6)) * [4, 4, 1, 1, 1, 1]
    D_x = shared + 0.5 * rng.normal(size=(n, 6))
    D_y = shared + 0.5 * rng.normal(size=(n, 6))
    model = subspace.fit_xqda(D_x, D_y)
    assert model.dim >= 1
    assert np.all(model.eigenvalues > 1)
    full = subspace.fit_xqda(D_x, D_y, dim=6)
    assert model.dim == int(np.sum(full.eigenvalues > 1))


def test_xqda_metric_matches_projected_moments(rng):
    D_x, D_y = rng.normal(size=(12, 4)), rng.normal(size=(12, 4))
    model = subspace.fit_xqda(D_x, D_y, dim=2, max_extra=12 * 11)
    S_I, S_E = all_pair_moments(D_x, D_y)
    W = model.projection
    expected = np.linalg.inv(W.T @ (S_I + 1e-3 * np.eye(4)) @ W) - np.linalg.inv(W.T @ S_E @ W)
    np.testing.assert_allclose(model.metric, expected, atol=1e-9)
    np.testing.assert_allclose(model.metric, model.metric.T, atol=1e-10)


def test_extra_pairs_subsampling_is_deterministic_and_valid():
    i, j = subspace.extra_pairs(50, max_pairs=200, seed=4)
    assert len(i) == 200 and np.all(i != j)
    assert len(set(zip(i.tolist(), j.tolist()))) == 200
    i2, j2 = subspace.extra_pairs(50, max_pairs=200, seed=4)
    np.testing.assert_array_equal(i, i2)
    np.testing.assert_array_equal(j, j2)
    full_i, full_j = subspace.extra_pairs(5)
    assert len(full_i) == 20


def test_xqda_errors(rng):
    D = rng.normal(size=(3, 10))
    with pytest.raises(np.linalg.LinAlgError, match="singular"):
        subspace.fit_xqda(D, rng.normal(size=(3, 10)), reg=0.0)
    with pytest.raises(ValueError, match="eigenvectors"):
        subspace.fit_xqda(rng.normal(size=(10, 3)), rng.normal(size=(10, 3)), dim=4)
    with pytest.raises(ValueError):
        subspace.fit_xqda(D[:1], D[:1])


def test_subspace_json_round_trip(rng):
    model = subspace.fit_xqda(rng.normal(size=(10, 4)), rng.normal(size=(10, 4)), dim=3)
    back = SubspaceModel.from_json(model.to_json())
    np.testing.assert_array_equal(back.projection, model.projection)
    np.testing.assert_array_equal(back.metric, model.metric)
    np.testing.assert_array_equal(back.eigenvalues, model.eigenvalues)
    M = MetricModel(np.array([[2.0, 0.5], [0.5, 1.0]]))
    np.testing.assert_array_equal(MetricModel.from_json(M.to_json()).M, M.M)


@settings(max_examples=15, deadline=None)
@given(r=st.integers(1, 6), seed=st.integers(0, 1000))
def test_projected_features_feed_the_coder(r, seed):
    rng = np.random.default_rng(seed)
    D_x, D_y = rng.normal(size=(15, 6)), rng.normal(size=(15, 6))
    model = subspace.fit_xqda(D_x, D_y, dim=r)
    spec = KernelSpec("rbf")
    s = xcrc.fit(subspace.project(model, D_x), subspace.project(model, D_y),
                 xcrc.SolverConfig(lam=2.0, kernel_x=spec, kernel_y=spec))
    X = subspace.project(model, rng.normal(size=(4, 6)))
    Y = subspace.project(model, rng.normal(size=(3, 6)))
    sim, order = xcrc.rank_all(s, X, Y)
    assert sim.shape == (3, 4) and np.all(np.isfinite(sim))
    assert sorted(order[0].tolist()) == [0, 1, 2, 3]


# ----------------------------------------------------------------- project


def test_project_identity_and_axis(rng):
    S = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(subspace.project(SubspaceModel(np.eye(3)), S), S)
    e1 = np.array([[1.0], [0.0], [0.0]])
    np.testing.assert_array_equal(subspace.project(SubspaceModel(e1), S)[:, 0], S[:, 0])


def test_project_matches_explicit_product(rng):
    P, S = rng.normal(size=(6, 2)), rng.normal(size=(4, 6))
    out = subspace.project(SubspaceModel(P), S)
    for i in range(4):
        for k in range(2):
            assert out[i, k] == pytest.approx(sum(S[i, d] * P[d, k] for d in range(6)), rel=1e-12)


def test_project_dimension_mismatch(rng):
    with pytest.raises(ValueError, match="dimension mismatch"):
        subspace.project(SubspaceModel(np.eye(3)), rng.normal(size=(2, 4)))


# ------------------------------------------------------------------ KISSME


def test_kissme_identical_statistics_is_zero(rng):
    C = np.cov(rng.normal(size=(50, 3)), rowvar=False)
    np.testing.assert_allclose(subspace.kissme_from_covariances(C, C).M, 0.0, atol=1e-12)


def test_kissme_diagonal_example():
    M = subspace.kissme_from_covariances(np.diag([1.0, 4.0]), np.diag([4.0, 1.0])).M
    np.testing.assert_array_equal(M, np.diag([0.75, 0.0]))


def test_fit_kissme_diagonal_from_differences():
    similar = np.array([[1.0, 0.0], [0.0, 2.0]])     # moments diag(0.5, 2)
    dissimilar = np.array([[2.0, 0.0], [0.0, 1.0]])  # moments diag(2, 0.5)
    np.testing.assert_array_equal(subspace.fit_kissme(similar, dissimilar).M, np.diag([1.5, 0.0]))


def test_kissme_matches_dense_oracle(rng):
    sim = rng.normal(size=(200, 4))
    dis = 3.0 * rng.normal(size=(200, 4))
    M = subspace.fit_kissme(sim, dis).M
    C_s = sim.T @ sim / 200
    C_d = dis.T @ dis / 200
    expected = np.linalg.solve(C_s, np.eye(4)) - np.linalg.solve(C_d, np.eye(4))
    assert np.linalg.eigvalsh(expected).min() > 0  # clipping inactive here
    np.testing.assert_allclose(M, expected, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 5))
def test_kissme_is_psd(seed, d):
    rng = np.random.default_rng(seed)
    M = subspace.fit_kissme(rng.normal(size=(3 * d + 2, d)), rng.normal(size=(3 * d + 2, d)),
                            reg=1e-6).M
    assert np.linalg.eigvalsh(M).min() >= -1e-10


def test_kissme_singular_without_regularization(rng):
    with pytest.raises(np.linalg.LinAlgError, match="similar"):
        subspace.fit_kissme(rng.normal(size=(2, 4)), rng.normal(size=(20, 4)))
    subspace.fit_kissme(rng.normal(size=(2, 4)), rng.normal(size=(20, 4)), reg=1e-3)


# ---------------------------------------------------------------- metrics


@pytest.mark.parametrize("kind", ["cosine", "mahalanobis", "kissme"])
def test_distance_to_self_is_zero(rng, kind):
    a = rng.normal(size=4)
    M = subspace.fit_kissme(rng.normal(size=(30, 4)), 2 * rng.normal(size=(30, 4)))
    assert subspace.metric_distance(kind, M, a, a) == pytest.approx(0.0, abs=1e-12)


def test_identity_metric_is_squared_euclidean(rng):
    a, b = rng.normal(size=5), rng.normal(size=5)
    assert subspace.metric_distance("mahalanobis", np.eye(5), a, b) == pytest.approx(((a - b) ** 2).sum())


def test_quadratic_form_matches_expansion(rng):
    a, b = rng.normal(size=4), rng.normal(size=4)
    M = subspace.fit_mahalanobis(rng.normal(size=(40, 4)))
    expected = sum((a[i] - b[i]) * M.M[i, j] * (a[j] - b[j]) for i in range(4) for j in range(4))
    assert subspace.metric_distance("mahalanobis", M, a, b) == pytest.approx(expected, abs=1e-12)
    cos = a @ b / np.sqrt((a @ a) * (b @ b))
    assert subspace.metric_distance("cosine", None, a, b) == pytest.approx(1 - cos, abs=1e-12)


@pytest.mark.parametrize("kind", ["cosine", "mahalanobis", "kissme"])
def test_distance_symmetric(rng, kind):
    a, b = rng.normal(size=3), rng.normal(size=3)
    M = subspace.fit_mahalanobis(rng.normal(size=(20, 3)))
    assert subspace.metric_distance(kind, M, a, b) == pytest.approx(
        subspace.metric_distance(kind, M, b, a), abs=1e-12)


@pytest.mark.parametrize("kind", ["cosine", "mahalanobis"])
def test_distance_matrix_matches_pairwise(rng, kind):
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    M = subspace.fit_mahalanobis(rng.normal(size=(20, 3)))
    Dm = subspace.distance_matrix(kind, M, X, Y)
    for j in range(4):
        for i in range(5):
            assert Dm[j, i] == pytest.approx(subspace.metric_distance(kind, M, Y[j], X[i]), abs=1e-12)


def test_mahalanobis_is_inverse_covariance(rng):
    S = rng.normal(size=(60, 3))
    np.testing.assert_allclose(subspace.fit_mahalanobis(S).M @ np.cov(S, rowvar=False), np.eye(3),
                               atol=1e-10)


def test_metric_distance_errors():
    with pytest.raises(ValueError, match="zero-norm"):
        subspace.metric_distance("cosine", None, np.zeros(2), np.ones(2))
    with pytest.raises(ValueError, match="requires"):
        subspace.metric_distance("kissme", None, np.ones(2), np.ones(2))
    with pytest.raises(ValueError, match="non-finite"):
        subspace.metric_distance("cosine", None, np.array([np.nan, 1.0]), np.ones(2))
    with pytest.raises(ValueError, match="unknown"):
        subspace.metric_distance("hamming", None, np.ones(2), np.ones(2))
