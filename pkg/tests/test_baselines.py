import itertools

import numpy as np
import pytest
from scipy import stats

from optclust.baselines import (
    BaselineConfig,
    fcm_fit,
    fcm_ocs,
    fcm_ocs_fit,
    fuzzy_cmeans,
    gibbs_impute,
    hierarchical,
    kmeans,
    kmeans_fit,
    kpod,
    kpod_fit,
    mean_impute,
    random_cluster,
)
from optclust.core import LabelFunction, OptclustError, Partition, PointSet, clustering_error, enumerate_partitions
from optclust.simgen import CalibratedPrior, generate_instance, mcar_mask, standard_model

CFG = BaselineConfig(seed=0)


def two_blobs(rng, n=10, d=2, sep=10.0, sd=0.1):
    X = np.vstack([rng.normal(-sep, sd, (n, d)), rng.normal(sep, sd, (n, d))])
    return X, LabelFunction([1] * n + [2] * n)


def standard_data(seed, p=0.2, n1=10, n2=10):
    rng = np.random.default_rng(seed)
    S, phi = generate_instance(standard_model("fixed"), n1, n2, rng)
    return mcar_mask(S, p, rng), phi


def naive_agglomerate(X, k, link):
    clusters = [[i] for i in range(len(X))]
    D = np.linalg.norm(X[:, None] - X[None], axis=2)
    agg = min if link == "single" else max
    while len(clusters) > k:
        best = None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            dist = agg(D[i, j] for i in clusters[a] for j in clusters[b])
            if best is None or dist < best[0]:
                best = (dist, a, b)
        _, a, b = best
        clusters[a] += clusters.pop(b)
    labels = np.empty(len(X), dtype=int)
    for c, members in enumerate(clusters):
        labels[members] = c
    return Partition(labels, max(2, k))


# ----------------------------------------------------------- k-means


def test_kmeans_separable(rng):
    X, phi = two_blobs(rng)
    assert clustering_error(phi, kmeans(X, CFG)) == 0


def test_kmeans_k1_single_block(rng):
    X, _ = two_blobs(rng)
    assert kmeans(X, BaselineConfig(k=1, seed=0)).n_blocks == 1


def test_kmeans_matches_exhaustive_1d(rng):
    for _ in range(10):
        x = rng.normal(size=8)
        best = min(
            sum(((x[np.asarray(P.blocks) == b] - x[np.asarray(P.blocks) == b].mean()) ** 2).sum() for b in range(2))
            for P in enumerate_partitions(8, 2)
            if P.n_blocks == 2
        )
        assert kmeans_fit(x[:, None], CFG).objective == pytest.approx(best, abs=1e-10)


def test_kmeans_empty_cluster_reseeded():
    X = np.array([[0.0], [0.1], [0.2], [10.0]])
    res = kmeans_fit(X, CFG, init_centers=[[0.1], [100.0]])
    assert len(set(res.labels.tolist())) == 2


def test_kmeans_rejects_missing():
    with pytest.raises(OptclustError):
        kmeans(np.array([[np.nan, 1.0], [1.0, 2.0]]), CFG)


# ----------------------------------------------------------- fuzzy c-means


def test_fcm_memberships_sum_to_one(rng):
    X, _ = two_blobs(rng, sd=3.0)
    _, U = fuzzy_cmeans(X, CFG)
    np.testing.assert_allclose(U.sum(axis=1), 1.0, atol=1e-12)


def test_fcm_separable_matches_kmeans(rng):
    X, phi = two_blobs(rng)
    assert fuzzy_cmeans(X, CFG)[0] == kmeans(X, CFG) == phi.partition()


def test_fcm_objective_non_increasing(rng):
    for seed in range(10):
        X = np.random.default_rng(seed).normal(size=(30, 3))
        hist = np.array(fcm_fit(X, BaselineConfig(seed=seed, restarts=1)).history)
        assert np.all(np.diff(hist) <= 1e-10 * np.abs(hist[:-1]))


def test_fcm_point_on_center():
    X = np.array([[0.0], [0.0], [5.0], [5.0]])
    res = fcm_fit(X, CFG, init_centers=[[0.0], [5.0]])
    np.testing.assert_allclose(res.memberships, [[1, 0], [1, 0], [0, 1], [0, 1]], atol=1e-12)


# ----------------------------------------------------------- FCM-OCS


def test_fcm_ocs_no_missing_is_fcm(rng):
    X, _ = two_blobs(rng, sd=3.0)
    S = PointSet.from_array(X)
    a = fcm_ocs_fit(S, CFG, np.random.default_rng(3))
    b = fcm_fit(X, CFG, np.random.default_rng(3))
    assert a.partition == b.partition
    np.testing.assert_allclose(a.centers, b.centers, atol=1e-4)


def test_fcm_ocs_fixed_point_fill():
    S, _ = standard_data(1, p=0.0)
    X = S.points.copy()
    X[3, 2] = np.nan
    S = PointSet.from_array(X)
    res = fcm_ocs_fit(S, BaselineConfig(seed=0, tol=1e-14, max_iters=2000))
    W = res.memberships[3] ** 2.0
    assert res.completed[3, 2] == pytest.approx(W @ res.centers[:, 2] / W.sum(), abs=1e-6)


def test_fcm_ocs_objective_non_increasing():
    for seed in range(20):
        S, _ = standard_data(seed, p=0.25)
        hist = np.array(fcm_ocs_fit(S, BaselineConfig(seed=seed)).history)
        assert np.all(np.diff(hist) <= 1e-10 * np.abs(hist[:-1]))


def test_fcm_ocs_initialization_paths():
    low, _ = standard_data(2, p=0.05)
    high, _ = standard_data(2, p=0.3)
    assert fcm_ocs(low, CFG).n_blocks <= 2
    assert fcm_ocs(high, CFG).n_blocks <= 2
    # too few complete rows on the low-rate path falls back to mean imputation
    X = standard_data(2, p=0.0)[0].points.copy()
    X[1:, 0] = np.nan
    S = PointSet.from_array(X)
    assert S.missing_fraction < 0.2 and S.observed.all(axis=1).sum() < 2
    assert fcm_ocs(S, CFG).n_blocks <= 2


# ----------------------------------------------------------- k-POD


def test_kpod_no_missing_is_kmeans():
    for seed in range(5):
        S, _ = standard_data(seed, p=0.0)
        assert kpod(S, CFG, np.random.default_rng(seed)) == kmeans(S.points, CFG, np.random.default_rng(seed))


def test_kpod_fully_missing_point():
    S, _ = standard_data(4, p=0.1)
    obs = S.observed.copy()
    obs[0] = False
    S = PointSet(S.points, obs)
    res, hist = kpod_fit(S, CFG)
    assert res.labels[0] in (0, 1)
    assert np.all(np.isfinite(hist))


def test_kpod_observed_distortion_non_increasing():
    for seed in range(20):
        S, _ = standard_data(seed, p=0.3)
        _, hist = kpod_fit(S, BaselineConfig(seed=seed))
        assert np.all(np.diff(hist) <= 1e-9)


def test_kpod_requires_two_clusters():
    S, _ = standard_data(0)
    with pytest.raises(OptclustError):
        kpod(S, BaselineConfig(k=1))


# ----------------------------------------------------------- hierarchical


def test_hierarchical_all_singletons():
    X = np.arange(4.0)[:, None]
    assert hierarchical(X, "single", 4).n_blocks == 4


def test_hierarchical_single_chain_isolates_far_point():
    X = np.array([*range(10), 100.0])[:, None]
    P = hierarchical(X, "single", 2)
    assert P.blocks == (0,) * 10 + (1,)


def test_hierarchical_matches_naive_oracle(rng):
    X = np.array([*range(10), 100.0])[:, None]
    assert hierarchical(X, "complete", 2) == naive_agglomerate(X, 2, "complete")
    for _ in range(10):
        Y = rng.normal(size=(12, 2))
        for link in ("single", "complete"):
            assert hierarchical(Y, link, 2) == naive_agglomerate(Y, 2, link)


def test_hierarchical_rejects_bad_linkage():
    with pytest.raises(OptclustError):
        hierarchical(np.zeros((3, 1)), "ward")


# ----------------------------------------------------------- imputation


def test_mean_impute_examples():
    S = PointSet.from_array([[1.0], [np.nan], [3.0]])
    assert mean_impute(S)[1, 0] == 2.0
    full = PointSet.from_array([[1.0, 2.0]])
    np.testing.assert_array_equal(mean_impute(full), full.points)
    once = mean_impute(S)
    np.testing.assert_array_equal(mean_impute(PointSet.from_array(once)), once)


def test_mean_impute_never_observed_warns():
    S = PointSet.from_array([[1.0, np.nan], [2.0, np.nan]])
    with pytest.warns(RuntimeWarning):
        X = mean_impute(S)
    assert np.all(X[:, 1] == 0.0)


def test_gibbs_no_missing_unchanged(rng):
    S = PointSet.from_array(rng.normal(size=(6, 3)))
    np.testing.assert_array_equal(gibbs_impute(S, 10, 2, rng), S.points)


def test_gibbs_follows_regression_line():
    rng = np.random.default_rng(8)
    C = np.array([[1.0, 0.99], [0.99, 1.0]])
    X = rng.multivariate_normal([0, 0], C, size=200)
    X[0, 1] = np.nan
    S = PointSet.from_array(X)
    prior = CalibratedPrior(m=0.0, sigma2=1.0, rho=0.0, kappa=4.0, nu=1.0, d=2)
    out = gibbs_impute(S, 600, 100, np.random.default_rng(1), prior)
    mu = np.nanmean(X, axis=0)
    cov = np.cov(X[1:].T)
    expect = mu[1] + cov[1, 0] / cov[0, 0] * (X[0, 0] - mu[0])
    assert out[0, 1] == pytest.approx(expect, abs=0.1)


def test_gibbs_imputations_stabilize():
    for seed in range(3):
        S, _ = standard_data(seed)
        a = gibbs_impute(S, 500, 100, np.random.default_rng(1))
        b = gibbs_impute(S, 1000, 100, np.random.default_rng(2))
        assert np.abs(a - b)[~S.observed].mean() < 0.05


def test_gibbs_point_order_invariant_in_distribution():
    S, _ = standard_data(5)
    perm = np.random.default_rng(0).permutation(S.n)
    a = gibbs_impute(S, 3000, 200, np.random.default_rng(1))
    b = gibbs_impute(S.take(perm), 3000, 200, np.random.default_rng(2))
    inv = np.argsort(perm)
    assert np.abs(a - b[inv])[~S.observed].max() < 0.1


def test_gibbs_validation():
    with pytest.raises(OptclustError):
        gibbs_impute(PointSet.from_array([[1.0]]))
    S, _ = standard_data(0)
    with pytest.raises(OptclustError):
        gibbs_impute(S, 10, 10)


# ----------------------------------------------------------- random clusterer


def test_random_respects_sizes(rng):
    for _ in range(20):
        assert sorted(random_cluster(10, (7, 3), rng).block_sizes()) == [3, 7]
    with pytest.raises(OptclustError):
        random_cluster(10, (5, 4), rng)


def test_random_expected_error_brute_force():
    truth = LabelFunction([1] * 5 + [2] * 5)
    parts = list(enumerate_partitions(10, 2, (5, 5)))
    exact = np.mean([clustering_error(truth, P) for P in parts])
    rng = np.random.default_rng(0)
    sim = np.mean([clustering_error(truth, random_cluster(10, (5, 5), rng)) for _ in range(20_000)])
    assert sim == pytest.approx(exact, abs=0.005)
    assert exact < 0.5


def test_random_uniform_chi_square():
    rng = np.random.default_rng(1)
    parts = {P: i for i, P in enumerate(enumerate_partitions(6, 2, (3, 3)))}
    counts = np.zeros(len(parts))
    for _ in range(10_000):
        counts[parts[random_cluster(6, (3, 3), rng)]] += 1
    assert stats.chisquare(counts).pvalue > 0.001


# ----------------------------------------------------------- shared properties


@pytest.mark.parametrize(
    "run",
    [
        lambda S, seed: kmeans(mean_impute(S), BaselineConfig(seed=seed)),
        lambda S, seed: fuzzy_cmeans(mean_impute(S), BaselineConfig(seed=seed))[0],
        lambda S, seed: fcm_ocs(S, BaselineConfig(seed=seed)),
        lambda S, seed: kpod(S, BaselineConfig(seed=seed)),
        lambda S, seed: hierarchical(gibbs_impute(S, 50, 10, np.random.default_rng(seed)), "complete"),
        lambda S, seed: random_cluster(S.n, (10, 10), np.random.default_rng(seed)),
    ],
)
def test_baselines_deterministic_and_bounded(run):
    S, _ = standard_data(6)
    a, b = run(S, 4), run(S, 4)
    assert a == b
    assert isinstance(a, Partition) and a.n_blocks <= 2


def test_config_validation():
    with pytest.raises(OptclustError):
        BaselineConfig(fuzzifier=1.0)
    with pytest.raises(OptclustError):
        BaselineConfig(tol=0.0)
