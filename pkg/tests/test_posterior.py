import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import logsumexp

from optclust.core import DimensionMismatchError, LabelFunction, OptclustError, Partition, PointSet, enumerate_partitions
from optclust.posterior import (
    FixedModel,
    GaussianMeanModel,
    GIWModel,
    PartitionScorer,
    PosteriorTable,
    SingularMatrixError,
    _chol,
    log_posterior,
    log_posterior_fixed,
    log_posterior_gaussian_mean,
    log_posterior_giw,
    posterior_table,
    sample_inverse_wishart,
)

from conftest import random_mask

LOG_HALF = math.log(0.5)


def random_spd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T / d + 0.5 * np.eye(d))


def fixed_model(rng, d, l=2):
    return FixedModel(rng.normal(size=(l, d)), np.stack([random_spd(rng, d) for _ in range(l)]))


def gm_model(rng, d, l=2):
    return GaussianMeanModel(rng.normal(size=(l, d)), rng.uniform(0.5, 5, l), np.stack([random_spd(rng, d) for _ in range(l)]))


def giw_model(rng, d, l=2):
    return GIWModel(rng.normal(size=(l, d)), rng.uniform(0.5, 5, l), d + 2 + rng.uniform(1, 5, l), np.stack([random_spd(rng, d) for _ in range(l)]))


def random_instance(rng, n, d, p=0.3, l=2):
    S = PointSet(rng.normal(size=(n, d)), random_mask(rng, n, d, p))
    return S, LabelFunction(rng.integers(1, l + 1, n), l)


def per_point_fixed(S, phi, model):
    """Product of per-point densities of the observed coordinates."""
    total = phi.n * math.log(1.0 / model.l)
    for k in range(S.n):
        J = np.flatnonzero(S.observed[k])
        if J.size == 0:
            continue
        i = phi.labels[k] - 1
        total += stats.multivariate_normal(model.means[i][J], model.covs[i][np.ix_(J, J)]).logpdf(S.points[k, J])
    return total


# ----------------------------------------------------------- fixed model


def test_fixed_standard_normal_at_mean():
    model = FixedModel([[0.0]], [[[1.0]]])
    S = PointSet.from_array([[0.0]])
    assert log_posterior_fixed(S, LabelFunction([1], 1), model) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_fixed_complete_data_matches_density(rng):
    for _ in range(10):
        model = fixed_model(rng, 3)
        S = PointSet.from_array(rng.normal(size=(6, 3)))
        phi = LabelFunction(rng.integers(1, 3, 6))
        direct = 6 * LOG_HALF + sum(
            stats.multivariate_normal(model.means[i - 1], model.covs[i - 1]).logpdf(S.points[k]) for k, i in enumerate(phi.labels)
        )
        assert log_posterior_fixed(S, phi, model) == pytest.approx(direct, abs=1e-10)


def test_fixed_grouped_equals_per_point(rng):
    for _ in range(20):
        model = fixed_model(rng, 2)
        S, phi = random_instance(rng, 4, 2, 0.4)
        assert log_posterior_fixed(S, phi, model) == pytest.approx(per_point_fixed(S, phi, model), abs=1e-10)


def test_fixed_singular_block_reported():
    model = FixedModel([[0.0, 0.0]], [[[1.0, 0.0], [0.0, 1.0]]])
    bad = FixedModel.__new__(FixedModel)
    object.__setattr__(bad, "means", model.means)
    object.__setattr__(bad, "covs", np.array([[[1.0, 0.0], [0.0, -1.0]]]))
    object.__setattr__(bad, "label_weights", None)
    S = PointSet(np.zeros((1, 2)), [[False, True]])
    with pytest.raises(SingularMatrixError, match="features \\[1\\]"):
        log_posterior_fixed(S, LabelFunction([1], 1), bad)


def test_model_validation():
    with pytest.raises(OptclustError):
        FixedModel([[0.0, 0.0]], [[[1.0, 2.0], [2.0, 1.0]]])
    with pytest.raises(OptclustError):
        GaussianMeanModel([[0.0]], [0.0], [[[1.0]]])
    with pytest.raises(OptclustError):
        GIWModel([[0.0, 0.0]], [1.0], [0.5], np.eye(2))
    with pytest.raises(DimensionMismatchError):
        FixedModel([[0.0, 0.0]], np.eye(3))


def test_jitter_policy():
    M = np.array([[1.0, 1.0], [1.0, 1.0]])
    L = _chol(M, "test")
    assert np.allclose(L @ L.T, M, atol=1e-8)
    with pytest.raises(SingularMatrixError):
        _chol(-np.eye(2), "test")


# ----------------------------------------------------------- Gaussian mean model


def test_gm_large_nu_approaches_fixed(rng):
    fm = fixed_model(rng, 2)
    gm = GaussianMeanModel(fm.means, [1e12, 1e12], fm.covs)
    S, phi = random_instance(rng, 5, 2)
    assert abs(log_posterior_gaussian_mean(S, phi, gm) - log_posterior_fixed(S, phi, fm)) < 1e-4


def test_gm_scalar_two_points_closed_form():
    m, nu, s2 = 0.7, 3.0, 1.5
    x = np.array([0.2, 1.9])
    model = GaussianMeanModel([[m]], [nu], [[[s2]]])
    S = PointSet.from_array(x[:, None])
    # marginal of (x1, x2): N(m 1, s2 I + (s2 / nu) 1 1')
    cov = s2 * np.eye(2) + s2 / nu * np.ones((2, 2))
    expect = stats.multivariate_normal(np.full(2, m), cov).logpdf(x)
    assert log_posterior_gaussian_mean(S, LabelFunction([1, 1], 1), model) == pytest.approx(expect, abs=1e-10)


def test_gm_matches_quadrature_d1(rng):
    for _ in range(5):
        m, nu, s2 = rng.normal(), rng.uniform(0.5, 5), rng.uniform(0.5, 2)
        x = rng.normal(size=4)
        model = GaussianMeanModel([[m]], [nu], [[[s2]]])
        S = PointSet.from_array(x[:, None])

        def integrand(mu):
            return math.exp(stats.norm(mu, math.sqrt(s2)).logpdf(x).sum() + stats.norm(m, math.sqrt(s2 / nu)).logpdf(mu))

        val, _ = integrate.quad(integrand, -30, 30, points=[m, x.mean()], limit=200)
        assert log_posterior_gaussian_mean(S, LabelFunction([1] * 4, 1), model) == pytest.approx(math.log(val), abs=1e-8)


def test_gm_matches_monte_carlo_d2(rng):
    m = np.array([0.3, -0.2])
    Sigma = np.array([[1.0, 0.4], [0.4, 0.8]])
    nu = 2.0
    X = rng.normal(size=(4, 2))
    mask = np.array([[True, True], [True, False], [False, True], [True, True]])
    S = PointSet(X, mask)
    model = GaussianMeanModel([m], [nu], [Sigma])
    closed = log_posterior_gaussian_mean(S, LabelFunction([1] * 4, 1), model)
    mus = rng.multivariate_normal(m, Sigma / nu, size=1_000_000)
    loglik = np.zeros(mus.shape[0])
    for k in range(4):
        J = np.flatnonzero(mask[k])
        sub = Sigma[np.ix_(J, J)]
        diff = X[k, J] - mus[:, J]
        prec = np.linalg.inv(sub)
        loglik += -0.5 * (J.size * math.log(2 * math.pi) + np.log(np.linalg.det(sub)) + np.einsum("ij,jk,ik->i", diff, prec, diff))
    shift = loglik.max()
    w = np.exp(loglik - shift)
    est, se = w.mean(), w.std(ddof=1) / math.sqrt(w.size)
    assert abs(math.exp(closed - shift) - est) <= 3 * se


# ----------------------------------------------------------- inverse-Wishart


def test_iw_mean_table_parameters():
    rng = np.random.default_rng(3)
    draws = sample_inverse_wishart(75.0, 20.7 * np.eye(5), rng, size=100_000)
    np.testing.assert_allclose(draws.mean(axis=0), 0.3 * np.eye(5), atol=0.02 * 0.3)


def test_iw_draws_are_spd():
    rng = np.random.default_rng(4)
    Psi = random_spd(rng, 4)
    draws = sample_inverse_wishart(4.5, Psi, rng, size=10_000)
    np.linalg.cholesky(draws)
    assert np.allclose(draws, np.swapaxes(draws, 1, 2))


def test_iw_scalar_is_inverse_gamma():
    rng = np.random.default_rng(5)
    kappa, psi = 6.0, 2.5
    draws = sample_inverse_wishart(kappa, [[psi]], rng, size=20_000)[:, 0, 0]
    assert stats.kstest(draws, stats.invgamma(kappa / 2, scale=psi / 2).cdf).pvalue > 0.01


def test_iw_invalid_inputs():
    rng = np.random.default_rng(0)
    with pytest.raises(OptclustError):
        sample_inverse_wishart(1.0, np.eye(3), rng)
    with pytest.raises(OptclustError):
        sample_inverse_wishart(5.0, -np.eye(2), rng)


# ----------------------------------------------------------- GIW model


def test_giw_concentrated_prior_approaches_gm(rng):
    d = 2
    Sstar = np.array([[0.8, 0.2], [0.2, 0.5]])
    kappa = 1e7
    model = GIWModel(np.zeros((2, d)), [2.0, 3.0], [kappa, kappa], np.stack([Sstar * (kappa - d - 1)] * 2))
    S, phi = random_instance(rng, 6, d)
    gm = GaussianMeanModel(model.prior_means, model.nus, np.stack([Sstar] * 2))
    giw = log_posterior_giw(S, phi, model, 50, np.random.default_rng(1))
    assert abs(giw - log_posterior_gaussian_mean(S, phi, gm)) < 1e-2


def test_giw_single_draw_equals_gm_at_draw(rng):
    model = giw_model(rng, 3)
    S, phi = random_instance(rng, 6, 3)
    r = np.random.default_rng(9)
    covs = np.stack([sample_inverse_wishart(model.kappas[i], model.scales[i], r, size=1)[0] for i in range(2)])
    expect = log_posterior_gaussian_mean(S, phi, model.conditional(covs))
    assert log_posterior_giw(S, phi, model, 1, np.random.default_rng(9)) == pytest.approx(expect, abs=1e-10)


def test_giw_reproducible_and_validates_J(rng):
    model = giw_model(rng, 2)
    S, phi = random_instance(rng, 5, 2)
    a = log_posterior_giw(S, phi, model, 30, np.random.default_rng(2))
    b = log_posterior_giw(S, phi, model, 30, np.random.default_rng(2))
    assert a == b
    with pytest.raises(OptclustError):
        log_posterior_giw(S, phi, model, 0, np.random.default_rng(2))


@pytest.mark.slow
def test_giw_mc_error_shrinks_like_sqrt_J():
    rng = np.random.default_rng(17)
    model = giw_model(rng, 3)
    S, phi = random_instance(rng, 8, 3)
    rows = (phi.labels - 1)[None, :]

    def sd(J):
        vals = [PartitionScorer(S, model, J, np.random.default_rng(s)).label_function_scores(rows)[0] for s in range(50)]
        return np.std(vals, ddof=1)

    ratio = sd(100) / sd(10_000)
    assert 5.0 <= ratio <= 20.0  # sqrt(100) = 10


# ----------------------------------------------------------- invariants


@pytest.mark.parametrize("make", [fixed_model, gm_model, giw_model])
def test_point_permutation_invariance(make, rng):
    model = make(rng, 3)
    S, phi = random_instance(rng, 7, 3)
    perm = rng.permutation(7)
    S2, phi2 = S.take(perm), LabelFunction(phi.labels[perm])
    a = log_posterior(S, phi, model, 40, np.random.default_rng(0))
    b = log_posterior(S2, phi2, model, 40, np.random.default_rng(0))
    assert a == pytest.approx(b, abs=1e-10)


@pytest.mark.parametrize("make", [fixed_model, gm_model, giw_model])
def test_label_parameter_swap_invariance(make, rng):
    model = make(rng, 2)
    S, phi = random_instance(rng, 6, 2)
    swapped_fields = {}
    for name in model.__dataclass_fields__:
        v = getattr(model, name)
        swapped_fields[name] = None if v is None else np.asarray(v)[::-1]
    swapped = type(model)(**swapped_fields)
    phi2 = LabelFunction(3 - phi.labels)
    if isinstance(model, GIWModel):
        # draws are taken per label in order; reversing labels reverses the draw order
        a = PartitionScorer(S, model, 30, np.random.default_rng(0))
        b = PartitionScorer(S, swapped, 30, np.random.default_rng(0))
        object.__setattr__(b, "_stats", a._stats[::-1])
        assert a.label_function_scores(phi.labels - 1)[0] == pytest.approx(b.label_function_scores(phi2.labels - 1)[0], abs=1e-10)
    else:
        assert log_posterior(S, phi, model) == pytest.approx(log_posterior(S, phi2, swapped), abs=1e-10)


@pytest.mark.parametrize("make", [fixed_model, gm_model, giw_model])
def test_fully_missing_point_adds_constant(make, rng):
    model = make(rng, 2)
    S, _ = random_instance(rng, 5, 2)
    S2 = PointSet(np.vstack([S.points, [[9.0, 9.0]]]), np.vstack([S.observed, [[False, False]]]))
    ref = list(enumerate_partitions(5, 2))
    ref2 = [Partition(P.blocks + (b,)) for P in ref for b in (0, 1)]
    t1 = posterior_table(S, ref, model, 30, np.random.default_rng(0))
    t2 = posterior_table(S2, ref2, model, 30, np.random.default_rng(0))
    # each partition of 5 points splits its mass equally over the new point's two placements
    merged = t2.probabilities.reshape(-1, 2).sum(axis=1)
    np.testing.assert_allclose(merged, t1.probabilities, atol=1e-12)
    diffs = t2.log_unnormalized.reshape(-1, 2) - t1.log_unnormalized[:, None]
    multi = np.array([P.n_blocks == 2 for P in ref])
    assert np.ptp(diffs[multi]) < 1e-10


@pytest.mark.parametrize("make", [fixed_model, gm_model, giw_model])
def test_scorer_matches_grouped_route(make, rng):
    model = make(rng, 3)
    for _ in range(5):
        S, phi = random_instance(rng, 6, 3, 0.4)
        grouped = log_posterior(S, phi, model, 25, np.random.default_rng(4))
        batched = PartitionScorer(S, model, 25, np.random.default_rng(4)).label_function_scores(phi.labels - 1)[0]
        assert batched == pytest.approx(grouped, abs=1e-9)


def test_label_weights_enter_prior(rng):
    base = fixed_model(rng, 2)
    weighted = FixedModel(base.means, base.covs, label_weights=[3.0, 1.0])
    S, phi = random_instance(rng, 5, 2)
    k1 = int(np.sum(phi.labels == 1))
    shift = k1 * math.log(0.75) + (5 - k1) * math.log(0.25) - 5 * LOG_HALF
    assert log_posterior_fixed(S, phi, weighted) - log_posterior_fixed(S, phi, base) == pytest.approx(shift, abs=1e-12)


# ----------------------------------------------------------- posterior tables


def test_table_matches_label_function_enumeration(rng):
    model = fixed_model(rng, 2)
    S, _ = random_instance(rng, 6, 2)
    ref = list(enumerate_partitions(6, 2))
    table = posterior_table(S, ref, model)
    binned = {}
    for code in range(64):
        labels = np.array([(code >> k) & 1 for k in range(6)]) + 1
        phi = LabelFunction(labels)
        binned.setdefault(phi.partition(), []).append(log_posterior_fixed(S, phi, model))
    logv = np.array([logsumexp(binned[P]) for P in ref])
    np.testing.assert_allclose(table.log_unnormalized, logv, atol=1e-10)
    np.testing.assert_allclose(table.probabilities, np.exp(logv - logsumexp(logv)), atol=1e-10)


def test_table_symmetric_model_block_roles(rng):
    Sigma = random_spd(rng, 2)
    model = FixedModel([[0.5, -0.5]] * 2, [Sigma, Sigma])
    S, _ = random_instance(rng, 4, 2)
    for P in enumerate_partitions(4, 2):
        a = P.as_array() + 1
        assert log_posterior_fixed(S, LabelFunction(a), model) == pytest.approx(log_posterior_fixed(S, LabelFunction(3 - a), model), abs=1e-12)
    table = posterior_table(S, list(enumerate_partitions(4, 2)), model)
    assert table.probabilities.sum() == pytest.approx(1.0, abs=1e-12)


@given(st.integers(0, 10_000), st.sampled_from([fixed_model, gm_model, giw_model]))
def test_table_normalized(seed, make):
    rng = np.random.default_rng(seed)
    model = make(rng, 2)
    S, _ = random_instance(rng, 5, 2)
    table = posterior_table(S, list(enumerate_partitions(5, 2)), model, 10, rng)
    assert abs(table.probabilities.sum() - 1.0) <= 1e-12
    assert np.all(table.probabilities >= 0)


def test_table_accessors(rng):
    model = fixed_model(rng, 2)
    S, _ = random_instance(rng, 4, 2)
    ref = list(enumerate_partitions(4, 2, (2, 2)))
    table = posterior_table(S, ref, model)
    assert list(table.partitions) == ref
    assert len(table.entries) == 3 == len(table)
    assert table.argmax() == ref[int(np.argmax(table.probabilities))]
    assert table.normalizer == pytest.approx(logsumexp(table.log_unnormalized))


def test_table_errors(rng):
    model = fixed_model(rng, 2)
    S, _ = random_instance(rng, 4, 2)
    with pytest.raises(OptclustError):
        posterior_table(S, [], model)
    with pytest.raises(DimensionMismatchError):
        posterior_table(S, [Partition((0, 1, 0))], model)
    with pytest.raises(OptclustError):
        PosteriorTable.from_log_values([Partition((0, 1))], [-np.inf])
