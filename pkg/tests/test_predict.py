import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import gammaln

from phibp.config import ChainConfig
from phibp.count_matrix import CountMatrix
from phibp.exceptions import DomainError
from phibp.inference import run_chains
from phibp.model import ModelParams, simulate_dataset
from phibp.posterior import sample_posterior_draw
from phibp.predict import (
    MAX_QUAD_NODES,
    PredictiveDraw,
    gamma_quadrature,
    increment_exponents,
    posterior_predictive_check,
    predictive_loglik,
    record_predictive_loglik,
    sample_new_group,
    sample_predictive,
    unseen_entropy,
)
from phibp.rand_dist import RngHandle
from phibp.special_fn import LevyParams, laplace_exponent, levy_density, mtp_log_pmf

SMALL_CHAINS = dict(chains=2, steps=40, burn_in=20, thin=5, delta=0.3)


def one_group_params(train, alpha0=0.6, alpha=0.4):
    return ModelParams.for_counts(train, LevyParams(alpha0, 2.0, 1.0), [LevyParams(alpha, 1.5, 1.0)])


def small_counts():
    return CountMatrix(["g1", "g2"], ["s1", "s2", "s3"], [[4, 1, 0], [2, 0, 3]], samples=[2, 1])


def small_params(counts):
    return ModelParams.for_counts(
        counts, LevyParams(0.5, 3.0, 1.0), [LevyParams(0.3, 1.0, 1.0), LevyParams(0.6, 2.0, 1.0)]
    )


def compound_poisson_pmf(rate, jump_pmf, n_max):
    """Panjer recursion for a Poisson(rate) sum of jumps with pmf jump_pmf[c - 1], c >= 1."""
    f = np.zeros(n_max + 1)
    f[0] = math.exp(-rate)
    for n in range(1, n_max + 1):
        i = np.arange(1, n + 1)
        f[n] = rate / n * np.sum(i * jump_pmf[i - 1] * f[n - i])
    return f


def group_test_pmf(g, n, x, exposure, m, n4):
    """P(test count n4 in one group | global rate h), summed over new blocks and OTU increments."""
    increment = laplace_exponent(g.tilted(exposure), m)
    jumps = np.exp(mtp_log_pmf(g.tilted(exposure), m, np.arange(1, n4 + 2)))
    k = np.arange(n4 + 1)
    if x == 0:
        negbin = (k == 0).astype(float)
    else:
        a = n - g.alpha * x
        rate = g.zeta + exposure
        negbin = np.exp(
            gammaln(k + a) - gammaln(a) - gammaln(k + 1) + a * math.log(rate / (rate + m)) + k * math.log(m / (rate + m))
        )

    def pmf(h):
        compound = compound_poisson_pmf(increment * h, jumps, n4)
        return np.sum(negbin * compound[::-1])

    return pmf


def integrate_rate(weight, factors):
    """Integral over (0, inf) of weight(h) times the product of the group factors."""

    def integrand(h):
        return weight(h) * np.prod([f(h) for f in factors])

    head, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-11, limit=200)
    tail, _ = integrate.quad(integrand, 1.0, np.inf, epsabs=0.0, epsrel=1e-11, limit=200)
    return head + tail


def existing_oracle(params, n, x, m, n4):
    """P(test counts n4[j] of one observed species with training counts n[j] and blocks x[j])."""
    kappa_total = float(params.group_exponents().sum())
    shape, b0 = sum(x) - params.base.alpha, params.base.zeta + kappa_total
    factors = [
        group_test_pmf(g, n[j], x[j], params.gamma_totals[j], m[j], n4[j]) for j, g in enumerate(params.groups)
    ]
    return integrate_rate(lambda h: stats.gamma.pdf(h, shape, scale=1.0 / b0), factors)


def novel_oracle(params, m, c):
    """Intensity of a new species with test counts c[j], integrated over its base jump."""
    tilted = params.base.tilted(float(params.group_exponents().sum()))
    factors = [group_test_pmf(g, 0, 0, params.gamma_totals[j], m[j], c[j]) for j, g in enumerate(params.groups)]
    return integrate_rate(lambda lam: levy_density(tilted, lam), factors)


def void_probability(params, m):
    tilted = params.base.tilted(float(params.group_exponents().sum()))
    return laplace_exponent(tilted, float(increment_exponents(params, m).sum()))


@pytest.mark.parametrize("n, x, n4", [(1, 1, 0), (1, 1, 2), (3, 2, 1), (4, 1, 3)])
@pytest.mark.parametrize("alpha0, alpha", [(0.6, 0.4), (0.0, 0.0)])
def test_loglik_of_existing_species_matches_integration(n, x, n4, alpha0, alpha):
    train = CountMatrix(["g"], ["s"], [[n]])
    test = CountMatrix(["g"], ["s"], [[n4]], samples=[2])
    params = one_group_params(train, alpha0, alpha)

    result = record_predictive_loglik(params, train, [[x]], test)

    void = void_probability(params, [2.0])
    expected = -void + math.log(existing_oracle(params, [n], [x], [2.0], [n4]))
    assert result.total == pytest.approx(expected, rel=1e-4)
    assert result.novel == pytest.approx(-void)


@pytest.mark.parametrize("c", [1, 3])
def test_loglik_of_new_species_matches_integration(c):
    train = CountMatrix(["g"], ["s"], [[2]])
    test = CountMatrix(["g"], ["s", "fresh"], [[0, c]], samples=[1])
    params = one_group_params(train)

    result = record_predictive_loglik(params, train, [[1]], test)

    expected_novel = -void_probability(params, [1.0]) + math.log(novel_oracle(params, [1.0], [c]))
    expected_existing = math.log(existing_oracle(params, [2], [1], [1.0], [0]))
    assert result.novel == pytest.approx(expected_novel, rel=1e-4)
    assert result.existing == pytest.approx(expected_existing, rel=1e-4)


@pytest.mark.parametrize("alpha0, alphas", [(0.5, (0.3, 0.6)), (0.0, (0.0, 0.0)), (0.7, (0.0, 0.4))])
def test_loglik_of_two_groups_matches_integration(alpha0, alphas):
    train = CountMatrix(["g1", "g2"], ["s1", "s2"], [[3, 1], [2, 0]], samples=[2, 1])
    x_blocks = np.array([[2, 1], [1, 0]])
    params = ModelParams.for_counts(
        train, LevyParams(alpha0, 2.0, 1.0), [LevyParams(alphas[0], 1.5, 1.0), LevyParams(alphas[1], 0.7, 1.5)]
    )
    # s2 is absent from g2 in training, so its g2 test count comes from new blocks only
    test = CountMatrix(["g1", "g2"], ["s1", "s2", "u1", "u2"], [[2, 0, 1, 0], [1, 3, 2, 1]], samples=[1, 2])
    m = test.exposure

    result = record_predictive_loglik(params, train, x_blocks, test)

    existing = sum(
        math.log(existing_oracle(params, train.values[:, l], x_blocks[:, l], m, test.values[:, l])) for l in range(2)
    )
    novel = -void_probability(params, m) - math.log(2.0)
    novel += sum(math.log(novel_oracle(params, m, test.values[:, v])) for v in (2, 3))
    assert result.existing == pytest.approx(existing, rel=1e-6)
    assert result.novel == pytest.approx(novel, rel=1e-6)
    assert result.total == pytest.approx(existing + novel, rel=1e-6)


def test_loglik_is_stable_under_node_doubling():
    counts = small_counts()
    params = small_params(counts)
    test = CountMatrix(["g1", "g2"], ["s1", "s3", "new"], [[3, 2, 1], [0, 5, 2]])
    x = (counts.values > 0).astype(int)
    coarse = record_predictive_loglik(params, counts, x, test, quad_nodes=32)
    fine = record_predictive_loglik(params, counts, x, test, quad_nodes=64)
    assert abs(coarse.total - fine.total) < 1e-6


def test_loglik_without_new_samples():
    counts = small_counts()
    params = small_params(counts)
    x = (counts.values > 0).astype(int)
    empty = CountMatrix(["g1", "g2"], ["s1"], [[0], [0]])
    assert record_predictive_loglik(params, counts, x, empty, m=[0, 0]).total == pytest.approx(0.0, abs=1e-12)

    positive = CountMatrix(["g1", "g2"], ["s1"], [[1], [0]])
    assert record_predictive_loglik(params, counts, x, positive, m=[0, 1]).total == -math.inf


def test_gamma_quadrature_moments():
    for shape in (0.3, 1.0, 7.5, 2.0e4):
        u, log_w = gamma_quadrature(shape, 12)
        assert np.exp(log_w).sum() == pytest.approx(1.0)
        for k in range(1, 8):
            moment = np.exp(gammaln(shape + k) - gammaln(shape))
            assert np.exp(log_w + k * np.log(u)).sum() == pytest.approx(moment, rel=1e-8)
    with pytest.raises(DomainError):
        gamma_quadrature(0.0, 4)
    assert MAX_QUAD_NODES >= 64


def test_sample_predictive_structure():
    counts = small_counts()
    params = small_params(counts)
    draw = sample_posterior_draw(RngHandle(1), counts, params)
    predicted = sample_predictive(RngHandle(2), draw, params, [3, 1])

    assert predicted.existing_counts.shape == (2, 3)
    assert predicted.novel_counts.shape == (2, predicted.phi)
    for v in predicted.new_species:
        assert v.counts.sum() >= 1
        assert np.array_equal(v.x_blocks, [len(o) for o in v.otu_counts])
    for j in range(2):
        for l in range(3):
            assert len(predicted.new_block_counts[j][l]) == predicted.new_blocks[j, l]
            assert len(predicted.extra_counts[j][l]) == draw.x_blocks[j, l]

    matrix = predicted.to_count_matrix()
    assert matrix.values.sum() == predicted.existing_counts.sum() + predicted.novel_counts.sum()
    frame = predicted.to_frame(4)
    assert list(frame.columns) == ["draw", "group", "species", "novel", "count"]
    assert frame["count"].sum() == matrix.values.sum()


def test_sample_predictive_with_no_new_samples():
    counts = small_counts()
    params = small_params(counts)
    draw = sample_posterior_draw(RngHandle(3), counts, params)
    predicted = sample_predictive(RngHandle(4), draw, params, 0)
    assert predicted.phi == 0
    assert predicted.existing_counts.sum() == 0
    with pytest.raises(DomainError):
        sample_predictive(RngHandle(4), draw, params, [-1, 1])


def test_sample_new_group():
    counts = small_counts()
    params = small_params(counts)
    draw = sample_posterior_draw(RngHandle(5), counts, params)
    predicted = sample_new_group(RngHandle(6), draw, params, LevyParams(0.5, 2.0, 1.0), 10.0)

    assert predicted.groups == ["group_new"]
    assert predicted.existing_counts.shape == (1, 3)
    assert predicted.extra_counts is None
    assert isinstance(predicted, PredictiveDraw)
    assert sample_new_group(RngHandle(6), draw, params, LevyParams(), 0.0).phi == 0


def test_unseen_entropy():
    counts = small_counts()
    params = small_params(counts)
    values = np.array([unseen_entropy(RngHandle(7, i), params, [50, 50], 0) for i in range(20)])
    finite = values[~np.isnan(values)]
    assert len(finite) > 0
    assert np.all(finite >= 0)
    with pytest.raises(DomainError):
        unseen_entropy(RngHandle(7), params, [0, 5], 0)


def test_predictive_loglik_and_checks_over_chains():
    train = small_counts()
    test = CountMatrix(["g1", "g2"], ["s1", "s3", "new"], [[3, 0, 1], [1, 2, 0]], samples=[1, 1])
    chainset = run_chains(train, ChainConfig(seed=8, **SMALL_CHAINS))

    loglik = predictive_loglik(chainset, train, test, max_draws=3)
    assert list(loglik.columns) == ["chain", "step", "novel", "existing", "total"]
    assert len(loglik) == 3
    assert np.allclose(loglik["total"], loglik["novel"] + loglik["existing"])
    assert np.all(np.isfinite(loglik["total"]))

    ppc = posterior_predictive_check(chainset, train, test, seed=1, max_draws=3)
    assert list(ppc.columns) == ["chain", "step", "group", "ks"]
    assert len(ppc) == 6
    finite = ppc["ks"].dropna()
    assert np.all((finite >= 0) & (finite <= 1))


@pytest.mark.slow
def test_prediction_follows_the_chain_rule():
    base, groups = LevyParams(0.3, 10.0, 1.0), [LevyParams(0.2, 1.0, 1.0), LevyParams(0.4, 1.0, 1.0)]
    full = ModelParams.with_samples(base, groups, [3, 3])
    replicates = 1000

    def summary(existing, novel):
        # per-group totals, per-group species counts, number of species new to training
        present = np.concatenate((existing, novel), axis=1) > 0
        return np.concatenate((existing.sum(axis=1) + novel.sum(axis=1), present.sum(axis=1), [novel.shape[1]]))

    direct, predicted = [], []
    for i in range(replicates):
        dataset = simulate_dataset(RngHandle(9, i), full)
        train, test = dataset.split_samples([1, 1])
        aligned, novel, _ = train.align(test)
        direct.append(summary(aligned, novel))

        train_only = simulate_dataset(RngHandle(10, i), ModelParams.with_samples(base, groups, [2, 2]))
        train_counts = train_only.counts
        params = ModelParams.for_counts(train_counts, base, groups)
        draw = sample_posterior_draw(RngHandle(11, i), train_counts, params, n_augment=20)
        sample = sample_predictive(RngHandle(12, i), draw, params, [1, 1])
        assert sample.phi == sample.novel_counts.shape[1]
        predicted.append(summary(sample.existing_counts, sample.novel_counts))

    direct, predicted = np.array(direct), np.array(predicted)
    for k in range(direct.shape[1]):
        assert stats.mannwhitneyu(direct[:, k], predicted[:, k]).pvalue > 0.001
