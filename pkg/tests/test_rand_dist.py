import math

import numpy as np
import pytest
from scipy import stats

from phibp.exceptions import DomainError
from phibp.rand_dist import (
    RngHandle,
    sample_dirichlet,
    sample_gamma,
    sample_log_categorical,
    sample_mtp,
    sample_multinomial,
    sample_tilted_stable,
    sample_zt_poisson,
    split_counts,
)
from phibp.special_fn import LevyParams, mtp_log_pmf

N_DRAWS = 200_000
TV_TOLERANCE = 0.01


def total_variation(draws, pmf, support):
    counts = np.bincount(draws, minlength=support.max() + 1)[support] / len(draws)
    tail = 1.0 - counts.sum()
    return 0.5 * (np.abs(counts - pmf).sum() + abs(tail - (1.0 - pmf.sum())))


def within_sigmas(samples, expected, sigmas=4.0):
    error = samples.std(ddof=1) / math.sqrt(len(samples))
    return abs(samples.mean() - expected) < sigmas * error


def test_rng_handle_reproducible_and_independent_children():
    a = RngHandle(7, (1, 2)).generator.random(5)
    b = RngHandle(7, (1, 2)).generator.random(5)
    c = RngHandle(7, (1, 3)).generator.random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)

    parent = RngHandle(7, 1)
    parent.generator.random(100)
    assert np.array_equal(parent.child(2).generator.random(5), a)

    with pytest.raises(DomainError):
        RngHandle(-1)


@pytest.mark.parametrize("s", [0.01, 0.7, 3.0, 25.0])
def test_zt_poisson_matches_pmf(s):
    draws = sample_zt_poisson(RngHandle(1), s, size=N_DRAWS)
    assert draws.min() >= 1
    support = np.arange(1, int(s + 10 * math.sqrt(s) + 10))
    pmf = stats.poisson.pmf(support, s) / -math.expm1(-s)
    assert total_variation(draws, pmf, support) < TV_TOLERANCE


def test_zt_poisson_rejects_nonpositive_rate():
    with pytest.raises(DomainError):
        sample_zt_poisson(RngHandle(1), 0.0)
    assert isinstance(sample_zt_poisson(RngHandle(1), 2.0), int)


@pytest.mark.parametrize(
    "p, gamma_total",
    [
        (LevyParams(0.0, 1.0, 1.0), 1.0),
        (LevyParams(0.0, 5.0, 0.5), 10.0),
        (LevyParams(0.4, 1.0, 1.0), 2.0),
        (LevyParams(0.8, 3.0, 1.0), 0.5),
    ],
)
def test_mtp_matches_pmf(p, gamma_total):
    draws = sample_mtp(RngHandle(2), p, gamma_total, size=N_DRAWS)
    assert draws.min() >= 1
    support = np.arange(1, 2000)
    pmf = np.exp(mtp_log_pmf(p, gamma_total, support))
    assert total_variation(draws, pmf, support) < TV_TOLERANCE


def test_mtp_heavy_tail_draws_are_finite():
    # gamma / (gamma + zeta) close to 1 gives a slowly decaying tail
    draws = sample_mtp(RngHandle(3), LevyParams(0.5, 1.0, 1e-3), 1000.0, size=2000)
    assert np.all(draws >= 1)
    assert draws.max() > 100


@pytest.mark.parametrize(
    "alpha, y, tilt",
    [(0.3, 2.0, 1.0), (0.7, 0.5, 1.0), (0.5, 4.0, 3.0), (0.9, 1.0, 0.2), (0.3, 5.0, 100.0), (0.7, 2.0, 50.0)],
)
def test_tilted_stable_moments_and_laplace(alpha, y, tilt):
    draws = sample_tilted_stable(RngHandle(4), alpha, y, tilt, size=20_000)
    assert np.all(draws > 0)

    mean = y * alpha * tilt ** (alpha - 1.0)
    assert within_sigmas(draws, mean)

    transform = np.exp(-draws)
    expected = math.exp(-y * ((tilt + 1.0) ** alpha - tilt**alpha))
    assert within_sigmas(transform, expected)


@pytest.mark.parametrize("alpha, b", [(0.3, 2.0), (0.6, 5.0), (0.8, 0.7)])
def test_tilted_stable_of_gamma_scale_is_gamma(alpha, b):
    # E[exp(-s T(G))] = E[exp(-G((1 + s)^alpha - 1))] = (1 + s)^(-alpha b)
    rng = RngHandle(12)
    scales = sample_gamma(rng, b, 1.0, size=5000)
    draws = np.array([sample_tilted_stable(rng, alpha, y) for y in scales])
    assert stats.kstest(draws, stats.gamma(alpha * b).cdf).pvalue > 0.001


def test_tilted_stable_rejects_bad_arguments():
    rng = RngHandle(5)
    with pytest.raises(DomainError):
        sample_tilted_stable(rng, 0.0, 1.0)
    with pytest.raises(DomainError):
        sample_tilted_stable(rng, 0.5, 0.0)
    with pytest.raises(DomainError):
        sample_tilted_stable(rng, 0.5, 1.0, tilt=-1.0)
    assert isinstance(sample_tilted_stable(rng, 0.5, 1.0), float)


def test_multinomial_conserves_and_matches_means():
    weights = np.array([0.2, 0.5, 0.3])
    draws = sample_multinomial(RngHandle(6), np.full(N_DRAWS // 10, 10), weights)
    assert np.all(draws.sum(axis=1) == 10)
    assert np.allclose(draws.mean(axis=0), 10 * weights, atol=0.05)

    with pytest.raises(DomainError):
        sample_multinomial(RngHandle(6), 3, [0.5, 0.6])
    with pytest.raises(DomainError):
        sample_multinomial(RngHandle(6), 3, [1.5, -0.5])


def test_dirichlet_means_and_single_component():
    a = np.array([1.0, 2.0, 7.0])
    rng = RngHandle(7)
    draws = np.array([sample_dirichlet(rng, a) for _ in range(10_000)])
    assert np.allclose(draws.sum(axis=1), 1.0)
    assert np.allclose(draws.mean(axis=0), a / a.sum(), atol=0.01)

    assert np.array_equal(sample_dirichlet(rng, [3.0]), [1.0])
    with pytest.raises(DomainError):
        sample_dirichlet(rng, [1.0, 0.0])


def test_gamma_mean_and_floor():
    draws = sample_gamma(RngHandle(8), 3.0, 2.0, size=N_DRAWS)
    assert within_sigmas(draws, 1.5)
    tiny = sample_gamma(RngHandle(8), 1e-4, 1.0, size=1000)
    assert np.all(tiny > 0)
    with pytest.raises(DomainError):
        sample_gamma(RngHandle(8), 0.0, 1.0)


def test_log_categorical_frequencies():
    rng = RngHandle(9)
    log_weights = np.log([0.1, 0.6, 0.3]) + 500.0
    draws = np.array([sample_log_categorical(rng, log_weights) for _ in range(20_000)])
    assert np.allclose(np.bincount(draws, minlength=3) / len(draws), [0.1, 0.6, 0.3], atol=0.015)
    assert sample_log_categorical(rng, np.array([-np.inf, 0.0])) == 1


def test_split_counts():
    totals, parts = split_counts(np.array([1, 2, 3, 4, 5]), np.array([2, 0, 3]))
    assert totals.tolist() == [3, 0, 12]
    assert [p.tolist() for p in parts] == [[1, 2], [], [3, 4, 5]]
