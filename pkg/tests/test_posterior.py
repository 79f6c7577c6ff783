import itertools
import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats
from scipy.special import gammaln, logsumexp

from phibp.count_matrix import CountMatrix
from phibp.exceptions import DomainError
from phibp.model import ModelParams
from phibp.posterior import (
    PosteriorAbundanceDraw,
    sample_abundance,
    sample_composition,
    sample_h,
    sample_latent_given_counts,
    sample_posterior_draw,
    sample_unseen_base,
    split_otu_counts,
)
from phibp.rand_dist import RngHandle
from phibp.special_fn import LevyParams, build_stirling_table, levy_tail_mass, log_xi_row

N_DRAWS = 20_000


def small_counts():
    return CountMatrix(["g1", "g2"], ["s1", "s2", "s3"], [[5, 1, 0], [2, 0, 7]], samples=[3, 2])


def small_params(counts, gamma_case=False):
    if gamma_case:
        base, groups = LevyParams(0.0, 3.0, 1.0), [LevyParams(0.0, 1.0, 1.0), LevyParams(0.0, 2.0, 1.0)]
    else:
        base, groups = LevyParams(0.7, 3.0, 1.0), [LevyParams(0.3, 1.0, 1.0), LevyParams(0.6, 2.0, 1.0)]
    return ModelParams.for_counts(counts, base, groups)


def composition_law(alpha, n, x):
    law = {}
    for parts in itertools.product(range(1, n + 1), repeat=x):
        if sum(parts) == n:
            law[parts] = sum(gammaln(c - alpha) - gammaln(c + 1) for c in parts)
    keys = list(law)
    log_w = np.array([law[k] for k in keys])
    return keys, np.exp(log_w - logsumexp(log_w))


def test_sample_h_moments():
    counts = small_counts()
    params = small_params(counts)
    kappa = float(params.group_exponents().sum())
    draws = np.array([sample_h(RngHandle(1, i), 4, params) for i in range(N_DRAWS)])
    expected = (4 - 0.7) / (1.0 + kappa)
    assert abs(draws.mean() - expected) < 4 * draws.std() / math.sqrt(N_DRAWS)
    with pytest.raises(DomainError):
        sample_h(RngHandle(1), 0, params)


@pytest.mark.parametrize("alpha, n, x", [(0.0, 6, 3), (0.5, 6, 3), (0.8, 7, 2), (0.3, 5, 5)])
def test_composition_matches_enumeration(alpha, n, x):
    keys, probabilities = composition_law(alpha, n, x)
    index = {k: i for i, k in enumerate(keys)}
    rng = RngHandle(2)
    visits = np.zeros(len(keys))
    for _ in range(N_DRAWS):
        parts = sample_composition(rng, alpha, n, x)
        assert parts.sum() == n and parts.min() >= 1
        visits[index[tuple(parts.tolist())]] += 1
    assert 0.5 * np.abs(visits / N_DRAWS - probabilities).sum() < 0.02


def test_composition_edges():
    assert sample_composition(RngHandle(3), 0.4, 9, 1).tolist() == [9]
    assert sample_composition(RngHandle(3), 0.4, 4, 4).tolist() == [1, 1, 1, 1]
    with pytest.raises(DomainError):
        sample_composition(RngHandle(3), 0.4, 3, 4)


def test_block_counts_given_rate():
    counts = small_counts()
    params = small_params(counts)
    h = 1.7
    table = build_stirling_table(0.6, 7)
    log_w = np.arange(1, 8) * math.log(h) + log_xi_row(params.groups[1], table, 7, 2.0)
    expected = np.exp(log_w - logsumexp(log_w))

    rng = RngHandle(4)
    draws = np.array(
        [sample_latent_given_counts(rng, [0, 7], params, h, compositions=False)[0][1] for _ in range(N_DRAWS)]
    )
    frequencies = np.bincount(draws, minlength=8)[1:] / N_DRAWS
    assert 0.5 * np.abs(frequencies - expected).sum() < 0.02

    x, otus = sample_latent_given_counts(rng, [5, 0], params, h)
    assert x[1] == 0 and len(otus[1]) == 0
    assert len(otus[0]) == x[0] and otus[0].sum() == 5


@pytest.mark.parametrize(
    "n, otus, theta, h, exposure",
    [(5, [2, 3], 1.0, 0.5, 3.0), (1, [1], 2.0, 2.0, 1.0), (10, [1, 4, 5], 0.5, 1.0, 2.0), (3, [3], 4.0, 0.1, 5.0), (6, [1, 1, 4], 1.5, 3.0, 0.5)],
)
def test_direct_and_assembled_abundances_agree(n, otus, theta, h, exposure):
    p = LevyParams(0.0, theta, 1.0)
    rng = RngHandle(5)
    direct = np.array([sample_abundance(rng, n, len(otus), otus, h, p, exposure, "direct")[0] for _ in range(4000)])
    assembled = np.array([sample_abundance(rng, n, len(otus), otus, h, p, exposure)[0] for _ in range(4000)])
    assert stats.ks_2samp(direct, assembled).pvalue > 0.01
    # sigma_tilde ~ Gamma(theta h + n, zeta + M)
    assert stats.kstest(assembled, stats.gamma(theta * h + n, scale=1.0 / (1.0 + exposure)).cdf).pvalue > 0.01


def test_gg_unattached_mass_mean():
    p = LevyParams(0.5, 2.0, 1.0)
    h, exposure = 1.5, 3.0
    rng = RngHandle(6)
    hats = np.array([sample_abundance(rng, 2, 1, [2], h, p, exposure)[1] for _ in range(N_DRAWS)])
    expected = h * p.theta * (p.zeta + exposure) ** (p.alpha - 1.0)
    assert abs(hats.mean() - expected) < 4 * hats.std() / math.sqrt(N_DRAWS)


def test_abundance_rejects_bad_input():
    gg = LevyParams(0.5, 2.0, 1.0)
    with pytest.raises(DomainError):
        sample_abundance(RngHandle(7), 3, 2, [1, 1], 1.0, gg, 1.0)
    with pytest.raises(DomainError):
        sample_abundance(RngHandle(7), 3, 1, [3], 1.0, gg, 1.0, method="direct")
    with pytest.raises(DomainError):
        sample_abundance(RngHandle(7), 3, 1, [3], 1.0, gg, 1.0, method="other")


@pytest.mark.parametrize("gamma_case", [False, True])
def test_posterior_draw_invariants(gamma_case):
    counts = small_counts()
    params = small_params(counts, gamma_case)
    draw = sample_posterior_draw(RngHandle(8), counts, params, n_augment=3)
    draw.check_invariants()

    assert draw.sigma_tilde.shape == (2, 3)
    assert np.array_equal(draw.x_blocks > 0, counts.values > 0)
    assert np.all(draw.x_blocks <= counts.values)
    assert np.allclose(draw.normalized().sum(axis=1), 1.0)


def test_posterior_draw_is_reproducible():
    counts = small_counts()
    params = small_params(counts)
    a = sample_posterior_draw(RngHandle(9, (0, 3)), counts, params)
    b = sample_posterior_draw(RngHandle(9, (0, 3)), counts, params)
    assert np.array_equal(a.sigma_tilde, b.sigma_tilde)
    assert np.array_equal(a.x_blocks, b.x_blocks)


def test_draw_frame_round_trip():
    counts = small_counts()
    params = small_params(counts)
    draws = [sample_posterior_draw(RngHandle(10, i), counts, params) for i in range(2)]
    frame = pd.concat([d.to_frame(i) for i, d in enumerate(draws)], ignore_index=True)
    assert list(frame.columns) == ["draw", "group", "species", "H", "sigma_tilde", "sigma_hat", "X", "n"]

    loaded = PosteriorAbundanceDraw.from_frame(frame)
    assert len(loaded) == 2
    assert loaded[1].groups == counts.groups
    assert loaded[1].species == counts.species
    assert np.array_equal(loaded[1].sigma_tilde, draws[1].sigma_tilde)
    assert np.array_equal(loaded[1].h, draws[1].h)
    loaded[1].check_invariants()


@pytest.mark.parametrize("gamma_case", [False, True])
def test_unseen_base_jumps(gamma_case):
    counts = small_counts()
    params = small_params(counts, gamma_case)
    min_jump = 0.05
    kappa = float(params.group_exponents().sum())
    expected = levy_tail_mass(params.base.tilted(kappa), min_jump)

    sizes = []
    for i in range(300):
        jumps = sample_unseen_base(RngHandle(11, i), params, min_jump=min_jump)
        lams = [lam for lam, _ in jumps]
        assert all(a >= b for a, b in zip(lams, lams[1:]))
        assert all(lam >= min_jump for lam in lams)
        assert all(rates.shape == (2,) and np.all(rates >= 0) for _, rates in jumps)
        sizes.append(len(jumps))
    sizes = np.array(sizes)
    assert abs(sizes.mean() - expected) < 4 * math.sqrt(expected / len(sizes))

    assert len(sample_unseen_base(RngHandle(12), params, budget=3)) == 3
    with pytest.raises(DomainError):
        sample_unseen_base(RngHandle(12), params, budget=-1)


def test_split_otu_counts_conserves():
    split = split_otu_counts(RngHandle(13), [4, 1, 6], [1.0, 1.0, 2.0])
    assert split.shape == (3, 3)
    assert split.sum(axis=1).tolist() == [4, 1, 6]
    assert split_otu_counts(RngHandle(13), [], [1.0]).shape == (0, 1)
