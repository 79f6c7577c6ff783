import math

import numpy as np
import pytest

from phibp.exceptions import DomainError
from phibp.model import (
    ModelParams,
    SyntheticDataset,
    allocation_probabilities,
    expected_phi,
    sample_allocation,
    simulate_dataset,
)
from phibp.rand_dist import RngHandle
from phibp.special_fn import LevyParams, laplace_exponent


def small_params(samples=(2, 3)):
    return ModelParams.with_samples(
        LevyParams(0.5, 3.0, 1.0),
        [LevyParams(0.3, 1.0, 1.0), LevyParams(0.6, 2.0, 1.0)],
        list(samples),
    )


def test_model_params_weights_and_exponents():
    params = small_params()
    assert params.samples.tolist() == [2, 3]
    assert params.gamma_totals.tolist() == [2.0, 3.0]
    assert params.group_exponents()[1] == pytest.approx(laplace_exponent(params.groups[1], 3.0))
    assert allocation_probabilities(params).sum() == pytest.approx(1.0)

    with pytest.raises(DomainError):
        ModelParams(LevyParams(), [LevyParams()], [np.array([-1.0])])
    with pytest.raises(DomainError):
        ModelParams(LevyParams(), [])


def test_with_hyperparameters_replaces_values():
    params = small_params()
    moved = params.with_hyperparameters(alpha_0=0.2, theta_2=5.0)

    assert moved.base.alpha == 0.2
    assert moved.groups[1].theta == 5.0
    assert moved.groups[0] == params.groups[0]
    assert params.base.alpha == 0.5
    assert moved.hyperparameters()["theta_2"] == 5.0
    with pytest.raises(KeyError):
        params.with_hyperparameters(zeta_1=2.0)


def test_number_of_species_is_poisson_with_expected_mean():
    params = small_params()
    rng = RngHandle(11)
    phis = np.array([sample_allocation(rng.child(i), params).phi for i in range(3000)])
    mean = expected_phi(params)
    assert abs(phis.mean() - mean) < 4 * math.sqrt(mean / len(phis))
    assert phis.var() == pytest.approx(mean, rel=0.15)


def test_simulated_dataset_invariants():
    dataset = simulate_dataset(RngHandle(12), small_params())
    dataset.check_invariants()

    counts = dataset.counts
    assert counts.n_species == dataset.allocation.phi
    assert np.all(counts.values.sum(axis=0) >= 1)
    # a group holds a species exactly when it holds a block of it
    assert np.array_equal(counts.values > 0, dataset.allocation.x_blocks > 0)
    assert [s.shape[0] for s in dataset.per_sample] == [2, 3]


def test_simulation_is_reproducible():
    a = simulate_dataset(RngHandle(13), small_params())
    b = simulate_dataset(RngHandle(13), small_params())
    c = simulate_dataset(RngHandle(14), small_params())
    assert a.counts == b.counts
    assert a.counts != c.counts or a.allocation.phi == 0


def test_split_samples_conserves_counts():
    dataset = simulate_dataset(RngHandle(15), small_params((4, 5)))
    train, test = dataset.split_samples([1, 2])

    assert train.samples.tolist() == [3, 3]
    assert test.samples.tolist() == [1, 2]
    full = dataset.counts
    train_aligned, _, _ = full.align(train)
    test_aligned, _, _ = full.align(test)
    assert np.array_equal(train_aligned + test_aligned, full.values)

    with pytest.raises(DomainError):
        dataset.split_samples([4, 1])
    with pytest.raises(DomainError):
        simulate_dataset(RngHandle(15), small_params(), per_sample=False).split_samples(1)


def test_dataset_json_round_trip(tmp_path):
    dataset = simulate_dataset(RngHandle(16), small_params())
    path = tmp_path / "truth.json"
    dataset.to_json(path)
    loaded = SyntheticDataset.from_json(path)

    assert loaded.counts == dataset.counts
    assert np.array_equal(loaded.allocation.x_blocks, dataset.allocation.x_blocks)
    assert loaded.params.base == dataset.params.base
    assert loaded.to_json("str") == dataset.to_json("str")


def test_gamma_case_simulation():
    params = ModelParams.with_samples(LevyParams(0.0, 4.0, 1.0), [LevyParams(0.0, 2.0, 1.0)] * 3, 1)
    dataset = simulate_dataset(RngHandle(17), params)
    dataset.check_invariants()
    assert dataset.counts.n_groups == 3
