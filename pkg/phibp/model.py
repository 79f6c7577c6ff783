"""Exact forward simulation of the PHIBP marginal.

A draw proceeds through the species allocation process: the number of
species is Poisson, each species gets a mixed truncated Poisson number of OTU
blocks split across groups multinomially, and every block carries a mixed
truncated Poisson count. No truncation of the underlying random measures is
involved.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .base import CustomBase
from .count_matrix import CountMatrix
from .exceptions import DomainError
from .rand_dist import RngHandle, sample_mtp, sample_multinomial, split_counts
from .special_fn import LevyParams, laplace_exponent

logger = logging.getLogger(__name__)

_ALLOCATION_STREAM = 0
_COUNTS_STREAM = 1
_SAMPLES_STREAM = 2


def group_labels(n_groups: int) -> List[str]:
    return [f"group_{j + 1}" for j in range(n_groups)]


def species_labels(n_species: int, prefix: str = "species") -> List[str]:
    return [f"{prefix}_{l + 1}" for l in range(n_species)]


@dataclass(eq=False, repr=False)
class ModelParams(CustomBase):
    """Base and group Lévy densities plus per-sample weights.

    Attributes:
        base (LevyParams): Base-level density tau_0.
        groups (list of LevyParams): Group densities tau_j.
        gamma_weights (list of np.ndarray): Per-group arrays of nonnegative
            sample weights gamma_{i,j}; defaults to one unit-weight sample per group.
    """

    __schema__ = "ModelParamsSchema"

    base: LevyParams
    groups: List[LevyParams]
    gamma_weights: Optional[List[np.ndarray]] = None

    def __post_init__(self):
        self.groups = list(self.groups)
        if len(self.groups) < 1:
            raise DomainError("at least one group is required")
        if self.gamma_weights is None:
            self.gamma_weights = [np.ones(1) for _ in self.groups]
        self.gamma_weights = [np.asarray(w, dtype=float).reshape(-1) for w in self.gamma_weights]
        if len(self.gamma_weights) != len(self.groups):
            raise DomainError("one weight vector per group is required")
        for w in self.gamma_weights:
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise DomainError("sample weights must be finite and nonnegative")

    @classmethod
    def with_samples(cls, base: LevyParams, groups: Sequence[LevyParams], samples) -> "ModelParams":
        """
        Build parameters with unit weights and the given number of samples per group.

        Args:
            base (LevyParams): Base density.
            groups (list of LevyParams): Group densities.
            samples (array-like): M_j per group.

        Returns:
            ModelParams: The parameters.
        """
        samples = np.broadcast_to(np.asarray(samples, dtype=np.int64), (len(groups),))
        return cls(base, list(groups), [np.ones(int(m)) for m in samples])

    @classmethod
    def for_counts(cls, counts: CountMatrix, base: LevyParams, groups: Sequence[LevyParams]) -> "ModelParams":
        """Parameters whose group exposures match those recorded with a count matrix."""
        weights = []
        for m, total in zip(counts.samples, counts.exposure):
            m = max(int(m), 1)
            weights.append(np.full(m, total / m))
        return cls(base, list(groups), weights)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def samples(self) -> np.ndarray:
        return np.array([len(w) for w in self.gamma_weights], dtype=np.int64)

    @property
    def gamma_totals(self) -> np.ndarray:
        return np.array([w.sum() for w in self.gamma_weights])

    def group_exponents(self) -> np.ndarray:
        """Per-group Laplace exponents kappa_j = psi_j(sum_i gamma_{i,j})."""
        return np.array(
            [laplace_exponent(g, t) for g, t in zip(self.groups, self.gamma_totals)]
        )

    def hyperparameters(self) -> dict:
        out = {"alpha_0": self.base.alpha, "theta_0": self.base.theta}
        for j, g in enumerate(self.groups, start=1):
            out[f"alpha_{j}"] = g.alpha
            out[f"theta_{j}"] = g.theta
        return out

    def with_hyperparameters(self, **values) -> "ModelParams":
        """
        Copy with some alpha/theta values replaced.

        Args:
            **values: Keyword names as in `hyperparameters`, e.g. ``alpha_0=0.5``.

        Returns:
            ModelParams: The updated copy; weights are shared.
        """
        base = self.base
        groups = list(self.groups)
        for name, value in values.items():
            kind, _, index = name.partition("_")
            j = int(index)
            if kind not in ("alpha", "theta"):
                raise KeyError(name)
            if j == 0:
                base = replace(base, **{kind: float(value)})
            else:
                groups[j - 1] = replace(groups[j - 1], **{kind: float(value)})
        return ModelParams(base, groups, self.gamma_weights)


@dataclass(eq=False, repr=False)
class AllocationDraw(CustomBase):
    """Species allocation: total and per-group OTU block counts.

    Attributes:
        x_total (np.ndarray): X~_l per species, all >= 1.
        x_blocks (np.ndarray): X_{j,l} of shape (J, phi).
    """

    __schema__ = "AllocationDrawSchema"

    x_total: np.ndarray
    x_blocks: np.ndarray

    @property
    def phi(self) -> int:
        return len(self.x_total)

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.phi)


@dataclass(eq=False, repr=False)
class SyntheticDataset(CustomBase):
    """A simulated count matrix with its full latent truth.

    Attributes:
        counts (CountMatrix): Aggregated N_{j,l}.
        allocation (AllocationDraw): Species allocation.
        otu_counts (list of list of np.ndarray): C~_{j,k,l} per group and species.
        per_sample (list of np.ndarray): Per-group arrays of shape (M_j, phi), or
            None when not split.
        params (ModelParams): Truth used for the draw.
    """

    __schema__ = "SyntheticDatasetSchema"

    counts: CountMatrix
    allocation: AllocationDraw
    otu_counts: List[List[np.ndarray]]
    params: ModelParams
    per_sample: Optional[List[np.ndarray]] = field(default=None)

    def public_view(self) -> CountMatrix:
        return self.counts

    def check_invariants(self) -> None:
        """Assert count conservation between blocks, aggregates and samples."""
        values = self.counts.values
        for j, row in enumerate(self.otu_counts):
            for l, blocks in enumerate(row):
                assert len(blocks) == self.allocation.x_blocks[j, l]
                assert np.all(blocks >= 1)
                assert blocks.sum() == values[j, l]
            if self.per_sample is not None:
                assert np.array_equal(self.per_sample[j].sum(axis=0), values[j])

    def split_samples(self, m) -> tuple:
        """
        Aggregate per-sample counts into a training and a test matrix.

        The first M_j - m_j samples of each group form the training matrix and
        the last m_j samples the test matrix.

        Args:
            m (array-like): Test samples per group, each below M_j.

        Returns:
            Tuple[CountMatrix, CountMatrix]: Train and test matrices over all
            simulated species (all-zero training columns are dropped).
        """
        if self.per_sample is None:
            raise DomainError("dataset was simulated without per-sample counts")
        m = np.broadcast_to(np.asarray(m, dtype=np.int64), (self.counts.n_groups,))
        M = self.params.samples - m
        if np.any(M < 1) or np.any(m < 1):
            raise DomainError("each group needs at least one training and one test sample")

        train = np.stack([s[: M[j]].sum(axis=0) for j, s in enumerate(self.per_sample)])
        test = np.stack([s[M[j] :].sum(axis=0) for j, s in enumerate(self.per_sample)])
        w_train = [w[: M[j]].sum() for j, w in enumerate(self.params.gamma_weights)]
        w_test = [w[M[j] :].sum() for j, w in enumerate(self.params.gamma_weights)]
        groups, species = self.counts.groups, self.counts.species
        return (
            CountMatrix(groups, species, train, samples=M, exposure=w_train),
            CountMatrix(groups, species, test, samples=m, exposure=w_test),
        )


def expected_phi(params: ModelParams) -> float:
    """Mean number of species, Psi_0(sum_j psi_j(sum_i gamma_{i,j}))."""
    return laplace_exponent(params.base, params.group_exponents().sum())


def allocation_probabilities(params: ModelParams) -> np.ndarray:
    kappa = params.group_exponents()
    return kappa / kappa.sum()


def sample_allocation(rng: RngHandle, params: ModelParams) -> AllocationDraw:
    """
    Sample the species allocation process.

    phi ~ Poisson(Psi_0(kappa)), X~_l ~ MtP(tau_0, kappa) with kappa = sum_j kappa_j,
    and (X_{1,l}, ..., X_{J,l}) ~ Multinomial(X~_l; kappa_j / kappa).

    Args:
        rng (RngHandle): Random stream.
        params (ModelParams): Model parameters.

    Returns:
        AllocationDraw: The allocation.
    """
    kappa = params.group_exponents()
    total = kappa.sum()
    if total <= 0:
        return AllocationDraw(np.zeros(0, dtype=np.int64), np.zeros((params.n_groups, 0), dtype=np.int64))

    phi = int(rng.generator.poisson(laplace_exponent(params.base, total)))
    x_total = sample_mtp(rng, params.base, total, size=phi)
    x_blocks = sample_multinomial(rng, x_total, kappa / total).reshape(phi, params.n_groups).T
    logger.debug("Allocated %d species with %d blocks", phi, int(x_total.sum()))
    return AllocationDraw(x_total, np.ascontiguousarray(x_blocks))


def sample_group_counts(rng: RngHandle, x_row: np.ndarray, p: LevyParams, gamma_total: float):
    """
    Draw OTU counts for one group given its block counts.

    Args:
        rng (RngHandle): Random stream dedicated to the group.
        x_row (np.ndarray): X_{j,l} over species.
        p (LevyParams): Group density.
        gamma_total (float): Group exposure.

    Returns:
        Tuple[np.ndarray, list]: Aggregated counts N_{j,l} and per-species OTU counts.
    """
    x_row = np.asarray(x_row, dtype=np.int64)
    n_blocks = int(x_row.sum())
    draws = sample_mtp(rng, p, gamma_total, size=n_blocks) if n_blocks else np.zeros(0, dtype=np.int64)
    return split_counts(draws, x_row)


def split_across_samples(rng: RngHandle, counts_row: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    Multinomial split of each species' group count across the group's samples.

    Args:
        rng (RngHandle): Random stream.
        counts_row (np.ndarray): N_{j,l} over species.
        weights (np.ndarray): Sample weights gamma_{i,j}.

    Returns:
        np.ndarray: Per-sample counts of shape (M_j, r).
    """
    weights = np.asarray(weights, dtype=float)
    if len(counts_row) == 0:
        return np.zeros((len(weights), 0), dtype=np.int64)
    if weights.sum() <= 0:
        return np.zeros((len(weights), len(counts_row)), dtype=np.int64)
    split = sample_multinomial(rng, counts_row, weights / weights.sum())
    return split.reshape(len(counts_row), len(weights)).T


def simulate_dataset(rng: RngHandle, params: ModelParams, per_sample: bool = True) -> SyntheticDataset:
    """
    Simulate a grouped count matrix exactly from the PHIBP marginal.

    The allocation, each group's OTU counts and each group's per-sample split
    use separate child streams, so regenerating one group leaves the others
    bit-identical.

    Args:
        rng (RngHandle): Random stream.
        params (ModelParams): Model parameters.
        per_sample (bool): Also split counts across samples. Defaults to True.

    Returns:
        SyntheticDataset: Counts with all latent quantities.
    """
    allocation = sample_allocation(rng.child(_ALLOCATION_STREAM), params)
    totals = params.gamma_totals

    values = np.zeros_like(allocation.x_blocks)
    otu_counts = []
    splits = [] if per_sample else None
    for j, p in enumerate(params.groups):
        values[j], otus = sample_group_counts(
            rng.child(_COUNTS_STREAM, j), allocation.x_blocks[j], p, totals[j]
        )
        otu_counts.append(otus)
        if per_sample:
            splits.append(
                split_across_samples(rng.child(_SAMPLES_STREAM, j), values[j], params.gamma_weights[j])
            )

    counts = CountMatrix(
        group_labels(params.n_groups),
        species_labels(allocation.phi),
        values,
        samples=params.samples,
        exposure=totals,
        drop_empty=False,
    )
    dataset = SyntheticDataset(counts, allocation, otu_counts, params, splits)
    dataset.check_invariants()
    logger.info(
        "Simulated %d species over %d groups (%d reads)",
        allocation.phi,
        params.n_groups,
        int(values.sum()),
    )
    return dataset
