"""Prediction of new samples: the three-component predictive process and its likelihood.

For m_j new samples in group j the increments kappa*_j = psi_j(M_j + m_j) - psi_j(M_j)
drive three components:

1. species never seen before, from the base measure tilted by the fitted
   groups;
2. new OTU blocks of already seen species, Poisson in H_l kappa*_j;
3. further counts on already seen OTUs, Poisson in m_j S[j, k, l].
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln, logsumexp
from scipy.stats import entropy

from .count_matrix import CountMatrix
from .diversity import fof, ks_statistic
from .exceptions import DomainError
from .inference import ChainSet
from .model import ModelParams, species_labels
from .parallel import map_tasks
from .posterior import PosteriorAbundanceDraw, sample_abundance, sample_posterior_draw
from .rand_dist import RngHandle, sample_gamma, sample_mtp, sample_multinomial
from .special_fn import LevyParams, build_stirling_table, laplace_exponent

logger = logging.getLogger(__name__)

MAX_QUAD_NODES = 4096


@dataclass(eq=False)
class NewSpecies:
    """A species first seen in the predicted samples.

    Attributes:
        h (float): Its global rate H*_v.
        x_blocks (np.ndarray): New OTU blocks per group.
        otu_counts (list of np.ndarray): OTU counts per group.
        otu_rates (list of np.ndarray): OTU rates per group.
    """

    h: float
    x_blocks: np.ndarray
    otu_counts: List[np.ndarray]
    otu_rates: List[np.ndarray]

    @property
    def counts(self) -> np.ndarray:
        return np.array([c.sum() for c in self.otu_counts], dtype=np.int64)


@dataclass(eq=False)
class PredictiveDraw:
    """One draw of the counts of m_j new samples per group.

    Attributes:
        groups (list of str): Group labels.
        species (list of str): Labels of the already observed species.
        new_species (list of NewSpecies): First component.
        new_blocks (np.ndarray): New OTU blocks P*[j, l] of observed species.
        new_block_counts (list of list of np.ndarray): Their counts per (j, l).
        extra_counts (list of list of np.ndarray): Poisson increments per existing OTU,
            or None when the draw has no existing OTUs (new groups).
    """

    groups: List[str]
    species: List[str]
    new_species: List[NewSpecies] = field(default_factory=list)
    new_blocks: Optional[np.ndarray] = None
    new_block_counts: Optional[List[List[np.ndarray]]] = None
    extra_counts: Optional[List[List[np.ndarray]]] = None

    def __post_init__(self):
        J, r = len(self.groups), len(self.species)
        if self.new_blocks is None:
            self.new_blocks = np.zeros((J, r), dtype=np.int64)
        if self.new_block_counts is None:
            self.new_block_counts = [[np.zeros(0, dtype=np.int64) for _ in range(r)] for _ in range(J)]

    def __repr__(self):
        return (
            f"PredictiveDraw(groups={len(self.groups)}, new_species={len(self.new_species)}, "
            f"existing_total={int(self.existing_counts.sum())})"
        )

    @property
    def phi(self) -> int:
        return len(self.new_species)

    @property
    def existing_counts(self) -> np.ndarray:
        """Predicted counts of observed species, components 2 and 3."""
        out = np.array(
            [[c.sum() for c in row] for row in self.new_block_counts], dtype=np.int64
        ).reshape(len(self.groups), len(self.species))
        if self.extra_counts is not None:
            out += np.array(
                [[c.sum() for c in row] for row in self.extra_counts], dtype=np.int64
            ).reshape(out.shape)
        return out

    @property
    def novel_counts(self) -> np.ndarray:
        if not self.new_species:
            return np.zeros((len(self.groups), 0), dtype=np.int64)
        return np.stack([v.counts for v in self.new_species], axis=1)

    def to_count_matrix(self, prefix: str = "new") -> CountMatrix:
        """Counts of the new samples over observed and new species, all-zero columns dropped."""
        values = np.concatenate((self.existing_counts, self.novel_counts), axis=1)
        labels = list(self.species) + species_labels(self.phi, prefix)
        return CountMatrix(self.groups, labels, values)

    def to_frame(self, draw: int = 0) -> pd.DataFrame:
        existing = self.existing_counts
        novel = self.novel_counts
        rows = []
        for j, group in enumerate(self.groups):
            for l in np.flatnonzero(existing[j]):
                rows.append((draw, group, self.species[l], False, int(existing[j, l])))
            for v in np.flatnonzero(novel[j]):
                rows.append((draw, group, f"new_{v + 1}", True, int(novel[j, v])))
        return pd.DataFrame(rows, columns=["draw", "group", "species", "novel", "count"])


def increment_exponents(params: ModelParams, m) -> np.ndarray:
    """kappa*_j = psi_j(M_j + m_j) - psi_j(M_j), the exponent of the tilted group density at m_j."""
    m = _check_m(params, m)
    totals = params.gamma_totals
    return np.array([laplace_exponent(g.tilted(totals[j]), m[j]) for j, g in enumerate(params.groups)])


def _check_m(params: ModelParams, m) -> np.ndarray:
    m = np.broadcast_to(np.asarray(m, dtype=float), (params.n_groups,)).copy()
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise DomainError("new-sample exposures m_j must be finite and nonnegative")
    return m


def _new_otus(rng, count: int, p: LevyParams, gamma_total: float, m: float):
    """OTU counts and rates of `count` new blocks of one group."""
    if count == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    otus = sample_mtp(rng, p.tilted(gamma_total), m, size=count)
    rates = np.atleast_1d(sample_gamma(rng, otus - p.alpha, p.zeta + gamma_total + m))
    return otus, rates


def _sample_new_species(
    rng, base: LevyParams, kappa_total: float, increments: np.ndarray, groups: Sequence[LevyParams],
    totals: np.ndarray, m: np.ndarray,
) -> List[NewSpecies]:
    total_increment = float(increments.sum())
    if total_increment <= 0:
        return []
    tilted = base.tilted(kappa_total)
    phi = int(rng.generator.poisson(laplace_exponent(tilted, total_increment)))
    if phi == 0:
        return []
    x_total = sample_mtp(rng, tilted, total_increment, size=phi)
    h = np.atleast_1d(sample_gamma(rng, x_total - base.alpha, base.zeta + kappa_total + total_increment))
    blocks = sample_multinomial(rng, x_total, increments / total_increment).reshape(phi, len(groups))

    out = []
    for v in range(phi):
        otu_counts, otu_rates = [], []
        for j, g in enumerate(groups):
            otus, rates = _new_otus(rng, int(blocks[v, j]), g, totals[j], m[j])
            otu_counts.append(otus)
            otu_rates.append(rates)
        out.append(NewSpecies(float(h[v]), blocks[v].copy(), otu_counts, otu_rates))
    return out


def sample_predictive(
    rng: RngHandle, draw: PosteriorAbundanceDraw, params: ModelParams, m
) -> PredictiveDraw:
    """
    Sample the counts of m_j new samples per group.

    Args:
        rng (RngHandle): Random stream.
        draw (PosteriorAbundanceDraw): Posterior draw with OTU-level rates.
        params (ModelParams): Hyperparameters of the same record.
        m (array-like): New-sample exposures per group, nonnegative.

    Returns:
        PredictiveDraw: The draw; empty when every m_j is 0.
    """
    m = _check_m(params, m)
    J, r = len(draw.groups), len(draw.species)
    if draw.otu_rates is None:
        raise DomainError("predictive sampling needs a posterior draw with OTU rates")
    if not m.any():
        return PredictiveDraw(draw.groups, draw.species)

    totals = params.gamma_totals
    kappa_total = float(params.group_exponents().sum())
    increments = increment_exponents(params, m)
    new_species = _sample_new_species(rng, params.base, kappa_total, increments, params.groups, totals, m)

    g = rng.generator
    new_blocks = g.poisson(np.outer(increments, draw.h)).astype(np.int64)
    new_block_counts = [[None] * r for _ in range(J)]
    extra_counts = [[None] * r for _ in range(J)]
    for j, p in enumerate(params.groups):
        for l in range(r):
            blocks = int(new_blocks[j, l])
            new_block_counts[j][l] = (
                sample_mtp(rng, p.tilted(totals[j]), m[j], size=blocks) if blocks else np.zeros(0, dtype=np.int64)
            )
            extra_counts[j][l] = g.poisson(m[j] * draw.otu_rates[j][l]).astype(np.int64)

    logger.debug("Predicted %d new species", len(new_species))
    return PredictiveDraw(draw.groups, draw.species, new_species, new_blocks, new_block_counts, extra_counts)


def sample_new_group(
    rng: RngHandle, draw: PosteriorAbundanceDraw, params: ModelParams, new_group: LevyParams, gamma_new: float
) -> PredictiveDraw:
    """
    Sample the counts of a group that was never observed.

    Only the first two components exist: new species and new OTU blocks of
    observed species, both driven by psi_new(gamma_new).

    Args:
        rng (RngHandle): Random stream.
        draw (PosteriorAbundanceDraw): Posterior draw of the fitted groups.
        params (ModelParams): Hyperparameters of the fitted groups.
        new_group (LevyParams): Density of the new group.
        gamma_new (float): Total exposure of the new group.

    Returns:
        PredictiveDraw: One-group draw labelled "group_new".
    """
    if gamma_new < 0:
        raise DomainError(f"gamma_new must be nonnegative, got {gamma_new}")
    groups = ["group_new"]
    if gamma_new == 0:
        return PredictiveDraw(groups, draw.species)

    kappa_total = float(params.group_exponents().sum())
    increment = np.array([laplace_exponent(new_group, gamma_new)])
    zero = np.zeros(1)
    new_species = _sample_new_species(
        rng, params.base, kappa_total, increment, [new_group], zero, np.array([gamma_new])
    )

    new_blocks = rng.generator.poisson(increment[0] * draw.h).astype(np.int64).reshape(1, -1)
    new_block_counts = [
        [
            sample_mtp(rng, new_group, gamma_new, size=int(b)) if b else np.zeros(0, dtype=np.int64)
            for b in new_blocks[0]
        ]
    ]
    return PredictiveDraw(groups, draw.species, new_species, new_blocks, new_block_counts)


def unseen_entropy(rng: RngHandle, params: ModelParams, m, group: int) -> float:
    """
    One draw of the Shannon entropy of the abundances of completely new species in a group.

    The new species of the first component get abundance rates from the
    group's posterior after M_j + m_j samples, given their global rate H*_v
    and new OTU counts.

    Args:
        rng (RngHandle): Random stream.
        params (ModelParams): Hyperparameters.
        m (array-like): New-sample exposures; m[group] must be positive.
        group (int): Group index.

    Returns:
        float: The entropy (natural log), or NaN when no new species appear.
    """
    m = _check_m(params, m)
    if not m[group] > 0:
        raise DomainError("unseen entropy needs m_j > 0 for the group")
    totals = params.gamma_totals
    kappa_total = float(params.group_exponents().sum())
    increments = increment_exponents(params, m)
    new_species = _sample_new_species(rng, params.base, kappa_total, increments, params.groups, totals, m)
    if not new_species:
        return math.nan

    p = params.groups[group]
    rates = []
    for v in new_species:
        otus = v.otu_counts[group]
        sigma_tilde, _, _ = sample_abundance(
            rng, int(otus.sum()), len(otus), otus, v.h, p, totals[group] + m[group]
        )
        rates.append(sigma_tilde)
    return float(entropy(rates))


class PredictiveLogLik(NamedTuple):
    novel: float
    existing: float
    total: float


@lru_cache(maxsize=512)
def gamma_quadrature(shape: float, nodes: int):
    """
    Gauss rule for the Gamma(shape, 1) law, by the Golub-Welsch eigenproblem.

    The rule integrates polynomials of degree up to 2 * nodes - 1 exactly.
    Weights are normalized to sum to 1 and returned as logarithms, so large
    shapes do not overflow.

    Args:
        shape (float): Positive shape.
        nodes (int): Number of nodes.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Nodes and log weights.
    """
    if not shape > 0:
        raise DomainError(f"shape must be positive, got {shape}")
    k = np.arange(nodes, dtype=float)
    diagonal = 2.0 * k + shape
    off = np.sqrt(k[1:] * (k[1:] + shape - 1.0))
    u, vectors = eigh_tridiagonal(diagonal, off)
    with np.errstate(divide="ignore"):
        log_w = 2.0 * np.log(np.abs(vectors[0]))
    return np.maximum(u, np.finfo(float).tiny), log_w


def _node_count(quad_nodes: int, degree: int) -> int:
    needed = (degree + 2) // 2
    if needed <= quad_nodes:
        return quad_nodes
    nodes = min(needed, MAX_QUAD_NODES)
    logger.debug("Raising quadrature nodes from %d to %d for degree %d", quad_nodes, nodes, degree)
    return nodes


def _existing_coefficients(p: LevyParams, table, n: int, x: int, n4: int, gamma_total: float, m: float):
    """Log coefficients c(x2), x2 = 0..n4, of the test-count polynomial of one existing (j, l) cell."""
    y = p.zeta + gamma_total
    z = y + m
    if n4 == 0:
        # no extra counts on the x observed OTUs
        return np.array([(n - p.alpha * x) * (math.log(y) - math.log(z)) if x else 0.0])
    if m == 0:
        return np.full(1, -np.inf)
    x2 = np.arange(n4 + 1)
    log_theta = math.log(p.theta)
    if x == 0:
        return x2 * log_theta + (p.alpha * x2 - n4) * math.log(z) + table.log_values(n4, x2) + n4 * math.log(m) - gammaln(n4 + 1)

    shape = n - p.alpha * x
    b = np.arange(n4 + 1)
    rest = n4 - b
    per_b = -gammaln(b + 1) + gammaln(rest + shape) - gammaln(rest + 1) - gammaln(shape)
    inner = logsumexp(table.log_values(b[:, None], x2[None, :]) + per_b[:, None], axis=0)
    return (
        x2 * log_theta
        + n4 * math.log(m)
        - (n4 + n - p.alpha * (x2 + x)) * math.log(z)
        + shape * math.log(y)
        + inner
    )


def _novel_coefficients(p: LevyParams, table, n4: int, gamma_total: float, m: float):
    """Log coefficients of the test-count polynomial of a new species in one group."""
    if n4 == 0:
        return np.zeros(1)
    if m == 0:
        return np.full(1, -np.inf)
    x = np.arange(n4 + 1)
    z = p.zeta + gamma_total + m
    return (
        x * math.log(p.theta)
        + (p.alpha * x - n4) * math.log(z)
        + table.log_values(n4, x)
        + n4 * math.log(m)
        - gammaln(n4 + 1)
    )


def _log_poly(coefficients: Sequence[np.ndarray], log_nodes: np.ndarray) -> np.ndarray:
    """Sum over groups of log sum_k exp(c_k) lambda^k at each node."""
    out = np.zeros_like(log_nodes)
    for c in coefficients:
        if len(c) == 1:
            out = out + c[0]
            continue
        powers = np.arange(len(c))
        out = out + logsumexp(c[None, :] + powers[None, :] * log_nodes[:, None], axis=1)
    return out


def record_predictive_loglik(
    params: ModelParams,
    train: CountMatrix,
    x_blocks,
    test: CountMatrix,
    m=None,
    quad_nodes: int = 64,
) -> PredictiveLogLik:
    """
    Exact log probability of test counts given one chain record.

    Each species is conditioned on its global rate, under which groups
    factorize into polynomials in the rate; the rate is integrated against
    its gamma law by Gauss quadrature with enough nodes to be exact for those
    polynomials (up to `MAX_QUAD_NODES`).

    Args:
        params (ModelParams): Record hyperparameters with the training exposures.
        train (CountMatrix): Training counts.
        x_blocks (np.ndarray): Record block counts over the training species.
        test (CountMatrix): Test counts over the same groups.
        m (array-like, optional): Test exposures; defaults to `test.exposure`.
        quad_nodes (int): Minimum quadrature nodes. Defaults to 64.

    Returns:
        PredictiveLogLik: Novel, existing and total log-likelihood.
    """
    existing, novel, _ = train.align(test)
    m = _check_m(params, test.exposure if m is None else m)
    x_blocks = np.asarray(x_blocks, dtype=np.int64)
    n = train.values
    totals = params.gamma_totals
    base = params.base

    kappa_total = float(params.group_exponents().sum())
    increments = increment_exponents(params, m)
    b0 = base.zeta + kappa_total
    b_all = b0 + float(increments.sum())

    max_test = np.maximum(existing.max(axis=1, initial=0), novel.max(axis=1, initial=0))
    tables = [build_stirling_table(g.alpha, int(max_test[j])) for j, g in enumerate(params.groups)]

    existing_total = 0.0
    for l in range(train.n_species):
        coefficients = [
            _existing_coefficients(g, tables[j], int(n[j, l]), int(x_blocks[j, l]), int(existing[j, l]), totals[j], m[j])
            for j, g in enumerate(params.groups)
        ]
        if any(np.all(np.isneginf(c)) for c in coefficients):
            return PredictiveLogLik(-math.inf, -math.inf, -math.inf)
        a = x_blocks[:, l].sum() - base.alpha
        existing_total += a * (math.log(b0) - math.log(b_all))
        if all(len(c) == 1 for c in coefficients):
            existing_total += sum(c[0] for c in coefficients)
            continue
        u, log_w = gamma_quadrature(float(a), _node_count(quad_nodes, int(existing[:, l].sum())))
        existing_total += logsumexp(log_w + _log_poly(coefficients, np.log(u) - math.log(b_all)))

    # void probability of the new-species Poisson process, over unordered labels
    novel_total = -laplace_exponent(base.tilted(kappa_total), float(increments.sum())) - gammaln(novel.shape[1] + 1)
    for v in range(novel.shape[1]):
        coefficients = [
            _novel_coefficients(g, tables[j], int(novel[j, v]), totals[j], m[j]) for j, g in enumerate(params.groups)
        ]
        if any(np.all(np.isneginf(c)) for c in coefficients):
            return PredictiveLogLik(-math.inf, -math.inf, -math.inf)
        u, log_w = gamma_quadrature(1.0 - base.alpha, _node_count(quad_nodes, int(novel[:, v].sum()) - 1))
        log_nodes = np.log(u) - math.log(b_all)
        novel_total += (
            math.log(base.theta)
            - (1.0 - base.alpha) * math.log(b_all)
            + logsumexp(log_w + _log_poly(coefficients, log_nodes) - log_nodes)
        )

    return PredictiveLogLik(float(novel_total), float(existing_total), float(novel_total + existing_total))


def _loglik_task(task):
    params, train, x_blocks, test, m, quad_nodes = task
    return record_predictive_loglik(params, train, x_blocks, test, m, quad_nodes)


def predictive_loglik(
    chainset: ChainSet,
    train: CountMatrix,
    test: CountMatrix,
    m=None,
    quad_nodes: int = 64,
    max_draws: Optional[int] = None,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """
    Test log-likelihood for every (thinned) chain record.

    Args:
        chainset (ChainSet): Records with stored latents.
        train (CountMatrix): Training counts the chains were fitted to.
        test (CountMatrix): Test counts.
        m (array-like, optional): Test exposures; defaults to `test.exposure`.
        quad_nodes (int): Minimum quadrature nodes.
        max_draws (int, optional): Cap on the number of records.
        workers (int, optional): Worker processes.

    Returns:
        pd.DataFrame: Columns chain, step, novel, existing, total.
    """
    if chainset.latents is None:
        raise DomainError("predictive log-likelihood needs chains stored with latents")
    pairs = chainset.record_index(max_draws)
    tasks = [
        (chainset.record_params(c, i, train), train, chainset.latents[c, i], test, m, quad_nodes)
        for c, i in pairs
    ]
    logger.info("Evaluating predictive log-likelihood on %d records", len(tasks))
    results = map_tasks(_loglik_task, tasks, workers)
    steps = chainset.steps
    return pd.DataFrame(
        [
            {"chain": c, "step": int(steps[i]), "novel": res.novel, "existing": res.existing, "total": res.total}
            for (c, i), res in zip(pairs, results)
        ],
        columns=["chain", "step", "novel", "existing", "total"],
    )


def _ppc_task(task):
    counts, params, x_init, test, m, seed, stream, n_augment = task
    rng = RngHandle(seed, stream)
    draw = sample_posterior_draw(rng.child(0), counts, params, x_init, n_augment)
    predicted = sample_predictive(rng.child(1), draw, params, m).to_count_matrix()
    out = []
    for j in range(counts.n_groups):
        observed, simulated = fof(test, j), fof(predicted, j)
        ks = math.nan if observed.empty or simulated.empty else ks_statistic(simulated, observed)
        out.append(ks)
    return out


def posterior_predictive_check(
    chainset: ChainSet,
    train: CountMatrix,
    test: CountMatrix,
    m=None,
    seed: int = 0,
    n_augment: int = 5,
    max_draws: Optional[int] = None,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """
    KS distance between the FoF of predicted and held-out test counts, per record and group.

    Args:
        chainset (ChainSet): Records.
        train (CountMatrix): Training counts.
        test (CountMatrix): Held-out counts over the same groups.
        m (array-like, optional): Test exposures; defaults to `test.exposure`.
        seed (int): Seed; record (c, i) uses stream (c, i).
        n_augment (int): Augmentation rounds for each posterior draw.
        max_draws (int, optional): Cap on the number of records.
        workers (int, optional): Worker processes.

    Returns:
        pd.DataFrame: Columns chain, step, group, ks (NaN when a FoF is empty).
    """
    m = test.exposure if m is None else m
    pairs = chainset.record_index(max_draws)
    tasks = []
    for c, i in pairs:
        x_init = None if chainset.latents is None else chainset.latents[c, i]
        tasks.append((train, chainset.record_params(c, i, train), x_init, test, m, seed, (c, i), n_augment))
    results = map_tasks(_ppc_task, tasks, workers)
    steps = chainset.steps
    rows = [
        {"chain": c, "step": int(steps[i]), "group": train.groups[j], "ks": ks}
        for (c, i), values in zip(pairs, results)
        for j, ks in enumerate(values)
    ]
    return pd.DataFrame(rows, columns=["chain", "step", "group", "ks"])
