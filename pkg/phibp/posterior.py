"""Posterior functionals: block counts, OTU compositions, global rates and abundances.

Given hyperparameters, species are conditionally independent. Augmenting each
species with its global rate H_l decouples the groups: H_l | X is a gamma
variable and X[j, l] | N, H_l factorizes over groups. Abundance rates then
follow from the block structure.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import gammaln

from .count_matrix import CountMatrix
from .exceptions import DomainError
from .inference import ChainSet, group_stirling_tables
from .model import ModelParams
from .parallel import map_tasks
from .rand_dist import (
    RngHandle,
    sample_dirichlet,
    sample_gamma,
    sample_log_categorical,
    sample_multinomial,
    sample_tilted_stable,
)
from .special_fn import (
    LevyParams,
    StirlingTable,
    build_stirling_table,
    levy_tail_mass,
    log_stirling_columns,
    log_xi_row,
)

logger = logging.getLogger(__name__)

ABUNDANCE_METHODS = ("assembled", "direct")
MIN_JUMP = 1e-300


@dataclass(eq=False)
class PosteriorAbundanceDraw:
    """One joint posterior draw of rates and latent OTU structure.

    Attributes:
        groups (list of str): Group labels.
        species (list of str): Species labels.
        h (np.ndarray): Global rates H_l, shape (r,).
        sigma_tilde (np.ndarray): Group abundance rates, shape (J, r).
        sigma_hat (np.ndarray): Rate mass not attached to observed OTUs, shape (J, r).
        x_blocks (np.ndarray): OTU block counts X[j, l].
        counts (np.ndarray): Observed counts N[j, l].
        otu_rates (list of list of np.ndarray): S[j, k, l] per group and species,
            or None when read back from a table.
        otu_counts (list of list of np.ndarray): OTU counts per group and species,
            or None when read back from a table.
    """

    groups: List[str]
    species: List[str]
    h: np.ndarray
    sigma_tilde: np.ndarray
    sigma_hat: np.ndarray
    x_blocks: np.ndarray
    counts: np.ndarray
    otu_rates: Optional[List[List[np.ndarray]]] = None
    otu_counts: Optional[List[List[np.ndarray]]] = None

    def __repr__(self):
        return f"PosteriorAbundanceDraw(groups={len(self.groups)}, species={len(self.species)})"

    def check_invariants(self) -> None:
        assert np.all(self.h > 0)
        assert np.all(self.sigma_hat > 0)
        if self.otu_rates is None:
            assert np.all(self.sigma_tilde >= self.sigma_hat)
            return
        for j in range(len(self.groups)):
            for l in range(len(self.species)):
                rates = self.otu_rates[j][l]
                otus = self.otu_counts[j][l]
                assert len(rates) == len(otus) == self.x_blocks[j, l]
                assert np.all(rates > 0)
                assert otus.sum() == self.counts[j, l]
                assert self.sigma_tilde[j, l] == self.sigma_hat[j, l] + rates.sum()

    def normalized(self) -> np.ndarray:
        """Per-group relative abundances sigma_tilde[j, l] / sum_t sigma_tilde[j, t]."""
        return self.sigma_tilde / self.sigma_tilde.sum(axis=1, keepdims=True)

    def to_frame(self, draw: int = 0) -> pd.DataFrame:
        J, r = self.sigma_tilde.shape
        return pd.DataFrame(
            {
                "draw": draw,
                "group": np.repeat(self.groups, r),
                "species": np.tile(self.species, J),
                "H": np.tile(self.h, J),
                "sigma_tilde": self.sigma_tilde.ravel(),
                "sigma_hat": self.sigma_hat.ravel(),
                "X": self.x_blocks.ravel(),
                "n": self.counts.ravel(),
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> List["PosteriorAbundanceDraw"]:
        """
        Rebuild draws from the long table written by `to_frame`.

        Args:
            frame (pd.DataFrame): Rows of one or more draws.

        Returns:
            list of PosteriorAbundanceDraw: Draws in order of the draw column,
            without OTU-level detail.
        """
        draws = []
        for _, part in frame.groupby("draw", sort=True):
            groups = list(dict.fromkeys(part["group"].astype(str)))
            species = list(dict.fromkeys(part["species"].astype(str)))
            shape = (len(groups), len(species))

            def grid(column):
                return part[column].to_numpy().reshape(shape)

            draws.append(
                cls(
                    groups,
                    species,
                    grid("H")[0].astype(float),
                    grid("sigma_tilde").astype(float),
                    grid("sigma_hat").astype(float),
                    grid("X").astype(np.int64),
                    grid("n").astype(np.int64),
                )
            )
        return draws


def sample_h(rng: RngHandle, x_l, params: ModelParams, kappa_total: Optional[float] = None):
    """
    Sample the global rate H_l | X~_l = x_l ~ Gamma(x_l - alpha_0, zeta_0 + kappa).

    Args:
        rng (RngHandle): Random stream.
        x_l (int or np.ndarray): Total block count(s), at least 1.
        params (ModelParams): Hyperparameters.
        kappa_total (float, optional): Cached sum of group Laplace exponents.

    Returns:
        float or np.ndarray: Positive rate(s).
    """
    x_l = np.asarray(x_l)
    if np.any(x_l < 1):
        raise DomainError("sample_h requires x_l >= 1")
    if kappa_total is None:
        kappa_total = float(params.group_exponents().sum())
    base = params.base
    return sample_gamma(rng, x_l - base.alpha, base.zeta + kappa_total)


def sample_composition(rng: RngHandle, alpha: float, n: int, x: int, log_stirling=None) -> np.ndarray:
    """
    Sample the ordered OTU composition of n into x blocks by first-part recursion.

    P(c_1 = c | n, x) is proportional to
    Gamma(c - alpha) / c! * S_alpha(n - c, x - 1) / (n - c)!.

    Args:
        rng (RngHandle): Random stream.
        alpha (float): Group discount.
        n (int): Count, at least x.
        x (int): Number of blocks, at least 1.
        log_stirling (np.ndarray, optional): `log_stirling_columns(alpha, >= n - 1, >= x - 1)`.

    Returns:
        np.ndarray: x positive integers summing to n.
    """
    if not 1 <= x <= n:
        raise DomainError(f"composition needs 1 <= x={x} <= n={n}")
    if x == 1:
        return np.array([n], dtype=np.int64)
    if log_stirling is None:
        log_stirling = log_stirling_columns(alpha, n - 1, x - 1)

    parts = np.empty(x, dtype=np.int64)
    remaining = n
    for k in range(x - 1):
        blocks = x - k
        cs = np.arange(1, remaining - blocks + 2)
        rest = remaining - cs
        log_w = (
            gammaln(cs - alpha)
            - gammaln(cs + 1)
            + log_stirling[rest, blocks - 1]
            - gammaln(rest + 1)
        )
        parts[k] = cs[sample_log_categorical(rng, log_w)]
        remaining -= parts[k]
    parts[-1] = remaining
    return parts


def sample_latent_given_counts(
    rng: RngHandle,
    counts_column,
    params: ModelParams,
    h: float,
    tables: Optional[Sequence[StirlingTable]] = None,
    compositions: bool = True,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Sample X[j, l] | N[j, l], H_l = h for every group, then the OTU compositions.

    P(X = x) is proportional to h^x Xi^[n]_x(tau_j, M_j) over x = 1..n.

    Args:
        rng (RngHandle): Random stream.
        counts_column (array-like): N[., l] over groups.
        params (ModelParams): Hyperparameters.
        h (float): Positive global rate.
        tables (list of StirlingTable, optional): Per-group tables holding rows N[j, l].
        compositions (bool): Also sample the compositions. Defaults to True.

    Returns:
        Tuple[np.ndarray, list]: Block counts per group and, per group, the OTU
        counts (empty for N = 0; empty lists when `compositions` is False).
    """
    counts_column = np.asarray(counts_column, dtype=np.int64)
    if not h > 0:
        raise DomainError(f"h must be positive, got {h}")
    totals = params.gamma_totals
    log_h = math.log(h)
    x = np.zeros(len(counts_column), dtype=np.int64)
    otus = []
    for j, (n, g) in enumerate(zip(counts_column, params.groups)):
        n = int(n)
        if n == 0:
            otus.append(np.zeros(0, dtype=np.int64))
            continue
        table = tables[j] if tables is not None else _row_table(g.alpha, n)
        log_w = np.arange(1, n + 1) * log_h + log_xi_row(g, table, n, totals[j])
        x[j] = sample_log_categorical(rng, log_w) + 1
        otus.append(sample_composition(rng, g.alpha, n, int(x[j])) if compositions else np.zeros(0, dtype=np.int64))
    return x, otus


def _row_table(alpha: float, n: int) -> StirlingTable:
    return build_stirling_table(alpha, n, rows=[n])


def sample_abundance(
    rng: RngHandle,
    n: int,
    x: int,
    otu_counts,
    h: float,
    p: LevyParams,
    gamma_total: float,
    method: str = "assembled",
) -> Tuple[float, float, np.ndarray]:
    """
    Sample one group abundance rate with its decomposition.

    sigma_tilde = sigma_hat + sum_k S_k with S_k ~ Gamma(C_k - alpha, R) and
    R = M_j + zeta_j. In the gamma case sigma_hat ~ Gamma(theta h, R); in the
    GG case sigma_hat is a tilted stable variable with Laplace transform
    exp(-h (psi(s + M_j) - psi(M_j))). The gamma case can also draw
    sigma_tilde ~ Gamma(theta h + n, R) directly and split it by a Dirichlet
    (`method="direct"`); both methods have the same law.

    Args:
        rng (RngHandle): Random stream.
        n (int): Count N[j, l].
        x (int): Block count X[j, l].
        otu_counts (array-like): x OTU counts summing to n.
        h (float): Positive global rate.
        p (LevyParams): Group density.
        gamma_total (float): Group exposure.
        method (str): "assembled" or "direct". Defaults to "assembled".

    Returns:
        Tuple[float, float, np.ndarray]: sigma_tilde, sigma_hat and the OTU rates.
    """
    if method not in ABUNDANCE_METHODS:
        raise DomainError(f"unknown abundance method {method!r}")
    otu_counts = np.asarray(otu_counts, dtype=np.int64)
    if len(otu_counts) != x or otu_counts.sum() != n or np.any(otu_counts < 1):
        raise DomainError("OTU counts must be x positive integers summing to n")
    if not h > 0:
        raise DomainError(f"h must be positive, got {h}")

    rate = gamma_total + p.zeta
    if p.is_gamma:
        if method == "direct":
            total = sample_gamma(rng, p.theta * h + n, rate)
            split = total * sample_dirichlet(rng, np.concatenate(([p.theta * h], otu_counts)))
            sigma_hat = max(float(split[0]), np.finfo(float).tiny)
            rates = np.maximum(split[1:], np.finfo(float).tiny)
        else:
            sigma_hat = sample_gamma(rng, p.theta * h, rate)
            rates = sample_gamma(rng, otu_counts, rate) if x else np.zeros(0)
    else:
        if method == "direct":
            raise DomainError("the direct abundance method needs alpha = 0")
        sigma_hat = max(sample_tilted_stable(rng, p.alpha, p.theta * h / p.alpha, tilt=rate), np.finfo(float).tiny)
        rates = sample_gamma(rng, otu_counts - p.alpha, rate) if x else np.zeros(0)
    rates = np.atleast_1d(np.asarray(rates, dtype=float)) if x else np.zeros(0)
    return sigma_hat + float(rates.sum()), sigma_hat, rates


def sample_posterior_draw(
    rng: RngHandle,
    counts: CountMatrix,
    params: ModelParams,
    x_init=None,
    n_augment: int = 5,
    tables: Optional[Sequence[StirlingTable]] = None,
    method: str = "assembled",
) -> PosteriorAbundanceDraw:
    """
    One posterior draw of (H, X, compositions, abundances) given hyperparameters.

    Alternates H | X and X | N, H for `n_augment` rounds starting from
    `x_init`, then draws H, the final block counts with compositions, and the
    abundance rates.

    Args:
        rng (RngHandle): Random stream.
        counts (CountMatrix): Observed counts.
        params (ModelParams): Hyperparameters with the data's exposures.
        x_init (np.ndarray, optional): Starting X, e.g. a chain record. Defaults to 1{N > 0}.
        n_augment (int): Augmentation rounds. Defaults to 5.
        tables (list of StirlingTable, optional): Tables holding the observed rows.
        method (str): Abundance method for the gamma case.

    Returns:
        PosteriorAbundanceDraw: The draw.
    """
    n = counts.values
    if tables is None:
        tables = group_stirling_tables(counts, params)
    x = (n > 0).astype(np.int64) if x_init is None else np.array(x_init, dtype=np.int64)
    kappa_total = float(params.group_exponents().sum())
    J, r = n.shape

    for _ in range(n_augment):
        h = np.atleast_1d(sample_h(rng, x.sum(axis=0), params, kappa_total))
        for l in range(r):
            x[:, l], _ = sample_latent_given_counts(rng, n[:, l], params, h[l], tables, compositions=False)

    h = np.atleast_1d(sample_h(rng, x.sum(axis=0), params, kappa_total))
    totals = params.gamma_totals
    sigma_tilde = np.empty((J, r))
    sigma_hat = np.empty((J, r))
    otu_rates = [[None] * r for _ in range(J)]
    otu_counts = [[None] * r for _ in range(J)]
    for l in range(r):
        x[:, l], otus = sample_latent_given_counts(rng, n[:, l], params, h[l], tables)
        for j, g in enumerate(params.groups):
            sigma_tilde[j, l], sigma_hat[j, l], otu_rates[j][l] = sample_abundance(
                rng, int(n[j, l]), int(x[j, l]), otus[j], h[l], g, totals[j], method
            )
            otu_counts[j][l] = otus[j]

    return PosteriorAbundanceDraw(
        counts.groups, counts.species, h, sigma_tilde, sigma_hat, x, n.copy(), otu_rates, otu_counts
    )


def _posterior_task(task) -> PosteriorAbundanceDraw:
    counts, params, x_init, seed, stream, n_augment, method = task
    return sample_posterior_draw(RngHandle(seed, stream), counts, params, x_init, n_augment, method=method)


def sample_posterior(
    chainset: ChainSet,
    counts: CountMatrix,
    seed: int = 0,
    n_augment: int = 5,
    max_draws: Optional[int] = None,
    method: str = "assembled",
    workers: Optional[int] = None,
) -> List[PosteriorAbundanceDraw]:
    """
    One abundance draw per chain record, started from the record's latent X.

    Args:
        chainset (ChainSet): Fitted records.
        counts (CountMatrix): The counts the chains were fitted to.
        seed (int): Seed; record (c, i) uses stream (c, i).
        n_augment (int): Augmentation rounds per draw.
        max_draws (int, optional): Cap on the number of records used.
        method (str): Abundance method for the gamma case.
        workers (int, optional): Worker processes.

    Returns:
        list of PosteriorAbundanceDraw: The draws, chain-major.
    """
    if chainset.species != counts.species or chainset.groups != counts.groups:
        raise DomainError("counts do not match the labels the chains were fitted to")
    tasks = []
    for c, i in chainset.record_index(max_draws):
        x_init = None if chainset.latents is None else chainset.latents[c, i]
        tasks.append((counts, chainset.record_params(c, i, counts), x_init, seed, (c, i), n_augment, method))
    logger.info("Sampling %d posterior abundance draws", len(tasks))
    return map_tasks(_posterior_task, tasks, workers)


def sample_unseen_base(
    rng: RngHandle, params: ModelParams, budget: int = 10_000, min_jump: float = 0.0
) -> List[Tuple[float, np.ndarray]]:
    """
    Largest jumps of the unobserved-species base measure and their group rates.

    The unobserved species follow a CRM with Lévy density
    exp(-lam kappa) tau_0(lam). Jumps are produced in decreasing order by
    inverting the tail mass at unit-rate Poisson arrival times and stop after
    `budget` jumps or below `min_jump`. Group rates of each unseen species are
    drawn from their zero-count posterior. This truncation is an approximation
    for diagnostics only.

    Args:
        rng (RngHandle): Random stream.
        params (ModelParams): Hyperparameters.
        budget (int): Maximum number of jumps. Defaults to 10000.
        min_jump (float): Smallest jump kept. Defaults to 0 (floored at 1e-300).

    Returns:
        list of tuple: (lam, group rates of shape (J,)) in decreasing lam.
    """
    if budget < 0:
        raise DomainError(f"budget must be nonnegative, got {budget}")
    kappa_total = float(params.group_exponents().sum())
    tilted = params.base.tilted(kappa_total)
    log_floor = math.log(max(min_jump, MIN_JUMP))
    floor_mass = levy_tail_mass(tilted, math.exp(log_floor))
    totals = params.gamma_totals

    def excess(log_lam, arrival):
        return levy_tail_mass(tilted, math.exp(log_lam)) - arrival

    jumps = []
    arrival = 0.0
    hi = 0.0
    g = rng.generator
    while len(jumps) < budget:
        arrival += g.exponential()
        if arrival > floor_mass:
            break
        lo = log_floor
        while excess(hi, arrival) > 0:
            hi += 10.0
        log_lam = brentq(excess, lo, hi, args=(arrival,), xtol=1e-12)
        hi = log_lam
        lam = math.exp(log_lam)

        rates = np.empty(len(params.groups))
        for j, p in enumerate(params.groups):
            rate = p.zeta + totals[j]
            if p.is_gamma:
                rates[j] = sample_gamma(rng, p.theta * lam, rate)
            else:
                rates[j] = sample_tilted_stable(rng, p.alpha, p.theta * lam / p.alpha, tilt=rate)
        jumps.append((lam, rates))
    logger.debug("Drew %d unseen base jumps", len(jumps))
    return jumps


def split_otu_counts(rng: RngHandle, otu_counts, weights) -> np.ndarray:
    """
    Split OTU counts across samples, each OTU multinomially with the sample weights.

    Args:
        rng (RngHandle): Random stream.
        otu_counts (array-like): OTU counts of one group and species.
        weights (array-like): Sample weights gamma_{i,j}.

    Returns:
        np.ndarray: Per-OTU per-sample counts of shape (x, M_j).
    """
    weights = np.asarray(weights, dtype=float)
    otu_counts = np.asarray(otu_counts, dtype=np.int64)
    if len(otu_counts) == 0:
        return np.zeros((0, len(weights)), dtype=np.int64)
    return sample_multinomial(rng, otu_counts, weights / weights.sum()).reshape(len(otu_counts), len(weights))
