"""Alpha and beta diversity over posterior abundance draws, and frequency-of-frequency comparisons."""
import logging
from dataclasses import dataclass
from typing import Iterable, List

import numpy as np
import pandas as pd
from scipy.spatial.distance import braycurtis
from scipy.stats import entropy

from .count_matrix import CountMatrix
from .exceptions import DomainError
from .posterior import PosteriorAbundanceDraw

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class FoF:
    """Frequency of frequencies: the fraction of species observed exactly k times.

    Attributes:
        support (np.ndarray): Sorted distinct positive counts k.
        mass (np.ndarray): Fraction of species with count k; sums to 1 unless empty.
    """

    support: np.ndarray
    mass: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.support) == 0

    def cdf(self, k) -> np.ndarray:
        cumulative = np.concatenate(([0.0], np.cumsum(self.mass)))
        return cumulative[np.searchsorted(self.support, np.asarray(k), side="right")]

    def to_dict(self) -> dict:
        return {int(k): float(p) for k, p in zip(self.support, self.mass)}


def fof_from_counts(values) -> FoF:
    """FoF of a vector of counts; zero counts are ignored."""
    values = np.asarray(values, dtype=np.int64)
    values = values[values > 0]
    if len(values) == 0:
        return FoF(np.zeros(0, dtype=np.int64), np.zeros(0))
    support, tally = np.unique(values, return_counts=True)
    return FoF(support, tally / tally.sum())


def fof(counts: CountMatrix, group: int) -> FoF:
    """
    FoF of one group of a count matrix.

    Args:
        counts (CountMatrix): Counts.
        group (int): Row index.

    Returns:
        FoF: Empty when the group has no positive counts.
    """
    return fof_from_counts(counts.values[group])


def ks_statistic(a: FoF, b: FoF) -> float:
    """
    Kolmogorov-Smirnov distance sup_k |CDF_a(k) - CDF_b(k)| between two FoFs.

    Args:
        a (FoF): First distribution.
        b (FoF): Second distribution.

    Returns:
        float: Distance in [0, 1].
    """
    if a.empty or b.empty:
        raise DomainError("KS statistic needs two nonempty FoF distributions")
    support = np.union1d(a.support, b.support)
    return float(np.max(np.abs(a.cdf(support) - b.cdf(support))))


def shannon_alpha(draw: PosteriorAbundanceDraw, group: int) -> float:
    """
    Shannon entropy (natural log) of the normalized abundance rates of one group.

    Every fitted species counts, including those with zero count in the
    group, whose rate is the unattached mass sigma_hat.

    Args:
        draw (PosteriorAbundanceDraw): Posterior draw.
        group (int): Row index.

    Returns:
        float: Entropy in [0, ln r].
    """
    return float(entropy(draw.sigma_tilde[group]))


def bray_curtis(draw: PosteriorAbundanceDraw, group_a: int, group_b: int) -> float:
    """
    Bray-Curtis dissimilarity sum |a - b| / sum (a + b) of two groups' rates.

    Args:
        draw (PosteriorAbundanceDraw): Posterior draw.
        group_a (int): First row index.
        group_b (int): Second row index.

    Returns:
        float: Dissimilarity in [0, 1].
    """
    if group_a == group_b:
        raise DomainError("Bray-Curtis needs two distinct groups")
    return float(braycurtis(draw.sigma_tilde[group_a], draw.sigma_tilde[group_b]))


def alpha_diversity(draws: Iterable[PosteriorAbundanceDraw]) -> pd.DataFrame:
    rows = []
    for d, draw in enumerate(draws):
        for j, label in enumerate(draw.groups):
            rows.append({"draw": d, "group": label, "shannon": shannon_alpha(draw, j)})
    return pd.DataFrame(rows, columns=["draw", "group", "shannon"])


def beta_diversity(draws: Iterable[PosteriorAbundanceDraw]) -> pd.DataFrame:
    """
    Pairwise Bray-Curtis dissimilarities per draw, one row per unordered group pair.

    Args:
        draws (iterable of PosteriorAbundanceDraw): Posterior draws.

    Returns:
        pd.DataFrame: Columns draw, group_a, group_b, bray_curtis.
    """
    rows = []
    for d, draw in enumerate(draws):
        J = len(draw.groups)
        for a in range(J):
            for b in range(a + 1, J):
                rows.append(
                    {
                        "draw": d,
                        "group_a": draw.groups[a],
                        "group_b": draw.groups[b],
                        "bray_curtis": bray_curtis(draw, a, b),
                    }
                )
    return pd.DataFrame(rows, columns=["draw", "group_a", "group_b", "bray_curtis"])


def summarize(values, level: float = 0.95) -> dict:
    """
    Mean and central interval of posterior draws; NaN draws are skipped.

    Args:
        values (array-like): Draws.
        level (float): Interval mass. Defaults to 0.95.

    Returns:
        dict: Keys mean, lower, upper, draws.
    """
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    if len(values) == 0:
        return {"mean": None, "lower": None, "upper": None, "draws": 0}
    tail = 50.0 * (1.0 - level)
    lower, upper = np.percentile(values, [tail, 100.0 - tail])
    return {"mean": float(values.mean()), "lower": float(lower), "upper": float(upper), "draws": int(len(values))}


def summarize_frame(frame: pd.DataFrame, by: List[str], column: str) -> pd.DataFrame:
    """Apply `summarize` to `column` within each `by` group."""
    rows = []
    for key, part in frame.groupby(by, sort=False):
        key = key if isinstance(key, tuple) else (key,)
        rows.append({**dict(zip(by, key)), **summarize(part[column])})
    return pd.DataFrame(rows)
