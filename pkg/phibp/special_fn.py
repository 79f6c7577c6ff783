"""Closed-form Lévy functionals and log-space generalized Stirling tables.

Every density in the model is built from the generalized gamma (GG) Lévy
density

    tau(s) = theta / Gamma(1 - alpha) * s^(-alpha - 1) * exp(-zeta * s),

with alpha = 0 giving the gamma process. The gamma branch is selected exactly
at ``alpha == 0`` throughout; no limits are taken at runtime.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Union

import numpy as np
from scipy.special import exp1, gammaincc, gammaln

from .exceptions import DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def _scalar_or_array(out):
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LevyParams:
    """One (alpha, theta, zeta) triple of a generalized gamma Lévy density.

    Attributes:
        alpha (float): Stability index in [0, 1); 0 selects the gamma case.
        theta (float): Mass parameter, positive.
        zeta (float): Exponential tilting rate, positive.
    """

    alpha: float = 0.0
    theta: float = 1.0
    zeta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "theta", "zeta"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite, got {getattr(self, name)}")
        if not 0.0 <= self.alpha < 1.0:
            raise DomainError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.theta <= 0.0:
            raise DomainError(f"theta must be positive, got {self.theta}")
        if self.zeta <= 0.0:
            raise DomainError(f"zeta must be positive, got {self.zeta}")

    @property
    def is_gamma(self) -> bool:
        return self.alpha == 0.0

    def tilted(self, t: float) -> "LevyParams":
        """
        Exponentially tilt the density by exp(-t s).

        The family is closed under tilting: the result has rate zeta + t.

        Args:
            t (float): Nonnegative tilting exposure.

        Returns:
            LevyParams: The tilted parameters.
        """
        if t < 0:
            raise DomainError(f"tilting exposure must be nonnegative, got {t}")
        return replace(self, zeta=self.zeta + float(t))


def laplace_exponent(p: LevyParams, t: ArrayLike) -> ArrayLike:
    """
    Laplace exponent psi(t) = integral of (1 - exp(-t s)) tau(s) ds.

    Args:
        p (LevyParams): The Lévy density.
        t (float or np.ndarray): Nonnegative exposure(s).

    Returns:
        float or np.ndarray: (theta/alpha)((zeta + t)^alpha - zeta^alpha), or
        theta log(1 + t/zeta) in the gamma case.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("laplace_exponent requires t >= 0")

    if p.is_gamma:
        out = p.theta * np.log1p(t / p.zeta)
    else:
        # expm1 form keeps precision for small alpha and small t
        out = (
            p.theta
            / p.alpha
            * p.zeta**p.alpha
            * np.expm1(p.alpha * np.log1p(t / p.zeta))
        )
    return _scalar_or_array(out)


def log_laplace_moment(p: LevyParams, c: ArrayLike, t: ArrayLike) -> ArrayLike:
    """
    Log of psi^(c)(t) = integral of s^c exp(-t s) tau(s) ds.

    Args:
        p (LevyParams): The Lévy density.
        c (int or np.ndarray): Moment order(s), at least 1.
        t (float or np.ndarray): Nonnegative exposure(s).

    Returns:
        float or np.ndarray: log(theta) + log Gamma(c - alpha) - log Gamma(1 - alpha)
        + (alpha - c) log(t + zeta).
    """
    c = np.asarray(c, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(c < 1):
        raise DomainError("laplace_moment requires c >= 1")
    if np.any(t < 0):
        raise DomainError("laplace_moment requires t >= 0")

    if p.is_gamma:
        out = math.log(p.theta) + gammaln(c) - c * np.log(t + p.zeta)
    else:
        out = (
            math.log(p.theta)
            + gammaln(c - p.alpha)
            - gammaln(1.0 - p.alpha)
            + (p.alpha - c) * np.log(t + p.zeta)
        )
    return _scalar_or_array(out)


def laplace_moment(p: LevyParams, c: ArrayLike, t: ArrayLike) -> ArrayLike:
    """
    Lévy moment psi^(c)(t), computed in log space and exponentiated.

    Args:
        p (LevyParams): The Lévy density.
        c (int or np.ndarray): Moment order(s), at least 1.
        t (float or np.ndarray): Nonnegative exposure(s).

    Returns:
        float or np.ndarray: The moment(s).
    """
    return _scalar_or_array(np.exp(log_laplace_moment(p, c, t)))


def levy_density(p: LevyParams, s: ArrayLike) -> ArrayLike:
    s = np.asarray(s, dtype=float)
    out = np.exp(
        math.log(p.theta)
        - gammaln(1.0 - p.alpha)
        - (p.alpha + 1.0) * np.log(s)
        - p.zeta * s
    )
    return _scalar_or_array(out)


def levy_tail_mass(p: LevyParams, x: ArrayLike) -> ArrayLike:
    """
    Tail mass N(x) = integral over (x, inf) of tau, for x > 0.

    The GG case uses Gamma(-alpha, z) = (z^-alpha e^-z - Gamma(1 - alpha, z)) / alpha.

    Args:
        p (LevyParams): The Lévy density.
        x (float or np.ndarray): Positive jump threshold(s).

    Returns:
        float or np.ndarray: The expected number of jumps larger than x.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("levy_tail_mass requires x > 0")

    z = p.zeta * x
    if p.is_gamma:
        out = p.theta * exp1(z)
    else:
        a = p.alpha
        out = (p.theta / a) * (
            np.exp(-a * np.log(x) - z - gammaln(1.0 - a))
            - p.zeta**a * gammaincc(1.0 - a, z)
        )
        out = np.maximum(out, 0.0)
    return _scalar_or_array(out)


def mtp_log_pmf(p: LevyParams, gamma_total: float, c: ArrayLike) -> ArrayLike:
    """
    Log pmf of the mixed zero-truncated Poisson law MtP(tau, gamma).

    P(C = c) = gamma^c psi^(c)(gamma) / (c! psi(gamma)), c >= 1. The mass
    parameter theta cancels.

    Args:
        p (LevyParams): The Lévy density.
        gamma_total (float): Positive exposure.
        c (int or np.ndarray): Counts, at least 1.

    Returns:
        float or np.ndarray: The log probabilities.
    """
    if gamma_total <= 0:
        raise DomainError(f"gamma_total must be positive, got {gamma_total}")
    c = np.asarray(c, dtype=float)
    out = (
        c * math.log(gamma_total)
        + log_laplace_moment(p, c, gamma_total)
        - gammaln(c + 1.0)
        - math.log(laplace_exponent(p, gamma_total))
    )
    return _scalar_or_array(out)


def gg_laplace_transform(alpha: float, y: float, s: ArrayLike, tilt: float = 1.0) -> ArrayLike:
    """
    Laplace transform E[exp(-s T)] of the tilted stable variable T.

    The tilted form is exp(-y((tilt + s)^alpha - tilt^alpha)); tilt = 1 gives
    the simple form exp(-y((1 + s)^alpha - 1)), whose mean is y * alpha.

    Args:
        alpha (float): Stability index in (0, 1).
        y (float): Positive scale.
        s (float or np.ndarray): Nonnegative argument(s).
        tilt (float): Nonnegative tilting rate.

    Returns:
        float or np.ndarray: The transform value(s).
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    s = np.asarray(s, dtype=float)
    return _scalar_or_array(np.exp(-y * ((tilt + s) ** alpha - tilt**alpha)))


class StirlingTable:
    """Log generalized Stirling numbers ln S_alpha(n, k), kept row by row.

    Rows are stored in one flat array with per-row offsets. A table may keep
    only a subset of rows; row 0 and the last computed row are always kept so
    the recurrence can be resumed by `extended`.

    Args:
        alpha (float): Discount in [0, 1).
        max_n (int): Largest computed row.
        rows (dict): Mapping n -> array of length n + 1 indexed by k.
    """

    def __init__(self, alpha, max_n, rows):
        self.alpha = float(alpha)
        self.max_n = int(max_n)

        kept = sorted(rows)
        self._offsets = np.full(self.max_n + 1, -1, dtype=np.int64)
        sizes = np.array([n + 1 for n in kept], dtype=np.int64)
        starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        self._offsets[kept] = starts
        self._flat = np.concatenate([rows[n] for n in kept])
        self._flat.setflags(write=False)

    @property
    def rows(self):
        return np.flatnonzero(self._offsets >= 0)

    def has_row(self, n: int) -> bool:
        return 0 <= n <= self.max_n and self._offsets[n] >= 0

    def log_row(self, n: int) -> np.ndarray:
        """
        Return ln S_alpha(n, k) for k = 0..n as a read-only view.

        Args:
            n (int): The row.

        Returns:
            np.ndarray: Array of length n + 1; entry 0 is -inf for n > 0.
        """
        if not self.has_row(n):
            raise KeyError(f"row {n} is not stored in this table (max_n={self.max_n})")
        start = self._offsets[n]
        return self._flat[start : start + n + 1]

    def log_value(self, n: int, k: int) -> float:
        if k < 0 or k > n:
            return -math.inf
        return float(self.log_row(n)[k])

    def log_values(self, ns, ks) -> np.ndarray:
        """
        Vectorized lookup of ln S_alpha(n, k); out-of-range k gives -inf.

        Args:
            ns (array-like): Rows, all stored.
            ks (array-like): Columns, broadcast against `ns`.

        Returns:
            np.ndarray: The log values.
        """
        ns, ks = np.broadcast_arrays(np.asarray(ns, dtype=np.int64), np.asarray(ks, dtype=np.int64))
        if ns.size and (ns.min() < 0 or ns.max() > self.max_n):
            raise KeyError("row outside the table")
        offsets = self._offsets[ns]
        if np.any(offsets < 0):
            missing = np.unique(ns[offsets < 0])
            raise KeyError(f"rows {missing.tolist()} are not stored in this table")
        valid = (ks >= 0) & (ks <= ns)
        out = self._flat[offsets + np.where(valid, ks, 0)]
        return np.where(valid, out, -np.inf)

    def extended(self, max_n: int, rows: Optional[Iterable[int]] = None) -> "StirlingTable":
        """
        Grow the table to a larger max_n by resuming the recurrence.

        Args:
            max_n (int): New largest row.
            rows (iterable of int, optional): Rows to keep beyond the current
                ones. Defaults to every row.

        Returns:
            StirlingTable: The larger table (self when nothing needs computing).
        """
        if max_n <= self.max_n:
            return self
        logger.debug("Extending Stirling table alpha=%s from %d to %d", self.alpha, self.max_n, max_n)
        kept = {int(n): np.array(self.log_row(n)) for n in self.rows}
        kept.update(_stirling_rows(self.alpha, self.max_n, kept[self.max_n], max_n, rows))
        return StirlingTable(self.alpha, max_n, kept)

    def __repr__(self):
        return f"StirlingTable(alpha={self.alpha}, max_n={self.max_n}, rows={len(self.rows)})"


def _stirling_rows(alpha, start_n, start_row, max_n, rows):
    keep = None if rows is None else set(int(n) for n in rows)
    out = {}
    prev = start_row
    for n in range(start_n, max_n):
        # S(n+1, k) = (n - k alpha) S(n, k) + S(n, k-1)
        new = np.full(n + 2, -np.inf)
        ks = np.arange(1, n + 1)
        new[1 : n + 1] = np.log(n - ks * alpha) + prev[1 : n + 1]
        new[1 : n + 2] = np.logaddexp(new[1 : n + 2], prev[0 : n + 1])
        prev = new
        if keep is None or (n + 1) in keep or n + 1 == max_n:
            out[n + 1] = new
    return out


def build_stirling_table(alpha: float, max_n: int, rows: Optional[Iterable[int]] = None) -> StirlingTable:
    """
    Build ln S_alpha(n, k) for 0 <= k <= n <= max_n by the log-space recurrence.

    S_alpha(n + 1, k) = (n - k alpha) S_alpha(n, k) + S_alpha(n, k - 1) with
    S_alpha(0, 0) = 1. alpha = 0 yields the unsigned Stirling numbers of the
    first kind.

    Args:
        alpha (float): Discount in [0, 1).
        max_n (int): Largest row, at least 0.
        rows (iterable of int, optional): Only keep these rows (plus rows 0 and
            max_n). Defaults to keeping every row.

    Returns:
        StirlingTable: The table.
    """
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    if max_n < 0:
        raise DomainError(f"max_n must be nonnegative, got {max_n}")

    base = {0: np.zeros(1)}
    base.update(_stirling_rows(float(alpha), 0, base[0], int(max_n), rows))
    return StirlingTable(alpha, max_n, base)


def log_stirling_columns(alpha: float, max_n: int, max_k: int) -> np.ndarray:
    """
    ln S_alpha(n, k) for n <= max_n restricted to columns k <= max_k.

    Column k of row n + 1 only needs columns k - 1 and k of row n, so the
    capped array costs O(max_n * max_k).

    Args:
        alpha (float): Discount in [0, 1).
        max_n (int): Largest row.
        max_k (int): Largest column.

    Returns:
        np.ndarray: Array of shape (max_n + 1, max_k + 1); -inf where k > n.
    """
    if not 0.0 <= alpha < 1.0:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    out = np.full((max_n + 1, max_k + 1), -np.inf)
    out[0, 0] = 0.0
    ks = np.arange(1, max_k + 1)
    for n in range(max_n):
        prev = out[n]
        with np.errstate(invalid="ignore", divide="ignore"):
            scaled = np.log(np.maximum(n - ks * alpha, 0.0)) + prev[1:]
        out[n + 1, 1:] = np.logaddexp(np.where(ks <= n, scaled, -np.inf), prev[:-1])
    return out


def xi_partition_weight(
    p: LevyParams, table: StirlingTable, n: int, x: int, gamma_total: float
) -> float:
    """
    Log partition weight ln Xi^[n]_x(tau, gamma).

    Equals x ln theta + ln S_alpha(n, x) + (alpha x - n) ln(gamma + zeta), the
    total weight of splitting n into x ordered OTU blocks.

    Args:
        p (LevyParams): Group Lévy density.
        table (StirlingTable): Table with the same alpha covering row n.
        n (int): Count.
        x (int): Number of blocks in [0, n].
        gamma_total (float): Positive exposure.

    Returns:
        float: The log weight; 0 for n = x = 0 and -inf for x = 0 < n.
    """
    if x > n or x < 0:
        raise DomainError(f"block count x={x} must lie in [0, n={n}]")
    if table.alpha != p.alpha:
        raise DomainError("Stirling table alpha does not match the Lévy parameters")
    if n == 0:
        return 0.0
    if x == 0:
        return -math.inf
    return (
        x * math.log(p.theta)
        + table.log_value(n, x)
        + (p.alpha * x - n) * math.log(gamma_total + p.zeta)
    )


def log_xi_row(p: LevyParams, table: StirlingTable, n: int, gamma_total: float) -> np.ndarray:
    """
    Vectorized `xi_partition_weight` over x = 1..n.

    Args:
        p (LevyParams): Group Lévy density.
        table (StirlingTable): Table covering row n.
        n (int): Positive count.
        gamma_total (float): Positive exposure.

    Returns:
        np.ndarray: Log weights for x = 1..n.
    """
    xs = np.arange(1, n + 1)
    return (
        xs * math.log(p.theta)
        + table.log_row(n)[1:]
        + (p.alpha * xs - n) * math.log(gamma_total + p.zeta)
    )
