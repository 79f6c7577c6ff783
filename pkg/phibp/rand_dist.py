"""Exact samplers for the primitive laws of the generative and posterior processes."""
import logging
import math
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DomainError
from .special_fn import LevyParams, mtp_log_pmf

logger = logging.getLogger(__name__)

_MTP_BLOCK = 512
_MTP_MAX_TABLE = 1 << 20


class RngHandle:
    """A seeded, reproducible random stream.

    The stream is the numpy PCG64 generator of the seed sequence
    ``SeedSequence(seed, spawn_key=stream)``, so identical (seed, stream)
    pairs replay identical draws, and children derived with `child` are
    independent of how much the parent has been consumed.

    Args:
        seed (int): Unsigned 64-bit seed.
        stream (int or tuple of int): Stream id, or a path of ids.
    """

    def __init__(self, seed: int = 0, stream: Union[int, Sequence[int]] = 0):
        if isinstance(stream, (int, np.integer)):
            stream = (int(stream),)
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        if not 0 <= self.seed < 2**64 or any(not 0 <= s < 2**64 for s in self.stream):
            raise DomainError("seed and stream ids must be unsigned 64-bit integers")
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream))
        )

    def child(self, *index: int) -> "RngHandle":
        return RngHandle(self.seed, self.stream + tuple(index))

    def __repr__(self):
        return f"RngHandle(seed={self.seed}, stream={self.stream})"


def sample_zt_poisson(rng: RngHandle, s, size=None):
    """
    Sample the zero-truncated Poisson(s) law.

    Conditioning a rate-s Poisson process on [0, 1] to have an arrival, the
    first arrival time T has a truncated exponential law and the count is
    1 + Poisson(s (1 - T)).

    Args:
        rng (RngHandle): Random stream.
        s (float or np.ndarray): Positive rate(s).
        size (int or tuple, optional): Output shape.

    Returns:
        int or np.ndarray: Counts >= 1.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise DomainError("zero-truncated Poisson requires s > 0")
    g = rng.generator
    shape = s.shape if size is None else size
    u = g.random(shape)
    first = -np.log1p(u * np.expm1(-s)) / s
    out = 1 + g.poisson(s * (1.0 - np.clip(first, 0.0, 1.0)))
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


class MtPTable:
    """Cumulative pmf of MtP(tau, gamma), grown lazily for inverse-CDF sampling.

    The pmf does not depend on theta. Uniforms beyond the tabulated mass walk
    the tail with the ratio P(c + 1) / P(c) = (c - alpha) / (c + 1) * gamma / (gamma + zeta).

    Args:
        alpha (float): Discount in [0, 1).
        zeta (float): Positive rate.
        gamma_total (float): Positive exposure.
    """

    def __init__(self, alpha: float, zeta: float, gamma_total: float):
        self.params = LevyParams(alpha=alpha, theta=1.0, zeta=zeta)
        self.gamma_total = float(gamma_total)
        self.ratio = self.gamma_total / (self.gamma_total + zeta)
        self._log_pmf = np.empty(0)
        self._cdf = np.empty(0)
        self._extend(_MTP_BLOCK)

    def __len__(self):
        return len(self._cdf)

    def _extend(self, size):
        start = len(self._cdf)
        cs = np.arange(start + 1, size + 1)
        log_pmf = mtp_log_pmf(self.params, self.gamma_total, cs)
        total = self._cdf[-1] if start else 0.0
        self._log_pmf = np.concatenate((self._log_pmf, log_pmf))
        self._cdf = np.concatenate((self._cdf, total + np.cumsum(np.exp(log_pmf))))

    def _walk_tail(self, u):
        c = len(self._cdf)
        pmf = math.exp(self._log_pmf[-1])
        cum = self._cdf[-1]
        while cum < u and pmf > 0.0:
            pmf *= (c - self.params.alpha) / (c + 1) * self.ratio
            c += 1
            cum += pmf
        return c

    def lookup(self, u: np.ndarray) -> np.ndarray:
        """
        Map uniforms to counts by inverse CDF.

        Args:
            u (np.ndarray): Uniforms in [0, 1).

        Returns:
            np.ndarray: Counts >= 1.
        """
        u = np.asarray(u, dtype=float)
        top = u.max(initial=0.0)
        while top > self._cdf[-1] and len(self._cdf) < _MTP_MAX_TABLE:
            before = self._cdf[-1]
            self._extend(min(2 * len(self._cdf), _MTP_MAX_TABLE))
            if self._cdf[-1] == before:
                break
        out = np.searchsorted(self._cdf, u, side="left") + 1
        beyond = out > len(self._cdf)
        if np.any(beyond):
            out[beyond] = [self._walk_tail(v) for v in u[beyond]]
        return out.astype(np.int64)


@lru_cache(maxsize=256)
def _mtp_table(alpha: float, zeta: float, gamma_total: float) -> MtPTable:
    return MtPTable(alpha, zeta, gamma_total)


def sample_mtp(rng: RngHandle, p: LevyParams, gamma_total: float, size=None):
    """
    Sample the mixed zero-truncated Poisson law MtP(tau, gamma).

    P(C = c) is proportional to gamma^c psi^(c)(gamma) / c!; the gamma case is
    the logarithmic-series law with success probability gamma / (gamma + zeta).

    Args:
        rng (RngHandle): Random stream.
        p (LevyParams): Lévy density of the size-biased jump.
        gamma_total (float): Positive exposure.
        size (int, optional): Number of draws; a scalar is returned when None.

    Returns:
        int or np.ndarray: Counts >= 1.
    """
    if not gamma_total > 0:
        raise DomainError(f"gamma_total must be positive, got {gamma_total}")
    table = _mtp_table(p.alpha, p.zeta, float(gamma_total))
    if size is None:
        return int(table.lookup(rng.generator.random(1))[0])
    return table.lookup(rng.generator.random(size))


def _sinc(x):
    return math.sin(x) / x if x != 0.0 else 1.0


def _exp(x):
    return math.exp(x) if x < 700.0 else math.inf


class _TiltedStableSampler:
    """Exponentially tilted positive stable variates.

    Draws have density proportional to exp(-lam x) f_alpha(x), where f_alpha
    has Laplace transform exp(-s^alpha). Small tilts use divide-and-conquer
    rejection against untilted draws; large tilts use Devroye's double
    rejection in Hofert's formulation.
    """

    def __init__(self, rng: RngHandle):
        self.unif_rv = rng.generator.random
        self.normal_rv = rng.generator.standard_normal

    def rv(self, alpha, lam):
        if pow(lam, alpha) < 5.0:
            return self.sample_by_divide_and_conquer(alpha, lam)
        return self.sample_by_double_rejection(alpha, lam)

    def sample_by_divide_and_conquer(self, alpha, lam):
        x = 0.0
        partition_size = max(1, math.floor(pow(lam, alpha)))
        c = pow(1.0 / partition_size, 1.0 / alpha)
        for _ in range(partition_size):
            x += self.sample_divided_rv(alpha, lam, c)
        return x

    def sample_divided_rv(self, alpha, lam, c):
        while True:
            s = c * self.sample_non_tilted_rv(alpha)
            if self.unif_rv() < _exp(-lam * s):
                return s

    def sample_non_tilted_rv(self, alpha):
        v = self.unif_rv()
        e = -math.log(self.unif_rv())
        return pow(self.zolotarev_function(math.pi * v, alpha) / e, (1.0 - alpha) / alpha)

    def sample_by_double_rejection(self, alpha, lam):
        b = (1.0 - alpha) / alpha
        lam_alpha = pow(lam, alpha)
        gamma = lam_alpha * alpha * (1.0 - alpha)
        sqrt_gamma = math.sqrt(gamma)
        c1 = math.sqrt(math.pi / 2.0)
        c2 = 2.0 + c1
        c3 = c2 * sqrt_gamma
        xi = (1.0 + math.sqrt(2.0) * c3) / math.pi
        psi = c3 * _exp(-gamma * math.pi * math.pi / 8.0) / math.sqrt(math.pi)

        while True:
            u, z_unif, z = self.sample_aux_rv(c1, xi, psi, gamma, sqrt_gamma, alpha, lam_alpha)
            x, n, e, a, m, delta = self.sample_reference_rv(u, alpha, lam_alpha, b, c1, z)
            log_accept = self.compute_log_accept_prob(x, n, e, a, m, alpha, lam_alpha, b, delta)
            if log_accept > math.log(z_unif):
                return pow(x, -b)

    def sample_aux_rv(self, c1, xi, psi, gamma, sqrt_gamma, alpha, lam_alpha):
        while True:
            u = self.sample_aux2_rv(c1, xi, psi, gamma, sqrt_gamma)
            if u >= math.pi:
                continue
            zeta = math.sqrt(self.zolotarev_pdf_exponentiated(u, alpha))
            z = 1.0 / (1.0 - pow(1.0 + alpha * zeta / sqrt_gamma, -1.0 / alpha))
            accept_prob = self.compute_aux2_accept_prob(
                u, c1, xi, psi, zeta, z, lam_alpha, gamma, sqrt_gamma
            )
            if accept_prob == 0.0:
                continue
            z_unif = self.unif_rv() / accept_prob
            if z_unif <= 1.0:
                return u, z_unif, z

    def sample_aux2_rv(self, c1, xi, psi, gamma, sqrt_gamma):
        w1 = c1 * xi / sqrt_gamma
        w2 = 2.0 * math.sqrt(math.pi) * psi
        w3 = xi * math.pi
        v = self.unif_rv()
        if gamma >= 1:
            if v < w1 / (w1 + w2):
                return abs(self.normal_rv()) / sqrt_gamma
            w = self.unif_rv()
            return math.pi * (1.0 - w * w)
        w = self.unif_rv()
        if v < w3 / (w2 + w3):
            return math.pi * w
        return math.pi * (1.0 - w * w)

    def compute_aux2_accept_prob(self, u, c1, xi, psi, zeta, z, lam_alpha, gamma, sqrt_gamma):
        inverse_accept_prob = (
            math.pi
            * _exp(-lam_alpha * (1.0 - 1.0 / (zeta * zeta)))
            / ((1.0 + c1) * sqrt_gamma / zeta + z)
        )
        d = 0.0
        if u >= 0.0 and gamma >= 1:
            d += xi * _exp(-gamma * u * u / 2.0)
        if 0.0 < u < math.pi:
            d += psi / math.sqrt(math.pi - u)
        if 0.0 <= u <= math.pi and gamma < 1.0:
            d += xi
        inverse_accept_prob *= d
        return 1.0 / inverse_accept_prob

    def sample_reference_rv(self, u, alpha, lam_alpha, b, c1, z):
        a = self.zolotarev_function(u, alpha)
        m = pow(b / a, alpha) * lam_alpha
        delta = math.sqrt(m * alpha / a)
        a1 = delta * c1
        a3 = z / a
        s = a1 + delta + a3
        v2 = self.unif_rv()
        n = 0.0
        e = 0.0
        if v2 < a1 / s:
            n = self.normal_rv()
            x = m - delta * abs(n)
        elif v2 < (a1 + delta) / s:
            x = m + delta * self.unif_rv()
        else:
            e = -math.log(self.unif_rv())
            x = m + delta + e * a3
        return x, n, e, a, m, delta

    @staticmethod
    def compute_log_accept_prob(x, n, e, a, m, alpha, lam_alpha, b, delta):
        if x < 0:
            return -math.inf
        log_accept = -(
            a * (x - m)
            + _exp((1.0 / alpha) * math.log(lam_alpha) - b * math.log(m)) * (pow(m / x, b) - 1.0)
        )
        if x < m:
            log_accept += n * n / 2.0
        elif x > m + delta:
            log_accept += e
        return log_accept

    @staticmethod
    def zolotarev_pdf_exponentiated(x, alpha):
        denominator = pow(_sinc(alpha * x), alpha) * pow(_sinc((1.0 - alpha) * x), 1.0 - alpha)
        return _sinc(x) / denominator

    @staticmethod
    def zolotarev_function(x, alpha):
        return pow(
            pow((1.0 - alpha) * _sinc((1.0 - alpha) * x), 1.0 - alpha)
            * pow(alpha * _sinc(alpha * x), alpha)
            / _sinc(x),
            1.0 / (1.0 - alpha),
        )


def sample_tilted_stable(rng: RngHandle, alpha: float, y: float, tilt: float = 1.0, size=None):
    """
    Sample T with E[exp(-s T)] = exp(-y((tilt + s)^alpha - tilt^alpha)).

    tilt = 1 is the simple form T_alpha(y) with mean y * alpha. T is
    y^(1/alpha) times a unit stable variate tilted by tilt * y^(1/alpha).

    Args:
        rng (RngHandle): Random stream.
        alpha (float): Stability index in (0, 1).
        y (float): Positive scale.
        tilt (float): Nonnegative tilting rate.
        size (int, optional): Number of draws; a scalar is returned when None.

    Returns:
        float or np.ndarray: Positive draws.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not y > 0:
        raise DomainError(f"y must be positive, got {y}")
    if tilt < 0:
        raise DomainError(f"tilt must be nonnegative, got {tilt}")

    scale = pow(y, 1.0 / alpha)
    lam = tilt * scale
    sampler = _TiltedStableSampler(rng)
    if size is None:
        return scale * sampler.rv(alpha, lam)
    return scale * np.array([sampler.rv(alpha, lam) for _ in range(int(size))])


def sample_multinomial(rng: RngHandle, n, weights) -> np.ndarray:
    """
    Sample Multinomial(n; weights).

    Args:
        rng (RngHandle): Random stream.
        n (int or array of int): Number of trials; an array gives one row per entry.
        weights (array-like): Nonnegative weights summing to 1 within 1e-12.

    Returns:
        np.ndarray: Counts whose components sum to n.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise DomainError("multinomial weights must be nonnegative")
    total = weights.sum()
    if abs(total - 1.0) > 1e-12:
        raise DomainError(f"multinomial weights must sum to 1, got {total}")
    return rng.generator.multinomial(n, weights / total).astype(np.int64)


def sample_dirichlet(rng: RngHandle, concentrations) -> np.ndarray:
    concentrations = np.asarray(concentrations, dtype=float)
    if concentrations.ndim != 1 or len(concentrations) == 0:
        raise DomainError("Dirichlet concentrations must be a nonempty vector")
    if np.any(concentrations <= 0):
        raise DomainError("Dirichlet concentrations must be positive")
    if len(concentrations) == 1:
        return np.ones(1)
    return rng.generator.dirichlet(concentrations)


def sample_gamma(rng: RngHandle, shape, rate, size=None):
    """
    Sample Gamma(shape, rate), floored at the smallest normal double.

    Args:
        rng (RngHandle): Random stream.
        shape (float or np.ndarray): Positive shape(s).
        rate (float or np.ndarray): Positive rate(s).
        size (int or tuple, optional): Output shape.

    Returns:
        float or np.ndarray: Positive draws.
    """
    shape = np.asarray(shape, dtype=float)
    if np.any(shape <= 0) or np.any(np.asarray(rate) <= 0):
        raise DomainError("gamma shape and rate must be positive")
    out = np.maximum(rng.generator.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size), np.finfo(float).tiny)
    return float(out) if np.ndim(out) == 0 else out


def sample_log_categorical(rng: RngHandle, log_weights: np.ndarray) -> int:
    """
    Draw an index with probability proportional to exp(log_weights).

    Args:
        rng (RngHandle): Random stream.
        log_weights (np.ndarray): Unnormalized log weights, at least one finite.

    Returns:
        int: The sampled index.
    """
    log_weights = np.asarray(log_weights, dtype=float)
    if len(log_weights) == 1:
        return 0
    cdf = np.cumsum(np.exp(log_weights - log_weights.max()))
    u = rng.generator.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


def split_counts(draws: np.ndarray, blocks: np.ndarray) -> Tuple[np.ndarray, list]:
    """
    Split a flat array of block counts into consecutive groups.

    Args:
        draws (np.ndarray): Flat block counts, length sum(blocks).
        blocks (np.ndarray): Number of blocks per group.

    Returns:
        Tuple[np.ndarray, list]: Per-group totals and the per-group arrays.
    """
    parts = np.split(np.asarray(draws, dtype=np.int64), np.cumsum(blocks)[:-1]) if len(blocks) else []
    totals = np.array([part.sum() for part in parts], dtype=np.int64)
    return totals, parts
