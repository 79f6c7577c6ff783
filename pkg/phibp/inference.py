"""MCMC over hyperparameters and latent OTU block counts.

Each step runs a systematic Gibbs sweep over the block counts X[j, l] of
every observed cell, then one single-site Metropolis-Hastings sweep over the
hyperparameters (logit random walk for alphas, log random walk for thetas).
"""
import itertools
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.special import expit, gammaln, logit, logsumexp
from scipy.stats import lognorm, norm
from tqdm import tqdm

from .config import ChainConfig
from .count_matrix import CountMatrix
from .exceptions import ConfigurationError, InsufficientDataError
from .model import ModelParams
from .parallel import map_tasks
from .rand_dist import RngHandle, sample_log_categorical
from .settings import settings
from .special_fn import (
    LevyParams,
    StirlingTable,
    build_stirling_table,
    laplace_exponent,
    log_laplace_moment,
    xi_partition_weight,
)

logger = logging.getLogger(__name__)

ALPHA_EPS = 1e-9
RHAT_THRESHOLD = 1.05

_INIT_STREAM = 0
_STEP_STREAM = 1


def parameter_names(n_groups: int) -> List[str]:
    names = ["alpha_0", "theta_0"]
    for j in range(1, n_groups + 1):
        names += [f"alpha_{j}", f"theta_{j}"]
    return names


def sampled_parameters(n_groups: int, prior: str) -> List[str]:
    names = parameter_names(n_groups)
    if prior == "gamma":
        return [name for name in names if name.startswith("theta")]
    return names


def group_stirling_tables(counts: CountMatrix, params: ModelParams, full: bool = False) -> List[StirlingTable]:
    """
    One Stirling table per group covering that group's counts.

    Args:
        counts (CountMatrix): Observed counts.
        params (ModelParams): Supplies each group's alpha.
        full (bool): Keep every row up to the maximum count instead of only
            the observed rows. Defaults to False.

    Returns:
        list of StirlingTable: The tables.
    """
    tables = []
    for j, g in enumerate(params.groups):
        row = counts.values[j]
        rows = None if full else np.unique(row)
        tables.append(build_stirling_table(g.alpha, int(row.max(initial=0)), rows))
    return tables


class LatentState:
    """The MCMC state: block counts, hyperparameters and derived caches.

    Args:
        params (ModelParams): Current hyperparameters with the data's exposures.
        x_blocks (np.ndarray): X[j, l] of shape (J, r).
        tables (list of StirlingTable): Per-group tables matching the alphas.
        prior (str): "gg" or "gamma". Defaults to "gg".
    """

    def __init__(self, params: ModelParams, x_blocks, tables: List[StirlingTable], prior: str = "gg"):
        self.x_blocks = np.array(x_blocks, dtype=np.int64)
        self.prior = prior
        self.last_moves: Dict[str, bool] = {}
        self.set_params(params, tables)
        self.x_species = self.x_blocks.sum(axis=0)
        self.x_total = int(self.x_species.sum())

    @classmethod
    def initial(cls, counts: CountMatrix, params: ModelParams, prior: str = "gg", x_blocks=None) -> "LatentState":
        """
        Start from the minimal block configuration X = 1{N > 0} unless given.

        Args:
            counts (CountMatrix): Observed counts.
            params (ModelParams): Starting hyperparameters.
            prior (str): "gg" or "gamma".
            x_blocks (np.ndarray, optional): Starting block counts.

        Returns:
            LatentState: The state.
        """
        if x_blocks is None:
            x_blocks = (counts.values > 0).astype(np.int64)
        return cls(params, x_blocks, group_stirling_tables(counts, params), prior)

    def set_params(self, params: ModelParams, tables: List[StirlingTable]) -> None:
        self.params = params
        self.tables = list(tables)
        self.kappa = params.group_exponents()
        self.kappa_total = float(self.kappa.sum())
        self.psi0 = laplace_exponent(params.base, self.kappa_total)

    def check_caches(self, tol: float = 1e-10) -> bool:
        kappa = self.params.group_exponents()
        x_species = self.x_blocks.sum(axis=0)
        return (
            np.allclose(kappa, self.kappa, rtol=tol, atol=tol)
            and abs(kappa.sum() - self.kappa_total) <= tol * max(1.0, self.kappa_total)
            and np.array_equal(x_species, self.x_species)
            and int(x_species.sum()) == self.x_total
        )

    def copy(self) -> "LatentState":
        return LatentState(self.params, self.x_blocks.copy(), self.tables, self.prior)


def log_prior(params: ModelParams, prior: str = "gg") -> float:
    """
    Log hyperprior: standard log-normal on thetas, standard logit-normal on alphas.

    Under the gamma prior every alpha must be exactly 0.

    Args:
        params (ModelParams): Hyperparameters.
        prior (str): "gg" or "gamma".

    Returns:
        float: The log density, -inf outside the support.
    """
    levels = [params.base] + params.groups
    thetas = np.array([p.theta for p in levels])
    alphas = np.array([p.alpha for p in levels])
    out = float(lognorm.logpdf(thetas, s=1.0).sum())
    if prior == "gamma":
        return out if np.all(alphas == 0.0) else -math.inf
    if np.any(alphas <= 0.0):
        return -math.inf
    return out + float((norm.logpdf(logit(alphas)) - np.log(alphas) - np.log1p(-alphas)).sum())


def log_likelihood(counts: CountMatrix, state: LatentState) -> float:
    """
    Log joint probability of (phi, N, X) given the hyperparameters.

    Species with zero total count carry no factors.

    Args:
        counts (CountMatrix): Observed counts.
        state (LatentState): Block counts and hyperparameters.

    Returns:
        float: The log probability, -inf when X violates its support.
    """
    n = counts.values
    x = state.x_blocks
    positive = n > 0
    if np.any(x[positive] < 1) or np.any(x[positive] > n[positive]) or np.any(x[~positive] != 0):
        return -math.inf

    p = state.params
    base = p.base
    observed = state.x_species > 0
    r = int(observed.sum())
    x_l = state.x_species[observed]
    out = (
        r * math.log(base.theta)
        - state.psi0
        - gammaln(r + 1)
        + (base.alpha * r - state.x_total) * math.log(base.zeta + state.kappa_total)
        + float(gammaln(x_l - base.alpha).sum())
        - r * gammaln(1.0 - base.alpha)
    )

    totals = p.gamma_totals
    for j, g in enumerate(p.groups):
        cells = positive[j]
        if not np.any(cells):
            continue
        if totals[j] <= 0:
            return -math.inf
        nn = n[j, cells]
        xx = x[j, cells]
        out += (
            xx.sum() * math.log(g.theta)
            + (g.alpha * xx - nn).sum() * math.log(g.zeta + totals[j])
            + state.tables[j].log_values(nn, xx).sum()
            - gammaln(nn + 1).sum()
            + nn.sum() * math.log(totals[j])
        )
    return float(out)


def log_joint(counts: CountMatrix, state: LatentState) -> float:
    """Log posterior kernel: `log_likelihood` plus `log_prior` under the state's prior."""
    lp = log_prior(state.params, state.prior)
    if lp == -math.inf:
        return -math.inf
    return log_likelihood(counts, state) + lp


def log_marginal(counts: CountMatrix, params: ModelParams) -> float:
    """
    Exact log marginal probability of a count matrix by enumerating block counts.

    Each species contributes Psi_0^(x)(kappa) / Psi_0(kappa) times the product of
    the group partition weights, summed over every admissible block vector.
    The cost grows like the product of the counts, so this is for small
    matrices.

    Args:
        counts (CountMatrix): Observed counts.
        params (ModelParams): Hyperparameters with matching exposures.

    Returns:
        float: The log probability.
    """
    tables = group_stirling_tables(counts, params)
    kappa_total = float(params.group_exponents().sum())
    psi0 = laplace_exponent(params.base, kappa_total)
    totals = params.gamma_totals
    n = counts.values

    observed = np.flatnonzero(n.sum(axis=0) > 0)
    r = len(observed)
    if r == 0:
        return -psi0
    out = -psi0 + r * math.log(psi0) - gammaln(r + 1)
    for l in observed:
        column = n[:, l]
        ranges = [range(1, c + 1) if c > 0 else (0,) for c in column]
        terms = []
        for xs in itertools.product(*ranges):
            term = log_laplace_moment(params.base, sum(xs), kappa_total) - math.log(psi0)
            for j, g in enumerate(params.groups):
                if column[j] == 0:
                    continue
                term += (
                    xi_partition_weight(g, tables[j], int(column[j]), xs[j], totals[j])
                    + column[j] * math.log(totals[j])
                    - gammaln(column[j] + 1)
                )
            terms.append(term)
        out += logsumexp(terms)
    return float(out)


def gibbs_log_weights(counts: CountMatrix, state: LatentState, j: int, l: int) -> np.ndarray:
    """
    Unnormalized log conditional weights of X[j, l] over x = 1..N[j, l].

    log w(x) = log Gamma(x + x_l^-j - alpha_0) + x log theta_j
    + alpha_j x log(zeta_j + M_j) + log S_alpha_j(n, x) - x log(zeta_0 + kappa).

    Args:
        counts (CountMatrix): Observed counts.
        state (LatentState): Current state.
        j (int): Group.
        l (int): Species.

    Returns:
        np.ndarray: Log weights.
    """
    n = int(counts.values[j, l])
    xs = np.arange(1, n + 1)
    return _cell_log_weights(state, j, l, n, xs, _group_coefficient(state, j))


def _group_coefficient(state: LatentState, j: int) -> float:
    p = state.params
    g = p.groups[j]
    return (
        math.log(g.theta)
        + g.alpha * math.log(g.zeta + p.gamma_totals[j])
        - math.log(p.base.zeta + state.kappa_total)
    )


def _cell_log_weights(state, j, l, n, xs, coefficient):
    x_minus = state.x_species[l] - state.x_blocks[j, l]
    return (
        gammaln(xs + x_minus - state.params.base.alpha)
        + coefficient * xs
        + state.tables[j].log_row(n)[1:]
    )


def gibbs_update_x(rng: RngHandle, counts: CountMatrix, state: LatentState) -> LatentState:
    """
    One systematic Gibbs sweep over X[j, l] for every cell with N[j, l] >= 2.

    Cells with N = 1 are fixed at X = 1 and cells with N = 0 are skipped.

    Args:
        rng (RngHandle): Random stream.
        counts (CountMatrix): Observed counts.
        state (LatentState): State, updated in place.

    Returns:
        LatentState: The same state.
    """
    n = counts.values
    xs_all = np.arange(1, counts.max_count + 1)
    for j in range(n.shape[0]):
        coefficient = _group_coefficient(state, j)
        for l in np.flatnonzero(n[j] > 1):
            nn = int(n[j, l])
            old = int(state.x_blocks[j, l])
            log_w = _cell_log_weights(state, j, l, nn, xs_all[:nn], coefficient)
            new = sample_log_categorical(rng, log_w) + 1
            if new != old:
                state.x_blocks[j, l] = new
                state.x_species[l] += new - old
                state.x_total += new - old
    return state


def _propose(rng: RngHandle, name: str, value: float, scale: float):
    eps = rng.generator.standard_normal()
    if name.startswith("alpha"):
        proposal = float(np.clip(expit(logit(value) + scale * eps), ALPHA_EPS, 1.0 - ALPHA_EPS))
        log_jacobian = (
            math.log(proposal) + math.log1p(-proposal) - math.log(value) - math.log1p(-value)
        )
    else:
        proposal = value * math.exp(scale * eps)
        log_jacobian = math.log(proposal) - math.log(value)
    return proposal, log_jacobian


def mh_update_params(
    rng: RngHandle,
    counts: CountMatrix,
    state: LatentState,
    step_delta: float,
    scales: Optional[Dict[str, float]] = None,
) -> LatentState:
    """
    One single-site Metropolis-Hastings sweep over the hyperparameters.

    The proposal acts on logit(alpha) and log(theta); the acceptance ratio
    includes the Jacobian of those transforms. Acceptance flags are left in
    `state.last_moves`.

    Args:
        rng (RngHandle): Random stream.
        counts (CountMatrix): Observed counts.
        state (LatentState): State, updated in place.
        step_delta (float): Default proposal scale.
        scales (dict, optional): Per-parameter scales overriding `step_delta`.

    Returns:
        LatentState: The same state.
    """
    if not step_delta > 0:
        raise ConfigurationError(f"step_delta must be positive, got {step_delta}")

    rows = [np.unique(counts.values[j]) for j in range(counts.n_groups)]
    current = log_joint(counts, state)
    moves = {}
    for name in sampled_parameters(counts.n_groups, state.prior):
        scale = scales.get(name, step_delta) if scales else step_delta
        value = state.params.hyperparameters()[name]
        proposal, log_jacobian = _propose(rng, name, value, scale)
        log_u = math.log(rng.generator.random())

        old_params, old_tables = state.params, state.tables
        tables = old_tables
        j = int(name.split("_")[1])
        if name.startswith("alpha") and j > 0:
            tables = list(old_tables)
            tables[j - 1] = build_stirling_table(proposal, old_tables[j - 1].max_n, rows[j - 1])
        state.set_params(state.params.with_hyperparameters(**{name: proposal}), tables)

        candidate = log_joint(counts, state)
        if log_u < candidate - current + log_jacobian:
            current = candidate
            moves[name] = True
        else:
            state.set_params(old_params, old_tables)
            moves[name] = False
    state.last_moves = moves
    return state


class ChainSet:
    """Thinned post-burn-in records of several chains sharing one config.

    Args:
        config (ChainConfig): Run settings.
        groups (list of str): Group labels of the fitted counts.
        species (list of str): Species labels of the fitted counts.
        draws (np.ndarray): Hyperparameters, shape (chains, records, 2 + 2J).
        log_joint (np.ndarray): Log posterior kernel, shape (chains, records).
        acceptance (np.ndarray): Post-burn-in acceptance rates, shape (chains, 2 + 2J).
        latents (np.ndarray, optional): Block counts, shape (chains, records, J, r).
    """

    def __init__(self, config: ChainConfig, groups, species, draws, log_joint, acceptance, latents=None):
        self.config = config
        self.groups = list(groups)
        self.species = list(species)
        self.param_names = parameter_names(len(self.groups))
        self.draws = np.asarray(draws, dtype=float)
        self.log_joint = np.asarray(log_joint, dtype=float)
        self.acceptance = np.asarray(acceptance, dtype=float)
        self.latents = None if latents is None else np.asarray(latents)

    def __repr__(self):
        return (
            f"ChainSet(chains={self.n_chains}, records={self.n_records}, "
            f"prior={self.config.prior!r}, groups={len(self.groups)}, species={len(self.species)})"
        )

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_records(self) -> int:
        return self.draws.shape[1]

    @property
    def steps(self) -> np.ndarray:
        return self.config.burn_in + self.config.thin * np.arange(1, self.n_records + 1)

    def param(self, name: Union[str, int]) -> np.ndarray:
        index = self.param_names.index(name) if isinstance(name, str) else int(name)
        return self.draws[:, :, index]

    def record_params(self, chain: int, record: int, counts: CountMatrix) -> ModelParams:
        """Hyperparameters of one record, with the exposures of `counts`."""
        values = dict(zip(self.param_names, self.draws[chain, record]))
        zeta = self.config.zeta
        base = LevyParams(values["alpha_0"], values["theta_0"], zeta)
        groups = [
            LevyParams(values[f"alpha_{j}"], values[f"theta_{j}"], zeta)
            for j in range(1, len(self.groups) + 1)
        ]
        return ModelParams.for_counts(counts, base, groups)

    def record_index(self, max_draws: Optional[int] = None) -> List[tuple]:
        """
        (chain, record) pairs, evenly thinned to at most `max_draws`.

        Args:
            max_draws (int, optional): Cap on the number of pairs.

        Returns:
            list of tuple: The pairs in chain-major order.
        """
        pairs = [(c, i) for c in range(self.n_chains) for i in range(self.n_records)]
        if max_draws is None or max_draws >= len(pairs):
            return pairs
        keep = np.unique(np.linspace(0, len(pairs) - 1, max_draws).round().astype(int))
        return [pairs[k] for k in keep]

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for c in range(self.n_chains):
            frame = pd.DataFrame(self.draws[c], columns=self.param_names)
            frame.insert(0, "step", self.steps)
            frame.insert(0, "chain", c)
            frame["log_joint"] = self.log_joint[c]
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)

    def save(self, out_dir) -> List[Path]:
        """
        Write chains.csv, chain_meta.json and, when present, latents.npy.

        Args:
            out_dir (str or Path): Target directory.

        Returns:
            list of Path: The written files.
        """
        out_dir = Path(out_dir)
        chains_path = out_dir / "chains.csv"
        self.to_frame().to_csv(chains_path, index=False, float_format="%.17g", lineterminator="\n")

        meta_path = out_dir / "chain_meta.json"
        meta = {
            "config": self.config.model_dump(),
            "groups": self.groups,
            "species": self.species,
            "acceptance": {
                name: [None if math.isnan(v) else float(v) for v in self.acceptance[:, k]]
                for k, name in enumerate(self.param_names)
            },
        }
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

        written = [chains_path, meta_path]
        if self.latents is not None:
            latents_path = out_dir / "latents.npy"
            np.save(latents_path, self.latents.astype(np.int32))
            written.append(latents_path)
        return written

    @classmethod
    def load(cls, in_dir) -> "ChainSet":
        in_dir = Path(in_dir)
        meta = json.loads((in_dir / "chain_meta.json").read_text(encoding="utf-8"))
        config = ChainConfig.model_validate(meta["config"])
        frame = pd.read_csv(in_dir / "chains.csv")
        names = parameter_names(len(meta["groups"]))
        chains = sorted(frame["chain"].unique())
        draws = np.stack([frame.loc[frame["chain"] == c, names].to_numpy() for c in chains])
        log_joint_values = np.stack([frame.loc[frame["chain"] == c, "log_joint"].to_numpy() for c in chains])
        acceptance = np.array([meta["acceptance"][name] for name in names], dtype=float).T
        latents_path = in_dir / "latents.npy"
        latents = np.load(latents_path) if latents_path.exists() else None
        return cls(config, meta["groups"], meta["species"], draws, log_joint_values, acceptance, latents)


def initial_params(rng: RngHandle, counts: CountMatrix, config: ChainConfig) -> ModelParams:
    """Starting hyperparameters drawn from the hyperprior (alphas fixed at 0 under the gamma prior)."""
    g = rng.generator

    def level():
        alpha = float(expit(g.standard_normal())) if config.prior == "gg" else 0.0
        alpha = min(max(alpha, ALPHA_EPS), 1.0 - ALPHA_EPS) if config.prior == "gg" else 0.0
        return LevyParams(alpha, float(math.exp(g.standard_normal())), config.zeta)

    base = level()
    groups = [level() for _ in range(counts.n_groups)]
    return ModelParams.for_counts(counts, base, groups)


def run_chain(task) -> dict:
    """
    Run one chain; `task` is (counts, config, chain_index, progress).

    Args:
        task (tuple): Picklable chain description.

    Returns:
        dict: Records, log-joint values, acceptance rates and latents.
    """
    counts, config, chain, progress = task
    rng = RngHandle(config.seed).child(chain)
    step_rng = rng.child(_STEP_STREAM)
    params = initial_params(rng.child(_INIT_STREAM), counts, config)
    state = LatentState.initial(counts, params, prior=config.prior)

    names = parameter_names(counts.n_groups)
    moving = sampled_parameters(counts.n_groups, config.prior)
    log_scales = {name: math.log(config.delta) for name in moving}
    accepted = {name: 0 for name in moving}

    n_records = config.n_records
    draws = np.empty((n_records, len(names)))
    log_joint_values = np.empty(n_records)
    latents = (
        np.empty((n_records,) + counts.values.shape, dtype=np.int32) if config.store_latents else None
    )

    record = 0
    for step in tqdm(range(1, config.steps + 1), desc=f"chain {chain}", disable=not progress):
        gibbs_update_x(step_rng, counts, state)
        scales = {name: math.exp(v) for name, v in log_scales.items()}
        mh_update_params(step_rng, counts, state, config.delta, scales)

        if step <= config.burn_in:
            if config.adapt:
                rate = step ** -0.6
                for name, ok in state.last_moves.items():
                    log_scales[name] += rate * (float(ok) - config.target_acceptance)
            continue
        for name, ok in state.last_moves.items():
            accepted[name] += ok
        if (step - config.burn_in) % config.thin == 0 and record < n_records:
            values = state.params.hyperparameters()
            draws[record] = [values[name] for name in names]
            log_joint_values[record] = log_joint(counts, state)
            if latents is not None:
                latents[record] = state.x_blocks
            record += 1

    kept_steps = config.steps - config.burn_in
    acceptance = np.array([accepted[name] / kept_steps if name in accepted else np.nan for name in names])
    logger.info(
        "Chain %d finished: acceptance %s",
        chain,
        {name: round(accepted[name] / kept_steps, 3) for name in moving},
    )
    return {"draws": draws, "log_joint": log_joint_values, "acceptance": acceptance, "latents": latents}


def run_chains(counts: CountMatrix, config: ChainConfig, workers: Optional[int] = None) -> ChainSet:
    """
    Run independent chains with independent streams derived from the seed.

    Args:
        counts (CountMatrix): Observed counts.
        config (ChainConfig): Run settings.
        workers (int, optional): Worker processes, capped by PHIBP_THREADS.

    Returns:
        ChainSet: The merged records.
    """
    if counts.n_species == 0:
        raise ConfigurationError("cannot fit a count matrix without observed species")
    logger.info(
        "Running %d chains of %d steps (burn-in %d, thin %d, prior %s)",
        config.chains,
        config.steps,
        config.burn_in,
        config.thin,
        config.prior,
    )
    tasks = [(counts, config, c, settings.PHIBP_PROGRESS) for c in range(config.chains)]
    results = map_tasks(run_chain, tasks, workers)
    latents = None
    if config.store_latents:
        latents = np.stack([r["latents"] for r in results])
    return ChainSet(
        config,
        counts.groups,
        counts.species,
        np.stack([r["draws"] for r in results]),
        np.stack([r["log_joint"] for r in results]),
        np.stack([r["acceptance"] for r in results]),
        latents,
    )


def rhat(chainset: ChainSet, param: Union[str, int]) -> float:
    """
    Split R-hat of one hyperparameter.

    Each chain is split in halves; with n draws per half, W the mean
    within-half variance and B/n the variance of the half means,
    R-hat = sqrt(((n - 1)/n W + B/n) / W).

    Args:
        chainset (ChainSet): Records of at least 2 chains with 4 records each.
        param (str or int): Parameter name or column index.

    Returns:
        float: The statistic; 1.0 when all draws are identical.
    """
    draws = chainset.param(param)
    if draws.shape[0] < 2 or draws.shape[1] < 4:
        raise InsufficientDataError("split R-hat needs at least 2 chains with 4 records each")

    half = draws.shape[1] // 2
    halves = np.concatenate((draws[:, :half], draws[:, -half:]))
    within = halves.var(axis=1, ddof=1).mean()
    between = half * halves.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return 1.0 if between == 0.0 else math.inf
    var_plus = (half - 1) / half * within + between / half
    return float(math.sqrt(var_plus / within))


def diagnostics(chainset: ChainSet) -> dict:
    """
    R-hat and mean acceptance rate per hyperparameter.

    Args:
        chainset (ChainSet): The records.

    Returns:
        dict: JSON-ready diagnostics.
    """
    moving = sampled_parameters(len(chainset.groups), chainset.config.prior)
    out = {
        "chains": chainset.n_chains,
        "records_per_chain": chainset.n_records,
        "prior": chainset.config.prior,
        "rhat": {},
        "acceptance": {},
        "posterior_mean": {},
    }
    for k, name in enumerate(chainset.param_names):
        out["posterior_mean"][name] = float(chainset.param(name).mean())
        if name not in moving:
            continue
        out["acceptance"][name] = float(np.nanmean(chainset.acceptance[:, k]))
        try:
            value = rhat(chainset, name)
        except InsufficientDataError:
            value = None
        out["rhat"][name] = value
        if value is not None and value >= RHAT_THRESHOLD:
            logger.warning("R-hat of %s is %.3f", name, value)

    values = [v for v in out["rhat"].values() if v is not None]
    out["converged"] = bool(values) and max(values) < RHAT_THRESHOLD
    return out
