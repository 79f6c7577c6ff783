"""Run configuration models, loaded from JSON and overridden by CLI flags."""
import json
import logging
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigurationError
from .special_fn import LevyParams

logger = logging.getLogger(__name__)


class LevyConfig(BaseModel):
    """One generalized gamma density as written in a config file."""

    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.0, ge=0.0, lt=1.0)
    theta: float = Field(1.0, gt=0.0)
    zeta: float = Field(1.0, gt=0.0)

    def to_params(self) -> LevyParams:
        return LevyParams(alpha=self.alpha, theta=self.theta, zeta=self.zeta)


class SimulationConfig(BaseModel):
    """Truth and design of a simulated dataset.

    Either `samples` (M_j per group) or `samples_mean` (M_j ~ Poisson) must be
    given. `test_samples`, when set, adds that many extra samples per group
    which are held out as an exact test set.
    """

    model_config = ConfigDict(extra="forbid")

    base: LevyConfig
    groups: List[LevyConfig] = Field(min_length=1)
    samples: Optional[List[int]] = None
    samples_mean: Optional[float] = Field(None, gt=0.0)
    test_samples: Optional[List[int]] = None

    @model_validator(mode="after")
    def check_design(self):
        if self.samples is None and self.samples_mean is None:
            raise ValueError("one of 'samples' or 'samples_mean' is required")
        if self.samples is not None:
            if len(self.samples) not in (1, len(self.groups)):
                raise ValueError("'samples' needs one entry per group")
            if min(self.samples) < 1:
                raise ValueError("'samples' entries must be at least 1")
        if self.test_samples is not None:
            if len(self.test_samples) not in (1, len(self.groups)):
                raise ValueError("'test_samples' needs one entry per group")
            if min(self.test_samples) < 1:
                raise ValueError("'test_samples' entries must be at least 1")
        return self

    @classmethod
    def four_group_truth(cls, samples_mean: float = 100.0, test_samples: Optional[List[int]] = None):
        """
        The four-group simulated-data truth.

        alpha_0 = 0.7, theta_0 = 5; even groups (counting from 1) use
        (alpha, theta) = (0.3, 1) and odd groups (0.6, 2); every zeta is 1.

        Args:
            samples_mean (float): Poisson mean of M_j.
            test_samples (list of int, optional): Held-out samples per group.

        Returns:
            SimulationConfig: The configuration.
        """
        groups = [
            LevyConfig(alpha=0.3, theta=1.0) if j % 2 == 0 else LevyConfig(alpha=0.6, theta=2.0)
            for j in range(1, 5)
        ]
        return cls(
            base=LevyConfig(alpha=0.7, theta=5.0),
            groups=groups,
            samples_mean=samples_mean,
            test_samples=test_samples,
        )

    def draw_samples(self, rng) -> np.ndarray:
        """Per-group training sample counts M_j (at least 1)."""
        J = len(self.groups)
        if self.samples is not None:
            return np.broadcast_to(np.asarray(self.samples, dtype=np.int64), (J,)).copy()
        return np.maximum(rng.generator.poisson(self.samples_mean, size=J), 1).astype(np.int64)

    def held_out(self) -> Optional[np.ndarray]:
        if self.test_samples is None:
            return None
        return np.broadcast_to(np.asarray(self.test_samples, dtype=np.int64), (len(self.groups),)).copy()


class ChainConfig(BaseModel):
    """MCMC run settings."""

    model_config = ConfigDict(extra="forbid")

    chains: int = Field(3, ge=1)
    steps: int = Field(1000, ge=1)
    burn_in: int = Field(500, ge=0)
    thin: int = Field(10, ge=1)
    delta: float = Field(0.1, gt=0.0)
    adapt: bool = True
    target_acceptance: float = Field(0.44, gt=0.0, lt=1.0)
    prior: Literal["gg", "gamma"] = "gg"
    zeta: float = Field(1.0, gt=0.0)
    seed: int = Field(0, ge=0)
    store_latents: bool = True

    @model_validator(mode="after")
    def check_schedule(self):
        if self.steps <= self.burn_in:
            raise ValueError("steps must exceed burn_in")
        if (self.steps - self.burn_in) // self.thin < 1:
            raise ValueError("no records would be kept after burn-in and thinning")
        return self

    @property
    def n_records(self) -> int:
        return (self.steps - self.burn_in) // self.thin


class PredictionConfig(BaseModel):
    """Posterior, prediction and predictive-check settings."""

    model_config = ConfigDict(extra="forbid")

    m: Optional[List[int]] = None
    quad_nodes: int = Field(64, ge=1)
    n_augment: int = Field(5, ge=0)
    max_draws: Optional[int] = Field(None, ge=1)
    unseen_budget: int = Field(10_000, ge=0)


class RunConfig(BaseModel):
    """Everything a CLI stage may need."""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0)
    simulation: Optional[SimulationConfig] = None
    chains: ChainConfig = Field(default_factory=ChainConfig)
    prediction: PredictionConfig = Field(default_factory=PredictionConfig)


def _merge(target: dict, overrides: dict) -> dict:
    for key, value in overrides.items():
        if isinstance(value, dict):
            target[key] = _merge(dict(target.get(key) or {}), value)
        elif value is not None:
            target[key] = value
    return target


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """
    Read a JSON run configuration and apply overrides.

    Args:
        path (str or Path, optional): JSON file; defaults apply when None.
        overrides (dict, optional): Nested values replacing those of the file;
            None values are ignored.

    Returns:
        RunConfig: The validated configuration.
    """
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    data = _merge(data, overrides or {})
    if "seed" in data and isinstance(data.get("chains"), dict):
        data["chains"].setdefault("seed", data["seed"])
    elif "seed" in data:
        data["chains"] = {"seed": data["seed"]}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc
