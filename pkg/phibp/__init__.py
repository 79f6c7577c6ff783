from .settings import settings
from .special_fn import LevyParams, StirlingTable
from .count_matrix import CountMatrix, load_count_matrix, save_count_matrix, binomial_split
from .model import ModelParams, AllocationDraw, SyntheticDataset, simulate_dataset
from .inference import ChainSet, LatentState, run_chains, diagnostics
from .posterior import PosteriorAbundanceDraw, sample_posterior
from .predict import PredictiveDraw, sample_predictive, predictive_loglik
from .config import RunConfig, load_config

__all__ = [
    "settings",
    "LevyParams",
    "StirlingTable",
    "CountMatrix",
    "load_count_matrix",
    "save_count_matrix",
    "binomial_split",
    "ModelParams",
    "AllocationDraw",
    "SyntheticDataset",
    "simulate_dataset",
    "ChainSet",
    "LatentState",
    "run_chains",
    "diagnostics",
    "PosteriorAbundanceDraw",
    "sample_posterior",
    "PredictiveDraw",
    "sample_predictive",
    "predictive_loglik",
    "RunConfig",
    "load_config",
]
