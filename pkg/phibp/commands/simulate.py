import logging
from pathlib import Path
from typing import Tuple

import numpy as np

from ..config import RunConfig, SimulationConfig
from ..count_matrix import CountMatrix, binomial_split, save_count_matrix
from ..model import ModelParams, SyntheticDataset, simulate_dataset
from ..rand_dist import RngHandle
from .base import CommandBase

logger = logging.getLogger(__name__)

_DESIGN_STREAM = 0
_DATA_STREAM = 1


class SimulateCommand(CommandBase[SimulationConfig]):
    """Simulate datasets and split count matrices into train and test sets."""

    def simulate(self, config: RunConfig, out_dir) -> SyntheticDataset:
        """
        Simulate a dataset from the configured truth.

        Writes counts.csv and samples.csv (all samples), truth.json (latent
        truth) and, when `test_samples` is configured, train/test matrices
        obtained from the per-sample counts.

        Args:
            config (RunConfig): Run configuration; the four-group simulated truth
                is used when it has no simulation section.
            out_dir (str or Path): Output directory.

        Returns:
            SyntheticDataset: The dataset.
        """
        simulation = config.simulation or SimulationConfig.four_group_truth()
        rng = RngHandle(config.seed)
        samples = simulation.draw_samples(rng.child(_DESIGN_STREAM))
        held_out = simulation.held_out()
        total = samples if held_out is None else samples + held_out

        params = ModelParams.with_samples(
            simulation.base.to_params(), [g.to_params() for g in simulation.groups], total
        )
        dataset = simulate_dataset(rng.child(_DATA_STREAM), params)

        config = config.model_copy(update={"simulation": simulation})
        with self.scope(out_dir, config.seed, config) as (out, manifest):
            save_count_matrix(dataset.counts, out / "counts.csv", out / "samples.csv")
            self.record(manifest, "counts.csv", "samples.csv")
            if held_out is not None:
                train, test = dataset.split_samples(held_out)
                self._save_pair(manifest, out, train, test)
            dataset.to_json(out / "truth.json")
            self.record(manifest, "truth.json")
        return dataset

    def split(
        self, counts: CountMatrix, M, m, seed: int, out_dir
    ) -> Tuple[CountMatrix, CountMatrix]:
        """
        Binomially thin a count matrix into train and test sets.

        Args:
            counts (CountMatrix): Original counts.
            M (array-like): Training sample counts per group.
            m (array-like): Test sample counts per group.
            seed (int): Root seed.
            out_dir (str or Path): Output directory.

        Returns:
            Tuple[CountMatrix, CountMatrix]: Train and test matrices.
        """
        train, test = binomial_split(RngHandle(seed), counts, M, m)
        config = {"M": np.broadcast_to(M, (counts.n_groups,)).tolist(), "m": np.broadcast_to(m, (counts.n_groups,)).tolist()}
        with self.scope(out_dir, seed, config, command="split") as (out, manifest):
            self._save_pair(manifest, out, train, test)
        return train, test

    def _save_pair(self, manifest, out: Path, train: CountMatrix, test: CountMatrix) -> None:
        save_count_matrix(train, out / "train.csv", out / "train_samples.csv")
        save_count_matrix(test, out / "test.csv", out / "test_samples.csv")
        self.record(manifest, "train.csv", "train_samples.csv", "test.csv", "test_samples.csv")
        logger.info(
            "Split into %d training and %d test species", train.n_species, test.n_species
        )


simulate = SimulateCommand("simulate")
