import logging
from typing import List, Optional

import pandas as pd

from ..config import PredictionConfig, RunConfig
from ..count_matrix import CountMatrix
from ..diversity import alpha_diversity, beta_diversity, summarize_frame
from ..inference import ChainSet
from ..posterior import PosteriorAbundanceDraw, sample_posterior
from .base import CommandBase

logger = logging.getLogger(__name__)


class PosteriorCommand(CommandBase[PredictionConfig]):
    """Posterior abundance draws and the diversity indices computed from them."""

    def posterior(
        self, counts: CountMatrix, chains_dir, config: RunConfig, out_dir, workers: Optional[int] = None
    ) -> List[PosteriorAbundanceDraw]:
        """
        One abundance draw per chain record, written to posterior.csv.

        Args:
            counts (CountMatrix): The counts the chains were fitted to.
            chains_dir (str or Path): Directory written by `fit`.
            config (RunConfig): Run configuration; seed and `prediction` section.
            out_dir (str or Path): Output directory.
            workers (int, optional): Worker processes.

        Returns:
            list of PosteriorAbundanceDraw: The draws.
        """
        chainset = ChainSet.load(chains_dir)
        settings = config.prediction
        with self.scope(out_dir, config.seed, config) as (out, manifest):
            draws = sample_posterior(
                chainset,
                counts,
                seed=config.seed,
                n_augment=settings.n_augment,
                max_draws=settings.max_draws,
                workers=workers,
            )
            frame = pd.concat([d.to_frame(i) for i, d in enumerate(draws)], ignore_index=True)
            self.write_frame(manifest, out, "posterior.csv", frame)
        return draws

    def diversity(self, posterior_path, out_dir) -> dict:
        """
        Alpha and beta diversity of every posterior draw.

        Writes alpha.csv, beta.csv and diversity_summary.json (posterior mean
        and 95% central interval per group and group pair).

        Args:
            posterior_path (str or Path): posterior.csv written by `posterior`.
            out_dir (str or Path): Output directory.

        Returns:
            dict: The summary.
        """
        draws = PosteriorAbundanceDraw.from_frame(pd.read_csv(posterior_path, dtype={"group": str, "species": str}))
        with self.scope(out_dir, None, {"posterior": str(posterior_path)}, command="diversity") as (out, manifest):
            alpha = alpha_diversity(draws)
            beta = beta_diversity(draws)
            self.write_frame(manifest, out, "alpha.csv", alpha)
            self.write_frame(manifest, out, "beta.csv", beta)
            summary = {
                "alpha": summarize_frame(alpha, ["group"], "shannon").to_dict(orient="records"),
                "beta": summarize_frame(beta, ["group_a", "group_b"], "bray_curtis").to_dict(orient="records")
                if len(beta)
                else [],
            }
            self.write_json(manifest, out, "diversity_summary.json", summary)
        return summary


posterior = PosteriorCommand("posterior")
