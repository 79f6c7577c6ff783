import logging
from typing import Optional

import numpy as np
import pandas as pd

from ..config import PredictionConfig, RunConfig
from ..count_matrix import CountMatrix
from ..diversity import summarize, summarize_frame
from ..exceptions import ConfigurationError
from ..inference import ChainSet
from ..parallel import map_tasks
from ..posterior import sample_posterior_draw
from ..predict import posterior_predictive_check, predictive_loglik, sample_predictive, unseen_entropy
from ..rand_dist import RngHandle
from .base import CommandBase

logger = logging.getLogger(__name__)

_POSTERIOR_STREAM = 0
_PREDICTIVE_STREAM = 1
_ENTROPY_STREAM = 2


def _predict_task(task):
    counts, params, x_init, m, seed, stream, n_augment, draw_index = task
    rng = RngHandle(seed, stream)
    draw = sample_posterior_draw(rng.child(_POSTERIOR_STREAM), counts, params, x_init, n_augment)
    predicted = sample_predictive(rng.child(_PREDICTIVE_STREAM), draw, params, m)
    entropies = [
        unseen_entropy(rng.child(_ENTROPY_STREAM, j), params, m, j) if m[j] > 0 else np.nan
        for j in range(counts.n_groups)
    ]
    return predicted.to_frame(draw_index), entropies


class PredictCommand(CommandBase[PredictionConfig]):
    """Predictive draws, unseen-species entropy, test log-likelihood and predictive checks."""

    @staticmethod
    def _new_samples(config: RunConfig, counts: CountMatrix, test: Optional[CountMatrix]) -> np.ndarray:
        if config.prediction.m is not None:
            return np.broadcast_to(np.asarray(config.prediction.m, dtype=float), (counts.n_groups,)).copy()
        if test is not None:
            return test.exposure.copy()
        raise ConfigurationError("prediction needs --m or a test matrix")

    def predict(
        self,
        counts: CountMatrix,
        chains_dir,
        config: RunConfig,
        out_dir,
        test: Optional[CountMatrix] = None,
        workers: Optional[int] = None,
    ) -> dict:
        """
        Predict m_j new samples per group for every (thinned) chain record.

        Writes predictive.csv (counts of observed and new species per draw),
        unseen_entropy.csv and, when test counts are given, loglik.csv with the
        exact test log-likelihood per record.

        Args:
            counts (CountMatrix): Training counts.
            chains_dir (str or Path): Directory written by `fit`.
            config (RunConfig): Run configuration.
            out_dir (str or Path): Output directory.
            test (CountMatrix, optional): Held-out counts.
            workers (int, optional): Worker processes.

        Returns:
            dict: Summary of the unseen entropy and test log-likelihood.
        """
        chainset = ChainSet.load(chains_dir)
        settings = config.prediction
        m = self._new_samples(config, counts, test)
        pairs = chainset.record_index(settings.max_draws)
        tasks = [
            (
                counts,
                chainset.record_params(c, i, counts),
                None if chainset.latents is None else chainset.latents[c, i],
                m,
                config.seed,
                (c, i),
                settings.n_augment,
                k,
            )
            for k, (c, i) in enumerate(pairs)
        ]

        with self.scope(out_dir, config.seed, config) as (out, manifest):
            results = map_tasks(_predict_task, tasks, workers)
            frames = [frame for frame, _ in results]
            self.write_frame(manifest, out, "predictive.csv", pd.concat(frames, ignore_index=True))

            entropy = pd.DataFrame(
                [
                    {"draw": k, "group": counts.groups[j], "entropy": value}
                    for k, (_, values) in enumerate(results)
                    for j, value in enumerate(values)
                ],
                columns=["draw", "group", "entropy"],
            )
            self.write_frame(manifest, out, "unseen_entropy.csv", entropy)
            summary = {
                "m": m.tolist(),
                "unseen_entropy": summarize_frame(entropy, ["group"], "entropy").to_dict(orient="records"),
            }

            if test is not None:
                loglik = predictive_loglik(
                    chainset, counts, test, m, settings.quad_nodes, settings.max_draws, workers
                )
                self.write_frame(manifest, out, "loglik.csv", loglik)
                summary["loglik"] = summarize(loglik["total"])
            self.write_json(manifest, out, "predict_summary.json", summary)
        return summary

    def ppc(
        self,
        counts: CountMatrix,
        chains_dir,
        test: CountMatrix,
        config: RunConfig,
        out_dir,
        workers: Optional[int] = None,
    ) -> dict:
        """
        FoF Kolmogorov-Smirnov check of predicted against held-out counts.

        Args:
            counts (CountMatrix): Training counts.
            chains_dir (str or Path): Directory written by `fit`.
            test (CountMatrix): Held-out counts.
            config (RunConfig): Run configuration.
            out_dir (str or Path): Output directory.
            workers (int, optional): Worker processes.

        Returns:
            dict: Summary of KS distances per group.
        """
        chainset = ChainSet.load(chains_dir)
        settings = config.prediction
        m = self._new_samples(config, counts, test)
        with self.scope(out_dir, config.seed, config, command="ppc") as (out, manifest):
            frame = posterior_predictive_check(
                chainset, counts, test, m, config.seed, settings.n_augment, settings.max_draws, workers
            )
            self.write_frame(manifest, out, "ppc.csv", frame)
            summary = {"ks": summarize_frame(frame, ["group"], "ks").to_dict(orient="records")}
            self.write_json(manifest, out, "ppc_summary.json", summary)
        return summary


predict = PredictCommand("predict")
