import logging
from typing import Optional

from ..config import ChainConfig, RunConfig
from ..count_matrix import CountMatrix
from ..inference import ChainSet, diagnostics, run_chains
from ..schemas import DiagnosticsSchema
from .base import CommandBase

logger = logging.getLogger(__name__)


class FitCommand(CommandBase[ChainConfig]):
    """Run MCMC chains and report their convergence diagnostics."""

    def fit(self, counts: CountMatrix, config: RunConfig, out_dir, workers: Optional[int] = None) -> ChainSet:
        """
        Fit the hyperparameters and write chains.csv, chain_meta.json,
        latents.npy and diagnostics.json.

        Args:
            counts (CountMatrix): Training counts.
            config (RunConfig): Run configuration; its `chains` section is used.
            out_dir (str or Path): Output directory.
            workers (int, optional): Worker processes, capped by PHIBP_THREADS.

        Returns:
            ChainSet: The records.
        """
        with self.scope(out_dir, config.chains.seed, config) as (out, manifest):
            chainset = run_chains(counts, config.chains, workers)
            self.record(manifest, *chainset.save(out))
            self._write_diagnostics(manifest, out, chainset)
        return chainset

    def diagnose(self, chains_dir, out_dir) -> dict:
        """
        Recompute diagnostics of saved chains.

        Args:
            chains_dir (str or Path): Directory written by `fit`.
            out_dir (str or Path): Output directory.

        Returns:
            dict: The diagnostics.
        """
        chainset = ChainSet.load(chains_dir)
        with self.scope(out_dir, chainset.config.seed, chainset.config, command="diagnose") as (out, manifest):
            report = self._write_diagnostics(manifest, out, chainset)
        return report

    def _write_diagnostics(self, manifest, out, chainset: ChainSet) -> dict:
        report = DiagnosticsSchema().dump(diagnostics(chainset))
        self.write_json(manifest, out, "diagnostics.json", report)
        if not report["converged"]:
            logger.warning("Chains have not converged (R-hat threshold not met)")
        return report


fit = FitCommand("fit")
