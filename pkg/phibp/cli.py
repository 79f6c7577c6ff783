"""Batch command line for the simulate / fit / posterior / predict pipeline."""
import argparse
import logging
import sys
from typing import List, Optional

from .commands import fit, posterior, predict, simulate
from .config import load_config
from .count_matrix import load_count_matrix
from .exceptions import ConfigurationError, PhibpError
from .settings import settings

logger = logging.getLogger(__name__)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="root seed; overrides the config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--workers", type=int, help="worker processes, capped by PHIBP_THREADS")


def _add_counts(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--counts", required=required, help="count table (groups x species)")
    parser.add_argument("--samples", help="sidecar with group,samples[,exposure] columns")


def _add_prediction(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--m", type=int, nargs="+", help="new samples per group (one value or one per group)")
    parser.add_argument("--quad-nodes", type=int, help="minimum Gauss-gamma nodes of the likelihood quadrature")
    parser.add_argument("--max-draws", type=int, help="evenly thinned cap on the chain records used")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phibp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset with its latent truth")
    _add_common(p)

    p = sub.add_parser("split", help="binomially thin counts into train and test sets")
    _add_common(p)
    _add_counts(p)
    p.add_argument("--train-samples", type=int, nargs="+", required=True, help="M_j per group")
    p.add_argument("--m", type=int, nargs="+", required=True, help="m_j per group")

    p = sub.add_parser("fit", help="run MCMC chains over the hyperparameters")
    _add_common(p)
    _add_counts(p)
    p.add_argument("--chains", type=int, help="number of chains")
    p.add_argument("--steps", type=int, help="steps per chain")
    p.add_argument("--burnin", type=int, help="burn-in steps")
    p.add_argument("--thin", type=int, help="record every n-th step after burn-in")
    p.add_argument("--delta", type=float, help="random-walk step size")
    p.add_argument("--prior", choices=["gg", "gamma"], help="Levy family of the fitted model")

    p = sub.add_parser("diagnose", help="recompute diagnostics of saved chains")
    p.add_argument("--chains-dir", required=True, help="directory written by fit")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("posterior", help="posterior abundance draws per chain record")
    _add_common(p)
    _add_counts(p)
    p.add_argument("--chains-dir", required=True, help="directory written by fit")
    p.add_argument("--max-draws", type=int, help="evenly thinned cap on the chain records used")

    p = sub.add_parser("diversity", help="alpha and beta diversity of posterior draws")
    p.add_argument("--posterior", required=True, help="posterior.csv written by posterior")
    p.add_argument("--out", required=True, help="output directory")

    for name, help_text in (
        ("predict", "predict new samples, unseen entropy and test log-likelihood"),
        ("ppc", "frequency-of-frequencies check against held-out counts"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        _add_counts(p)
        _add_prediction(p)
        p.add_argument("--chains-dir", required=True, help="directory written by fit")
        p.add_argument("--test", required=name == "ppc", help="held-out count table")
        p.add_argument("--test-samples", help="sample sidecar of the held-out table")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    chains = {
        "chains": getattr(args, "chains", None),
        "steps": getattr(args, "steps", None),
        "burn_in": getattr(args, "burnin", None),
        "thin": getattr(args, "thin", None),
        "delta": getattr(args, "delta", None),
        "prior": getattr(args, "prior", None),
        "seed": args.seed,
    }
    prediction = {
        "m": getattr(args, "m", None),
        "quad_nodes": getattr(args, "quad_nodes", None),
        "max_draws": getattr(args, "max_draws", None),
    }
    return {"seed": args.seed, "chains": chains, "prediction": prediction}


def run(args: argparse.Namespace) -> None:
    """Dispatch one parsed subcommand."""
    if args.command == "diagnose":
        fit.diagnose(args.chains_dir, args.out)
        return
    if args.command == "diversity":
        posterior.diversity(args.posterior, args.out)
        return

    config = load_config(args.config, _overrides(args))
    if args.command == "simulate":
        simulate.simulate(config, args.out)
        return

    counts = load_count_matrix(args.counts, args.samples)
    if args.command == "split":
        simulate.split(counts, args.train_samples, args.m, config.seed, args.out)
    elif args.command == "fit":
        fit.fit(counts, config, args.out, args.workers)
    elif args.command == "posterior":
        posterior.posterior(counts, args.chains_dir, config, args.out, args.workers)
    else:
        test = None if args.test is None else load_count_matrix(args.test, args.test_samples)
        if args.command == "predict":
            predict.predict(counts, args.chains_dir, config, args.out, test, args.workers)
        else:
            predict.ppc(counts, args.chains_dir, test, config, args.out, args.workers)


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the `phibp` console script.

    Args:
        argv (list of str, optional): Arguments; `sys.argv[1:]` when None.

    Returns:
        int: 0 on success, 2 on usage or configuration errors, 1 on runtime errors.
    """
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, settings.PHIBP_LOG_LEVEL, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else USAGE_ERROR

    try:
        run(args)
    except ConfigurationError as exc:
        print(f"phibp {args.command}: configuration error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (PhibpError, OSError, ValueError) as exc:
        print(f"phibp {args.command}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except Exception as exc:
        logger.debug("Unexpected failure of %s", args.command, exc_info=True)
        print(f"phibp {args.command}: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    return 0
