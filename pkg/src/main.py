"""Command line entry point: `python -m src.main <subcommand> ...`.

Exit codes: 0 on success, 2 on invalid input, 3 when training aborts on a
non-finite loss.
"""
import argparse
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Sequence

from pydantic import ValidationError

from src.core.config import settings
from src.core.errors import StorageError, TrainingAbortedError
from src.core.logging import setup_logging
from src.schemas.distribution import DistributionKind, DistributionSpec
from src.schemas.experiment import ExperimentConfig, load_experiment_config
from src.schemas.report import DamaGrid, DsicGrid
from src.services.experiments import DEFAULT_SWEEP_TARGETS, ExperimentService

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ABORTED = 3


@contextmanager
def experiment_service(persist: bool) -> Iterator[ExperimentService]:
    """Service bound to a result-database session when persistence is on."""
    if not persist:
        yield ExperimentService()
        return

    from src.models.base import SessionLocal, init_db

    init_db()
    db = SessionLocal()
    try:
        yield ExperimentService(db=db)
    finally:
        db.close()
        logger.debug("Database session closed")


def _spec_from_args(args: argparse.Namespace) -> DistributionSpec:
    return DistributionSpec(
        kind=DistributionKind(args.kind),
        n=args.n,
        m=args.m,
        alpha=args.alpha,
        epsilon=args.epsilon,
        epsilon1=args.epsilon1,
        equal_revenue_mode=args.equal_revenue_mode,
        seed=args.seed,
    )


def _output_dir(args: argparse.Namespace, config: Optional[ExperimentConfig] = None) -> Path:
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    if config is not None:
        return config.output_path
    return Path(settings.OUTPUT_ROOT)


def _config_with_output(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    if getattr(args, "output_dir", None):
        config = config.model_copy(update={"output_dir": args.output_dir})
    return config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_sample(args: argparse.Namespace) -> int:
    spec = _spec_from_args(args)
    path = Path(args.out) if args.out else _output_dir(args) / f"{spec.kind.value}_{spec.n}x{spec.m}_seed{spec.seed}.csv"
    with experiment_service(persist=False) as service:
        csv_path, manifest = service.sample(spec, args.count, path)
    print(csv_path)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_with_output(args)
    with experiment_service(settings.PERSIST_RESULTS) as service:
        rows = service.train(config)
    for row in rows:
        print(row.model_dump_json())
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    grid = DsicGrid(points_per_item=args.grid_points, random_probes=args.random_probes)
    with experiment_service(settings.PERSIST_RESULTS) as service:
        reports = service.evaluate(Path(args.checkpoint), Path(args.dataset), _output_dir(args), grid)
    for report in reports:
        print(report.model_dump_json())
    return EXIT_OK


def cmd_sweep_rtarget(args: argparse.Namespace) -> int:
    config = _config_with_output(args)
    targets = args.targets or list(DEFAULT_SWEEP_TARGETS)
    with experiment_service(persist=False) as service:
        rows = service.sweep_rtarget(config, targets, seeds=args.seeds)
    for row in rows:
        print(row.model_dump_json())
    return EXIT_OK


def cmd_figure_equal_revenue(args: argparse.Namespace) -> int:
    config = _config_with_output(args)
    with experiment_service(persist=False) as service:
        references = service.figure_equal_revenue(config, args.epsilons)
    print(references.to_string(index=False))
    return EXIT_OK


def cmd_figure_revenue_surface(args: argparse.Namespace) -> int:
    config = _config_with_output(args)
    with experiment_service(persist=False) as service:
        surface = service.figure_revenue_surface(config, args.grid_points)
    print(surface[["caama", "caama_postproc", "ama_only", "optimal"]].mean().to_string())
    return EXIT_OK


def cmd_verify_surplus_ceiling(args: argparse.Namespace) -> int:
    spec = DistributionSpec(
        kind=DistributionKind.EQUAL_REVENUE_CORRELATED, n=args.n, m=1,
        epsilon=args.epsilon, epsilon1=args.epsilon1, equal_revenue_mode="n-bidder", seed=args.seed,
    )
    grid = DamaGrid(samples=args.samples)
    with experiment_service(settings.PERSIST_RESULTS) as service:
        report = service.verify_surplus_ceiling(spec, _output_dir(args), grid)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_distribution_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kind", required=True, choices=[k.value for k in DistributionKind])
    parser.add_argument("--n", type=int, required=True)
    parser.add_argument("--m", type=int, required=True)
    parser.add_argument("--alpha", type=float, default=0.5)
    parser.add_argument("--epsilon", type=float, default=0.1)
    parser.add_argument("--epsilon1", type=float, default=0.05)
    parser.add_argument("--equal-revenue-mode", choices=["n-bidder", "two-bidder"], default="n-bidder")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ca-ama", description="Learn and verify correlation-aware AMAs")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="write a dataset CSV and manifest")
    _add_distribution_flags(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("train", help="train every mode of an experiment config")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="verify a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--output-dir", default=None)
    p.add_argument("--grid-points", type=int, default=21)
    p.add_argument("--random-probes", type=int, default=256)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep-rtarget", help="train CAAMA across IR-regret targets")
    p.add_argument("config")
    p.add_argument("--targets", type=float, nargs="+", default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--output-dir", default=None)
    p.set_defaults(handler=cmd_sweep_rtarget)

    p = sub.add_parser("figure-equal-revenue", help="training curves on equal revenue distributions")
    p.add_argument("config")
    p.add_argument("--epsilons", type=float, nargs="+", default=[0.1])
    p.add_argument("--output-dir", default=None)
    p.set_defaults(handler=cmd_figure_equal_revenue)

    p = sub.add_parser("figure-revenue-surface", help="revenue over bidder 1 values on the perfect negative 2x2 setting")
    p.add_argument("config")
    p.add_argument("--grid-points", type=int, default=41)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(handler=cmd_figure_revenue_surface)

    p = sub.add_parser("verify-appendix-b", help="deterministic AMA ceiling vs full-surplus CA-AMA")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--epsilon1", type=float, default=0.05)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(handler=cmd_verify_surplus_ceiling)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or settings.LOG_LEVEL)

    try:
        return args.handler(args)
    except TrainingAbortedError as e:
        logger.error("%s", e)
        return EXIT_ABORTED
    except (ValidationError, ValueError, StorageError) as e:
        logger.error("Invalid input: %s", e)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
