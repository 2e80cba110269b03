"""
Command-line entry point.

    python -m src.main <subcommand> [--config cfg.json] [--seed N] [--out PATH] [--format json|csv]

Exit codes: 0 on success, 1 on configuration or input errors, 2 when an EANN
bound check fails.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple, Type

from pydantic import BaseModel, ValidationError

from src.core.errors import AnytimeError
from src.core.logging_config import setup_logging
from src.schemas.experiment import (
    EannEnsembleConfig,
    EannSimulateConfig,
    EannVerifyConfig,
    ExperimentConfig,
    ReportFormat,
    SizeComparisonConfig,
)
from src.services import experiment_service
from src.services.data_export import emit_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_BOUND_FAILURE = 2

# subcommand -> (config model, description)
COMMANDS: Dict[str, Tuple[Type[BaseModel], str]] = {
    "train": (ExperimentConfig, "train one network with the first configured scheme and seed"),
    "compare-schemes": (ExperimentConfig, "relative loss/error increase of weight schemes over OPT"),
    "weight-evolution": (ExperimentConfig, "final AdaLoss weights across datasets"),
    "eann-verify": (EannVerifyConfig, "simulate EANN cost inflation and check the closed-form bounds"),
    "eann-simulate": (EannSimulateConfig, "per-budget cost inflation and an illustrative gated schedule"),
    "compare-sizes": (SizeComparisonConfig, "small ANN with AdaLoss versus a deeper ANN with CONST"),
    "eann-ensemble": (EannEnsembleConfig, "EANN of trained members, anytime validation error per budget"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anytime", description="Anytime neural network experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file; omitted fields take their defaults")
        p.add_argument("--seed", type=int, help="run a single seed instead of the configured ones")
        p.add_argument(
            "--out",
            help="report path (for train: checkpoint path; the report is written next to it)",
        )
        p.add_argument("--format", choices=[f.value for f in ReportFormat], default=ReportFormat.JSON.value)
        p.add_argument("--log-level", default=None, help="overrides ANYTIME_LOG_LEVEL")
    return parser


def load_config(model: Type[BaseModel], path: Optional[str], seed: Optional[int]) -> BaseModel:
    cfg = model.model_validate_json(Path(path).read_text()) if path else model()
    if seed is None:
        return cfg
    if "seeds" in model.model_fields:
        return cfg.model_copy(update={"seeds": [seed]})
    if "seed" in model.model_fields:
        return cfg.model_copy(update={"seed": seed})
    return cfg


def _train_paths(out: Optional[str], fmt: ReportFormat) -> Tuple[Optional[str], Optional[Path]]:
    if not out:
        return None, None
    checkpoint = Path(out)
    return str(checkpoint), checkpoint.with_name(f"{checkpoint.stem}.report.{fmt.value}")


RUNNERS: Dict[str, Callable] = {
    "compare-schemes": experiment_service.run_scheme_comparison,
    "weight-evolution": experiment_service.run_weight_evolution,
    "eann-verify": experiment_service.run_eann_verification,
    "eann-simulate": experiment_service.run_eann_simulation,
    "compare-sizes": experiment_service.run_size_comparison,
    "eann-ensemble": experiment_service.run_eann_ensemble,
}


def run(args: argparse.Namespace) -> int:
    model, _ = COMMANDS[args.command]
    fmt = ReportFormat(args.format)
    cfg = load_config(model, args.config, args.seed)
    logger.info(f"Running {args.command} with config {json.dumps(cfg.model_dump(mode='json'))}")

    if args.command == "train":
        checkpoint, report_path = _train_paths(args.out, fmt)
        report = experiment_service.run_training(cfg, checkpoint)
    else:
        report = RUNNERS[args.command](cfg)
        report_path = args.out or getattr(cfg, "report_path", None)

    emit_report(report, fmt, report_path)
    if getattr(report, "passed", True) is False:
        return EXIT_BOUND_FAILURE
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logging(level=args.log_level.upper())
    else:
        setup_logging()

    try:
        return run(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
    except json.JSONDecodeError as e:
        logger.error(f"Config file is not valid JSON: {e}")
    except FileNotFoundError as e:
        logger.error(f"File not found: {e.filename}")
    except AnytimeError as e:
        logger.error(f"{args.command} failed: {e}")
    return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
