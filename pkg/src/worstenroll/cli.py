"""
Command-line entry point: simulate | train | eval | report | gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import logging
import shutil
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

from . import __version__
from .analysis import (
    build_eval_matrix,
    collect_embeddings,
    compare_systems,
    load_variance_ratio,
    render_plots,
    save_variance_ratio,
    system_report,
    variance_ratio,
)
from .config import RunConfig, load_run_config
from .datagen import build_dataset
from .exceptions import (
    ConfigError,
    DegenerateError,
    InsufficientClassesError,
    ManifestError,
    MatrixFormatError,
    WorstEnrollError,
)
from .gradcheck import run_gradcheck
from .hash import derive_seed, verify_hash
from .lock import WorkdirLock
from .logging import configure_logging, get_logger, level_from_env, log_to_file
from .losses import LOSS_MODES
from .manifest import DatasetManifest, read_dataset_info
from .metrics import EvalMatrix
from .model import init_params, load_checkpoint
from .training import BEST_CHECKPOINT_NAME, LAST_CHECKPOINT_NAME, Trainer

_logger = get_logger("cli")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

MATRIX_SUFFIX = ".matrix.tsv"
VARIANCE_SUFFIX = ".variance.json"
RESOLVED_CONFIG_NAME = "config.resolved.yaml"
TRAIN_LOG_NAME = "train.log"


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config).with_overrides(
        seed=args.seed,
        workdir=args.workdir,
        loss_mode=getattr(args, "loss_mode", None),
    )
    config.validate()
    return config


def _load_manifest(config: RunConfig) -> DatasetManifest:
    root = config.paths.dataset
    manifest = DatasetManifest.load(root)
    try:
        info = read_dataset_info(root)
    except ManifestError:
        _logger.warning(f"{root}: no dataset info, skipping manifest digest check")
        return manifest
    if not verify_hash(manifest.path, info.get("manifest_sha256")):
        _logger.warning(f"{manifest.path} no longer matches the digest recorded at generation")
    return manifest


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    dataset_dir = config.paths.dataset
    with WorkdirLock(config.paths.workdir):
        if dataset_dir.exists() and any(dataset_dir.iterdir()):
            if not args.force:
                raise ConfigError(f"{dataset_dir} already exists (use --force to regenerate)")
            shutil.rmtree(dataset_dir)
        manifest = build_dataset(config.dataset, dataset_dir)
        manifest.validate(min_enrollment_duration_s=config.dataset.min_enrollment_duration_s)
        config.dump(Path(config.paths.workdir) / RESOLVED_CONFIG_NAME)
    print(manifest.path)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    name = args.name or config.train.loss_mode
    output_dir = config.paths.checkpoints / name
    with WorkdirLock(config.paths.workdir):
        manifest = _load_manifest(config)
        resume_state = None
        if args.resume:
            last = output_dir / LAST_CHECKPOINT_NAME
            if not last.is_file():
                raise ConfigError(f"Nothing to resume: {last} not found")
            resume_state = load_checkpoint(last)
        elif output_dir.exists() and any(output_dir.iterdir()):
            if not args.force:
                raise ConfigError(f"{output_dir} already exists (use --force or --resume)")
            shutil.rmtree(output_dir)

        trainer = Trainer(
            config.model,
            config.train,
            manifest,
            output_dir=output_dir,
            resume_state=resume_state,
            sdr_numerator=config.metrics.sdr_numerator,
        )
        with log_to_file(output_dir / TRAIN_LOG_NAME):
            result = trainer.run()
        config.dump(output_dir / RESOLVED_CONFIG_NAME)
    _logger.info(f"Best epoch: {result.best_epoch}")
    print(output_dir / BEST_CHECKPOINT_NAME)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if args.checkpoint:
        checkpoint = Path(args.checkpoint)
        name = args.name or checkpoint.parent.name
    else:
        name = args.name or config.train.loss_mode
        checkpoint = config.paths.checkpoints / name / BEST_CHECKPOINT_NAME

    matrix_path = config.paths.matrices / f"{name}{MATRIX_SUFFIX}"
    variance_path = config.paths.matrices / f"{name}{VARIANCE_SUFFIX}"
    with WorkdirLock(config.paths.workdir):
        if matrix_path.exists() and not args.force:
            raise ConfigError(f"{matrix_path} already exists (use --force to overwrite)")
        manifest = _load_manifest(config)
        if args.untrained:
            model = init_params(config.model, derive_seed(config.train.seed, "init"))
        else:
            model, _ = load_checkpoint(checkpoint)
        matrix = build_eval_matrix(
            model, manifest, split=args.split, numerator=config.metrics.sdr_numerator
        )
        matrix.save(matrix_path)

        try:
            ratio: Optional[float] = variance_ratio(collect_embeddings(model, manifest, "dev"))
        except (DegenerateError, InsufficientClassesError) as e:
            _logger.warning(f"Variance ratio unavailable: {e}")
            ratio = None
        save_variance_ratio(variance_path, ratio, "dev")
    print(matrix_path)
    return EXIT_OK


def _matrix_name(path: Path) -> str:
    name = path.name
    return name[: -len(MATRIX_SUFFIX)] if name.endswith(MATRIX_SUFFIX) else path.stem


def cmd_report(args: argparse.Namespace) -> int:
    config = _load_config(args)
    paths = [Path(p) for p in args.matrices]
    if not paths:
        paths = sorted(config.paths.matrices.glob(f"*{MATRIX_SUFFIX}"))
    if not paths:
        raise ConfigError(f"No evaluation matrices given or found in {config.paths.matrices}")

    reports = []
    for path in paths:
        if not path.is_file():
            raise ConfigError(f"Matrix file not found: {path}")
        try:
            matrix = EvalMatrix.load(path)
        except MatrixFormatError as e:
            raise MatrixFormatError(f"{path}: {e}") from e
        name = _matrix_name(path)
        variance = load_variance_ratio(path.with_name(f"{name}{VARIANCE_SUFFIX}"))
        reports.append(
            system_report(name, matrix, variance, config.metrics.failure_threshold_db)
        )

    comparison = compare_systems(reports)
    with WorkdirLock(config.paths.workdir):
        written = comparison.write(config.paths.reports)
        if args.plot:
            written += render_plots(comparison, config.paths.reports)
    for path in written:
        _logger.info(f"Wrote {path}")
    sys.stdout.write(comparison.to_table())
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = 0 if args.seed is None else args.seed
    results = run_gradcheck(seed=seed, n_params=args.params)
    failed = [r.loss_name for r in results if not r.passed]
    for r in results:
        print(f"{r.loss_name}\t{r.n_checked}\t{r.max_relative_error:.3e}\t"
              f"{'ok' if r.passed else 'FAILED'}")
    if failed:
        _logger.error(f"Gradient check failed for: {', '.join(failed)}")
        return EXIT_RUNTIME
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--seed", type=int, help="Override every seed in the config")
    parser.add_argument("--workdir", help="Override paths.workdir")
    parser.add_argument("--force", action="store_true", help="Overwrite existing outputs")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="worstenroll",
        description="Enrollment-robust target speech extraction experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Generate the synthetic dataset")
    _add_common(simulate)

    train = commands.add_parser("train", help="Train one system")
    _add_common(train)
    train.add_argument("--loss-mode", choices=LOSS_MODES, help="Override train.loss_mode")
    train.add_argument("--name", help="Run name (default: the loss mode)")
    train.add_argument("--resume", action="store_true", help="Continue from last.pt")

    evaluate = commands.add_parser("eval", help="Evaluate every enrollment candidate")
    _add_common(evaluate)
    evaluate.add_argument("--checkpoint", help="Checkpoint (default: <run>/best.pt)")
    evaluate.add_argument("--name", help="System name (default: the loss mode)")
    evaluate.add_argument("--split", default="eval", choices=("train", "dev", "eval"))
    evaluate.add_argument(
        "--untrained", action="store_true", help="Evaluate freshly initialized parameters"
    )

    report = commands.add_parser("report", help="Compare evaluated systems")
    _add_common(report)
    report.add_argument("matrices", nargs="*", help="Matrix files (default: all in matrix_dir)")
    report.add_argument("--plot", action="store_true", help="Render box plots (matplotlib)")

    gradcheck = commands.add_parser("gradcheck", help="Finite-difference gradient checks")
    _add_common(gradcheck)
    gradcheck.add_argument("--params", type=int, default=50, help="Parameters per loss")
    return parser


USAGE_ERRORS = (ConfigError, ManifestError, MatrixFormatError, FileNotFoundError)

COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return int(e.code or 0)

    level = logging.DEBUG if args.verbose else level_from_env()
    configure_logging(level=level)
    try:
        return COMMANDS[args.command](args)
    except USAGE_ERRORS as e:
        _logger.error(str(e))
        return EXIT_USAGE
    except WorstEnrollError as e:
        _logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
