"""
worstenroll - enrollment-robust target speech extraction.

Train a speaker-conditioned extraction network with worst-enrollment
objectives and score it with every enrollment candidate.
"""

__version__ = "0.1.0"

from .analysis import (
    build_eval_matrix,
    collect_embeddings,
    compare_systems,
    variance_ratio,
)
from .audio import Waveform, mix, read_wav, write_wav
from .config import RunConfig, load_run_config
from .datagen import DatasetSpec, build_dataset
from .exceptions import (
    ConfigError,
    DivergenceError,
    EvaluationError,
    ManifestError,
    WorstEnrollError,
)
from .logging import configure_logging, get_logger
from .manifest import DatasetManifest
from .metrics import EvalMatrix, sdr, sdri, worst_enrollment_report
from .model import ModelConfig, TSEModel, init_params, load_checkpoint, save_checkpoint
from .progress import ProgressBar
from .retry import BackoffPolicy, retry_on
from .training import TrainConfig, Trainer, train

__all__ = [
    "__version__",
    "Waveform",
    "mix",
    "read_wav",
    "write_wav",
    "DatasetSpec",
    "DatasetManifest",
    "build_dataset",
    "EvalMatrix",
    "sdr",
    "sdri",
    "worst_enrollment_report",
    "ModelConfig",
    "TSEModel",
    "init_params",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "Trainer",
    "train",
    "build_eval_matrix",
    "collect_embeddings",
    "variance_ratio",
    "compare_systems",
    "RunConfig",
    "load_run_config",
    "WorstEnrollError",
    "ConfigError",
    "ManifestError",
    "EvaluationError",
    "DivergenceError",
    "ProgressBar",
    "configure_logging",
    "get_logger",
    "BackoffPolicy",
    "retry_on",
]
