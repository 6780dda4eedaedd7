"""
Run configuration: one YAML file with dataset, model, train, metrics and
paths sections plus a global seed.

Precedence is command-line flag > config file > default.
"""

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Type, TypeVar, Union

import yaml

from .datagen import DatasetSpec
from .exceptions import ConfigError
from .metrics import DEFAULT_FAILURE_THRESHOLD_DB, SDR_NUMERATORS
from .model import ModelConfig
from .training import TrainConfig

SECTIONS = ("dataset", "model", "train", "metrics", "paths")
TOP_LEVEL_KEYS = SECTIONS + ("seed",)

T = TypeVar("T")


@dataclass
class MetricsConfig:
    sdr_numerator: str = "reference"
    failure_threshold_db: float = DEFAULT_FAILURE_THRESHOLD_DB

    def validate(self) -> None:
        if self.sdr_numerator not in SDR_NUMERATORS:
            raise ConfigError(
                f"metrics.sdr_numerator must be one of {SDR_NUMERATORS}, "
                f"got {self.sdr_numerator!r}"
            )


@dataclass
class PathsConfig:
    """Run directory layout; relative sub-directories live under ``workdir``."""

    workdir: str = "runs/desk"
    dataset_dir: str = "dataset"
    checkpoint_dir: str = "checkpoints"
    matrix_dir: str = "matrices"
    report_dir: str = "reports"

    def _under(self, sub: str) -> Path:
        path = Path(sub)
        return path if path.is_absolute() else Path(self.workdir) / path

    @property
    def dataset(self) -> Path:
        return self._under(self.dataset_dir)

    @property
    def checkpoints(self) -> Path:
        return self._under(self.checkpoint_dir)

    @property
    def matrices(self) -> Path:
        return self._under(self.matrix_dir)

    @property
    def reports(self) -> Path:
        return self._under(self.report_dir)


@dataclass
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def validate(self) -> None:
        """Delegate to every section, then check cross-section constraints."""
        self.dataset.validate()
        self.model.validate()
        self.train.validate(self.dataset.n_enrollments)
        self.metrics.validate()
        if self.model.n_train_speakers < self.dataset.n_train_speakers:
            raise ConfigError(
                f"model.n_train_speakers ({self.model.n_train_speakers}) must cover "
                f"the {self.dataset.n_train_speakers} training speakers"
            )

    def with_overrides(
        self,
        seed: Optional[int] = None,
        workdir: Optional[str] = None,
        loss_mode: Optional[str] = None,
    ) -> "RunConfig":
        """Copy with command-line overrides applied; ``seed`` reseeds every section."""
        dataset, train, paths = self.dataset, self.train, self.paths
        top_seed = self.seed
        if seed is not None:
            top_seed = seed
            dataset = dataclasses.replace(dataset, master_seed=seed)
            train = dataclasses.replace(train, seed=seed)
        if loss_mode is not None:
            train = dataclasses.replace(train, loss_mode=loss_mode)
        if workdir is not None:
            paths = dataclasses.replace(paths, workdir=workdir)
        return dataclasses.replace(
            self, dataset=dataset, train=train, paths=paths, seed=top_seed
        )

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    def dump(self, path: Union[str, Path]) -> Path:
        """Write the resolved configuration as YAML."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)
        return Path(path)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _section(cls: Type[T], data: Any, name: str) -> T:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in section '{name}': {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid section '{name}': {e}") from e


def run_config_from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    """
    Build a RunConfig from parsed YAML.

    The global ``seed`` fills ``dataset.master_seed`` and ``train.seed``
    unless those are set explicitly; ``model.n_train_speakers`` defaults
    to ``dataset.n_train_speakers``.

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    data = dict(data or {})
    unknown = sorted(set(data) - set(TOP_LEVEL_KEYS))
    if unknown:
        raise ConfigError(f"Unknown top-level keys: {unknown}")
    try:
        seed = int(data.get("seed", 0))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"seed must be an integer: {e}") from e

    dataset_raw = dict(data.get("dataset") or {})
    dataset_raw.setdefault("master_seed", seed)
    train_raw = dict(data.get("train") or {})
    train_raw.setdefault("seed", seed)

    dataset = _section(DatasetSpec, dataset_raw, "dataset")
    model_raw = dict(data.get("model") or {})
    model_raw.setdefault("n_train_speakers", dataset.n_train_speakers)

    return RunConfig(
        dataset=dataset,
        model=_section(ModelConfig, model_raw, "model"),
        train=_section(TrainConfig, train_raw, "train"),
        metrics=_section(MetricsConfig, data.get("metrics"), "metrics"),
        paths=_section(PathsConfig, data.get("paths"), "paths"),
        seed=seed,
    )


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Read a YAML run configuration; no path means all defaults.

    Raises:
        ConfigError: If the file is missing, unparsable or invalid
    """
    if path is None:
        return run_config_from_dict({})
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"Config file not found: {p}")
    try:
        with open(p, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {p}: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return run_config_from_dict(data)
