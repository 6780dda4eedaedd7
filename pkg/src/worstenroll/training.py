"""
Enrollment sampling, optimizer, learning-rate schedule and the training loop.
"""

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .audio import Waveform, read_wav
from .exceptions import (
    ConfigError,
    DivergenceError,
    EmptyEnrollmentSetError,
    ManifestError,
    ShapeError,
    SubsetTooLargeError,
)
from .hash import derive_seed
from .logging import get_logger
from .losses import CONVENTIONAL, LOSS_MODES, SI, SI_MODES, WORST_MODES, objective
from .manifest import DatasetManifest, MixtureRecord
from .metrics import SDR_NUMERATORS
from .model import ModelConfig, TSEModel, init_params, save_checkpoint
from .progress import ProgressBar
from .utils import map_ordered

_logger = get_logger("training")

ENROLLMENT_SAMPLING = ("random", "round_robin")
HISTORY_NAME = "history.jsonl"
BEST_CHECKPOINT_NAME = "best.pt"
LAST_CHECKPOINT_NAME = "last.pt"


@dataclass
class TrainConfig:
    """Objective, subset sampling and schedule settings."""

    loss_mode: str = CONVENTIONAL
    subset_size: int = 3
    tau: float = 2.0
    alpha: float = 1.0
    initial_lr: float = 5e-4
    lr_halving_patience_epochs: int = 3
    total_epochs: int = 60
    worst_loss_start_epoch: int = 48
    batch_size: int = 8
    seed: int = 0
    enrollment_sampling: str = "random"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    num_threads: int = 1

    def validate(self, n_enrollments: Optional[int] = None) -> None:
        """
        Raise ConfigError on invalid settings.

        Args:
            n_enrollments: Candidates per mixture N, checked against K
        """
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(
                f"Invalid loss_mode '{self.loss_mode}'. Must be one of: {LOSS_MODES}"
            )
        if self.enrollment_sampling not in ENROLLMENT_SAMPLING:
            raise ConfigError(
                f"Invalid enrollment_sampling '{self.enrollment_sampling}'. "
                f"Must be one of: {ENROLLMENT_SAMPLING}"
            )
        if self.subset_size < 1:
            raise ConfigError("train.subset_size must be >= 1")
        if n_enrollments is not None and self.subset_size > n_enrollments:
            raise ConfigError(
                f"train.subset_size K={self.subset_size} exceeds "
                f"the {n_enrollments} enrollment candidates per mixture"
            )
        if self.tau <= 0:
            raise ConfigError("train.tau must be > 0")
        if self.alpha < 0:
            raise ConfigError("train.alpha must be >= 0")
        if self.initial_lr <= 0:
            raise ConfigError("train.initial_lr must be > 0")
        if self.total_epochs < 0:
            raise ConfigError("train.total_epochs must be >= 0")
        if not 0 <= self.worst_loss_start_epoch <= self.total_epochs:
            raise ConfigError("train.worst_loss_start_epoch must lie in 0..total_epochs")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.lr_halving_patience_epochs < 1:
            raise ConfigError("train.lr_halving_patience_epochs must be >= 1")
        if self.num_threads < 1:
            raise ConfigError("train.num_threads must be >= 1")

    def active_mode(self, epoch: int) -> str:
        """
        Objective used in 0-based ``epoch``.

        Worst-enrollment terms switch on at ``worst_loss_start_epoch``;
        the SI term is active from the first epoch.
        """
        if self.loss_mode not in WORST_MODES or epoch >= self.worst_loss_start_epoch:
            return self.loss_mode
        return SI if self.loss_mode in SI_MODES else CONVENTIONAL

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown train keys: {unknown}")
        return cls(**data)


# --- sampling ----------------------------------------------------------------


def sample_uniform_enrollment(n_candidates: int, rng: np.random.Generator) -> int:
    """
    Uniform index in 0..n_candidates-1.

    Raises:
        EmptyEnrollmentSetError: If there are no candidates
    """
    if n_candidates < 1:
        raise EmptyEnrollmentSetError("no enrollment candidates to sample from")
    return int(rng.integers(0, n_candidates))


def sample_subset(n_candidates: int, k: int, rng: np.random.Generator) -> List[int]:
    """
    K distinct indices, uniform over K-subsets, returned in ascending order.

    Raises:
        EmptyEnrollmentSetError: If there are no candidates
        SubsetTooLargeError: If k exceeds the number of candidates
    """
    if n_candidates < 1:
        raise EmptyEnrollmentSetError("no enrollment candidates to sample from")
    if k > n_candidates:
        raise SubsetTooLargeError(f"K={k} exceeds {n_candidates} candidates")
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    picks = rng.choice(n_candidates, size=k, replace=False)
    return sorted(int(i) for i in picks)


def round_robin_enrollment(n_candidates: int, epoch: int, item: int) -> int:
    """Iterative choice: (epoch + item) mod N."""
    if n_candidates < 1:
        raise EmptyEnrollmentSetError("no enrollment candidates to sample from")
    return (epoch + item) % n_candidates


# --- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    """First and second moments per parameter plus the step counter."""

    step: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"step": self.step, "m": dict(self.m), "v": dict(self.v)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AdamState":
        return cls(step=int(data["step"]), m=dict(data["m"]), v=dict(data["v"]))


def adam_step(
    params: Dict[str, torch.Tensor],
    grads: Dict[str, torch.Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Dict[str, torch.Tensor], AdamState]:
    """
    One bias-corrected Adam update.

    Inputs are left untouched; new parameter tensors and a new state are
    returned. Missing moments start at zero.

    Raises:
        ShapeError: If a gradient or moment shape disagrees with its parameter
    """
    step = state.step + 1
    new_params: Dict[str, torch.Tensor] = {}
    new_m: Dict[str, torch.Tensor] = {}
    new_v: Dict[str, torch.Tensor] = {}
    for name, p in params.items():
        if name not in grads:
            raise ShapeError(f"No gradient for parameter '{name}'")
        g = grads[name]
        m = state.m.get(name, torch.zeros_like(p))
        v = state.v.get(name, torch.zeros_like(p))
        for label, t in (("gradient", g), ("first moment", m), ("second moment", v)):
            if t.shape != p.shape:
                raise ShapeError(
                    f"{label} of '{name}' has shape {tuple(t.shape)}, "
                    f"expected {tuple(p.shape)}"
                )
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        new_params[name] = p - lr * m_hat / (torch.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=step, m=new_m, v=new_v)


class PlateauScheduler:
    """
    Halve the learning rate when the dev loss has not decreased for
    ``patience`` consecutive epochs.
    """

    def __init__(self, lr: float, patience: int):
        self.lr = lr
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, dev_loss: float) -> bool:
        """Record one epoch; returns True when the rate was halved."""
        if dev_loss < self.best:
            self.best = dev_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr /= 2.0
            self.bad_epochs = 0
            return True
        return False

    def reset(self) -> None:
        self.best = math.inf
        self.bad_epochs = 0

    def state_dict(self) -> Dict[str, float]:
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs}

    def load_state_dict(self, state: Dict[str, float]) -> None:
        self.lr = float(state["lr"])
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])


# --- data --------------------------------------------------------------------


@dataclass
class TrainingExample:
    """Mixture, target and enrollment candidates loaded into memory."""

    mixture_id: str
    mixture: Waveform
    target: Waveform
    enrollments: List[Waveform]
    label: int


def load_examples(
    manifest: DatasetManifest, split: str, max_workers: Optional[int] = None
) -> List[TrainingExample]:
    """Read every WAV referenced by a split."""

    def load(record: MixtureRecord) -> TrainingExample:
        return TrainingExample(
            mixture_id=record.mixture_id,
            mixture=read_wav(manifest.resolve(record.mixture_path)),
            target=read_wav(manifest.resolve(record.target_path)),
            enrollments=[read_wav(manifest.resolve(p)) for p in record.enrollment_paths],
            label=record.target_speaker_label,
        )

    return map_ordered(load, manifest.split(split), max_workers=max_workers)


# --- history -----------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    lr: float
    wall_time_s: float
    loss_mode: str
    is_best: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainHistory:
    """One record per completed epoch."""

    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    @property
    def train_losses(self) -> List[float]:
        return [r.train_loss for r in self.records]

    @property
    def dev_losses(self) -> List[float]:
        return [r.dev_loss for r in self.records]

    @property
    def learning_rates(self) -> List[float]:
        return [r.lr for r in self.records]

    def to_list(self) -> List[Dict[str, Any]]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_list(cls, items: Sequence[Dict[str, Any]]) -> "TrainHistory":
        return cls([EpochRecord(**item) for item in items])

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainHistory":
        with open(path, encoding="utf-8") as f:
            return cls.from_list([json.loads(line) for line in f if line.strip()])


@dataclass
class TrainResult:
    model: TSEModel
    history: TrainHistory
    best_epoch: Optional[int] = None


# --- loop --------------------------------------------------------------------


class Trainer:
    """
    Mini-batch training of a TSEModel on a dataset manifest.

    Each epoch shuffles the train split with a seed derived from
    (seed, epoch), accumulates the mean objective over ``batch_size``
    mixtures and applies one Adam step. Dev enrollments are drawn once
    per mixture so dev losses are comparable across epochs.

    Example:
        trainer = Trainer(ModelConfig(), TrainConfig(loss_mode="worst_hard_si"),
                          manifest, output_dir="runs/desk/worst_hard_si")
        result = trainer.run()
    """

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        manifest: DatasetManifest,
        output_dir: Optional[Union[str, Path]] = None,
        progress_mode: Optional[str] = None,
        resume_state: Optional[Tuple[TSEModel, Dict[str, Any]]] = None,
        max_workers: Optional[int] = None,
        sdr_numerator: str = "reference",
    ):
        model_config.validate()
        if sdr_numerator not in SDR_NUMERATORS:
            raise ConfigError(
                f"sdr_numerator must be one of {SDR_NUMERATORS}, got {sdr_numerator!r}"
            )
        self.model_config = model_config
        self.config = train_config
        self.manifest = manifest
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.progress_mode = progress_mode
        self.max_workers = max_workers
        self.sdr_numerator = sdr_numerator

        train_records = manifest.split("train")
        n_enrollments = train_records[0].n_enrollments if train_records else None
        train_config.validate(n_enrollments)

        self.model = init_params(model_config, derive_seed(train_config.seed, "init"))
        self.adam = AdamState()
        self.scheduler = PlateauScheduler(
            train_config.initial_lr, train_config.lr_halving_patience_epochs
        )
        self.history = TrainHistory()
        self.start_epoch = 0
        self.best_dev_loss = math.inf
        self.best_epoch: Optional[int] = None
        self.best_state = copy.deepcopy(self.model.state_dict())
        if resume_state is not None:
            self._restore(*resume_state)

    def _restore(self, model: TSEModel, state: Dict[str, Any]) -> None:
        if model.config != self.model_config:
            raise ConfigError("Checkpoint model configuration differs from the run config")
        self.model.load_state_dict(model.state_dict())
        if "epoch" not in state:
            return
        self.start_epoch = int(state["epoch"])
        self.adam = AdamState.from_dict(state["adam"])
        self.scheduler.load_state_dict(state["scheduler"])
        self.best_dev_loss = float(state["best_dev_loss"])
        best_epoch = state.get("best_epoch")
        self.best_epoch = None if best_epoch is None else int(best_epoch)
        self.best_state = dict(state["best_state_dict"])
        self.history = TrainHistory.from_list(state["history"])
        _logger.info(f"Resuming from epoch {self.start_epoch}")

    def train_state(self) -> Dict[str, Any]:
        return {
            "epoch": self.start_epoch,
            "adam": self.adam.to_dict(),
            "scheduler": self.scheduler.state_dict(),
            "best_dev_loss": self.best_dev_loss,
            "best_epoch": self.best_epoch,
            "best_state_dict": {k: v.detach().clone() for k, v in self.best_state.items()},
            "history": self.history.to_list(),
        }

    def _choose(
        self, mode: str, n_candidates: int, rng: np.random.Generator, epoch: int, item: int
    ) -> List[int]:
        if mode in WORST_MODES:
            return sample_subset(n_candidates, self.config.subset_size, rng)
        if self.config.enrollment_sampling == "round_robin":
            return [round_robin_enrollment(n_candidates, epoch, item)]
        return [sample_uniform_enrollment(n_candidates, rng)]

    def _loss(
        self, mode: str, example: TrainingExample, indices: Sequence[int]
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        return objective(
            mode,
            self.model,
            example.target,
            example.mixture,
            [example.enrollments[i] for i in indices],
            label=example.label,
            tau=self.config.tau,
            alpha=self.config.alpha,
            numerator=self.sdr_numerator,
        )

    def _train_epoch(self, epoch: int, mode: str, examples: List[TrainingExample]) -> float:
        rng = np.random.default_rng(derive_seed(self.config.seed, "epoch", epoch))
        order = [int(i) for i in rng.permutation(len(examples))]
        params = dict(self.model.named_parameters())
        total = 0.0
        for start in range(0, len(order), self.config.batch_size):
            batch = order[start : start + self.config.batch_size]
            self.model.zero_grad(set_to_none=False)
            for item in batch:
                example = examples[item]
                indices = self._choose(mode, len(example.enrollments), rng, epoch, item)
                loss, _ = self._loss(mode, example, indices)
                value = float(loss.detach())
                if not math.isfinite(value):
                    raise DivergenceError(
                        f"Non-finite training loss {value} at epoch {epoch + 1}, "
                        f"mixture {example.mixture_id}, enrollments {indices}, "
                        f"lr {self.scheduler.lr}"
                    )
                (loss / len(batch)).backward()
                total += value
            grads = {
                name: (p.grad if p.grad is not None else torch.zeros_like(p)).detach()
                for name, p in params.items()
            }
            current = {name: p.detach() for name, p in params.items()}
            updated, self.adam = adam_step(
                current,
                grads,
                self.adam,
                self.scheduler.lr,
                self.config.adam_beta1,
                self.config.adam_beta2,
                self.config.adam_eps,
            )
            with torch.no_grad():
                for name, p in params.items():
                    p.copy_(updated[name])
        return total / max(len(examples), 1)

    def _dev_loss(self, mode: str, examples: List[TrainingExample]) -> float:
        total = 0.0
        with torch.no_grad():
            for item, example in enumerate(examples):
                rng = np.random.default_rng(derive_seed(self.config.seed, "dev", item))
                indices = self._choose(mode, len(example.enrollments), rng, 0, item)
                loss, _ = self._loss(mode, example, indices)
                total += float(loss)
        return total / len(examples)

    def run(self) -> TrainResult:
        """
        Train for the configured number of epochs.

        Returns:
            The model with the best dev loss under the final objective

        Raises:
            DivergenceError: If a training loss becomes non-finite
            ManifestError: If the train or dev split is empty
        """
        torch.set_num_threads(self.config.num_threads)
        if self.start_epoch >= self.config.total_epochs:
            return self._finish()

        train_examples = load_examples(self.manifest, "train", self.max_workers)
        dev_examples = load_examples(self.manifest, "dev", self.max_workers)
        if not train_examples or not dev_examples:
            raise ManifestError("Training needs non-empty train and dev splits")

        history_path = None
        if self.output_dir is not None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            history_path = self.output_dir / HISTORY_NAME
            if self.start_epoch == 0 and history_path.exists():
                history_path.unlink()

        remaining = self.config.total_epochs - self.start_epoch
        with ProgressBar(remaining, "train", mode=self.progress_mode, unit="epoch") as bar:
            for epoch in range(self.start_epoch, self.config.total_epochs):
                mode = self.config.active_mode(epoch)
                if epoch > 0 and mode != self.config.active_mode(epoch - 1):
                    _logger.info(f"Epoch {epoch + 1}: switching objective to {mode}")
                    self.scheduler.reset()
                    self.best_dev_loss = math.inf

                started = time.perf_counter()
                train_loss = self._train_epoch(epoch, mode, train_examples)
                dev_loss = self._dev_loss(mode, dev_examples)
                lr_used = self.scheduler.lr
                is_best = dev_loss < self.best_dev_loss
                if is_best:
                    self.best_dev_loss = dev_loss
                    self.best_epoch = epoch + 1
                    self.best_state = copy.deepcopy(self.model.state_dict())
                if self.scheduler.step(dev_loss):
                    _logger.info(f"Epoch {epoch + 1}: lr halved to {self.scheduler.lr:g}")

                record = EpochRecord(
                    epoch=epoch + 1,
                    train_loss=train_loss,
                    dev_loss=dev_loss,
                    lr=lr_used,
                    wall_time_s=time.perf_counter() - started,
                    loss_mode=mode,
                    is_best=is_best,
                )
                self.history.append(record)
                self.start_epoch = epoch + 1
                _logger.info(
                    f"Epoch {record.epoch}/{self.config.total_epochs} [{mode}] "
                    f"train {train_loss:.3f} dev {dev_loss:.3f} lr {lr_used:g}"
                    + (" *" if is_best else "")
                )
                if history_path is not None:
                    with open(history_path, "a", encoding="utf-8", newline="\n") as f:
                        f.write(record.to_json() + "\n")
                    save_checkpoint(
                        history_path.parent / LAST_CHECKPOINT_NAME,
                        self.model,
                        self.train_state(),
                    )
                bar.set_postfix(dev=float(dev_loss))
                bar.update(1)

        return self._finish()

    def _finish(self) -> TrainResult:
        self.model.load_state_dict(self.best_state)
        if self.output_dir is not None:
            save_checkpoint(
                self.output_dir / BEST_CHECKPOINT_NAME,
                self.model,
                {"best_epoch": self.best_epoch, "best_dev_loss": self.best_dev_loss},
            )
        return TrainResult(self.model, self.history, self.best_epoch)


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    manifest: DatasetManifest,
    output_dir: Optional[Union[str, Path]] = None,
    progress_mode: Optional[str] = None,
    sdr_numerator: str = "reference",
) -> TrainResult:
    """
    Train a fresh model and return the best-dev parameters with the history.

    ``total_epochs = 0`` returns the initial parameters and an empty history.
    """
    return Trainer(
        model_config,
        train_config,
        manifest,
        output_dir,
        progress_mode,
        sdr_numerator=sdr_numerator,
    ).run()
