"""
Central finite-difference checks of every training objective.

Runs on a tiny float64 model with ELU activations so the objectives are
smooth around the sampled parameters.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from .hash import derive_seed
from .logging import get_logger
from .losses import (
    loss_combined,
    loss_multitask,
    loss_sdr,
    loss_worst_hard,
    loss_worst_soft,
)
from .model import ModelConfig, TSEModel, init_params

_logger = get_logger("gradcheck")

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# gradients smaller than this are compared on an absolute scale
DENOMINATOR_FLOOR = 1e-4
SIGNAL_LENGTH = 200

TINY_CONFIG = ModelConfig(
    embedding_dim=4,
    encoder_channels=4,
    hidden_channels=4,
    n_blocks_embed=1,
    n_blocks_extract_per_repeat=1,
    n_repeats=1,
    kernel_size=3,
    frame_size=8,
    hop=4,
    n_train_speakers=3,
    activation="elu",
)


@dataclass
class GradCheckFixture:
    target: torch.Tensor
    mixture: torch.Tensor
    enrollments: List[torch.Tensor]
    label: int = 1
    alpha: float = 1.0
    tau: float = 2.0


@dataclass
class GradCheckResult:
    loss_name: str
    n_checked: int
    max_relative_error: float
    tolerance: float
    failures: List[Tuple[str, int, float, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def make_fixture(seed: int = 0, length: int = SIGNAL_LENGTH, k: int = 3) -> GradCheckFixture:
    """Random float64 target, mixture and K enrollments."""
    rng = np.random.default_rng(derive_seed(seed, "gradcheck", "signals"))
    target = rng.standard_normal(length)
    interferer = rng.standard_normal(length)
    enrollments = [torch.from_numpy(rng.standard_normal(length)) for _ in range(k)]
    return GradCheckFixture(
        target=torch.from_numpy(target),
        mixture=torch.from_numpy(target + 0.5 * interferer),
        enrollments=enrollments,
    )


LossFn = Callable[[TSEModel, GradCheckFixture], torch.Tensor]

LOSS_CHECKS: Dict[str, LossFn] = {
    "sdr": lambda m, f: loss_sdr(m, f.target, f.mixture, f.enrollments[0]),
    "worst_hard": lambda m, f: loss_worst_hard(m, f.target, f.mixture, f.enrollments),
    "worst_soft": lambda m, f: loss_worst_soft(
        m, f.target, f.mixture, f.enrollments, f.tau
    ),
    "multitask": lambda m, f: loss_multitask(
        m, f.target, f.mixture, f.enrollments[0], f.label, f.alpha
    ),
    "combined": lambda m, f: loss_combined(
        m, f.target, f.mixture, f.enrollments, f.label, f.alpha
    ),
}


def relative_error(analytic: float, numeric: float, floor: float = DENOMINATOR_FLOOR) -> float:
    """|a - n| / max(|a|, |n|, floor)."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    loss_fn: Callable[[TSEModel], torch.Tensor],
    model: TSEModel,
    n_params: int = 50,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    seed: int = 0,
    name: str = "loss",
) -> GradCheckResult:
    """
    Compare autograd gradients with central differences.

    ``n_params`` scalar parameters are drawn uniformly over all parameter
    elements of ``model``; each is perturbed by ±``step``.
    """
    model.zero_grad(set_to_none=True)
    loss_fn(model).backward()
    named = [(n, p) for n, p in model.named_parameters()]
    sizes = np.array([p.numel() for _, p in named])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(derive_seed(seed, "gradcheck", name))
    flat = rng.choice(int(offsets[-1]), size=min(n_params, int(offsets[-1])), replace=False)

    failures = []
    worst = 0.0
    for position in sorted(int(i) for i in flat):
        group = int(np.searchsorted(offsets, position, side="right") - 1)
        pname, param = named[group]
        index = position - int(offsets[group])
        grad = param.grad
        analytic = 0.0 if grad is None else float(grad.reshape(-1)[index])
        with torch.no_grad():
            values = param.view(-1)
            original = float(values[index])
            values[index] = original + step
            plus = float(loss_fn(model))
            values[index] = original - step
            minus = float(loss_fn(model))
            values[index] = original
        numeric = (plus - minus) / (2.0 * step)
        err = relative_error(analytic, numeric)
        worst = max(worst, err)
        if err > tolerance:
            failures.append((pname, index, analytic, numeric))
    return GradCheckResult(name, len(flat), worst, tolerance, failures)


def run_gradcheck(
    seed: int = 0,
    n_params: int = 50,
    tolerance: float = DEFAULT_TOLERANCE,
    config: Optional[ModelConfig] = None,
) -> List[GradCheckResult]:
    """Check every objective on the tiny model; one result per loss."""
    model = init_params(config or TINY_CONFIG, seed, dtype=torch.float64)
    fixture = make_fixture(seed)
    results = []
    for loss_name, fn in LOSS_CHECKS.items():
        result = check_gradients(
            lambda m, fn=fn: fn(m, fixture),
            model,
            n_params=n_params,
            tolerance=tolerance,
            seed=seed,
            name=loss_name,
        )
        status = "ok" if result.passed else "FAILED"
        _logger.info(
            f"gradcheck {loss_name}: {result.n_checked} params, "
            f"max rel err {result.max_relative_error:.2e} {status}"
        )
        for pname, index, analytic, numeric in result.failures:
            _logger.warning(
                f"  {pname}[{index}]: autograd {analytic:.6e} vs numeric {numeric:.6e}"
            )
        results.append(result)
    return results
