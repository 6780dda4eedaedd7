"""
Training objectives.

Per-enrollment SDR loss, hard and soft worst-enrollment aggregation,
speaker-identification multitask loss and the worst + SI combination.
All functions return scalar tensors that stay on the autograd graph.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import EmptyEnrollmentSetError, LabelOutOfRangeError, LengthError
from .metrics import SDR_NUMERATORS
from .model import SignalLike, TSEModel

TRAIN_SDR_EPS = 1e-8

CONVENTIONAL = "conventional"
WORST_HARD = "worst_hard"
WORST_SOFT = "worst_soft"
SI = "si"
WORST_HARD_SI = "worst_hard_si"
LOSS_MODES = (CONVENTIONAL, WORST_HARD, WORST_SOFT, SI, WORST_HARD_SI)
WORST_MODES = (WORST_HARD, WORST_SOFT, WORST_HARD_SI)
SI_MODES = (SI, WORST_HARD_SI)


def negative_sdr(
    reference: torch.Tensor,
    estimate: torch.Tensor,
    eps: float = TRAIN_SDR_EPS,
    numerator: str = "reference",
) -> torch.Tensor:
    """
    -10·log10(‖num‖² / (‖S - Ŝ‖² + eps)), uncapped.

    ``numerator`` follows the metrics convention: "reference" uses ‖S‖²,
    "estimate" uses ‖Ŝ‖².
    """
    if numerator not in SDR_NUMERATORS:
        raise ValueError(f"numerator must be one of {SDR_NUMERATORS}, got {numerator!r}")
    if reference.shape != estimate.shape:
        raise LengthError(
            f"Length mismatch: {tuple(reference.shape)} != {tuple(estimate.shape)}"
        )
    num = reference if numerator == "reference" else estimate
    signal = torch.sum(num**2)
    error = torch.sum((reference - estimate) ** 2) + eps
    return -10.0 * torch.log10(signal / error)


def loss_sdr(
    model: TSEModel,
    target: SignalLike,
    mixture: SignalLike,
    enrollment: SignalLike,
    numerator: str = "reference",
) -> torch.Tensor:
    """L_sdr = -SDR(S, TSE(Y, C))."""
    estimate = model(mixture, enrollment)
    return negative_sdr(model.as_input(target), estimate, numerator=numerator)


@dataclass
class EnrollmentLosses:
    """Per-enrollment SDR losses with the embeddings that produced them."""

    losses: torch.Tensor
    embeddings: List[torch.Tensor]

    def worst_index(self) -> int:
        return hard_worst_index(self.losses)


def enrollment_losses(
    model: TSEModel,
    target: SignalLike,
    mixture: SignalLike,
    enrollments: Sequence[SignalLike],
    numerator: str = "reference",
) -> EnrollmentLosses:
    """
    Run TSE once per enrollment in the subset.

    Raises:
        EmptyEnrollmentSetError: If ``enrollments`` is empty
    """
    if len(enrollments) == 0:
        raise EmptyEnrollmentSetError("enrollment subset is empty")
    reference = model.as_input(target)
    losses = []
    embeddings = []
    for enrollment in enrollments:
        e = model.embed(enrollment)
        estimate = model.extract(mixture, e)
        losses.append(negative_sdr(reference, estimate, numerator=numerator))
        embeddings.append(e)
    return EnrollmentLosses(torch.stack(losses), embeddings)


def hard_worst_index(losses: torch.Tensor) -> int:
    """Index of the largest loss; the lowest index wins ties."""
    return int(np.argmax(losses.detach().cpu().numpy()))


def worst_hard(losses: torch.Tensor) -> torch.Tensor:
    """max_n L_n; the gradient flows through the selected branch only."""
    return losses[hard_worst_index(losses)]


def softmax_weights(losses: torch.Tensor, tau: float) -> torch.Tensor:
    """softmax(L / tau), computed with max subtraction."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return torch.softmax(losses / tau, dim=0)


def worst_soft(losses: torch.Tensor, tau: float) -> torch.Tensor:
    """
    Σ w_n·L_n with w = softmax(L / tau).

    The weights stay on the graph, so the gradient includes their
    dependence on the losses.
    """
    return torch.sum(softmax_weights(losses, tau) * losses)


def loss_worst_hard(
    model: TSEModel,
    target: SignalLike,
    mixture: SignalLike,
    enrollments: Sequence[SignalLike],
    numerator: str = "reference",
) -> torch.Tensor:
    return worst_hard(enrollment_losses(model, target, mixture, enrollments, numerator).losses)


def loss_worst_soft(
    model: TSEModel,
    target: SignalLike,
    mixture: SignalLike,
    enrollments: Sequence[SignalLike],
    tau: float,
    numerator: str = "reference",
) -> torch.Tensor:
    losses = enrollment_losses(model, target, mixture, enrollments, numerator).losses
    return worst_soft(losses, tau)


def speaker_cross_entropy(model: TSEModel, embedding: torch.Tensor, label: int) -> torch.Tensor:
    """
    CE(l, softmax(W·e)) in nats.

    Raises:
        LabelOutOfRangeError: If ``label`` is outside 0..M-1
    """
    n_speakers = model.config.n_train_speakers
    if not 0 <= int(label) < n_speakers:
        raise LabelOutOfRangeError(f"label {label} outside 0..{n_speakers - 1}")
    logits = model.si_logits(embedding).unsqueeze(0)
    return F.cross_entropy(logits, torch.tensor([int(label)]))


def loss_multitask(
    model: TSEModel,
    target: SignalLike,
    mixture: SignalLike,
    enrollment: SignalLike,
    label: int,
    alpha: float,
    numerator: str = "reference",
) -> torch.Tensor:
    """L_sdr + alpha·CE on the enrollment's embedding."""
    e = model.embed(enrollment)
    estimate = model.extract(mixture, e)
    sdr_term = negative_sdr(model.as_input(target), estimate, numerator=numerator)
    ce = speaker_cross_entropy(model, e, label)
    if alpha == 0:
        return sdr_term
    return sdr_term + alpha * ce


def loss_combined(
    model: TSEModel,
    target: SignalLike,
    mixture: SignalLike,
    enrollments: Sequence[SignalLike],
    label: int,
    alpha: float,
    numerator: str = "reference",
) -> torch.Tensor:
    """Hard worst loss plus alpha·CE on the worst enrollment's embedding."""
    result = enrollment_losses(model, target, mixture, enrollments, numerator)
    worst = result.worst_index()
    ce = speaker_cross_entropy(model, result.embeddings[worst], label)
    if alpha == 0:
        return result.losses[worst]
    return result.losses[worst] + alpha * ce


def objective(
    mode: str,
    model: TSEModel,
    target: SignalLike,
    mixture: SignalLike,
    enrollments: Sequence[SignalLike],
    label: Optional[int] = None,
    tau: float = 2.0,
    alpha: float = 1.0,
    numerator: str = "reference",
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Evaluate one training objective.

    Conventional and SI modes expect exactly one enrollment; worst modes
    take the sampled subset. A ``label`` of None or below zero drops the
    CE term (speakers unknown to the SI head). ``numerator`` selects the
    SDR convention of every SDR term.

    Returns:
        (total loss, SDR part of the loss)
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"Unknown loss mode '{mode}'. Must be one of: {LOSS_MODES}")
    use_ce = mode in SI_MODES and label is not None and label >= 0 and alpha != 0

    if mode in (CONVENTIONAL, SI):
        if len(enrollments) != 1:
            raise ValueError(f"{mode} uses exactly one enrollment, got {len(enrollments)}")
        e = model.embed(enrollments[0])
        estimate = model.extract(mixture, e)
        sdr_term = negative_sdr(model.as_input(target), estimate, numerator=numerator)
        if not use_ce:
            return sdr_term, sdr_term
        assert label is not None
        return sdr_term + alpha * speaker_cross_entropy(model, e, label), sdr_term

    result = enrollment_losses(model, target, mixture, enrollments, numerator)
    if mode == WORST_SOFT:
        total = worst_soft(result.losses, tau)
        return total, total
    worst = result.worst_index()
    sdr_term = result.losses[worst]
    if not use_ce:
        return sdr_term, sdr_term
    assert label is not None
    ce = speaker_cross_entropy(model, result.embeddings[worst], label)
    return sdr_term + alpha * ce, sdr_term
