"""
Time-domain target speech extraction network.

``TSEModel`` holds three parameter groups:

- ``embedder``: learned encoder, dilated conv blocks, mean pooling, D-vector
- ``extractor``: learned encoder, conv-block repeats with multiplicative
  speaker conditioning after the first repeat, sigmoid mask, learned decoder
- ``si_head``: bias-free speaker-identification projection W (M x D)
"""

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .audio import Waveform
from .exceptions import ConfigError, ShapeError, TooShortError
from .logging import get_logger
from .utils import ensure_parent_dir

_logger = get_logger("model")

CHECKPOINT_FORMAT_VERSION = 1
ACTIVATIONS = ("prelu", "elu")
PRELU_INIT = 0.25
NORM_EPS = 1e-8

SignalLike = Union[Waveform, np.ndarray, torch.Tensor]


@dataclass
class ModelConfig:
    """Architecture hyperparameters (desk-scale defaults)."""

    embedding_dim: int = 32
    encoder_channels: int = 64
    hidden_channels: int = 64
    n_blocks_embed: int = 4
    n_blocks_extract_per_repeat: int = 4
    n_repeats: int = 2
    kernel_size: int = 3
    frame_size: int = 40
    hop: int = 20
    n_train_speakers: int = 16
    activation: str = "prelu"
    normalize_enrollment: bool = False

    def validate(self) -> None:
        """Raise ConfigError on inconsistent hyperparameters."""
        positive = (
            "encoder_channels",
            "hidden_channels",
            "n_blocks_embed",
            "n_blocks_extract_per_repeat",
            "n_repeats",
            "kernel_size",
            "frame_size",
            "hop",
            "n_train_speakers",
        )
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.embedding_dim < 2:
            raise ConfigError("model.embedding_dim must be >= 2")
        if self.kernel_size % 2 == 0:
            raise ConfigError("model.kernel_size must be odd")
        if self.hop > self.frame_size:
            raise ConfigError("model.hop must not exceed model.frame_size")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"model.activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown model keys: {unknown}")
        return cls(**data)


def _activation(kind: str, channels: int) -> nn.Module:
    if kind == "elu":
        return nn.ELU()
    return nn.PReLU(channels, init=PRELU_INIT)


class GlobalLayerNorm(nn.Module):
    """Normalize over channels and time, then apply per-channel gain and shift."""

    def __init__(self, channels: int, eps: float = NORM_EPS):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels, 1))
        self.bias = nn.Parameter(torch.zeros(channels, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(1, 2), keepdim=True)
        var = ((x - mean) ** 2).mean(dim=(1, 2), keepdim=True)
        return self.weight * (x - mean) / torch.sqrt(var + self.eps) + self.bias


class ConvBlock(nn.Module):
    """1x1 expand, dilated depthwise conv, 1x1 project, residual connection."""

    def __init__(self, channels: int, hidden: int, kernel_size: int, dilation: int, activation: str):
        super().__init__()
        self.expand = nn.Conv1d(channels, hidden, 1)
        self.act1 = _activation(activation, hidden)
        self.norm1 = GlobalLayerNorm(hidden)
        self.depthwise = nn.Conv1d(
            hidden,
            hidden,
            kernel_size,
            dilation=dilation,
            padding=dilation * (kernel_size - 1) // 2,
            groups=hidden,
        )
        self.act2 = _activation(activation, hidden)
        self.norm2 = GlobalLayerNorm(hidden)
        self.project = nn.Conv1d(hidden, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm1(self.act1(self.expand(x)))
        y = self.norm2(self.act2(self.depthwise(y)))
        return x + self.project(y)


def _stack(config: ModelConfig, n_blocks: int) -> nn.ModuleList:
    return nn.ModuleList(
        ConvBlock(
            config.encoder_channels,
            config.hidden_channels,
            config.kernel_size,
            2**i,
            config.activation,
        )
        for i in range(n_blocks)
    )


def _padded_length(length: int, frame: int, hop: int) -> int:
    return frame + hop * math.ceil(max(length - frame, 0) / hop)


class SpeakerEmbedder(nn.Module):
    """Enrollment waveform to a D-dimensional speaker embedding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.encoder_channels
        self.encoder = nn.Conv1d(1, c, config.frame_size, stride=config.hop, bias=False)
        self.encoder_act = _activation(config.activation, c)
        self.norm = GlobalLayerNorm(c)
        self.blocks = _stack(config, config.n_blocks_embed)
        self.output = nn.Linear(c, config.embedding_dim)

    def forward(self, enrollment: torch.Tensor) -> torch.Tensor:
        x = enrollment
        if self.config.normalize_enrollment:
            rms = torch.sqrt(torch.mean(x**2))
            x = x / (rms + NORM_EPS)
        h = self.norm(self.encoder_act(self.encoder(x.view(1, 1, -1))))
        for block in self.blocks:
            h = block(h)
        return self.output(h.mean(dim=2)).view(-1)


class Extractor(nn.Module):
    """Mask-based extraction conditioned on a speaker embedding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.encoder_channels
        self.encoder = nn.Conv1d(1, c, config.frame_size, stride=config.hop, bias=False)
        self.encoder_act = _activation(config.activation, c)
        self.norm = GlobalLayerNorm(c)
        self.repeats = nn.ModuleList(
            _stack(config, config.n_blocks_extract_per_repeat)
            for _ in range(config.n_repeats)
        )
        self.adapt = nn.Linear(config.embedding_dim, c)
        self.mask = nn.Conv1d(c, c, 1)
        self.decoder = nn.ConvTranspose1d(
            c, 1, config.frame_size, stride=config.hop, bias=False
        )

    def forward(
        self,
        mixture: torch.Tensor,
        embedding: torch.Tensor,
        conditioning: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        length = mixture.shape[-1]
        padded = _padded_length(length, self.config.frame_size, self.config.hop)
        y = F.pad(mixture.view(1, 1, -1), (0, padded - length))
        features = self.encoder_act(self.encoder(y))
        h = self.norm(features)
        scale = self.adapt(embedding) if conditioning is None else conditioning
        for index, repeat in enumerate(self.repeats):
            for block in repeat:
                h = block(h)
            if index == 0:
                h = h * scale.view(1, -1, 1)
        masked = features * torch.sigmoid(self.mask(h))
        return self.decoder(masked).view(-1)[:length]


class TSEModel(nn.Module):
    """Embedder, extractor and SI head (the full parameter set)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.embedder = SpeakerEmbedder(config)
        self.extractor = Extractor(config)
        self.si_head = nn.Linear(config.embedding_dim, config.n_train_speakers, bias=False)

    def as_input(self, signal: SignalLike) -> torch.Tensor:
        if isinstance(signal, Waveform):
            signal = signal.samples
        if not torch.is_tensor(signal):
            signal = torch.from_numpy(np.array(signal, dtype=np.float64))
        x = signal.to(self.si_head.weight.dtype).reshape(-1)
        if x.shape[0] < self.config.frame_size:
            raise TooShortError(
                f"Signal of {x.shape[0]} samples is shorter than one "
                f"encoder frame ({self.config.frame_size})"
            )
        return x

    def _check_embedding(self, e: torch.Tensor) -> torch.Tensor:
        if e.dim() != 1 or e.shape[0] != self.config.embedding_dim:
            raise ShapeError(
                f"Embedding must have shape ({self.config.embedding_dim},), "
                f"got {tuple(e.shape)}"
            )
        return e

    def embed(self, enrollment: SignalLike) -> torch.Tensor:
        return self.embedder(self.as_input(enrollment))

    def extract(
        self,
        mixture: SignalLike,
        embedding: torch.Tensor,
        conditioning: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        x = self.as_input(mixture)
        e = self._check_embedding(torch.as_tensor(embedding).to(x.dtype))
        if conditioning is not None:
            conditioning = torch.as_tensor(conditioning).to(x.dtype)
            if conditioning.shape != (self.config.encoder_channels,):
                raise ShapeError(
                    f"Conditioning must have shape ({self.config.encoder_channels},)"
                )
        return self.extractor(x, e, conditioning)

    def si_logits(self, embedding: torch.Tensor) -> torch.Tensor:
        e = self._check_embedding(torch.as_tensor(embedding).to(self.si_head.weight.dtype))
        return self.si_head(e)

    def forward(self, mixture: SignalLike, enrollment: SignalLike) -> torch.Tensor:
        return self.extract(mixture, self.embed(enrollment))


def embed(model: TSEModel, enrollment: SignalLike) -> torch.Tensor:
    """
    Speaker embedding of an enrollment utterance.

    Raises:
        TooShortError: If the enrollment is shorter than one encoder frame
    """
    return model.embed(enrollment)


def extract(
    model: TSEModel,
    mixture: SignalLike,
    embedding: torch.Tensor,
    conditioning: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Extract the speaker described by ``embedding`` from ``mixture``.

    Args:
        model: Network
        mixture: Input mixture Y
        embedding: Speaker embedding (D,)
        conditioning: Replaces the learned transform of ``embedding``
                      when given (encoder_channels,)

    Returns:
        Estimate with the same length as ``mixture``

    Raises:
        TooShortError: If the mixture is shorter than one encoder frame
        ShapeError: If the embedding has the wrong dimension
    """
    return model.extract(mixture, embedding, conditioning)


def tse(model: TSEModel, mixture: SignalLike, enrollment: SignalLike) -> torch.Tensor:
    """extract(mixture, embed(enrollment))."""
    return model(mixture, enrollment)


def si_logits(model: TSEModel, embedding: torch.Tensor) -> torch.Tensor:
    """Speaker-identification logits W·e."""
    return model.si_logits(embedding)


def separate(model: TSEModel, mixture: Waveform, enrollment: Waveform) -> Waveform:
    """Inference helper: run ``tse`` without autograd and return a Waveform."""
    with torch.no_grad():
        estimate = tse(model, mixture, enrollment)
    return Waveform(estimate.detach().cpu().double().numpy(), mixture.sample_rate)


def _fan_in(module: nn.Module) -> int:
    weight = module.weight
    if isinstance(module, nn.ConvTranspose1d):
        return int(weight.shape[0] * weight.shape[2])
    return int(weight[0].numel())


def init_params(config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> TSEModel:
    """
    Build a model with seeded initialization.

    Conv, transposed-conv and linear weights and biases are drawn from
    U(-a, a) with a = 1/sqrt(fan_in); PReLU slopes start at 0.25, norm
    gains at 1 and norm shifts at 0.
    """
    generator = torch.Generator().manual_seed(int(seed))
    model = TSEModel(config).to(dtype)
    with torch.no_grad():
        for _, module in model.named_modules():
            if isinstance(module, (nn.Conv1d, nn.ConvTranspose1d, nn.Linear)):
                bound = 1.0 / math.sqrt(_fan_in(module))
                for param in (module.weight, module.bias):
                    if param is None:
                        continue
                    draw = torch.rand(param.shape, generator=generator, dtype=torch.float64)
                    param.copy_((draw * 2.0 - 1.0) * bound)
            elif isinstance(module, nn.PReLU):
                module.weight.fill_(PRELU_INIT)
            elif isinstance(module, GlobalLayerNorm):
                module.weight.fill_(1.0)
                module.bias.fill_(0.0)
    return model


def init_bound(module: nn.Module) -> float:
    """Initialization bound a of a conv or linear layer."""
    return 1.0 / math.sqrt(_fan_in(module))


def save_checkpoint(
    path: Union[str, Path],
    model: TSEModel,
    train_state: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write config, parameters and optional training state with ``torch.save``."""
    ensure_parent_dir(str(path))
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "train_state": train_state or {},
    }
    torch.save(payload, str(path))
    _logger.debug(f"Saved checkpoint {path}")
    return Path(path)


def load_checkpoint(path: Union[str, Path]) -> Tuple[TSEModel, Dict[str, Any]]:
    """
    Load a checkpoint written by ``save_checkpoint``.

    Returns:
        (model, train_state)

    Raises:
        FileNotFoundError: If the file is missing
        ConfigError: If the format version is unsupported
    """
    if not Path(path).is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"Unsupported checkpoint format version: {version}")
    config = ModelConfig.from_dict(payload["model_config"])
    state = payload["state_dict"]
    dtype = next(iter(state.values())).dtype
    model = TSEModel(config).to(dtype)
    model.load_state_dict(state)
    return model, payload.get("train_state", {})
