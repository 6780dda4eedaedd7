"""
Waveforms, power arithmetic, SIR/SNR-exact mixing and WAV persistence.
"""

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import soundfile as sf

from .exceptions import FormatError, LengthError, WavIOError, ZeroPowerError
from .logging import get_logger
from .utils import ensure_parent_dir

_logger = get_logger("audio")

DEFAULT_SAMPLE_RATE = 8000

# snr_db sentinel: mix without background noise
NO_NOISE = math.inf

WAV_SUBTYPES = {"float32": "FLOAT", "pcm16": "PCM_16"}

# headroom kept below full scale when writing 16-bit PCM
PCM16_MAX_PEAK = 0.99

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class Waveform:
    """
    Mono sampled audio signal.

    ``samples`` is stored as a read-only float64 array; every sample is
    finite and there is at least one of them.
    """

    samples: FloatArray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        data = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if data.size == 0:
            raise LengthError("Waveform must contain at least one sample")
        if not np.all(np.isfinite(data)):
            raise ValueError("Waveform samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def scaled(self, gain: float) -> "Waveform":
        return Waveform(self.samples * gain, self.sample_rate)

    def __add__(self, other: "Waveform") -> "Waveform":
        _check_compatible(self, other)
        return Waveform(self.samples + other.samples, self.sample_rate)

    def __repr__(self) -> str:
        return f"Waveform(n={len(self)}, sample_rate={self.sample_rate})"


@dataclass(frozen=True, eq=False)
class MixtureExample:
    """Target/interferer/noise/mixture quadruple with its generation metadata."""

    mixture: Waveform
    target: Waveform
    interferer: Waveform
    noise: Waveform
    target_speaker_id: str
    interferer_speaker_id: str
    sir_db: float
    snr_db: float
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for w in (self.target, self.interferer, self.noise):
            _check_compatible(self.mixture, w)
        if self.target_speaker_id == self.interferer_speaker_id:
            raise ValueError(
                f"Target and interferer must differ, got {self.target_speaker_id!r}"
            )
        residual = self.mixture.samples - (
            self.target.samples + self.interferer.samples + self.noise.samples
        )
        scale = max(float(np.max(np.abs(self.mixture.samples))), 1e-12)
        if float(np.max(np.abs(residual))) > 1e-6 * scale:
            raise ValueError("mixture must equal target + interferer + noise")

    @property
    def tracks(self) -> Tuple[Waveform, Waveform, Waveform, Waveform]:
        return (self.mixture, self.target, self.interferer, self.noise)

    def peak(self) -> float:
        """Largest absolute sample over all four tracks."""
        return max(float(np.max(np.abs(w.samples))) for w in self.tracks)

    def scaled(self, gain: float) -> "MixtureExample":
        """Every track multiplied by one ``gain``; SIR and SNR are unchanged."""
        return dataclasses.replace(
            self,
            mixture=self.mixture.scaled(gain),
            target=self.target.scaled(gain),
            interferer=self.interferer.scaled(gain),
            noise=self.noise.scaled(gain),
        )

    def limited(self, max_peak: float = PCM16_MAX_PEAK) -> "MixtureExample":
        """This example, attenuated by one common gain when any track peaks above ``max_peak``."""
        peak = self.peak()
        if peak <= max_peak:
            return self
        return self.scaled(max_peak / peak)


def _check_compatible(a: Waveform, b: Waveform) -> None:
    if len(a) != len(b):
        raise LengthError(f"Length mismatch: {len(a)} != {len(b)}")
    if a.sample_rate != b.sample_rate:
        raise ValueError(f"Sample rate mismatch: {a.sample_rate} != {b.sample_rate}")


def power(w: Waveform) -> float:
    """Mean squared amplitude of ``w``."""
    return float(np.mean(np.square(w.samples)))


def ratio_db(reference: Waveform, other: Waveform) -> float:
    """10·log10(power(reference) / power(other)); ±inf on zero powers."""
    p_ref, p_other = power(reference), power(other)
    if p_other == 0.0:
        return math.inf
    if p_ref == 0.0:
        return -math.inf
    return 10.0 * math.log10(p_ref / p_other)


def scale_to_ratio(reference: Waveform, other: Waveform, ratio_db: float) -> Waveform:
    """
    Scale ``other`` so that its power sits ``ratio_db`` below ``reference``.

    Args:
        reference: Signal whose power anchors the ratio
        other: Signal to scale
        ratio_db: Requested 10·log10(P_reference / P_scaled)

    Returns:
        g·other with g = sqrt(P_ref / (P_other · 10^(ratio_db/10)))

    Raises:
        ZeroPowerError: If either signal is silent
    """
    p_ref = power(reference)
    p_other = power(other)
    if p_other == 0.0:
        raise ZeroPowerError("Cannot scale a zero-power signal to a finite ratio")
    if p_ref == 0.0:
        raise ZeroPowerError("Reference signal has zero power")
    gain = math.sqrt(p_ref / (p_other * 10.0 ** (ratio_db / 10.0)))
    return other.scaled(gain)


def fit_length(w: Waveform, length: int, rng: np.random.Generator) -> Waveform:
    """
    Bring ``w`` to ``length`` samples.

    Longer signals are cut at a random offset drawn from ``rng``; shorter
    ones are tiled and then truncated.
    """
    n = len(w)
    if n == length:
        return w
    if n > length:
        offset = int(rng.integers(0, n - length + 1))
        return Waveform(w.samples[offset : offset + length], w.sample_rate)
    reps = -(-length // n)
    return Waveform(np.tile(w.samples, reps)[:length], w.sample_rate)


def mix(
    target: Waveform,
    interferer: Waveform,
    noise: Waveform,
    sir_db: float,
    snr_db: float,
    seed: int,
    target_speaker_id: str = "target",
    interferer_speaker_id: str = "interferer",
) -> MixtureExample:
    """
    Build Y = S + I' + N' at exact SIR and SNR.

    The interferer is scaled against the target (SIR); the noise is scaled
    against the noise-free mixture S + I' (SNR). Interferer and noise are
    first fitted to the target length with a ``seed``-driven offset.
    ``snr_db = NO_NOISE`` yields an all-zero noise track.

    Raises:
        ZeroPowerError: If a signal that must be scaled is silent
        LengthError: If an input is empty
    """
    for name, w in (("target", target), ("interferer", interferer), ("noise", noise)):
        if len(w) < 1:
            raise LengthError(f"{name} is empty")
        if w.sample_rate != target.sample_rate:
            raise ValueError(
                f"{name} sample rate {w.sample_rate} != target {target.sample_rate}"
            )

    rng = np.random.default_rng(seed)
    length = len(target)
    interferer = fit_length(interferer, length, rng)
    noise = fit_length(noise, length, rng)

    interferer_scaled = scale_to_ratio(target, interferer, sir_db)
    speech = target + interferer_scaled
    if math.isinf(snr_db) and snr_db > 0:
        noise_scaled = Waveform(np.zeros(length), target.sample_rate)
    else:
        noise_scaled = scale_to_ratio(speech, noise, snr_db)

    mixture = speech + noise_scaled
    return MixtureExample(
        mixture=mixture,
        target=target,
        interferer=interferer_scaled,
        noise=noise_scaled,
        target_speaker_id=target_speaker_id,
        interferer_speaker_id=interferer_speaker_id,
        sir_db=float(sir_db),
        snr_db=float(snr_db),
        seed=int(seed),
    )


def read_wav(path: Union[str, Path]) -> Waveform:
    """
    Read a mono WAV file.

    Raises:
        WavIOError: If the file is missing or unreadable
        FormatError: If the file has more than one channel
    """
    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (sf.LibsndfileError, RuntimeError, OSError) as e:
        raise WavIOError(f"Cannot read WAV {path}: {e}") from e
    if data.shape[1] != 1:
        raise FormatError(f"{path}: expected mono audio, found {data.shape[1]} channels")
    return Waveform(data[:, 0], int(sample_rate))


def write_wav(
    path: Union[str, Path], w: Waveform, encoding: Optional[str] = None
) -> None:
    """
    Write ``w`` as a mono WAV file.

    Args:
        path: Destination path (parent directories are created)
        w: Waveform to write
        encoding: "float32" (default, lossless for the float32 range) or "pcm16"

    Raises:
        FormatError: If the encoding is unsupported, or pcm16 samples leave [-1, 1]
        WavIOError: If the file cannot be written
    """
    key = (encoding or "float32").lower()
    if key not in WAV_SUBTYPES:
        raise FormatError(
            f"Unsupported WAV encoding '{encoding}'. "
            f"Must be one of: {', '.join(sorted(WAV_SUBTYPES))}"
        )
    if key == "pcm16":
        peak = float(np.max(np.abs(w.samples)))
        if peak > 1.0:
            raise FormatError(f"{path}: peak {peak:.3f} exceeds 16-bit PCM full scale")
    ensure_parent_dir(str(path))
    try:
        sf.write(str(path), w.samples, w.sample_rate, subtype=WAV_SUBTYPES[key])
    except (sf.LibsndfileError, RuntimeError, OSError) as e:
        raise WavIOError(f"Cannot write WAV {path}: {e}") from e
