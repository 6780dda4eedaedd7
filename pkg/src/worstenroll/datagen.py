"""
Synthetic speaker corpus and dataset construction.

Speakers are harmonic sources shaped by two or three resonances. Each
utterance jitters the speaker's base parameters by ``intra_speaker_sigma``,
which is the knob for intra-speaker variability.
"""

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import signal

from .audio import DEFAULT_SAMPLE_RATE, WAV_SUBTYPES, Waveform, mix, write_wav
from .exceptions import ConfigError, DurationError, InsufficientUtterancesError
from .hash import calculate_file_hash, derive_seed
from .logging import get_logger
from .manifest import (
    MANIFEST_NAME,
    SPLITS,
    DatasetManifest,
    MixtureRecord,
    write_dataset_info,
)
from .progress import ProgressBar
from .utils import map_ordered

_logger = get_logger("datagen")

F0_RANGE_HZ = (80.0, 320.0)
PEAK_LEVEL = 0.9
RANGE_FIELDS = (
    "sir_range_db",
    "snr_range_db",
    "eval_snr_range_db",
    "utterance_duration_range_s",
)


@dataclass(frozen=True)
class SpeakerProfile:
    """Base voice parameters of one synthetic speaker."""

    speaker_id: str
    f0_base: float
    resonance_centers: Tuple[float, ...]
    resonance_bandwidths: Tuple[float, ...]
    harmonic_rolloff: float
    intra_speaker_sigma: float
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        if not F0_RANGE_HZ[0] <= self.f0_base <= F0_RANGE_HZ[1]:
            raise ValueError(f"f0_base {self.f0_base} outside {F0_RANGE_HZ}")
        if len(self.resonance_centers) != len(self.resonance_bandwidths):
            raise ValueError("resonance centers and bandwidths differ in length")
        if not 2 <= len(self.resonance_centers) <= 3:
            raise ValueError("a profile has 2 or 3 resonances")
        nyquist = self.sample_rate / 2
        if any(c >= nyquist or c <= 0 for c in self.resonance_centers):
            raise ValueError(f"resonance centers must lie in (0, {nyquist})")
        if self.intra_speaker_sigma < 0:
            raise ValueError("intra_speaker_sigma must be >= 0")


@dataclass(frozen=True)
class UtteranceParams:
    """Speaker parameters after per-utterance jitter."""

    f0: float
    resonance_centers: Tuple[float, ...]
    resonance_bandwidths: Tuple[float, ...]
    harmonic_rolloff: float


@dataclass
class DatasetSpec:
    """Data generation setup; defaults are the desk-scale protocol."""

    n_train_speakers: int = 16
    n_dev_speakers: int = 4
    n_eval_speakers: int = 8
    n_train_mixtures: int = 200
    n_dev_mixtures: int = 50
    n_eval_mixtures: int = 100
    sir_range_db: Tuple[float, float] = (-5.0, 5.0)
    snr_range_db: Tuple[float, float] = (0.0, 20.0)
    eval_snr_range_db: Tuple[float, float] = (5.0, 15.0)
    n_enrollments: int = 10
    utterances_per_speaker: int = 20
    utterance_duration_range_s: Tuple[float, float] = (0.4, 1.6)
    min_enrollment_duration_s: float = 0.5
    sample_rate: int = DEFAULT_SAMPLE_RATE
    master_seed: int = 0
    # None draws a per-speaker sigma; a number forces it for every speaker
    intra_speaker_sigma: Optional[float] = None
    noise_cutoff_hz: Optional[float] = None
    wav_encoding: str = "float32"

    def __post_init__(self) -> None:
        for name in RANGE_FIELDS:
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    def validate(self) -> None:
        """Raise ConfigError when these settings cannot produce a valid dataset."""
        if self.n_enrollments < 2:
            raise ConfigError("n_enrollments must be >= 2")
        for name in RANGE_FIELDS:
            value = getattr(self, name)
            if len(value) != 2 or value[0] > value[1]:
                raise ConfigError(f"{name} must be [low, high] with low <= high")
        if self.utterance_duration_range_s[0] <= 0:
            raise ConfigError("utterance durations must be positive")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.wav_encoding.lower() not in WAV_SUBTYPES:
            raise ConfigError(
                f"wav_encoding must be one of {sorted(WAV_SUBTYPES)}, got {self.wav_encoding!r}"
            )
        for split in SPLITS:
            n_speakers = self.speakers_in(split)
            n_mixtures = self.mixtures_in(split)
            if n_speakers < 0 or n_mixtures < 0:
                raise ConfigError(f"{split}: counts must be non-negative")
            if n_mixtures > 0 and n_speakers < 2:
                raise ConfigError(f"{split}: mixtures need at least 2 speakers")
        if self.utterances_per_speaker < self.n_enrollments + 1:
            raise ConfigError(
                "utterances_per_speaker must exceed n_enrollments "
                "(the target utterance is never an enrollment)"
            )

    def speakers_in(self, split: str) -> int:
        return int(getattr(self, f"n_{split}_speakers"))

    def mixtures_in(self, split: str) -> int:
        return int(getattr(self, f"n_{split}_mixtures"))

    def snr_range_for(self, split: str) -> Tuple[float, float]:
        return self.eval_snr_range_db if split == "eval" else self.snr_range_db


def synth_speaker(
    seed: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    intra_speaker_sigma: Optional[float] = None,
    speaker_id: Optional[str] = None,
) -> SpeakerProfile:
    """
    Draw a speaker profile.

    f0 is log-uniform in [90, 280] Hz; resonances sit in three formant-like
    bands clipped below 0.9·Nyquist; roll-off is uniform in [-12, -6]
    dB/octave; sigma is uniform in [0.02, 0.10] unless forced.
    """
    rng = np.random.default_rng(seed)
    f0 = float(np.exp(rng.uniform(np.log(90.0), np.log(280.0))))
    ceiling = 0.9 * sample_rate / 2
    bands = ((300.0, 850.0), (900.0, 2200.0), (2300.0, 3200.0))
    widths = ((60.0, 160.0), (80.0, 200.0), (120.0, 260.0))
    centers = []
    bandwidths = []
    for (lo, hi), (wlo, whi) in zip(bands, widths):
        center = rng.uniform(lo, hi)
        bandwidth = rng.uniform(wlo, whi)
        if center < ceiling:
            centers.append(float(center))
            bandwidths.append(float(bandwidth))
    if len(centers) < 2:
        # very low sample rates: squeeze two resonances under the ceiling
        centers = [0.3 * ceiling, 0.7 * ceiling]
        bandwidths = [80.0, 160.0]
    rolloff = float(rng.uniform(-12.0, -6.0))
    sigma = (
        float(rng.uniform(0.02, 0.10))
        if intra_speaker_sigma is None
        else float(intra_speaker_sigma)
    )
    return SpeakerProfile(
        speaker_id=speaker_id or f"spk-{seed}",
        f0_base=f0,
        resonance_centers=tuple(centers),
        resonance_bandwidths=tuple(bandwidths),
        harmonic_rolloff=rolloff,
        intra_speaker_sigma=sigma,
        sample_rate=sample_rate,
    )


def jitter_profile(profile: SpeakerProfile, rng: np.random.Generator) -> UtteranceParams:
    """Apply the per-utterance log-normal jitter of scale ``intra_speaker_sigma``."""
    sigma = profile.intra_speaker_sigma
    n = len(profile.resonance_centers)
    z = rng.standard_normal(2 * n + 2)
    ceiling = 0.95 * profile.sample_rate / 2
    f0 = float(np.clip(profile.f0_base * math.exp(sigma * z[0]), *F0_RANGE_HZ))
    centers = tuple(
        float(min(c * math.exp(sigma * zz), ceiling))
        for c, zz in zip(profile.resonance_centers, z[1 : n + 1])
    )
    bandwidths = tuple(
        float(b * math.exp(sigma * zz))
        for b, zz in zip(profile.resonance_bandwidths, z[n + 1 : 2 * n + 1])
    )
    rolloff = float(profile.harmonic_rolloff + 6.0 * sigma * z[-1])
    return UtteranceParams(f0, centers, bandwidths, rolloff)


def synth_utterance(profile: SpeakerProfile, duration_s: float, seed: int) -> Waveform:
    """
    Synthesize one utterance of ``profile``.

    Harmonic source with a random-walk f0 around the jittered base, shaped
    by the jittered resonances, syllable-rate amplitude envelope, peak
    normalized to 0.9.

    Raises:
        DurationError: If the duration is below one sample
    """
    sr = profile.sample_rate
    n = int(round(duration_s * sr))
    if duration_s <= 0 or n < 1:
        raise DurationError(f"duration {duration_s}s yields no samples at {sr} Hz")

    rng = np.random.default_rng(seed)
    params = jitter_profile(profile, rng)
    t = np.arange(n) / sr

    # f0 contour: AR(1) walk on log f0 at 100 control points per second
    n_ctrl = int(duration_s * 100) + 2
    walk = np.zeros(n_ctrl)
    steps = rng.normal(0.0, 0.02, n_ctrl)
    for i in range(1, n_ctrl):
        walk[i] = 0.95 * walk[i - 1] + steps[i]
    ctrl_t = np.linspace(0.0, n / sr, n_ctrl)
    f0_track = params.f0 * np.exp(np.interp(t, ctrl_t, walk))
    phase = 2.0 * np.pi * np.cumsum(f0_track) / sr

    nyquist = sr / 2
    n_harmonics = max(int(0.95 * nyquist / f0_track.min()), 1)
    source = np.zeros(n)
    offsets = rng.uniform(0.0, 2.0 * np.pi, n_harmonics)
    for h in range(1, n_harmonics + 1):
        amplitude = 10.0 ** (params.harmonic_rolloff * math.log2(h) / 20.0)
        audible = (h * f0_track) < 0.95 * nyquist
        source += amplitude * audible * np.sin(h * phase + offsets[h - 1])
    source += 0.02 * rng.standard_normal(n)

    shaped = source
    for center, bandwidth in zip(params.resonance_centers, params.resonance_bandwidths):
        r = math.exp(-math.pi * bandwidth / sr)
        theta = 2.0 * math.pi * center / sr
        shaped = signal.lfilter([1.0 - r], [1.0, -2.0 * r * math.cos(theta), r * r], shaped)

    rate = rng.uniform(3.0, 6.0)
    envelope = 0.55 - 0.45 * np.cos(2.0 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    fade = min(int(0.01 * sr), n // 2)
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade)
        envelope[:fade] *= ramp
        envelope[n - fade :] *= ramp[::-1]
    shaped = shaped * envelope

    peak = float(np.max(np.abs(shaped)))
    if peak > 0:
        shaped = shaped * (PEAK_LEVEL / peak)
    return Waveform(shaped, sr)


def noise_source(
    seed: int,
    duration_s: float,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    cutoff_hz: Optional[float] = None,
) -> Waveform:
    """
    Low-pass filtered white noise (4th-order Butterworth, default cutoff sr/8).

    Raises:
        DurationError: If the duration is below one sample
    """
    n = int(round(duration_s * sample_rate))
    if duration_s <= 0 or n < 1:
        raise DurationError(
            f"duration {duration_s}s yields no samples at {sample_rate} Hz"
        )
    cutoff = cutoff_hz if cutoff_hz is not None else sample_rate / 8
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)
    sos = signal.butter(4, cutoff, btype="low", fs=sample_rate, output="sos")
    colored = signal.sosfilt(sos, white)
    rms = float(np.sqrt(np.mean(colored**2)))
    if rms == 0.0:
        colored, rms = white, float(np.sqrt(np.mean(white**2)))
    return Waveform(0.1 * colored / rms, sample_rate)


@dataclass(frozen=True)
class _UtterancePlan:
    utterance_id: str
    speaker_index: int
    duration_s: float
    seed: int
    path: str


def _plan_utterances(
    spec: DatasetSpec, split: str, speakers: List[SpeakerProfile]
) -> List[List[_UtterancePlan]]:
    lo, hi = spec.utterance_duration_range_s
    plans = []
    for s, profile in enumerate(speakers):
        per_speaker = []
        for u in range(spec.utterances_per_speaker):
            rng = np.random.default_rng(
                derive_seed(spec.master_seed, split, "utterance", s, u)
            )
            n_samples = max(int(round(rng.uniform(lo, hi) * spec.sample_rate)), 1)
            utt_id = f"{profile.speaker_id}-utt{u:03d}"
            per_speaker.append(
                _UtterancePlan(
                    utterance_id=utt_id,
                    speaker_index=s,
                    duration_s=n_samples / spec.sample_rate,
                    seed=derive_seed(spec.master_seed, split, "utterance-audio", s, u),
                    path=f"{split}/utterances/{utt_id}.wav",
                )
            )
        plans.append(per_speaker)
    return plans


def build_dataset(
    spec: DatasetSpec,
    output_dir: Union[str, Path],
    progress_mode: Optional[str] = None,
    max_workers: Optional[int] = None,
) -> DatasetManifest:
    """
    Generate every split of ``spec`` under ``output_dir``.

    Each split gets its own speaker pool; per mixture the target and
    interferer speakers, utterances, SIR/SNR (uniform in range) and N
    enrollment candidates are drawn from a sub-seed of (master_seed, split,
    index), so the output does not depend on worker scheduling.

    Args:
        spec: Generation setup
        output_dir: Dataset directory (created)
        progress_mode: Progress display mode
        max_workers: Thread pool size (default: WORSTENROLL_MAX_WORKERS)

    Returns:
        The saved manifest

    Raises:
        ConfigError: If the settings are invalid
        InsufficientUtterancesError: If a speaker lacks N valid candidates
    """
    spec.validate()
    root = Path(output_dir)
    root.mkdir(parents=True, exist_ok=True)
    records: List[MixtureRecord] = []

    for split in SPLITS:
        n_mixtures = spec.mixtures_in(split)
        speakers = [
            synth_speaker(
                derive_seed(spec.master_seed, split, "speaker", i),
                sample_rate=spec.sample_rate,
                intra_speaker_sigma=spec.intra_speaker_sigma,
                speaker_id=f"{split}-spk{i:03d}",
            )
            for i in range(spec.speakers_in(split))
        ]
        if n_mixtures == 0:
            _logger.info(f"{split}: no mixtures requested")
            continue

        plans = _plan_utterances(spec, split, speakers)
        flat = [p for per_speaker in plans for p in per_speaker]

        def render(plan: _UtterancePlan) -> Waveform:
            w = synth_utterance(speakers[plan.speaker_index], plan.duration_s, plan.seed)
            write_wav(root / plan.path, w, spec.wav_encoding)
            return w

        with ProgressBar(len(flat), desc=f"[{split}: utterances]", mode=progress_mode) as pbar:
            audio = map_ordered(render, flat, max_workers, on_done=pbar.update)
        waveforms: Dict[str, Waveform] = {
            p.utterance_id: w for p, w in zip(flat, audio)
        }

        def build_mixture(index: int) -> MixtureRecord:
            return _build_mixture(spec, root, split, index, speakers, plans, waveforms)

        with ProgressBar(n_mixtures, desc=f"[{split}: mixtures]", mode=progress_mode) as pbar:
            split_records = map_ordered(
                build_mixture, list(range(n_mixtures)), max_workers, on_done=pbar.update
            )
        records.extend(split_records)
        _logger.info(
            f"{split}: {len(speakers)} speakers, {len(flat)} utterances, "
            f"{n_mixtures} mixtures"
        )

    manifest = DatasetManifest(root, records)
    manifest_path = manifest.save()
    write_dataset_info(
        root,
        {
            "format_version": 1,
            "manifest": MANIFEST_NAME,
            "manifest_sha256": calculate_file_hash(str(manifest_path)),
            "spec": asdict(spec),
        },
    )
    _logger.info(f"Wrote {manifest_path} ({len(records)} mixtures)")
    return manifest


def _build_mixture(
    spec: DatasetSpec,
    root: Path,
    split: str,
    index: int,
    speakers: List[SpeakerProfile],
    plans: List[List[_UtterancePlan]],
    waveforms: Dict[str, Waveform],
) -> MixtureRecord:
    rng = np.random.default_rng(derive_seed(spec.master_seed, split, "mixture", index))
    n_speakers = len(speakers)
    target_spk = int(rng.integers(n_speakers))
    interferer_spk = int(rng.integers(n_speakers - 1))
    if interferer_spk >= target_spk:
        interferer_spk += 1

    n_utts = spec.utterances_per_speaker
    target_plan = plans[target_spk][int(rng.integers(n_utts))]
    interferer_plan = plans[interferer_spk][int(rng.integers(n_utts))]
    sir_db = float(rng.uniform(*spec.sir_range_db))
    snr_db = float(rng.uniform(*spec.snr_range_for(split)))

    candidates = [
        p
        for p in plans[target_spk]
        if p.utterance_id != target_plan.utterance_id
        and p.duration_s >= spec.min_enrollment_duration_s
    ]
    if len(candidates) < spec.n_enrollments:
        raise InsufficientUtterancesError(
            f"{speakers[target_spk].speaker_id} has {len(candidates)} valid "
            f"enrollment candidates, {spec.n_enrollments} required"
        )
    picks = rng.choice(len(candidates), spec.n_enrollments, replace=False)
    chosen = [candidates[int(i)] for i in picks]

    target = waveforms[target_plan.utterance_id]
    mixture_id = f"{split}-mix{index:05d}"
    noise = noise_source(
        derive_seed(spec.master_seed, split, "noise", index),
        target.duration_s,
        spec.sample_rate,
        spec.noise_cutoff_hz,
    )
    mix_seed = derive_seed(spec.master_seed, split, "mix", index)
    example = mix(
        target,
        waveforms[interferer_plan.utterance_id],
        noise,
        sir_db,
        snr_db,
        mix_seed,
        target_speaker_id=speakers[target_spk].speaker_id,
        interferer_speaker_id=speakers[interferer_spk].speaker_id,
    )
    if spec.wav_encoding.lower() == "pcm16":
        peak = example.peak()
        example = example.limited()
        if example.peak() < peak:
            _logger.debug(f"{mixture_id}: attenuated by {example.peak() / peak:.3f} for 16-bit PCM")

    base = f"{split}/mixtures/{mixture_id}"
    paths = {
        "mixture": f"{base}-mix.wav",
        "target": f"{base}-target.wav",
        "interferer": f"{base}-interferer.wav",
        "noise": f"{base}-noise.wav",
    }
    write_wav(root / paths["mixture"], example.mixture, spec.wav_encoding)
    write_wav(root / paths["target"], example.target, spec.wav_encoding)
    write_wav(root / paths["interferer"], example.interferer, spec.wav_encoding)
    write_wav(root / paths["noise"], example.noise, spec.wav_encoding)

    return MixtureRecord(
        mixture_id=mixture_id,
        split=split,
        sample_rate=spec.sample_rate,
        num_samples=len(target),
        mixture_path=paths["mixture"],
        target_path=paths["target"],
        interferer_path=paths["interferer"],
        noise_path=paths["noise"],
        target_speaker_id=example.target_speaker_id,
        interferer_speaker_id=example.interferer_speaker_id,
        target_utterance_id=target_plan.utterance_id,
        interferer_utterance_id=interferer_plan.utterance_id,
        sir_db=sir_db,
        snr_db=snr_db,
        seed=mix_seed,
        enrollment_ids=[p.utterance_id for p in chosen],
        enrollment_paths=[p.path for p in chosen],
        enrollment_durations_s=[p.duration_s for p in chosen],
        target_speaker_label=target_spk if split == "train" else -1,
    )
