"""
Dataset manifest: one JSON record per mixture, paths relative to the dataset root.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Union

from .audio import read_wav
from .exceptions import ManifestError, WavIOError, WorstEnrollError
from .logging import get_logger

_logger = get_logger("manifest")

MANIFEST_NAME = "manifest.jsonl"
DATASET_INFO_NAME = "dataset.json"
SPLITS = ("train", "dev", "eval")


@dataclass(frozen=True)
class MixtureRecord:
    """Manifest entry for one mixture and its N enrollment candidates."""

    mixture_id: str
    split: str
    sample_rate: int
    num_samples: int
    mixture_path: str
    target_path: str
    interferer_path: str
    noise_path: str
    target_speaker_id: str
    interferer_speaker_id: str
    target_utterance_id: str
    interferer_utterance_id: str
    sir_db: float
    snr_db: float
    seed: int
    enrollment_ids: List[str] = field(default_factory=list)
    enrollment_paths: List[str] = field(default_factory=list)
    enrollment_durations_s: List[float] = field(default_factory=list)
    # index of the target speaker in the SI head, -1 outside the train split
    target_speaker_label: int = -1

    @property
    def n_enrollments(self) -> int:
        return len(self.enrollment_ids)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureRecord":
        try:
            return cls(**data)
        except TypeError as e:
            raise ManifestError(f"Malformed manifest record: {e}") from e


class DatasetManifest:
    """
    All mixture records of a generated dataset.

    Example:
        manifest = DatasetManifest.load("runs/desk/dataset")
        for record in manifest.split("train"):
            ...
    """

    def __init__(self, root: Union[str, Path], records: Sequence[MixtureRecord]):
        self.root = Path(root)
        self.records: List[MixtureRecord] = list(records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MixtureRecord]:
        return iter(self.records)

    @property
    def path(self) -> Path:
        return self.root / MANIFEST_NAME

    def split(self, name: str) -> List[MixtureRecord]:
        """Records of one split, in manifest order."""
        if name not in SPLITS:
            raise ManifestError(f"Unknown split '{name}'. Must be one of: {SPLITS}")
        return [r for r in self.records if r.split == name]

    def speakers(self, name: str) -> List[str]:
        """Sorted ids of every speaker (target or interferer) in a split."""
        ids = set()
        for r in self.split(name):
            ids.add(r.target_speaker_id)
            ids.add(r.interferer_speaker_id)
        return sorted(ids)

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def save(self) -> Path:
        """Write the manifest as JSON Lines under ``root``."""
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8", newline="\n") as f:
            for record in self.records:
                f.write(record.to_json())
                f.write("\n")
        return self.path

    @classmethod
    def load(cls, root: Union[str, Path]) -> "DatasetManifest":
        """
        Load ``manifest.jsonl`` from a dataset directory.

        Raises:
            ManifestError: If the file is missing or a line is malformed
        """
        root = Path(root)
        path = root / MANIFEST_NAME
        if not path.is_file():
            raise ManifestError(f"Manifest not found: {path}")
        records = []
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ManifestError(f"{path}:{line_no}: invalid JSON: {e}") from e
                records.append(MixtureRecord.from_dict(data))
        return cls(root, records)

    def validate(
        self,
        min_enrollment_duration_s: Optional[float] = None,
        check_audio: bool = True,
    ) -> None:
        """
        Check the dataset invariants.

        - eval speakers never appear in train or dev
        - no enrollment candidate is the target utterance
        - every candidate lasts at least ``min_enrollment_duration_s``
        - every referenced WAV exists and parses (``check_audio``)

        Raises:
            ManifestError: On the first violated invariant
        """
        eval_speakers = set(self.speakers("eval"))
        seen = set(self.speakers("train")) | set(self.speakers("dev"))
        overlap = eval_speakers & seen
        if overlap:
            raise ManifestError(
                f"Eval speakers overlap train/dev pools: {sorted(overlap)}"
            )

        for r in self.records:
            if r.target_speaker_id == r.interferer_speaker_id:
                raise ManifestError(f"{r.mixture_id}: interferer equals target speaker")
            if r.target_utterance_id in r.enrollment_ids:
                raise ManifestError(
                    f"{r.mixture_id}: target utterance {r.target_utterance_id} "
                    "is also an enrollment candidate"
                )
            if not (len(r.enrollment_ids) == len(r.enrollment_paths)):
                raise ManifestError(f"{r.mixture_id}: enrollment ids/paths differ")
            if min_enrollment_duration_s is not None:
                short = [
                    eid
                    for eid, d in zip(r.enrollment_ids, r.enrollment_durations_s)
                    if d < min_enrollment_duration_s
                ]
                if short:
                    raise ManifestError(
                        f"{r.mixture_id}: enrollments shorter than "
                        f"{min_enrollment_duration_s}s: {short}"
                    )

        if check_audio:
            checked = set()
            for r in self.records:
                paths = [r.mixture_path, r.target_path, r.interferer_path, r.noise_path]
                for rel in paths + list(r.enrollment_paths):
                    if rel in checked:
                        continue
                    try:
                        read_wav(self.resolve(rel))
                    except (WavIOError, WorstEnrollError) as e:
                        raise ManifestError(f"{r.mixture_id}: {e}") from e
                    checked.add(rel)

        _logger.debug(f"Manifest {self.path} valid ({len(self.records)} mixtures)")


def write_dataset_info(root: Union[str, Path], info: Dict[str, object]) -> Path:
    """Write ``dataset.json`` (spec, manifest digest) next to the manifest."""
    path = Path(root) / DATASET_INFO_NAME
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(info, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_dataset_info(root: Union[str, Path]) -> Dict[str, object]:
    path = Path(root) / DATASET_INFO_NAME
    if not path.is_file():
        raise ManifestError(f"Dataset info not found: {path}")
    with open(path, encoding="utf-8") as f:
        data: Dict[str, object] = json.load(f)
    return data
