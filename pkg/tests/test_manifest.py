"""
Tests for the dataset manifest.
"""

import dataclasses
import os

import pytest

from worstenroll.exceptions import ManifestError
from worstenroll.manifest import MANIFEST_NAME, DatasetManifest, MixtureRecord


def make_record(**overrides):
    values = dict(
        mixture_id="train-mix00000",
        split="train",
        sample_rate=8000,
        num_samples=800,
        mixture_path="m.wav",
        target_path="t.wav",
        interferer_path="i.wav",
        noise_path="n.wav",
        target_speaker_id="train-spk000",
        interferer_speaker_id="train-spk001",
        target_utterance_id="train-spk000-utt000",
        interferer_utterance_id="train-spk001-utt000",
        sir_db=0.0,
        snr_db=10.0,
        seed=1,
        enrollment_ids=["train-spk000-utt001", "train-spk000-utt002"],
        enrollment_paths=["e1.wav", "e2.wav"],
        enrollment_durations_s=[0.6, 0.7],
        target_speaker_label=0,
    )
    values.update(overrides)
    return MixtureRecord(**values)


class TestDatasetManifest:
    """Tests for DatasetManifest class."""

    def test_save_and_load(self, temp_dir):
        """Test that a saved manifest loads back unchanged."""
        records = [make_record(), make_record(mixture_id="train-mix00001", seed=2)]
        DatasetManifest(temp_dir, records).save()
        loaded = DatasetManifest.load(temp_dir)
        assert loaded.records == records
        assert loaded.path == loaded.root / MANIFEST_NAME

    def test_split_filter(self, temp_dir):
        """Test that split() keeps manifest order within a split."""
        manifest = DatasetManifest(
            temp_dir,
            [
                make_record(mixture_id="a"),
                make_record(mixture_id="b", split="dev"),
                make_record(mixture_id="c"),
            ],
        )
        assert [r.mixture_id for r in manifest.split("train")] == ["a", "c"]

    def test_unknown_split(self, temp_dir):
        """Test that unknown split names raise ManifestError."""
        with pytest.raises(ManifestError, match="Unknown split"):
            DatasetManifest(temp_dir, []).split("test")

    def test_missing_manifest(self, temp_dir):
        """Test that a missing manifest raises ManifestError."""
        with pytest.raises(ManifestError, match="not found"):
            DatasetManifest.load(temp_dir)

    def test_invalid_json_reports_line(self, temp_dir):
        """Test that malformed lines are reported with their number."""
        DatasetManifest(temp_dir, [make_record()]).save()
        with open(os.path.join(temp_dir, MANIFEST_NAME), "a") as f:
            f.write("{not json\n")
        with pytest.raises(ManifestError, match=":2:"):
            DatasetManifest.load(temp_dir)

    def test_unknown_field(self):
        """Test that records with unexpected fields are rejected."""
        data = dataclasses.asdict(make_record())
        data["speaker"] = "x"
        with pytest.raises(ManifestError, match="Malformed"):
            MixtureRecord.from_dict(data)


class TestValidate:
    """Tests for DatasetManifest.validate."""

    def test_valid(self, temp_dir):
        """Test that consistent records pass."""
        DatasetManifest(temp_dir, [make_record()]).validate(0.5, check_audio=False)

    def test_eval_speaker_overlap(self, temp_dir):
        """Test that eval speakers must not appear in train."""
        records = [
            make_record(),
            make_record(mixture_id="eval-mix00000", split="eval", target_speaker_label=-1),
        ]
        with pytest.raises(ManifestError, match="overlap"):
            DatasetManifest(temp_dir, records).validate(check_audio=False)

    def test_target_utterance_as_enrollment(self, temp_dir):
        """Test that the target utterance cannot be a candidate."""
        record = make_record(
            enrollment_ids=["train-spk000-utt000", "train-spk000-utt002"]
        )
        with pytest.raises(ManifestError, match="also an enrollment"):
            DatasetManifest(temp_dir, [record]).validate(check_audio=False)

    def test_short_enrollment(self, temp_dir):
        """Test that candidates below the minimum duration are rejected."""
        record = make_record(enrollment_durations_s=[0.6, 0.3])
        with pytest.raises(ManifestError, match="shorter than"):
            DatasetManifest(temp_dir, [record]).validate(0.5, check_audio=False)

    def test_missing_audio(self, temp_dir):
        """Test that unreadable WAV files are reported."""
        with pytest.raises(ManifestError, match="train-mix00000"):
            DatasetManifest(temp_dir, [make_record()]).validate()
