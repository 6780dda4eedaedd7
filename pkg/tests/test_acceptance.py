"""
Tests for end-to-end training on the desk-scale dataset.

These train full systems and are deselected by default; run with
``pytest -m slow``.
"""

import statistics

import numpy as np
import pytest

from worstenroll.analysis import (
    build_eval_matrix,
    collect_embeddings,
    interferer_swap_sdri,
    seedwise_median_difference,
    system_report,
    variance_ratio,
)
from worstenroll.datagen import DatasetSpec, build_dataset
from worstenroll.model import ModelConfig
from worstenroll.training import TrainConfig, Trainer

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2, 3, 4)
SMOKE_THRESHOLD_DB = 3.0


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Train on demand and cache one model per (seed, loss mode)."""
    datasets = {}
    models = {}

    def get(seed, loss_mode):
        if seed not in datasets:
            root = tmp_path_factory.mktemp(f"desk-seed{seed}")
            datasets[seed] = build_dataset(
                DatasetSpec(master_seed=seed), root, progress_mode="disabled"
            )
        if (seed, loss_mode) not in models:
            trainer = Trainer(
                ModelConfig(),
                TrainConfig(loss_mode=loss_mode, seed=seed),
                datasets[seed],
                progress_mode="disabled",
            )
            models[(seed, loss_mode)] = trainer.run().model
        return models[(seed, loss_mode)], datasets[seed]

    return get


class TestSmokeTraining:
    """Tests for conventional training on the default dataset."""

    def test_dev_sdri(self, trained):
        """Test that conventional training clears the smoke threshold on dev."""
        model, manifest = trained(0, "conventional")
        matrix = build_eval_matrix(model, manifest, "dev", progress_mode="disabled")
        assert float(np.mean(matrix.values)) >= SMOKE_THRESHOLD_DB

    def test_follows_the_enrollment(self, trained):
        """Test that the interferer's enrollment extracts the interferer."""
        model, manifest = trained(0, "conventional")
        swap = interferer_swap_sdri(model, manifest, "dev")
        assert swap.sdri_interferer > swap.sdri_target

    def test_report_ordering(self, trained):
        """Test that n-th worst means increase with n and bracket the mean."""
        model, manifest = trained(0, "conventional")
        matrix = build_eval_matrix(model, manifest, "eval", progress_mode="disabled")
        report = system_report("conventional", matrix)
        means = [s.mean for s in report.report.per_n]
        assert all(a <= b + 1e-9 for a, b in zip(means, means[1:]))
        assert report.worst <= report.mean <= report.best


class TestDirectionalClaims:
    """Tests for seed-median trends of the robust objectives."""

    def test_worst_enrollment_improves(self, trained):
        """Test worst-enrollment SDRi and failure ratio against conventional training."""
        worst = {"conventional": [], "worst_hard_si": []}
        failures = {"conventional": [], "worst_hard_si": []}
        for seed in SEEDS:
            for mode in worst:
                model, manifest = trained(seed, mode)
                matrix = build_eval_matrix(model, manifest, "eval", progress_mode="disabled")
                report = system_report(mode, matrix)
                worst[mode].append(report.worst)
                failures[mode].append(report.report.worst.failure_ratio)
        assert seedwise_median_difference(worst["worst_hard_si"], worst["conventional"]) > 0
        assert (
            seedwise_median_difference(failures["worst_hard_si"], failures["conventional"])
            <= 0
        )

    def test_speaker_identification_separates_embeddings(self, trained):
        """Test that the SI term raises the dev variance ratio."""
        ratios = {"conventional": [], "si": []}
        for seed in SEEDS:
            for mode in ratios:
                model, manifest = trained(seed, mode)
                ratios[mode].append(variance_ratio(collect_embeddings(model, manifest, "dev")))
        assert statistics.median(ratios["si"]) > statistics.median(ratios["conventional"])
