"""
Tests for sampling, the optimizer, the schedule and the training loop.
"""

import dataclasses
import itertools
import json
import os
from collections import Counter

import numpy as np
import pytest
import torch

import worstenroll.training
from worstenroll.exceptions import (
    ConfigError,
    DivergenceError,
    EmptyEnrollmentSetError,
    ManifestError,
    ShapeError,
    SubsetTooLargeError,
)
from worstenroll.manifest import DatasetManifest
from worstenroll.model import load_checkpoint
from worstenroll.training import (
    BEST_CHECKPOINT_NAME,
    HISTORY_NAME,
    LAST_CHECKPOINT_NAME,
    AdamState,
    PlateauScheduler,
    TrainConfig,
    Trainer,
    TrainHistory,
    adam_step,
    round_robin_enrollment,
    sample_subset,
    sample_uniform_enrollment,
    train,
)


def quick_config(**overrides):
    values = dict(
        loss_mode="conventional",
        total_epochs=2,
        worst_loss_start_epoch=0,
        batch_size=2,
        initial_lr=1e-3,
        lr_halving_patience_epochs=1,
        seed=0,
    )
    values.update(overrides)
    return TrainConfig(**values)


class TestTrainConfig:
    """Tests for TrainConfig validation and phases."""

    def test_defaults_valid(self):
        """Test that the default schedule validates against N = 10."""
        TrainConfig().validate(10)

    def test_subset_larger_than_candidates(self):
        """Test that K > N is rejected."""
        with pytest.raises(ConfigError, match="subset_size"):
            TrainConfig(subset_size=4).validate(3)

    def test_unknown_mode(self):
        """Test that unknown loss modes are rejected."""
        with pytest.raises(ConfigError, match="loss_mode"):
            TrainConfig(loss_mode="average").validate()

    def test_start_epoch_beyond_total(self):
        """Test that the worst phase must start within the run."""
        with pytest.raises(ConfigError, match="worst_loss_start_epoch"):
            TrainConfig(total_epochs=10, worst_loss_start_epoch=11).validate()

    def test_non_positive_tau(self):
        """Test that tau must be positive."""
        with pytest.raises(ConfigError, match="tau"):
            TrainConfig(tau=0.0).validate()

    def test_unknown_key(self):
        """Test that from_dict rejects unknown keys."""
        with pytest.raises(ConfigError, match="Unknown train keys"):
            TrainConfig.from_dict({"epochs": 3})

    def test_active_mode_phases(self):
        """Test that worst terms switch on at worst_loss_start_epoch."""
        config = TrainConfig(loss_mode="worst_hard", total_epochs=60, worst_loss_start_epoch=48)
        assert config.active_mode(0) == "conventional"
        assert config.active_mode(47) == "conventional"
        assert config.active_mode(48) == "worst_hard"

    def test_si_term_active_from_start(self):
        """Test that the combined mode trains with SI before the worst phase."""
        config = TrainConfig(loss_mode="worst_hard_si", worst_loss_start_epoch=48)
        assert config.active_mode(0) == "si"
        assert config.active_mode(59) == "worst_hard_si"

    def test_non_worst_modes_fixed(self):
        """Test that conventional and SI modes never change."""
        for mode in ("conventional", "si"):
            config = TrainConfig(loss_mode=mode)
            assert {config.active_mode(e) for e in range(60)} == {mode}


class TestSampling:
    """Tests for enrollment sampling."""

    def test_subset_sorted_distinct(self, rng):
        """Test that subsets have K distinct ascending indices."""
        for _ in range(50):
            subset = sample_subset(10, 3, rng)
            assert len(subset) == 3
            assert subset == sorted(set(subset))
            assert all(0 <= i < 10 for i in subset)

    def test_subset_uniform(self, rng):
        """Test that every 2-subset of 4 is drawn about equally often."""
        draws = 6000
        counts = Counter(tuple(sample_subset(4, 2, rng)) for _ in range(draws))
        assert set(counts) == set(itertools.combinations(range(4), 2))
        for count in counts.values():
            assert abs(count / draws - 1 / 6) < 0.025

    def test_full_subset(self, rng):
        """Test that K = N returns every index."""
        assert sample_subset(3, 3, rng) == [0, 1, 2]

    def test_subset_too_large(self, rng):
        """Test that K > N raises SubsetTooLargeError."""
        with pytest.raises(SubsetTooLargeError):
            sample_subset(3, 4, rng)

    def test_empty_set(self, rng):
        """Test that no candidates raise EmptyEnrollmentSetError."""
        with pytest.raises(EmptyEnrollmentSetError):
            sample_subset(0, 1, rng)
        with pytest.raises(EmptyEnrollmentSetError):
            sample_uniform_enrollment(0, rng)

    def test_uniform_covers_all(self, rng):
        """Test that single draws reach every candidate."""
        assert {sample_uniform_enrollment(5, rng) for _ in range(200)} == set(range(5))

    def test_uniform_frequencies(self, rng):
        """Test that each of ten candidates is drawn with frequency near 1/10."""
        draws = [sample_uniform_enrollment(10, rng) for _ in range(50000)]
        frequencies = np.bincount(draws, minlength=10) / len(draws)
        assert frequencies.shape == (10,)
        assert np.all((frequencies >= 0.09) & (frequencies <= 0.11))

    def test_round_robin(self):
        """Test that round robin cycles through candidates per epoch."""
        assert [round_robin_enrollment(3, epoch, 1) for epoch in range(4)] == [1, 2, 0, 1]


class TestAdamStep:
    """Tests for adam_step function."""

    def test_first_step_is_sign(self):
        """Test that the first update is about lr·sign(g)."""
        params = {"w": torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64)}
        grads = {"w": torch.tensor([0.3, -4.0, 1e-2], dtype=torch.float64)}
        new, state = adam_step(params, grads, AdamState(), lr=0.01)
        torch.testing.assert_close(
            params["w"] - new["w"], 0.01 * torch.sign(grads["w"]), atol=1e-7, rtol=0
        )
        assert state.step == 1

    def test_inputs_untouched(self):
        """Test that parameters and state are not modified in place."""
        params = {"w": torch.ones(2)}
        state = AdamState()
        adam_step(params, {"w": torch.ones(2)}, state, lr=0.1)
        assert torch.equal(params["w"], torch.ones(2))
        assert state.step == 0 and state.m == {}

    def test_bias_correction(self):
        """Test that a constant gradient keeps a step size of lr."""
        params = {"w": torch.zeros(1, dtype=torch.float64)}
        grads = {"w": torch.ones(1, dtype=torch.float64)}
        state = AdamState()
        for _ in range(5):
            params, state = adam_step(params, grads, state, lr=0.1)
        assert float(params["w"]) == pytest.approx(-0.5, abs=1e-6)

    def test_shape_mismatch(self):
        """Test that mismatched gradients raise ShapeError."""
        with pytest.raises(ShapeError):
            adam_step({"w": torch.zeros(2)}, {"w": torch.zeros(3)}, AdamState(), lr=0.1)

    def test_missing_gradient(self):
        """Test that a parameter without gradient raises ShapeError."""
        with pytest.raises(ShapeError, match="No gradient"):
            adam_step({"w": torch.zeros(2)}, {}, AdamState(), lr=0.1)


class TestPlateauScheduler:
    """Tests for PlateauScheduler class."""

    def test_halves_after_patience(self):
        """Test that the rate halves after patience non-improving epochs."""
        scheduler = PlateauScheduler(1.0, patience=3)
        halved = [scheduler.step(loss) for loss in [5.0, 4.0, 4.0, 4.5, 4.2]]
        assert halved == [False, False, False, False, True]
        assert scheduler.lr == 0.5

    def test_improvement_resets_count(self):
        """Test that an improvement restarts the patience window."""
        scheduler = PlateauScheduler(1.0, patience=2)
        for loss in [5.0, 6.0, 4.0, 6.0]:
            scheduler.step(loss)
        assert scheduler.lr == 1.0

    def test_reset(self):
        """Test that reset forgets the best loss."""
        scheduler = PlateauScheduler(1.0, patience=1)
        scheduler.step(1.0)
        scheduler.reset()
        assert scheduler.step(3.0) is False

    def test_state_round_trip(self):
        """Test that the state restores into a fresh scheduler."""
        scheduler = PlateauScheduler(1.0, patience=2)
        scheduler.step(2.0)
        scheduler.step(3.0)
        restored = PlateauScheduler(9.0, patience=2)
        restored.load_state_dict(scheduler.state_dict())
        assert restored.step(3.0) is True
        assert restored.lr == 0.5


class TestTrainer:
    """Tests for the training loop on the tiny dataset."""

    def test_history_and_files(self, tiny_dataset, model_config, temp_dir):
        """Test one record per epoch and the written artifacts."""
        result = train(model_config, quick_config(), tiny_dataset, temp_dir, "disabled")
        assert len(result.history) == 2
        assert [r.epoch for r in result.history.records] == [1, 2]
        assert all(np.isfinite(result.history.train_losses))
        for name in (HISTORY_NAME, BEST_CHECKPOINT_NAME, LAST_CHECKPOINT_NAME):
            assert os.path.exists(os.path.join(temp_dir, name))
        on_disk = TrainHistory.load(os.path.join(temp_dir, HISTORY_NAME))
        assert on_disk.to_list() == result.history.to_list()

    def test_learning_rate_only_halves(self, tiny_dataset, model_config):
        """Test that the rate never increases and only ever halves."""
        config = quick_config(total_epochs=4, lr_halving_patience_epochs=1, initial_lr=5e-2)
        lrs = train(model_config, config, tiny_dataset, progress_mode="disabled").history.learning_rates
        assert lrs[0] == 5e-2
        for before, after in zip(lrs, lrs[1:]):
            assert after in (before, before / 2)

    def test_best_checkpoint_matches_best_epoch(self, tiny_dataset, model_config, temp_dir):
        """Test that best.pt records the epoch with the lowest dev loss."""
        result = train(model_config, quick_config(total_epochs=3), tiny_dataset, temp_dir, "disabled")
        dev = result.history.dev_losses
        assert result.best_epoch == int(np.argmin(dev)) + 1
        _, state = load_checkpoint(os.path.join(temp_dir, BEST_CHECKPOINT_NAME))
        assert state["best_epoch"] == result.best_epoch
        assert state["best_dev_loss"] == pytest.approx(min(dev))

    def test_deterministic(self, tiny_dataset, model_config):
        """Test that the same seed gives the same trained parameters."""
        a = train(model_config, quick_config(), tiny_dataset, progress_mode="disabled")
        b = train(model_config, quick_config(), tiny_dataset, progress_mode="disabled")
        for (name, p), (_, q) in zip(a.model.named_parameters(), b.model.named_parameters()):
            assert torch.equal(p, q), name

    def test_zero_epochs(self, tiny_dataset, model_config, temp_dir):
        """Test that no epochs return the initial parameters and an empty history."""
        config = quick_config(total_epochs=0)
        trainer = Trainer(model_config, config, tiny_dataset, temp_dir, "disabled")
        initial = {k: v.clone() for k, v in trainer.model.state_dict().items()}
        result = trainer.run()
        assert len(result.history) == 0
        assert result.best_epoch is None
        for k, v in result.model.state_dict().items():
            assert torch.equal(v, initial[k])
        assert os.path.exists(os.path.join(temp_dir, BEST_CHECKPOINT_NAME))

    def test_phase_switch(self, tiny_dataset, model_config):
        """Test that the objective switches at worst_loss_start_epoch."""
        config = quick_config(loss_mode="worst_hard", total_epochs=3, worst_loss_start_epoch=1)
        history = train(model_config, config, tiny_dataset, progress_mode="disabled").history
        assert [r.loss_mode for r in history.records] == [
            "conventional",
            "worst_hard",
            "worst_hard",
        ]
        assert history.records[1].is_best

    def test_all_modes_run(self, tiny_dataset, model_config):
        """Test one epoch of every objective."""
        for mode in ("si", "worst_soft", "worst_hard_si"):
            config = quick_config(loss_mode=mode, total_epochs=1, subset_size=2)
            result = train(model_config, config, tiny_dataset, progress_mode="disabled")
            assert result.history.records[0].loss_mode == mode

    def test_round_robin_sampling(self, tiny_dataset, model_config):
        """Test that iterative enrollment selection trains."""
        config = quick_config(total_epochs=1, enrollment_sampling="round_robin")
        result = train(model_config, config, tiny_dataset, progress_mode="disabled")
        assert np.isfinite(result.history.dev_losses[0])

    def test_resume_matches_uninterrupted(self, tiny_dataset, model_config, temp_dir):
        """Test that resuming from last.pt continues the same trajectory."""
        first = os.path.join(temp_dir, "first")
        train(model_config, quick_config(total_epochs=1), tiny_dataset, first, "disabled")
        resumed = Trainer(
            model_config,
            quick_config(total_epochs=2),
            tiny_dataset,
            first,
            "disabled",
            resume_state=load_checkpoint(os.path.join(first, LAST_CHECKPOINT_NAME)),
        ).run()
        straight = train(model_config, quick_config(total_epochs=2), tiny_dataset, progress_mode="disabled")

        assert [r.epoch for r in resumed.history.records] == [1, 2]
        assert resumed.history.dev_losses == pytest.approx(straight.history.dev_losses)
        with open(os.path.join(first, HISTORY_NAME)) as f:
            assert [json.loads(line)["epoch"] for line in f] == [1, 2]

    def test_resume_rejects_other_architecture(self, tiny_dataset, model_config, temp_dir):
        """Test that a checkpoint of another architecture is rejected."""
        train(model_config, quick_config(total_epochs=1), tiny_dataset, temp_dir, "disabled")
        other = dataclasses.replace(model_config, embedding_dim=6)
        with pytest.raises(ConfigError, match="differs"):
            Trainer(
                other,
                quick_config(),
                tiny_dataset,
                resume_state=load_checkpoint(os.path.join(temp_dir, LAST_CHECKPOINT_NAME)),
            )

    def test_divergence(self, tiny_dataset, model_config, mocker):
        """Test that a non-finite loss raises DivergenceError."""
        nan = torch.tensor(float("nan"))
        mocker.patch("worstenroll.training.objective", return_value=(nan, nan))
        with pytest.raises(DivergenceError, match="Non-finite"):
            train(model_config, quick_config(total_epochs=1), tiny_dataset, progress_mode="disabled")

    def test_empty_dev_split(self, tiny_dataset, model_config):
        """Test that training without dev mixtures raises ManifestError."""
        manifest = DatasetManifest(tiny_dataset.root, tiny_dataset.split("train"))
        with pytest.raises(ManifestError, match="dev"):
            train(model_config, quick_config(total_epochs=1), manifest, progress_mode="disabled")

    def test_subset_larger_than_dataset_candidates(self, tiny_dataset, model_config):
        """Test that K is checked against N of the dataset."""
        with pytest.raises(ConfigError, match="subset_size"):
            Trainer(model_config, quick_config(loss_mode="worst_hard", subset_size=4), tiny_dataset)

    def test_sdr_numerator_reaches_objective(self, tiny_dataset, model_config, mocker):
        """Test that the configured SDR convention is used for train and dev losses."""
        spy = mocker.spy(worstenroll.training, "objective")
        config = quick_config(loss_mode="worst_hard", subset_size=2, total_epochs=1)
        train(model_config, config, tiny_dataset, progress_mode="disabled", sdr_numerator="estimate")
        assert spy.call_count > 0
        assert {call.kwargs["numerator"] for call in spy.call_args_list} == {"estimate"}

    def test_unknown_sdr_numerator(self, tiny_dataset, model_config):
        """Test that an unknown SDR convention raises ConfigError."""
        with pytest.raises(ConfigError, match="sdr_numerator"):
            Trainer(model_config, quick_config(), tiny_dataset, sdr_numerator="mixture")
