"""
Tests for progress display.
"""

import sys
from unittest.mock import patch

import pytest

from worstenroll.progress import (
    PROGRESS_ENV,
    ProgressBar,
    _is_non_interactive,
    default_progress_mode,
    resolve_mode,
)


@pytest.fixture
def frozen_clock(mocker):
    """Monotonic clock reading 100.0 at start and 102.5 afterwards."""
    return mocker.patch("worstenroll.progress.monotonic", side_effect=[100.0, 102.5])


class TestModeSelection:
    """Tests for default_progress_mode and resolve_mode."""

    @pytest.mark.parametrize(
        "env, expected",
        [
            ({}, "progress"),
            ({PROGRESS_ENV: " Disabled "}, "disabled"),
            ({PROGRESS_ENV: "fancy"}, "progress"),
        ],
    )
    def test_default_from_env(self, env, expected):
        """Test the environment lookup and its fallback."""
        with patch.dict("os.environ", env, clear=True):
            assert default_progress_mode() == expected

    def test_invalid_mode(self):
        """Test that an unknown explicit mode raises ValueError."""
        with pytest.raises(ValueError, match="Invalid progress mode 'verbose'"):
            resolve_mode("verbose")

    def test_live_bar_needs_console(self):
        """Test that progress becomes compact off a terminal."""
        with patch("worstenroll.progress._is_non_interactive", return_value=True):
            assert resolve_mode("progress") == "compact"
            assert resolve_mode("DISABLED") == "disabled"
        with patch("worstenroll.progress._is_non_interactive", return_value=False):
            assert resolve_mode("progress") == "progress"


class TestProgressBar:
    """Tests for ProgressBar class."""

    def test_disabled_mode(self, capsys):
        """Test that disabled mode prints nothing but still counts."""
        with ProgressBar(5, desc="train", mode="disabled") as bar:
            bar.update(5)
        assert bar.pbar is None
        assert bar.done == 5
        assert capsys.readouterr().err == ""

    def test_compact_summary(self, capsys, frozen_clock):
        """Test the single summary line with unit and elapsed time."""
        with ProgressBar(4, desc="eval dev", mode="compact", unit="mix") as bar:
            bar.update()
            bar.update(3)
        assert capsys.readouterr().err == "eval dev: 4/4 mix in 2.5s\n"

    def test_compact_postfix_formats_floats(self, capsys, frozen_clock):
        """Test that float postfix values get two decimals."""
        with ProgressBar(2, desc="train", mode="compact", unit="epoch") as bar:
            bar.update(2)
            bar.set_postfix(dev=-3.2049, lr=0.001, epoch=2)
        assert capsys.readouterr().err.strip() == (
            "train: 2/2 epoch in 2.5s [dev=-3.20, lr=0.00, epoch=2]"
        )

    def test_close_twice_prints_once(self, capsys):
        """Test that a repeated close does not repeat the summary."""
        bar = ProgressBar(1, desc="mix", mode="compact")
        bar.close()
        bar.close()
        assert capsys.readouterr().err.count("mix: 0/1") == 1

    def test_progress_mode_uses_tqdm(self):
        """Test that an interactive bar wraps tqdm and releases it on close."""
        with patch("worstenroll.progress._is_non_interactive", return_value=False):
            with ProgressBar(3, desc="mix", mode="progress") as bar:
                bar.update(3)
                bar.set_postfix(loss=1.0)
                assert bar.pbar is not None
                assert bar.pbar.n == 3
                assert bar.pbar.postfix == "loss=1.00"
        assert bar.pbar is None


class TestNonInteractiveDetection:
    """Tests for _is_non_interactive function."""

    def test_ide_console(self):
        """Test that IDE consoles are detected."""
        with patch.dict("os.environ", {"PYCHARM_HOSTED": "1"}):
            assert _is_non_interactive() is True

    @pytest.mark.parametrize("tty, expected", [(False, True), (True, False)])
    def test_stderr_tty(self, tty, expected):
        """Test detection from stderr.isatty()."""
        with patch.dict("os.environ", {}, clear=True):
            with patch.object(sys, "stderr") as stderr:
                stderr.isatty.return_value = tty
                assert _is_non_interactive() is expected

    def test_closed_stderr(self):
        """Test that a closed stderr counts as non-interactive."""
        with patch.dict("os.environ", {}, clear=True):
            with patch.object(sys, "stderr") as stderr:
                stderr.isatty.side_effect = ValueError("I/O operation on closed file")
                assert _is_non_interactive() is True
