"""
Tests for the run-directory lock.
"""

import logging
import os
import subprocess
import sys

import pytest

from worstenroll.exceptions import WorkdirLockedError
from worstenroll.lock import LOCK_NAME, WorkdirLock, pid_alive
from worstenroll.retry import BackoffPolicy


class TestWorkdirLock:
    """Tests for WorkdirLock class."""

    def test_creates_and_removes_lock_file(self, temp_dir):
        """Test that the lock file exists only while held."""
        path = os.path.join(temp_dir, LOCK_NAME)
        with WorkdirLock(temp_dir):
            assert os.path.exists(path)
            with open(path) as f:
                assert f.read() == str(os.getpid())
        assert not os.path.exists(path)

    def test_creates_workdir(self, temp_dir):
        """Test that a missing run directory is created."""
        workdir = os.path.join(temp_dir, "runs", "desk")
        with WorkdirLock(workdir):
            assert os.path.isdir(workdir)

    def test_second_holder_fails(self, temp_dir):
        """Test that a held lock rejects another holder after retries."""
        with WorkdirLock(temp_dir):
            other = WorkdirLock(temp_dir, BackoffPolicy(max_attempts=2, base_delay=0.001))
            with pytest.raises(WorkdirLockedError, match="locked by pid"):
                other.acquire()

    def test_release_is_idempotent(self, temp_dir):
        """Test that releasing twice is harmless."""
        lock = WorkdirLock(temp_dir).acquire()
        lock.release()
        lock.release()
        assert not os.path.exists(os.path.join(temp_dir, LOCK_NAME))

    def test_reacquire_after_release(self, temp_dir):
        """Test that the lock can be taken again once released."""
        with WorkdirLock(temp_dir):
            pass
        with WorkdirLock(temp_dir, BackoffPolicy(max_attempts=1)):
            pass

    def test_holder(self, temp_dir):
        """Test that the holder pid is readable while locked."""
        lock = WorkdirLock(temp_dir)
        assert lock.holder() is None
        with lock:
            assert lock.holder() == str(os.getpid())
        assert lock.holder() is None

    def test_waits_before_failing(self, temp_dir, mocker):
        """Test that a busy directory is retried per the policy."""
        sleep = mocker.patch("worstenroll.retry.time.sleep")
        with WorkdirLock(temp_dir):
            other = WorkdirLock(temp_dir, BackoffPolicy(max_attempts=3, jitter=False))
            with pytest.raises(WorkdirLockedError):
                other.acquire()
        assert sleep.call_count == 2


@pytest.fixture
def dead_pid():
    """Pid of a child process that has already exited and been reaped."""
    proc = subprocess.Popen([sys.executable, "-c", "pass"])
    proc.wait()
    return proc.pid


def _write_lock(workdir, content):
    with open(os.path.join(workdir, LOCK_NAME), "w") as f:
        f.write(content)


@pytest.mark.skipif(os.name == "nt", reason="pid probing needs POSIX signals")
class TestStaleLock:
    """Tests for recovery from locks left by crashed runs."""

    def test_dead_owner_is_replaced(self, temp_dir, dead_pid, caplog):
        """Test that a lock from an exited process is taken over at once."""
        _write_lock(temp_dir, str(dead_pid))
        lock = WorkdirLock(temp_dir, BackoffPolicy(max_attempts=1))
        with caplog.at_level(logging.WARNING, logger="worstenroll.lock"):
            with lock:
                assert lock.holder() == str(os.getpid())
        assert f"dead pid {dead_pid}" in caplog.text
        assert not os.path.exists(os.path.join(temp_dir, LOCK_NAME))

    def test_live_owner_blocks(self, temp_dir):
        """Test that a lock held by a running process is respected."""
        _write_lock(temp_dir, str(os.getpid()))
        with pytest.raises(WorkdirLockedError, match=f"pid {os.getpid()}"):
            WorkdirLock(temp_dir, BackoffPolicy(max_attempts=1)).acquire()
        assert os.path.exists(os.path.join(temp_dir, LOCK_NAME))

    @pytest.mark.parametrize("content", ["", "not-a-pid"])
    def test_unreadable_owner_blocks(self, temp_dir, content):
        """Test that a lock without a usable pid is never removed."""
        _write_lock(temp_dir, content)
        with pytest.raises(WorkdirLockedError):
            WorkdirLock(temp_dir, BackoffPolicy(max_attempts=1)).acquire()


class TestPidAlive:
    """Tests for pid_alive function."""

    def test_current_process(self):
        """Test that this process is alive."""
        assert pid_alive(str(os.getpid())) is True

    @pytest.mark.parametrize("pid", [None, "", "abc"])
    def test_unknown_counts_as_alive(self, pid):
        """Test that missing or unparsable pids are treated as alive."""
        assert pid_alive(pid) is True

    @pytest.mark.skipif(os.name == "nt", reason="pid probing needs POSIX signals")
    def test_exited_process(self, dead_pid):
        """Test that an exited process is dead."""
        assert pid_alive(str(dead_pid)) is False
