"""
Run-directory lock preventing concurrent writers.
"""

import contextlib
import os
from pathlib import Path
from typing import Optional, Union

from .exceptions import WorkdirLockedError
from .logging import get_logger
from .retry import BackoffPolicy, retry_on

_logger = get_logger("lock")

LOCK_NAME = ".worstenroll.lock"


def pid_alive(pid: Optional[str]) -> bool:
    """
    Whether the process recorded in a lock file may still be running.

    Only a pid that provably no longer exists counts as dead. Empty or
    unparsable records, and platforms without signal 0, count as alive.
    """
    if not pid or not pid.isdigit() or os.name == "nt":
        return True
    try:
        os.kill(int(pid), 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        # exists, owned by another user
        pass
    return True


class WorkdirLock:
    """
    Exclusive lock file inside a run directory.

    The file holds the owner's pid. A lock whose owner no longer exists
    is removed on sight; otherwise a second holder waits according to
    ``policy`` and then raises WorkdirLockedError.

    Example:
        with WorkdirLock("runs/desk"):
            ...  # only this process writes to runs/desk
    """

    def __init__(self, workdir: Union[str, Path], policy: Optional[BackoffPolicy] = None):
        self.workdir = Path(workdir)
        self.path = self.workdir / LOCK_NAME
        self.policy = policy or BackoffPolicy()
        self._fd: Optional[int] = None

    def holder(self) -> Optional[str]:
        """Pid recorded in the lock file, or None when unlocked or unreadable."""
        try:
            return self.path.read_text().strip() or None
        except OSError:
            return None

    def _try_acquire(self) -> None:
        while True:
            try:
                fd = os.open(str(self.path), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError as e:
                pid = self.holder()
                if pid_alive(pid):
                    raise WorkdirLockedError(
                        f"Run directory {self.workdir} is locked by pid {pid or '?'} "
                        f"({self.path})"
                    ) from e
                _logger.warning(f"Removing stale lock {self.path} left by dead pid {pid}")
                with contextlib.suppress(FileNotFoundError):
                    self.path.unlink()
        os.write(fd, str(os.getpid()).encode("ascii"))
        self._fd = fd

    def _waiting(self, error: Exception, attempt: int, delay: float) -> None:
        if attempt == 0:
            _logger.info(f"{self.workdir} is busy, waiting up to {self.policy.max_total_wait():.1f}s")

    def acquire(self) -> "WorkdirLock":
        """Acquire the lock, waiting while another holder exists."""
        self.workdir.mkdir(parents=True, exist_ok=True)
        retry_on((WorkdirLockedError,), self.policy, on_retry=self._waiting)(self._try_acquire)()
        _logger.debug(f"Acquired {self.path}")
        return self

    def release(self) -> None:
        """Release the lock if held."""
        if self._fd is None:
            return
        os.close(self._fd)
        self._fd = None
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        _logger.debug(f"Released {self.path}")

    def __enter__(self) -> "WorkdirLock":
        return self.acquire()

    def __exit__(self, exc_type: object, exc_val: object, exc_tb: object) -> None:
        self.release()
