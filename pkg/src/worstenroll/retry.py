"""
Backoff policy and retry decorator.

worstenroll commands serialize on a lock file in the run directory; a
command that finds the lock taken waits with exponential backoff before
giving up.
"""

import functools
import random
import time
from dataclasses import dataclass
from typing import Any, Callable, Optional, Tuple, Type, TypeVar

from .logging import get_logger

_logger = get_logger("retry")

T = TypeVar("T")


@dataclass(frozen=True)
class BackoffPolicy:
    """
    Exponential backoff: attempt ``i`` waits ``base_delay * 2**i`` seconds,
    capped at ``max_delay``. With jitter the wait is drawn from the upper
    half of that interval.
    """

    max_attempts: int = 5
    base_delay: float = 0.2
    max_delay: float = 5.0
    jitter: bool = True

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.base_delay < 0 or self.max_delay < 0:
            raise ValueError("delays must be non-negative")

    def delay(self, attempt: int, rng: Optional[random.Random] = None) -> float:
        """Wait before retry number ``attempt + 1`` (attempt is 0-indexed)."""
        capped = min(self.base_delay * (2.0**attempt), self.max_delay)
        if not self.jitter:
            return capped
        return (rng or random).uniform(capped / 2.0, capped)

    def max_total_wait(self) -> float:
        """Upper bound on the time spent sleeping across all attempts."""
        return sum(
            min(self.base_delay * (2.0**i), self.max_delay)
            for i in range(self.max_attempts - 1)
        )


def retry_on(
    exceptions: Tuple[Type[Exception], ...],
    policy: Optional[BackoffPolicy] = None,
    on_retry: Optional[Callable[[Exception, int, float], None]] = None,
) -> Callable[[Callable[..., T]], Callable[..., T]]:
    """
    Retry the decorated function while it raises one of ``exceptions``.

    Other exceptions propagate at once; after the last attempt the last
    retryable exception is re-raised.

    Args:
        exceptions: Exception types that trigger another attempt
        policy: Attempt count and delays (default: ``BackoffPolicy()``)
        on_retry: Called as ``on_retry(error, attempt, delay)`` before sleeping

    Example:
        @retry_on((WorkdirLockedError,), BackoffPolicy(max_attempts=3))
        def acquire():
            ...
    """
    active = policy or BackoffPolicy()

    def decorator(func: Callable[..., T]) -> Callable[..., T]:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> T:
            attempt = 0
            while True:
                try:
                    return func(*args, **kwargs)
                except exceptions as e:
                    if attempt + 1 >= active.max_attempts:
                        _logger.warning(
                            f"{func.__name__} failed after {active.max_attempts} attempts: {e}"
                        )
                        raise
                    delay = active.delay(attempt)
                    _logger.debug(
                        f"{func.__name__}: attempt {attempt + 1}/{active.max_attempts} "
                        f"failed ({e}), retrying in {delay:.2f}s"
                    )
                    if on_retry is not None:
                        on_retry(e, attempt, delay)
                    time.sleep(delay)
                    attempt += 1

        return wrapper

    return decorator
