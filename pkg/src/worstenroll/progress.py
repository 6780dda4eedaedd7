"""
Console progress for dataset generation, training epochs and evaluation.

Three modes, chosen per call or through WORSTENROLL_PROGRESS:

- ``progress``: a live tqdm bar (terminals only)
- ``compact``: one summary line on stderr when the work finishes
- ``disabled``: nothing
"""

import os
import sys
from time import monotonic
from typing import Any, Dict, Optional

from tqdm import tqdm

PROGRESS_ENV = "WORSTENROLL_PROGRESS"
VALID_MODES = frozenset({"progress", "compact", "disabled"})
DEFAULT_MODE = "progress"


def default_progress_mode() -> str:
    mode = (os.getenv(PROGRESS_ENV) or DEFAULT_MODE).strip().lower()
    return mode if mode in VALID_MODES else DEFAULT_MODE


def resolve_mode(mode: Optional[str]) -> str:
    """
    Effective display mode.

    ``None`` defers to the environment. A live bar is only drawn on an
    interactive console; elsewhere it becomes ``compact``.

    Raises:
        ValueError: If ``mode`` is not a known mode
    """
    if mode is None:
        resolved = default_progress_mode()
    else:
        resolved = mode.lower()
        if resolved not in VALID_MODES:
            raise ValueError(
                f"Invalid progress mode '{mode}'. "
                f"Must be one of: {', '.join(sorted(VALID_MODES))}"
            )
    if resolved == "progress" and _is_non_interactive():
        return "compact"
    return resolved


def _format_value(value: Any) -> str:
    return f"{value:.2f}" if isinstance(value, float) else str(value)


class ProgressBar:
    """
    Counter over a known number of work items.

    Example:
        with ProgressBar(n_epochs, "train", unit="epoch") as bar:
            for epoch in range(n_epochs):
                ...
                bar.set_postfix(dev=dev_loss)
                bar.update()
    """

    def __init__(
        self,
        total: int,
        desc: str = "",
        mode: Optional[str] = None,
        unit: str = "it",
        position: Optional[int] = None,
        leave: bool = True,
    ):
        self.total = total
        self.desc = desc
        self.unit = unit
        self.mode = resolve_mode(mode)
        self.done = 0
        self.postfix: Dict[str, str] = {}
        self._started = monotonic()
        self.pbar: Optional[Any] = None
        if self.mode == "progress":
            self.pbar = tqdm(
                total=total,
                desc=desc,
                unit=unit,
                dynamic_ncols=True,
                position=position or 0,
                leave=leave,
            )

    def update(self, n: int = 1) -> None:
        self.done += n
        if self.pbar is not None:
            self.pbar.update(n)

    def set_postfix(self, **values: Any) -> None:
        """Trailing ``key=value`` fields; floats are shown with two decimals."""
        self.postfix = {k: _format_value(v) for k, v in values.items()}
        if self.pbar is not None:
            self.pbar.set_postfix(self.postfix)

    def summary(self) -> str:
        """One-line account of the work done so far."""
        elapsed = monotonic() - self._started
        line = f"{self.desc or 'progress'}: {self.done}/{self.total} {self.unit} in {elapsed:.1f}s"
        if self.postfix:
            line += " [" + ", ".join(f"{k}={v}" for k, v in self.postfix.items()) + "]"
        return line

    def close(self) -> None:
        if self.pbar is not None:
            self.pbar.close()
            self.pbar = None
        elif self.mode == "compact":
            print(self.summary(), file=sys.stderr)
            # a second close must not print again
            self.mode = "disabled"

    def __enter__(self) -> "ProgressBar":
        return self

    def __exit__(self, exc_type: object, exc_val: object, exc_tb: object) -> None:
        self.close()


def _is_non_interactive() -> bool:
    """True inside JetBrains run consoles or when stderr is not a TTY."""
    if os.getenv("PYCHARM_HOSTED") or os.getenv("JETBRAINS_IDE"):
        return True
    isatty = getattr(sys.stderr, "isatty", None)
    try:
        return not (isatty and isatty())
    except ValueError:
        # closed stream
        return True
