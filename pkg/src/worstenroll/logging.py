"""
Logging configuration for worstenroll.

The package logs to ``worstenroll.*`` loggers and stays silent until
``configure_logging`` is called. Training runs additionally mirror their
log into the run directory through ``log_to_file``.
"""

import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, TextIO, Union

logger = logging.getLogger("worstenroll")
logger.addHandler(logging.NullHandler())

LOG_LEVEL_ENV = "WORSTENROLL_LOG_LEVEL"
DEFAULT_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

LevelLike = Union[int, str, None]


def parse_level(value: LevelLike, default: int = logging.INFO) -> int:
    """
    Level from an int, a numeric string or a case-insensitive name.

    Unknown or empty values give ``default``.
    """
    if value is None:
        return default
    if isinstance(value, int):
        return value
    text = value.strip()
    if not text:
        return default
    if text.isdigit():
        return int(text)
    level = logging.getLevelName(text.upper())
    return level if isinstance(level, int) else default


def level_from_env(default: int = logging.INFO) -> int:
    """Level named by WORSTENROLL_LOG_LEVEL, else ``default``."""
    return parse_level(os.getenv(LOG_LEVEL_ENV), default)


def configure_logging(
    level: LevelLike = logging.INFO,
    format_string: Optional[str] = None,
    stream: Optional[TextIO] = None,
) -> logging.Logger:
    """
    Send worstenroll logs to a stream, replacing earlier stream handlers.

    File handlers added by ``log_to_file`` are kept.

    Args:
        level: Level as int or name (default: INFO)
        format_string: Custom format string (default: DEFAULT_FORMAT)
        stream: Output stream (default: sys.stderr)

    Returns:
        The package logger

    Example:
        configure_logging("DEBUG")
    """
    resolved = parse_level(level)
    for handler in list(logger.handlers):
        if not isinstance(handler, logging.FileHandler):
            logger.removeHandler(handler)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setLevel(resolved)
    handler.setFormatter(logging.Formatter(format_string or DEFAULT_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(resolved)
    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """Package logger, or its child ``worstenroll.<name>``."""
    if name:
        return logger.getChild(name)
    return logger


@contextmanager
def log_to_file(path: Union[str, Path], level: LevelLike = logging.DEBUG) -> Iterator[Path]:
    """
    Mirror package logs into ``path`` (appending) while the block runs.

    The package logger level is lowered to ``level`` if needed and
    restored afterwards.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    resolved = parse_level(level, logging.DEBUG)
    handler = logging.FileHandler(target, encoding="utf-8")
    handler.setLevel(resolved)
    handler.setFormatter(logging.Formatter(DEFAULT_FORMAT))

    previous = logger.level
    if previous == logging.NOTSET or previous > resolved:
        logger.setLevel(resolved)
    logger.addHandler(handler)
    try:
        yield target
    finally:
        logger.removeHandler(handler)
        handler.close()
        logger.setLevel(previous)
