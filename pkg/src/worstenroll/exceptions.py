"""
Custom exceptions for worstenroll.
"""

from typing import Optional


class WorstEnrollError(Exception):
    """Base exception for worstenroll."""

    pass


class ConfigError(WorstEnrollError):
    """Raised when a configuration value or file is invalid."""

    pass


# --- signals -----------------------------------------------------------------


class ZeroPowerError(WorstEnrollError):
    """Raised when a ratio cannot be realized because a signal has zero power."""

    pass


class LengthError(WorstEnrollError):
    """Raised when signal lengths are empty or do not match."""

    pass


class FormatError(WorstEnrollError):
    """Raised for multi-channel or unsupported WAV encodings."""

    pass


class WavIOError(WorstEnrollError, OSError):
    """Raised when a WAV file cannot be read or written."""

    pass


# --- data generation ---------------------------------------------------------


class DurationError(WorstEnrollError):
    """Raised when a requested duration yields less than one sample."""

    pass


class InsufficientUtterancesError(WorstEnrollError):
    """Raised when a speaker cannot furnish enough enrollment candidates."""

    pass


class ManifestError(WorstEnrollError):
    """Raised when a dataset manifest is missing, malformed or inconsistent."""

    pass


# --- metrics -----------------------------------------------------------------


class ZeroReferenceError(WorstEnrollError):
    """Raised when SDR is requested against a silent reference."""

    pass


class EmptyInputError(WorstEnrollError):
    """Raised when an aggregate is requested over no values."""

    pass


class NthWorstIndexError(WorstEnrollError, IndexError):
    """Raised when the requested rank is outside 1..len(values)."""

    pass


class MatrixFormatError(WorstEnrollError):
    """Raised when a serialized evaluation matrix cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# --- model and training ------------------------------------------------------


class TooShortError(WorstEnrollError):
    """Raised when a waveform is shorter than one encoder frame."""

    pass


class ShapeError(WorstEnrollError):
    """Raised when tensor shapes disagree with the model configuration."""

    pass


class EmptyEnrollmentSetError(WorstEnrollError):
    """Raised when sampling from an empty enrollment set."""

    pass


class SubsetTooLargeError(WorstEnrollError):
    """Raised when K exceeds the number of enrollment candidates."""

    pass


class LabelOutOfRangeError(WorstEnrollError):
    """Raised when a speaker label is outside the SI head's range."""

    pass


class DivergenceError(WorstEnrollError):
    """Raised when the training loss becomes non-finite."""

    pass


# --- analysis ----------------------------------------------------------------


class DegenerateError(WorstEnrollError):
    """Raised when within-class scatter vanishes."""

    pass


class InsufficientClassesError(WorstEnrollError):
    """Raised when fewer than two classes (or no repeated class) are given."""

    pass


class EvaluationError(WorstEnrollError):
    """Raised when a single evaluation cell fails."""

    def __init__(
        self,
        message: str,
        mixture_id: Optional[str] = None,
        enrollment_id: Optional[str] = None,
    ):
        self.mixture_id = mixture_id
        self.enrollment_id = enrollment_id
        super().__init__(
            f"{message} (mixture={mixture_id}, enrollment={enrollment_id})"
        )


# --- cli ---------------------------------------------------------------------


class WorkdirLockedError(WorstEnrollError):
    """Raised when another process holds the run directory lock."""

    pass
