"""
SDR, SDR improvement and worst-enrollment aggregation.

Every statistic here treats higher values as better.
"""

import csv
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import numpy.typing as npt

from .audio import Waveform
from .exceptions import (
    EmptyInputError,
    LengthError,
    MatrixFormatError,
    NthWorstIndexError,
    ZeroReferenceError,
)
from .utils import ensure_parent_dir

SDR_CAP_DB = 60.0
DEFAULT_FAILURE_THRESHOLD_DB = 5.0
SDR_NUMERATORS = ("reference", "estimate")
PERCENTILES = (5, 25, 50, 75, 95)
MATRIX_FORMAT = "worstenroll-eval-matrix v1"

ArrayLike = Union[Waveform, npt.ArrayLike]


def _samples(x: ArrayLike) -> npt.NDArray[np.float64]:
    if isinstance(x, Waveform):
        return x.samples
    return np.asarray(x, dtype=np.float64).reshape(-1)


def sdr(
    reference: ArrayLike,
    estimate: ArrayLike,
    numerator: str = "reference",
    cap_db: float = SDR_CAP_DB,
) -> float:
    """
    Scale-dependent source-to-distortion ratio in dB.

    Args:
        reference: Ground-truth signal S
        estimate: Estimated signal Ŝ
        numerator: "reference" uses ‖S‖² (BSS Eval convention),
                   "estimate" uses ‖Ŝ‖²
        cap_db: Result is clipped to [-cap_db, +cap_db]

    Raises:
        LengthError: If the signals differ in length
        ZeroReferenceError: If the reference is silent
    """
    s = _samples(reference)
    s_hat = _samples(estimate)
    if s.shape != s_hat.shape:
        raise LengthError(f"Length mismatch: {s.shape[0]} != {s_hat.shape[0]}")
    if numerator not in SDR_NUMERATORS:
        raise ValueError(f"numerator must be one of {SDR_NUMERATORS}, got {numerator!r}")
    ref_energy = float(np.dot(s, s))
    if ref_energy == 0.0:
        raise ZeroReferenceError("SDR is undefined for a silent reference")
    num = ref_energy if numerator == "reference" else float(np.dot(s_hat, s_hat))
    err = s - s_hat
    err_energy = float(np.dot(err, err))
    if err_energy == 0.0:
        return cap_db
    if num == 0.0:
        return -cap_db
    value = 10.0 * math.log10(num / err_energy)
    return float(min(max(value, -cap_db), cap_db))


def sdri(
    reference: ArrayLike,
    estimate: ArrayLike,
    mixture: ArrayLike,
    numerator: str = "reference",
) -> float:
    """SDR of the estimate minus SDR of the unprocessed mixture."""
    return sdr(reference, estimate, numerator) - sdr(reference, mixture, numerator)


def nth_worst(values: Sequence[float], n: int) -> float:
    """
    The n-th smallest value (n = 1 is the worst, n = len(values) the best).

    Raises:
        NthWorstIndexError: If n is outside 1..len(values)
    """
    if not 1 <= n <= len(values):
        raise NthWorstIndexError(f"n={n} outside 1..{len(values)}")
    return float(np.sort(np.asarray(values, dtype=np.float64))[n - 1])


def failure_ratio(
    sdri_values: Sequence[float], threshold_db: float = DEFAULT_FAILURE_THRESHOLD_DB
) -> float:
    """
    Fraction of values strictly below ``threshold_db``.

    Raises:
        EmptyInputError: If no values are given
    """
    values = np.asarray(sdri_values, dtype=np.float64)
    if values.size == 0:
        raise EmptyInputError("failure_ratio of an empty list")
    return float(np.count_nonzero(values < threshold_db) / values.size)


@dataclass(frozen=True)
class Percentiles:
    p5: float
    p25: float
    p50: float
    p75: float
    p95: float

    def as_tuple(self) -> tuple:
        return (self.p5, self.p25, self.p50, self.p75, self.p95)


def percentile_summary(values: Sequence[float]) -> Percentiles:
    """
    5th/25th/50th/75th/95th percentiles, linear interpolation between ranks.

    Raises:
        EmptyInputError: If no values are given
    """
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        raise EmptyInputError("percentile_summary of an empty list")
    p = np.percentile(data, PERCENTILES, method="linear")
    return Percentiles(*(float(v) for v in p))


@dataclass
class EvalMatrix:
    """
    SDRi per mixture (rows) and enrollment candidate (columns).

    Each row carries its own enrollment ids since candidates differ per
    mixture.
    """

    values: npt.NDArray[np.float64]
    mixture_ids: List[str]
    enrollment_ids: List[List[str]]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("EvalMatrix values must be 2-D")
        rows, cols = self.values.shape
        if len(self.mixture_ids) != rows or len(self.enrollment_ids) != rows:
            raise ValueError("one mixture id and one enrollment id row per matrix row")
        if any(len(ids) != cols for ids in self.enrollment_ids):
            raise ValueError("every row needs exactly N enrollment ids")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("EvalMatrix values must be finite")

    @property
    def n_mixtures(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_enrollments(self) -> int:
        return int(self.values.shape[1])

    def to_text(self) -> str:
        """Tab-separated table with a format comment line."""
        buffer = io.StringIO()
        buffer.write(f"# {MATRIX_FORMAT}\n")
        writer = csv.writer(buffer, delimiter="\t", lineterminator="\n")
        n = self.n_enrollments
        writer.writerow(
            ["mixture_id"]
            + [f"sdri_{i + 1}" for i in range(n)]
            + [f"enrollment_{i + 1}" for i in range(n)]
        )
        for mid, row, ids in zip(self.mixture_ids, self.values, self.enrollment_ids):
            writer.writerow([mid] + [repr(float(v)) for v in row] + list(ids))
        return buffer.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "EvalMatrix":
        """
        Parse the output of ``to_text``.

        Raises:
            MatrixFormatError: With the offending line number
        """
        lines = text.splitlines()
        if not lines or lines[0].strip() != f"# {MATRIX_FORMAT}":
            raise MatrixFormatError(f"missing '# {MATRIX_FORMAT}' header", line=1)
        if len(lines) < 2:
            raise MatrixFormatError("missing column header", line=2)
        header = lines[1].split("\t")
        if header[0] != "mixture_id" or (len(header) - 1) % 2 != 0 or len(header) < 3:
            raise MatrixFormatError("malformed column header", line=2)
        n = (len(header) - 1) // 2
        mixture_ids: List[str] = []
        rows: List[List[float]] = []
        enrollment_ids: List[List[str]] = []
        for line_no, line in enumerate(lines[2:], start=3):
            if not line.strip():
                continue
            cells = line.split("\t")
            if len(cells) != 1 + 2 * n:
                raise MatrixFormatError(
                    f"expected {1 + 2 * n} columns, found {len(cells)}", line=line_no
                )
            try:
                row = [float(c) for c in cells[1 : 1 + n]]
            except ValueError as e:
                raise MatrixFormatError(f"non-numeric SDRi: {e}", line=line_no) from e
            if not all(math.isfinite(v) for v in row):
                raise MatrixFormatError("non-finite SDRi", line=line_no)
            mixture_ids.append(cells[0])
            rows.append(row)
            enrollment_ids.append(cells[1 + n :])
        if not rows:
            raise MatrixFormatError("no mixture rows", line=len(lines) + 1)
        values = np.asarray(rows, dtype=np.float64).reshape(len(rows), n)
        return cls(values, mixture_ids, enrollment_ids)

    def save(self, path: Union[str, Path]) -> Path:
        ensure_parent_dir(str(path))
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())
        return Path(path)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EvalMatrix":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


@dataclass(frozen=True)
class NthWorstStats:
    """Aggregate of the n-th worst SDRi over mixtures."""

    n: int
    mean: float
    failure_ratio: float
    percentiles: Percentiles


@dataclass(frozen=True)
class WorstEnrollmentReport:
    """Per-n statistics plus the overall mean ± std over all cells."""

    per_n: List[NthWorstStats]
    overall_mean: float
    overall_std: float
    overall_failure_ratio: float
    threshold_db: float
    n_mixtures: int

    @property
    def worst(self) -> NthWorstStats:
        return self.per_n[0]

    @property
    def best(self) -> NthWorstStats:
        return self.per_n[-1]

    def nth(self, n: int) -> NthWorstStats:
        return self.per_n[n - 1]

    def mean_std_label(self, digits: int = 1) -> str:
        """Mean ± std in the "15.1±3.8" style."""
        return f"{self.overall_mean:.{digits}f}±{self.overall_std:.{digits}f}"

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def worst_enrollment_report(
    matrix: EvalMatrix, threshold_db: float = DEFAULT_FAILURE_THRESHOLD_DB
) -> WorstEnrollmentReport:
    """
    Statistics of the n-th worst SDRi for every n in 1..N.

    Raises:
        EmptyInputError: If the matrix has no rows
    """
    if matrix.n_mixtures == 0:
        raise EmptyInputError("worst_enrollment_report of an empty matrix")
    ordered = np.sort(matrix.values, axis=1)
    per_n = []
    for n in range(1, matrix.n_enrollments + 1):
        column = ordered[:, n - 1]
        per_n.append(
            NthWorstStats(
                n=n,
                mean=float(np.mean(column)),
                failure_ratio=failure_ratio(column, threshold_db),
                percentiles=percentile_summary(column),
            )
        )
    cells = matrix.values.reshape(-1)
    return WorstEnrollmentReport(
        per_n=per_n,
        overall_mean=float(np.mean(cells)),
        overall_std=float(np.std(cells)),
        overall_failure_ratio=failure_ratio(cells, threshold_db),
        threshold_db=float(threshold_db),
        n_mixtures=matrix.n_mixtures,
    )
