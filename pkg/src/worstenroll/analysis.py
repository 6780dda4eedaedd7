"""
Evaluation orchestration, worst-enrollment reporting and embedding analysis.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import torch

from .audio import Waveform, read_wav
from .exceptions import (
    ConfigError,
    DegenerateError,
    EmptyInputError,
    EvaluationError,
    InsufficientClassesError,
    WorstEnrollError,
)
from .logging import get_logger
from .manifest import DatasetManifest, MixtureRecord
from .metrics import (
    DEFAULT_FAILURE_THRESHOLD_DB,
    EvalMatrix,
    WorstEnrollmentReport,
    sdri,
    worst_enrollment_report,
)
from .model import TSEModel, separate
from .progress import ProgressBar
from .utils import map_ordered

_logger = get_logger("analysis")

COMPARISON_TABLE_NAME = "comparison.tsv"
COMPARISON_JSON_NAME = "comparison.json"
WORST_PERCENTILES_NAME = "worst_enrollment_percentiles.tsv"
NTH_WORST_SUFFIX = ".nth_worst.tsv"


# --- evaluation --------------------------------------------------------------


def _evaluate_mixture(
    model: TSEModel, manifest: DatasetManifest, record: MixtureRecord, numerator: str
) -> List[float]:
    enrollment_id = None
    try:
        mixture = read_wav(manifest.resolve(record.mixture_path))
        target = read_wav(manifest.resolve(record.target_path))
        row = []
        for enrollment_id, path in zip(record.enrollment_ids, record.enrollment_paths):
            enrollment = read_wav(manifest.resolve(path))
            estimate = separate(model, mixture, enrollment)
            row.append(sdri(target, estimate, mixture, numerator))
        return row
    except (WorstEnrollError, RuntimeError, ValueError) as e:
        raise EvaluationError(str(e), record.mixture_id, enrollment_id) from e


def build_eval_matrix(
    model: TSEModel,
    manifest: DatasetManifest,
    split: str = "eval",
    numerator: str = "reference",
    max_workers: Optional[int] = None,
    progress_mode: Optional[str] = None,
) -> EvalMatrix:
    """
    Run TSE with every enrollment candidate of every mixture in a split.

    Args:
        model: Trained (or freshly initialized) network
        manifest: Dataset manifest
        split: Split to evaluate
        numerator: SDR numerator convention
        max_workers: Thread pool size over mixtures
        progress_mode: Progress display mode

    Returns:
        EvalMatrix of SDRi, one row per mixture in manifest order

    Raises:
        EvaluationError: With the mixture and enrollment ids of the failing cell
    """
    records = manifest.split(split)
    model.eval()
    with ProgressBar(len(records), f"eval {split}", mode=progress_mode, unit="mix") as bar:
        rows = map_ordered(
            lambda r: _evaluate_mixture(model, manifest, r, numerator),
            records,
            max_workers=max_workers,
            on_done=bar.update,
        )
    n = records[0].n_enrollments if records else 0
    values = np.asarray(rows, dtype=np.float64).reshape(len(records), n)
    _logger.info(f"Evaluated {len(records)} {split} mixtures x {n} enrollments")
    return EvalMatrix(
        values,
        [r.mixture_id for r in records],
        [list(r.enrollment_ids) for r in records],
    )


# --- speaker discriminability ------------------------------------------------


@dataclass
class EmbeddingSample:
    speaker_id: str
    embedding: npt.NDArray[np.float64]


def collect_embeddings(
    model: TSEModel,
    manifest: DatasetManifest,
    split: str,
    max_workers: Optional[int] = None,
) -> List[EmbeddingSample]:
    """One embedding per distinct enrollment utterance of a split, sorted by utterance id."""
    utterances: Dict[str, Tuple[str, str]] = {}
    for record in manifest.split(split):
        for eid, path in zip(record.enrollment_ids, record.enrollment_paths):
            utterances.setdefault(eid, (record.target_speaker_id, path))
    items = sorted(utterances.items())
    model.eval()

    def embed_one(item: Tuple[str, Tuple[str, str]]) -> EmbeddingSample:
        speaker_id, path = item[1]
        with torch.no_grad():
            e = model.embed(read_wav(manifest.resolve(path)))
        return EmbeddingSample(speaker_id, e.detach().cpu().double().numpy())

    return map_ordered(embed_one, items, max_workers=max_workers)


def variance_ratio(samples: Sequence[EmbeddingSample]) -> float:
    """
    trace(between-class scatter) / trace(within-class scatter).

    Between: Σ_c n_c·‖μ_c - μ‖²; within: Σ_c Σ_i ‖x_i - μ_c‖².

    Raises:
        InsufficientClassesError: Fewer than two speakers, or no speaker
            with two or more samples
        DegenerateError: If the within-class scatter vanishes
    """
    classes: Dict[str, List[npt.NDArray[np.float64]]] = {}
    for sample in samples:
        classes.setdefault(sample.speaker_id, []).append(
            np.asarray(sample.embedding, dtype=np.float64)
        )
    if len(classes) < 2:
        raise InsufficientClassesError(f"need >= 2 speakers, got {len(classes)}")
    if max(len(v) for v in classes.values()) < 2:
        raise InsufficientClassesError("need a speaker with >= 2 samples")

    everything = np.stack([x for group in classes.values() for x in group])
    global_mean = everything.mean(axis=0)
    total = float(np.sum((everything - global_mean) ** 2))
    between = 0.0
    within = 0.0
    for group in classes.values():
        data = np.stack(group)
        mean = data.mean(axis=0)
        between += len(group) * float(np.sum((mean - global_mean) ** 2))
        within += float(np.sum((data - mean) ** 2))
    if within <= 1e-12 * total or total == 0.0:
        raise DegenerateError("within-class scatter is zero")
    return between / within


# --- reports -----------------------------------------------------------------


@dataclass
class SystemReport:
    """Worst-enrollment statistics of one trained system."""

    name: str
    report: WorstEnrollmentReport
    variance_ratio: Optional[float] = None

    @property
    def mean(self) -> float:
        return self.report.overall_mean

    @property
    def worst(self) -> float:
        return self.report.worst.mean

    @property
    def second_worst(self) -> float:
        return self.report.nth(min(2, len(self.report.per_n))).mean

    @property
    def best(self) -> float:
        return self.report.best.mean

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "variance_ratio": self.variance_ratio,
            "report": self.report.to_dict(),
        }


def system_report(
    name: str,
    matrix: EvalMatrix,
    variance: Optional[float] = None,
    threshold_db: float = DEFAULT_FAILURE_THRESHOLD_DB,
) -> SystemReport:
    return SystemReport(name, worst_enrollment_report(matrix, threshold_db), variance)


@dataclass
class Comparison:
    """Side-by-side table plus plot data for several systems."""

    rows: List[Dict[str, Any]]
    nth_worst: Dict[str, List[Dict[str, float]]]
    worst_percentiles: List[Dict[str, Any]]
    baseline: str
    threshold_db: float
    columns: List[str] = field(default_factory=list)

    def to_table(self) -> str:
        """Tab-separated comparison table, one row per system."""
        lines = ["\t".join(self.columns)]
        for row in self.rows:
            lines.append("\t".join(_cell(row[c]) for c in self.columns))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, output_dir: Union[str, Path]) -> List[Path]:
        """Write the table, the JSON document and the plot-data files."""
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in (
            (COMPARISON_TABLE_NAME, self.to_table()),
            (COMPARISON_JSON_NAME, self.to_json()),
            (WORST_PERCENTILES_NAME, self._worst_percentiles_text()),
        ):
            written.append(_write_text(out / name, text))
        for system, records in self.nth_worst.items():
            written.append(
                _write_text(out / f"{system}{NTH_WORST_SUFFIX}", _nth_worst_text(system, records))
            )
        return written

    def _worst_percentiles_text(self) -> str:
        header = ["system", "n_mixtures", "p5", "p25", "p50", "p75", "p95", "failure_ratio"]
        lines = ["# series: worst-enrollment SDRi percentiles per system", "\t".join(header)]
        for row in self.worst_percentiles:
            lines.append("\t".join(_cell(row[c]) for c in header))
        return "\n".join(lines) + "\n"


PLOT_COLUMNS = ["n", "mean", "failure_ratio", "p5", "p25", "p50", "p75", "p95"]


def _nth_worst_text(system: str, records: List[Dict[str, float]]) -> str:
    lines = [f"# series: n-th worst SDRi of {system}", "\t".join(PLOT_COLUMNS)]
    for record in records:
        lines.append("\t".join(_cell(record[c]) for c in PLOT_COLUMNS))
    return "\n".join(lines) + "\n"


def _cell(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _write_text(path: Path, text: str) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path


def compare_systems(reports: Sequence[SystemReport]) -> Comparison:
    """
    Tabulate systems against the first one (the baseline).

    Raises:
        EmptyInputError: If no reports are given
    """
    if not reports:
        raise EmptyInputError("compare_systems needs at least one report")
    base = reports[0]
    columns = [
        "system",
        "mean_sdri",
        "mean_std",
        "worst",
        "second_worst",
        "best",
        "failure_mean",
        "failure_worst",
        "failure_best",
        "variance_ratio",
        "delta_worst",
        "delta_worst_p5",
        "failure_mean_rel_change",
    ]
    rows = []
    nth_worst: Dict[str, List[Dict[str, float]]] = {}
    worst_percentiles = []
    for r in reports:
        base_fr = base.report.overall_failure_ratio
        rel_change = (
            (r.report.overall_failure_ratio - base_fr) / base_fr if base_fr > 0 else None
        )
        rows.append(
            {
                "system": r.name,
                "mean_sdri": r.mean,
                "mean_std": r.report.mean_std_label(),
                "worst": r.worst,
                "second_worst": r.second_worst,
                "best": r.best,
                "failure_mean": r.report.overall_failure_ratio,
                "failure_worst": r.report.worst.failure_ratio,
                "failure_best": r.report.best.failure_ratio,
                "variance_ratio": r.variance_ratio,
                "delta_worst": r.worst - base.worst,
                "delta_worst_p5": r.report.worst.percentiles.p5
                - base.report.worst.percentiles.p5,
                "failure_mean_rel_change": rel_change,
            }
        )
        nth_worst[r.name] = [
            {
                "n": stats.n,
                "mean": stats.mean,
                "failure_ratio": stats.failure_ratio,
                **asdict(stats.percentiles),
            }
            for stats in r.report.per_n
        ]
        worst_percentiles.append(
            {
                "system": r.name,
                "n_mixtures": r.report.n_mixtures,
                **asdict(r.report.worst.percentiles),
                "failure_ratio": r.report.worst.failure_ratio,
            }
        )
    return Comparison(
        rows=rows,
        nth_worst=nth_worst,
        worst_percentiles=worst_percentiles,
        baseline=base.name,
        threshold_db=base.report.threshold_db,
        columns=columns,
    )


def render_plots(comparison: Comparison, output_dir: Union[str, Path]) -> List[Path]:
    """
    Render box plots from the comparison's plot data.

    One figure of n-th worst SDRi per system and one figure of
    worst-enrollment SDRi across systems. Whiskers mark the 5th and 95th
    percentiles.

    Raises:
        ConfigError: If matplotlib is not installed
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as e:
        raise ConfigError(
            "Plot rendering requires matplotlib (pip install 'worstenroll[plot]')"
        ) from e

    def box(label: Any, stats: Dict[str, Any]) -> Dict[str, Any]:
        return {
            "label": str(label),
            "whislo": stats["p5"],
            "q1": stats["p25"],
            "med": stats["p50"],
            "q3": stats["p75"],
            "whishi": stats["p95"],
            "fliers": [],
        }

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for system, records in comparison.nth_worst.items():
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.bxp([box(r["n"], r) for r in records], showfliers=False)
        for position, r in enumerate(records, start=1):
            ax.annotate(
                f"{r['failure_ratio']:.2f}",
                (position, r["p95"]),
                ha="center",
                va="bottom",
                fontsize=7,
                color="tab:blue",
            )
        ax.axhline(comparison.threshold_db, color="gray", linestyle=":", linewidth=1)
        ax.set_xlabel("n-th worst enrollment")
        ax.set_ylabel("SDRi [dB]")
        ax.set_title(system)
        path = out / f"{system}.nth_worst.png"
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bxp([box(r["system"], r) for r in comparison.worst_percentiles], showfliers=False)
    ax.axhline(comparison.threshold_db, color="gray", linestyle=":", linewidth=1)
    ax.set_ylabel("worst-enrollment SDRi [dB]")
    path = out / "worst_enrollment_percentiles.png"
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def save_variance_ratio(path: Union[str, Path], value: Optional[float], split: str) -> Path:
    return _write_text(
        Path(path),
        json.dumps({"split": split, "variance_ratio": value}, sort_keys=True) + "\n",
    )


def load_variance_ratio(path: Union[str, Path]) -> Optional[float]:
    """Variance ratio stored next to an eval matrix, or None when absent."""
    p = Path(path)
    if not p.is_file():
        return None
    with open(p, encoding="utf-8") as f:
        value = json.load(f).get("variance_ratio")
    return None if value is None else float(value)


# --- checks ------------------------------------------------------------------


@dataclass
class InterfererSwap:
    """Mean SDRi when the interferer's enrollment conditions the model."""

    sdri_interferer: float
    sdri_target: float
    n_mixtures: int


def interferer_swap_sdri(
    model: TSEModel,
    manifest: DatasetManifest,
    split: str = "dev",
    numerator: str = "reference",
) -> InterfererSwap:
    """
    Condition each mixture on an enrollment of its interferer.

    The interferer's enrollment is the first candidate of any mixture in
    the split where that speaker is the target. Mixtures whose interferer
    is never a target are skipped.

    Raises:
        EmptyInputError: If no mixture can be evaluated
    """
    records = manifest.split(split)
    enrollment_of: Dict[str, str] = {}
    for record in records:
        if record.enrollment_paths:
            enrollment_of.setdefault(record.target_speaker_id, record.enrollment_paths[0])

    model.eval()
    toward_interferer = []
    toward_target = []
    for record in records:
        path = enrollment_of.get(record.interferer_speaker_id)
        if path is None:
            continue
        mixture = read_wav(manifest.resolve(record.mixture_path))
        estimate: Waveform = separate(model, mixture, read_wav(manifest.resolve(path)))
        interferer = read_wav(manifest.resolve(record.interferer_path))
        target = read_wav(manifest.resolve(record.target_path))
        toward_interferer.append(sdri(interferer, estimate, mixture, numerator))
        toward_target.append(sdri(target, estimate, mixture, numerator))
    if not toward_interferer:
        raise EmptyInputError(f"no {split} mixture has an interferer with enrollments")
    return InterfererSwap(
        float(np.mean(toward_interferer)),
        float(np.mean(toward_target)),
        len(toward_interferer),
    )


def seedwise_median_difference(
    treatment: Sequence[float], control: Sequence[float]
) -> float:
    """
    Median over seeds of (treatment - control).

    Raises:
        EmptyInputError: If no seeds are given
    """
    if len(treatment) != len(control):
        raise ValueError(
            f"one value per seed on both sides: {len(treatment)} != {len(control)}"
        )
    if not treatment:
        raise EmptyInputError("no seeds to aggregate")
    diffs = np.asarray(treatment, dtype=np.float64) - np.asarray(control, dtype=np.float64)
    return float(np.median(diffs))
