"""Checkpoint evaluation on the validation split and the MSE-per-step report."""

from __future__ import annotations

import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from .pipeline import DatasetSplit, dataset_fingerprint
from .regressor import CHECKPOINT_GLOB, Checkpoint, load_arrays, load_checkpoint, predict_features

COLUMNS = ["checkpoint", "avg_mse", "std_mse", "min_mse", "max_mse", "n_samples"]


class EvaluationError(ValueError):
    """Evaluation cannot run or produced an inconsistent report."""


class Units(str, Enum):
    RADIANS_SQUARED = "radians_squared"
    NORMALIZED_SQUARED = "normalized_squared"


class ReportFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


@dataclass(frozen=True)
class EvalRow:
    checkpoint_step: int
    avg_mse: float
    std_mse: float
    min_mse: float
    max_mse: float
    n_samples: int

    def __post_init__(self) -> None:
        if not self.min_mse <= self.avg_mse <= self.max_mse:
            raise EvaluationError(
                f"step {self.checkpoint_step}: avg_mse {self.avg_mse} outside "
                f"[{self.min_mse}, {self.max_mse}]"
            )
        if self.std_mse < 0:
            raise EvaluationError(f"step {self.checkpoint_step}: negative std_mse")

    def to_record(self) -> dict:
        return {
            "checkpoint": self.checkpoint_step,
            "avg_mse": self.avg_mse,
            "std_mse": self.std_mse,
            "min_mse": self.min_mse,
            "max_mse": self.max_mse,
            "n_samples": self.n_samples,
        }


@dataclass
class EvalReport:
    rows: list[EvalRow]
    units: Units = Units.RADIANS_SQUARED
    dataset_fingerprint: str = ""
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.units = Units(self.units)
        steps = [row.checkpoint_step for row in self.rows]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise EvaluationError(f"report steps must be strictly increasing, got {steps}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.to_record() for row in self.rows], columns=COLUMNS)


def score_predictions(
    pred: np.ndarray,
    truth: np.ndarray,
    mins: np.ndarray,
    maxs: np.ndarray,
    units: Units = Units.RADIANS_SQUARED,
    step: int = 0,
) -> EvalRow:
    """Statistics over every (sample, joint) squared error.

    Normalized units divide each residual by its joint's range first; a joint
    with an empty range contributes zero.
    """

    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2:
        raise EvaluationError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.shape[0] == 0:
        raise EvaluationError("validation set is empty")

    residual = pred - truth
    if Units(units) is Units.NORMALIZED_SQUARED:
        span = np.asarray(maxs, dtype=np.float64) - np.asarray(mins, dtype=np.float64)
        safe = np.where(span > 0, span, 1.0)
        residual = np.where(span > 0, residual / safe, 0.0)
    cells = (residual**2).ravel().tolist()

    count = len(cells)
    avg = math.fsum(cells) / count
    std = math.sqrt(math.fsum((c - avg) ** 2 for c in cells) / count)
    low, high = min(cells), max(cells)
    return EvalRow(
        checkpoint_step=step,
        avg_mse=min(max(avg, low), high),
        std_mse=std,
        min_mse=low,
        max_mse=high,
        n_samples=pred.shape[0],
    )


def _log_per_joint(names, pred: np.ndarray, truth: np.ndarray, step: int) -> None:
    per_joint = np.mean((pred - truth) ** 2, axis=0)
    for name, value in zip(names, per_joint):
        logging.debug("Per-joint step=%d joint=%s mse=%.6g", step, name, value)


def evaluate_checkpoint(ckpt: Checkpoint, val: DatasetSplit, units: Units) -> EvalRow:
    if len(val) == 0:
        raise EvaluationError(f"{val.root}: validation split is empty")
    camera = val.manifest.camera
    if (camera.width, camera.height) != (ckpt.image_width, ckpt.image_height):
        raise EvaluationError(
            f"checkpoint step {ckpt.step} was trained on {ckpt.image_width}x"
            f"{ckpt.image_height} images, dataset is {camera.width}x{camera.height}"
        )
    if ckpt.joint_space_fingerprint != val.space.fingerprint:
        raise EvaluationError(
            f"checkpoint step {ckpt.step} joint space does not match the dataset"
        )

    features, truth = load_arrays(val, ckpt.params.down_w, ckpt.params.down_h)
    pred = predict_features(ckpt.params, features)
    row = score_predictions(pred, truth, val.space.mins, val.space.maxs, units, ckpt.step)
    logging.info(
        "Evaluated step=%d avg_mse=%.6g std_mse=%.6g min_mse=%.6g max_mse=%.6g n_samples=%d",
        row.checkpoint_step,
        row.avg_mse,
        row.std_mse,
        row.min_mse,
        row.max_mse,
        row.n_samples,
    )
    if logging.getLogger().isEnabledFor(logging.DEBUG):
        _log_per_joint(val.space.names, pred, truth, ckpt.step)
    return row


def sweep_checkpoints(directory: str | Path, val: DatasetSplit, units: Units) -> EvalReport:
    """One row per readable checkpoint in ``directory``, ascending by step."""

    paths = sorted(Path(directory).glob(CHECKPOINT_GLOB))
    if not paths:
        raise EvaluationError(f"{directory}: no checkpoints found")

    warnings: list[str] = []
    loaded: dict[int, Checkpoint] = {}
    for path in paths:
        try:
            ckpt = load_checkpoint(path)
        except (OSError, ValueError) as exc:
            message = f"skipped {path.name}: {exc}"
            logging.warning("Checkpoint unreadable path=%s error=%s", path, exc)
            warnings.append(message)
            continue
        if ckpt.step in loaded:
            message = f"skipped {path.name}: duplicate step {ckpt.step}"
            logging.warning("Duplicate checkpoint path=%s step=%d", path, ckpt.step)
            warnings.append(message)
            continue
        loaded[ckpt.step] = ckpt

    if not loaded:
        raise EvaluationError(f"{directory}: no readable checkpoints ({len(warnings)} skipped)")

    rows = [evaluate_checkpoint(loaded[step], val, units) for step in sorted(loaded)]
    return EvalReport(rows, Units(units), dataset_fingerprint(val.root), warnings)


def best_checkpoint(report: EvalReport) -> int:
    """Step with the lowest avg_mse; the earliest step wins ties."""

    if not report.rows:
        raise EvaluationError("report has no rows")
    best = min(report.rows, key=lambda row: (row.avg_mse, row.checkpoint_step))
    return best.checkpoint_step


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def render_report(report: EvalReport, fmt: ReportFormat) -> str:
    if not report.rows:
        raise EvaluationError("refusing to emit an empty report")
    if ReportFormat(fmt) is ReportFormat.JSON:
        document = {
            "units": report.units.value,
            "dataset_fingerprint": report.dataset_fingerprint,
            "warnings": report.warnings,
            "rows": [row.to_record() for row in report.rows],
        }
        return json.dumps(document, indent=2) + "\n"

    buffer = io.StringIO()
    buffer.write(f"# units={report.units.value}\n")
    buffer.write(f"# dataset_fingerprint={report.dataset_fingerprint}\n")
    for warning in report.warnings:
        buffer.write(f"# warning={' '.join(warning.split())}\n")
    report.to_frame().to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def emit_report(report: EvalReport, fmt: ReportFormat, out: str | Path | None = None) -> None:
    """Write the report to ``out``, or standard output when ``out`` is None or ``-``."""

    text = render_report(report, fmt)
    if out is None or str(out) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    Path(out).write_text(text, encoding="utf8")
    logging.info("Wrote report path=%s format=%s rows=%d", out, ReportFormat(fmt).value, len(report.rows))


def _rows_from_frame(frame: pd.DataFrame, source: str) -> list[EvalRow]:
    if list(frame.columns) != COLUMNS:
        raise EvaluationError(f"{source}: expected columns {COLUMNS}, got {list(frame.columns)}")
    return [
        EvalRow(
            checkpoint_step=int(record["checkpoint"]),
            avg_mse=float(record["avg_mse"]),
            std_mse=float(record["std_mse"]),
            min_mse=float(record["min_mse"]),
            max_mse=float(record["max_mse"]),
            n_samples=int(record["n_samples"]),
        )
        for record in frame.to_dict(orient="records")
    ]


def load_report(path: str | Path) -> EvalReport:
    """Read a report written by :func:`emit_report` (format chosen by suffix)."""

    path = Path(path)
    text = path.read_text(encoding="utf8")
    if path.suffix.lower() == ".json":
        try:
            document = json.loads(text)
            frame = pd.DataFrame(document["rows"], columns=COLUMNS)
            return EvalReport(
                rows=_rows_from_frame(frame, str(path)),
                units=Units(document.get("units", Units.RADIANS_SQUARED.value)),
                dataset_fingerprint=document.get("dataset_fingerprint", ""),
                warnings=list(document.get("warnings", [])),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise EvaluationError(f"{path}: malformed JSON report ({exc})") from exc

    headers: dict[str, str] = {}
    warnings: list[str] = []
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        key, _, value = line[1:].strip().partition("=")
        if key == "warning":
            warnings.append(value)
        else:
            headers[key] = value
    frame = pd.read_csv(io.StringIO(text), comment="#", float_precision="round_trip")
    return EvalReport(
        rows=_rows_from_frame(frame, str(path)),
        units=Units(headers.get("units", Units.RADIANS_SQUARED.value)),
        dataset_fingerprint=headers.get("dataset_fingerprint", ""),
        warnings=warnings,
    )
