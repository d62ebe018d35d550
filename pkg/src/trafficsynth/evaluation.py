"""Scoring of counting predictions against segment labels.

Regression outputs are rounded to the nearest integer (half away from
zero, negatives clamped to zero); per-category accuracy is the fraction
of segments with an exact count match; MAE_mis is the mean absolute count
error over the mismatched segments only, so its lower bound is 1 and it
is undefined when every segment matches.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .composer import CATEGORY_NAMES
from .errors import DomainError

CLASS_NAMES = ("car", "cv")
_CLASS_CATEGORIES = {"car": (0, 1), "cv": (2, 3)}

MERGE_MODES = ("mean", "joint")


def round_predictions(pred) -> np.ndarray:
    """Round 4 real counts half-away-from-zero, then clamp negatives to 0."""
    values = np.asarray(pred, dtype=float)
    if values.shape[-1] != 4:
        raise DomainError("a prediction holds exactly 4 values")
    if not np.all(np.isfinite(values)):
        raise DomainError("prediction values must be finite")
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.maximum(rounded, 0.0).astype(int)


def _check_pair(preds: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    preds = np.atleast_2d(np.asarray(preds))
    labels = np.atleast_2d(np.asarray(labels))
    if preds.shape != labels.shape or preds.ndim != 2 or preds.shape[1] != 4:
        raise DomainError("predictions and labels must both be (n_segments, 4)")
    if preds.shape[0] < 1:
        raise DomainError("need at least one segment")
    return preds, labels


def accuracy(preds, labels) -> dict[str, float]:
    """Per-category exact-match fraction over rounded integer counts."""
    preds, labels = _check_pair(preds, labels)
    matches = preds == labels
    return {name: float(matches[:, k].mean()) for k, name in enumerate(CATEGORY_NAMES)}


def mae_misclassified(preds, labels) -> dict[str, float | None]:
    """Per-category MAE over mismatched segments; None when all match."""
    preds, labels = _check_pair(preds, labels)
    out: dict[str, float | None] = {}
    for k, name in enumerate(CATEGORY_NAMES):
        errors = np.abs(preds[:, k] - labels[:, k])
        wrong = errors > 0
        out[name] = float(errors[wrong].mean()) if np.any(wrong) else None
    return out


def merge_directions(preds, labels, mode: str = "mean") -> dict[str, float]:
    """Per-class accuracy with directions merged.

    mode="mean": arithmetic mean of the class's two per-direction
    accuracies. mode="joint": exact match over the direction-summed counts
    (the alternative reading, kept behind this switch for comparison).
    """
    if mode not in MERGE_MODES:
        raise DomainError(f"merge mode must be one of {MERGE_MODES}")
    preds, labels = _check_pair(preds, labels)
    merged: dict[str, float] = {}
    if mode == "mean":
        acc = accuracy(preds, labels)
        for cls, (i, j) in _CLASS_CATEGORIES.items():
            merged[cls] = (acc[CATEGORY_NAMES[i]] + acc[CATEGORY_NAMES[j]]) / 2.0
    else:
        for cls, (i, j) in _CLASS_CATEGORIES.items():
            p = preds[:, i] + preds[:, j]
            l = labels[:, i] + labels[:, j]
            merged[cls] = float((p == l).mean())
    return merged


@dataclass(frozen=True)
class EvalReport:
    """Counting metrics for one evaluation (one fold)."""

    accuracy: dict[str, float]
    mae_mis: dict[str, float | None]
    merged_accuracy: dict[str, float]
    n_segments: int
    merge_mode: str = "mean"

    def __post_init__(self):
        for v in self.accuracy.values():
            if not (0.0 <= v <= 1.0):
                raise DomainError("accuracy values must be in [0, 1]")
        for v in self.mae_mis.values():
            if v is not None and v < 1.0 - 1e-12:
                raise DomainError("defined MAE_mis values cannot be below 1")

    def to_dict(self) -> dict:
        return {
            "n_segments": self.n_segments,
            "accuracy": dict(self.accuracy),
            "mae_mis": dict(self.mae_mis),
            "merged_accuracy": dict(self.merged_accuracy),
            "merge_mode": self.merge_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            accuracy=dict(d["accuracy"]),
            mae_mis={k: (None if v is None else float(v)) for k, v in d["mae_mis"].items()},
            merged_accuracy=dict(d["merged_accuracy"]),
            n_segments=int(d["n_segments"]),
            merge_mode=d.get("merge_mode", "mean"),
        )


def evaluate_counts(raw_preds, labels, merge_mode: str = "mean") -> EvalReport:
    """Round raw regression outputs and compute the full report."""
    raw = np.atleast_2d(np.asarray(raw_preds, dtype=float))
    rounded = round_predictions(raw)
    labels = np.atleast_2d(np.asarray(labels, dtype=int))
    _check_pair(rounded, labels)
    return EvalReport(
        accuracy=accuracy(rounded, labels),
        mae_mis=mae_misclassified(rounded, labels),
        merged_accuracy=merge_directions(rounded, labels, mode=merge_mode),
        n_segments=int(labels.shape[0]),
        merge_mode=merge_mode,
    )


def aggregate_folds(reports: list[EvalReport]) -> dict[str, dict[str, float | None]]:
    """Mean/min/max per metric across folds.

    MAE_mis aggregates over the folds where it is defined; if undefined in
    every fold the aggregate is None.
    """
    if not reports:
        raise DomainError("need at least one fold report")

    def stat(values: list[float]) -> dict[str, float]:
        return {"mean": float(np.mean(values)), "min": float(np.min(values)), "max": float(np.max(values))}

    out: dict[str, dict[str, float | None]] = {}
    for name in CATEGORY_NAMES:
        out[f"accuracy.{name}"] = stat([r.accuracy[name] for r in reports])
        defined = [r.mae_mis[name] for r in reports if r.mae_mis[name] is not None]
        out[f"mae_mis.{name}"] = stat(defined) if defined else {"mean": None, "min": None, "max": None}
    for cls in CLASS_NAMES:
        out[f"merged_accuracy.{cls}"] = stat([r.merged_accuracy[cls] for r in reports])
    return out


def save_report(path: str | Path, report: EvalReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def load_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def save_fold_reports(path: str | Path, reports: list[EvalReport]) -> None:
    """One record per fold plus the aggregate, as a single JSON document."""
    doc = {
        "folds": [r.to_dict() for r in reports],
        "aggregate": aggregate_folds(reports),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
