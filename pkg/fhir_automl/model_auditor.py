"""Model evaluation metrics, bootstrap intervals and the run metadata report."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from sklearn.metrics import (
    accuracy_score,
    mean_absolute_error,
    mean_squared_error,
    precision_recall_fscore_support,
    r2_score,
    roc_auc_score,
)

from fhir_automl.assembler import EntitySet
from fhir_automl.featurizer import FeatureMatrix
from fhir_automl.problems import LabelTimes

DEFAULT_BOOTSTRAP_LEVEL = 0.95
MIN_RESAMPLES = 100
SCORE_METRICS = {"auc"}

logger = logging.getLogger(__name__)


class MetricError(ValueError):
    """Raised when metrics cannot be computed for the given inputs."""


class LengthMismatch(MetricError):
    """Raised when truth and prediction vectors differ in length or are empty."""


@dataclass(frozen=True)
class BootstrapInterval:
    low: float | None
    high: float | None
    n_resamples: int
    seed: int
    level: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "low": self.low,
            "high": self.high,
            "n_resamples": self.n_resamples,
            "seed": self.seed,
            "level": self.level,
        }


@dataclass(frozen=True)
class MetricReport:
    task_type: str
    metrics: dict[str, float | None]
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    notes: tuple[str, ...] = ()
    bootstrap: dict[str, BootstrapInterval] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_type": self.task_type,
            "metrics": self.metrics,
            "per_class": self.per_class,
            "notes": list(self.notes),
            "bootstrap": (
                {name: interval.to_dict() for name, interval in self.bootstrap.items()}
                if self.bootstrap is not None
                else None
            ),
        }

    def render_text(self) -> str:
        lines = [f"Model audit ({self.task_type})"]
        for name, value in self.metrics.items():
            rendered = "n/a" if value is None else f"{value:.4f}"
            interval = (self.bootstrap or {}).get(name)
            if interval is not None and interval.low is not None:
                rendered += (
                    f"  [{interval.low:.4f}, {interval.high:.4f}] "
                    f"@{interval.level:.0%} n={interval.n_resamples}"
                )
            lines.append(f"  {name}: {rendered}")
        for label, values in self.per_class.items():
            lines.append(
                f"  class {label}: precision={values['precision']:.4f} "
                f"recall={values['recall']:.4f} f1={values['f1']:.4f}"
            )
        for note in self.notes:
            lines.append(f"  note: {note}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MetadataReport:
    loaded_variables: int
    loaded_resources: int
    training_examples: int
    generated_features: int
    task_type: str
    positive: int | None = None
    negative: int | None = None
    positive_pct: float | None = None
    negative_pct: float | None = None

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "loaded_variables": self.loaded_variables,
            "loaded_resources": self.loaded_resources,
            "training_examples": self.training_examples,
            "generated_features": self.generated_features,
            "task_type": self.task_type,
        }
        if self.positive_pct is not None:
            data.update(
                {
                    "positive": self.positive,
                    "negative": self.negative,
                    "positive_pct": self.positive_pct,
                    "negative_pct": self.negative_pct,
                }
            )
        return data

    def render_text(self) -> str:
        lines = [
            "Metadata report",
            f"  No. of loaded variables: {self.loaded_variables}",
            f"  No. of loaded resources: {self.loaded_resources}",
            f"  No. training examples: {self.training_examples}",
        ]
        if self.positive_pct is not None:
            lines.append(f"  Positive classes ratio (%): {self.positive_pct:.2f}")
            lines.append(f"  Negative classes ratio (%): {self.negative_pct:.2f}")
        lines.append(f"  No. generated features: {self.generated_features}")
        return "\n".join(lines) + "\n"


def classification_metrics(
    y_true: Sequence[Any],
    y_pred: Sequence[Any],
    y_score: Sequence[float] | None = None,
) -> MetricReport:
    truth, predicted = _paired(y_true, y_pred)
    notes: list[str] = []
    labels = sorted(set(truth.tolist()) | set(predicted.tolist()))
    precision, recall, f1, support = precision_recall_fscore_support(
        truth, predicted, labels=labels, zero_division=0
    )
    predicted_counts = {label: int(np.sum(predicted == label)) for label in labels}
    for position, label in enumerate(labels):
        if predicted_counts[label] == 0:
            notes.append(f"class {label} never predicted; precision set to 0")
        if support[position] == 0:
            notes.append(f"class {label} absent from truth; recall set to 0")
    metrics: dict[str, float | None] = {
        "accuracy": float(accuracy_score(truth, predicted)),
        "precision_macro": float(np.mean(precision)),
        "recall_macro": float(np.mean(recall)),
        "f1_macro": float(np.mean(f1)),
    }
    if y_score is not None:
        scores = np.asarray(y_score, dtype=float)
        if len(scores) != len(truth):
            raise LengthMismatch(f"y_score has {len(scores)} values; y_true has {len(truth)}")
        metrics["auc"] = _auc(truth, scores, notes)
    per_class = {
        str(label): {
            "precision": float(precision[position]),
            "recall": float(recall[position]),
            "f1": float(f1[position]),
            "support": int(support[position]),
        }
        for position, label in enumerate(labels)
    }
    return MetricReport("binary", metrics, per_class, tuple(notes))


def regression_metrics(y_true: Sequence[float], y_pred: Sequence[float]) -> MetricReport:
    truth, predicted = _paired(y_true, y_pred)
    truth = truth.astype(float)
    predicted = predicted.astype(float)
    notes: list[str] = []
    r2: float | None
    if len(truth) < 2 or np.all(truth == truth[0]):
        r2 = None
        notes.append("y_true is constant; r2 undefined")
    else:
        r2 = float(r2_score(truth, predicted))
    metrics: dict[str, float | None] = {
        "mse": float(mean_squared_error(truth, predicted)),
        "mae": float(mean_absolute_error(truth, predicted)),
        "r2": r2,
    }
    return MetricReport("regression", metrics, notes=tuple(notes))


def score_metric(
    name: str,
    y_true: Sequence[Any],
    y_pred: Sequence[Any],
    y_score: Sequence[float] | None = None,
) -> float | None:
    """Single optimization score (higher is better); None when undefined."""
    if name == "auc":
        if y_score is None:
            raise MetricError("auc requires scores")
        truth, _ = _paired(y_true, y_score)
        return _auc(truth, np.asarray(y_score, dtype=float), [])
    if name in {"r2", "neg_mse", "neg_mae"}:
        report = regression_metrics(y_true, y_pred)
        if name == "r2":
            return report.metrics["r2"]
        value = report.metrics[name[len("neg_"):]]
        return None if value is None else -value
    report = classification_metrics(y_true, y_pred)
    if name not in report.metrics:
        raise MetricError(f"unknown metric: {name}")
    return report.metrics[name]


def bootstrap_ci(
    metric: str | Callable[[np.ndarray, np.ndarray], float | None],
    y_true: Sequence[Any],
    y_pred_or_score: Sequence[Any],
    n_resamples: int = 1000,
    seed: int = 0,
    level: float = DEFAULT_BOOTSTRAP_LEVEL,
) -> BootstrapInterval:
    """Percentile interval of ``metric`` over paired resamples with replacement."""
    if n_resamples < MIN_RESAMPLES:
        raise MetricError(f"n_resamples must be >= {MIN_RESAMPLES}")
    if not 0.0 < level < 1.0:
        raise MetricError("level must be between 0 and 1")
    truth, other = _paired(y_true, y_pred_or_score)
    if callable(metric):
        evaluate = metric
    elif metric in SCORE_METRICS:
        evaluate = lambda t, s: score_metric(metric, t, s, s)  # noqa: E731
    else:
        evaluate = lambda t, p: score_metric(metric, t, p)  # noqa: E731
    rng = np.random.default_rng(seed)
    samples = rng.integers(0, len(truth), size=(n_resamples, len(truth)))
    values: list[float] = []
    for rows in samples:
        value = evaluate(truth[rows], other[rows])
        if value is not None and not np.isnan(value):
            values.append(float(value))
    if not values:
        return BootstrapInterval(None, None, n_resamples, seed, level)
    tail = (1.0 - level) / 2.0 * 100.0
    low, high = np.percentile(values, [tail, 100.0 - tail])
    return BootstrapInterval(float(low), float(high), n_resamples, seed, level)


def with_bootstrap(
    report: MetricReport,
    y_true: Sequence[Any],
    y_pred: Sequence[Any],
    y_score: Sequence[float] | None,
    n_resamples: int,
    seed: int,
) -> MetricReport:
    intervals: dict[str, BootstrapInterval] = {}
    for name in report.metrics:
        if report.task_type == "regression":
            metric = "neg_mse" if name == "mse" else "neg_mae" if name == "mae" else name
            interval = bootstrap_ci(metric, y_true, y_pred, n_resamples, seed)
            if metric.startswith("neg_") and interval.low is not None:
                interval = BootstrapInterval(
                    -interval.high, -interval.low, n_resamples, seed, interval.level
                )
        elif name == "auc":
            interval = bootstrap_ci("auc", y_true, y_score, n_resamples, seed)
        else:
            interval = bootstrap_ci(name, y_true, y_pred, n_resamples, seed)
        intervals[name] = interval
    return MetricReport(
        report.task_type, report.metrics, report.per_class, report.notes, intervals
    )


def metadata_report(
    entityset: EntitySet, label_times: LabelTimes, feature_matrix: FeatureMatrix
) -> MetadataReport:
    summary = label_times.summary()
    return MetadataReport(
        loaded_variables=sum(len(entity.variables) for entity in entityset.entities.values()),
        loaded_resources=len(entityset.entities),
        training_examples=len(label_times),
        generated_features=len(feature_matrix.features),
        task_type=label_times.problem.task_type,
        positive=summary.get("positive"),
        negative=summary.get("negative"),
        positive_pct=summary.get("positive_pct"),
        negative_pct=summary.get("negative_pct"),
    )


def _auc(truth: np.ndarray, scores: np.ndarray, notes: list[str]) -> float | None:
    if len(np.unique(truth)) < 2:
        notes.append("y_true holds a single class; auc undefined")
        return None
    positive = max(np.unique(truth))
    return float(roc_auc_score(truth == positive, scores))


def _paired(first: Sequence[Any], second: Sequence[Any]) -> tuple[np.ndarray, np.ndarray]:
    left = np.asarray(first)
    right = np.asarray(second)
    if len(left) != len(right):
        raise LengthMismatch(f"lengths differ: {len(left)} vs {len(right)}")
    if len(left) == 0:
        raise LengthMismatch("metrics need at least one row")
    return left, right
