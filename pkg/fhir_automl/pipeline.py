"""Preprocessing + estimator pipelines, cross-validation and the train/test split."""

from __future__ import annotations

import hashlib
import pickle
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence, Sized

import joblib
import numpy as np
import pandas as pd
from sklearn.model_selection import KFold, StratifiedKFold
from sklearn.model_selection import train_test_split as sklearn_split

from fhir_automl.estimators import estimator_fit, estimator_predict, get_estimator
from fhir_automl.featurizer import FeatureMatrix
from fhir_automl.model_auditor import score_metric
from fhir_automl.preprocessing import IMPUTE_STRATEGIES, Imputer, MinMax, OneHot
from fhir_automl.problems import LabelTimes

TRANSFORM_STEPS = ("impute", "one_hot", "minmax")
TASK_TYPES = ("binary", "regression")

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """Raised when a pipeline cannot be built, evaluated or restored."""


class DegenerateFold(PipelineError):
    """Raised when no fold yields a defined score for the metric."""


class TooFewRows(PipelineError):
    """Raised when a split is requested over fewer than two rows."""


@dataclass(frozen=True)
class StepSpec:
    primitive: str
    params: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"primitive": self.primitive, "params": dict(self.params)}


@dataclass(frozen=True)
class PipelineSpec:
    steps: tuple[StepSpec, ...]
    task_type: str

    def __post_init__(self) -> None:
        if self.task_type not in TASK_TYPES:
            raise PipelineError(f"unknown task type: {self.task_type}")
        if not self.steps:
            raise PipelineError("pipeline has no steps")
        for step in self.steps[:-1]:
            if step.primitive not in TRANSFORM_STEPS:
                raise PipelineError(f"{step.primitive} is not a transformer step")
        entry = get_estimator(self.steps[-1].primitive)
        if entry.task_type != self.task_type:
            raise PipelineError(
                f"estimator {entry.name} solves {entry.task_type}, not {self.task_type}"
            )

    @property
    def estimator(self) -> StepSpec:
        return self.steps[-1]

    def to_dict(self) -> dict[str, Any]:
        return {"task_type": self.task_type, "steps": [step.to_dict() for step in self.steps]}


def make_pipeline_spec(
    estimator: str,
    params: dict[str, Any],
    task_type: str,
    strategy: str = "mean",
) -> PipelineSpec:
    if strategy not in IMPUTE_STRATEGIES:
        raise PipelineError(f"unknown impute strategy: {strategy}")
    return PipelineSpec(
        steps=(
            StepSpec("impute", {"strategy": strategy}),
            StepSpec("one_hot"),
            StepSpec("minmax"),
            StepSpec(estimator, dict(params)),
        ),
        task_type=task_type,
    )


@dataclass(frozen=True)
class FittedPipeline:
    spec: PipelineSpec
    transformers: tuple[Any, ...]
    estimator: Any
    feature_names: tuple[str, ...]
    metadata: dict[str, Any]

    def transform(self, X: pd.DataFrame) -> np.ndarray:
        missing = [name for name in self.feature_names if name not in X.columns]
        if missing:
            raise PipelineError(f"feature columns missing at predict time: {missing[:5]}")
        frame = X[list(self.feature_names)]
        for transformer in self.transformers:
            frame = transformer.transform(frame)
        return frame.to_numpy(dtype=float)

    def predict(self, X: pd.DataFrame) -> tuple[np.ndarray, np.ndarray | None]:
        return estimator_predict(self.estimator, self.transform(X))

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        temp_path = path.with_suffix(".tmp")
        joblib.dump(self, temp_path)
        temp_path.replace(path)


def load_pipeline(path: Path) -> FittedPipeline:
    try:
        fitted = joblib.load(path)
    except (OSError, EOFError, ValueError, pickle.UnpicklingError) as exc:
        raise PipelineError(f"cannot load model artifact {path}: {exc}") from exc
    if not isinstance(fitted, FittedPipeline):
        raise PipelineError(f"{path} does not hold a fitted pipeline")
    return fitted


def data_hash(X: pd.DataFrame, y: Sequence[Any]) -> str:
    digest = hashlib.sha256()
    digest.update(",".join(map(str, X.columns)).encode("utf-8"))
    digest.update(pd.util.hash_pandas_object(X, index=False).to_numpy().tobytes())
    digest.update(np.asarray(y, dtype=float).tobytes())
    return digest.hexdigest()


def fit_pipeline(
    spec: PipelineSpec, X: pd.DataFrame, y: Sequence[Any], seed: int
) -> FittedPipeline:
    """Fit every step on ``X`` in order; the estimator sees numeric data in [0, 1]."""
    frame = X
    transformers: list[Any] = []
    for step in spec.steps[:-1]:
        transformer = _make_transformer(step)
        frame = transformer.fit(frame).transform(frame)
        transformers.append(transformer)
    estimator = estimator_fit(
        spec.estimator.primitive,
        spec.estimator.params,
        frame.to_numpy(dtype=float),
        np.asarray(y),
        seed,
    )
    metadata = {
        "seed": seed,
        "spec": spec.to_dict(),
        "data_sha256": data_hash(X, y),
        "training_rows": len(X),
    }
    return FittedPipeline(spec, tuple(transformers), estimator, tuple(X.columns), metadata)


@dataclass(frozen=True)
class CrossValidation:
    scores: tuple[float, ...]
    notes: tuple[str, ...] = ()

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def fold_indices(
    y: Sequence[Any], k: int, seed: int, task_type: str
) -> list[tuple[np.ndarray, np.ndarray]]:
    labels = np.asarray(y)
    if k < 2:
        raise PipelineError("cross-validation needs k >= 2")
    if len(labels) < k:
        raise TooFewRows(f"{len(labels)} rows cannot fill {k} folds")
    splitter: KFold | StratifiedKFold = KFold(n_splits=k, shuffle=True, random_state=seed)
    if task_type == "binary":
        _, counts = np.unique(labels, return_counts=True)
        # a minority class smaller than k still spreads one row per fold
        if len(counts) > 1 and counts.max() >= k:
            splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    placeholder = np.zeros(len(labels))
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="The least populated class", category=UserWarning)
        return [(train, test) for train, test in splitter.split(placeholder, labels)]


def cross_validate(
    spec: PipelineSpec,
    X: pd.DataFrame,
    y: Sequence[Any],
    k: int,
    metric: str,
    seed: int,
    jobs: int = 1,
) -> CrossValidation:
    """Score ``spec`` on k folds; folds with an undefined score are skipped with a note."""
    labels = np.asarray(y)
    folds = fold_indices(labels, k, seed, spec.task_type)
    slots: list[float | None] = [None] * len(folds)

    def run_fold(fold: int) -> None:
        train, test = folds[fold]
        fitted = fit_pipeline(spec, X.iloc[train], labels[train], fold_seed(seed, fold))
        predictions, scores = fitted.predict(X.iloc[test])
        slots[fold] = score_metric(metric, labels[test], predictions, scores)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            for future in [executor.submit(run_fold, fold) for fold in range(len(folds))]:
                future.result()
    else:
        for fold in range(len(folds)):
            run_fold(fold)

    scores: list[float] = []
    notes: list[str] = []
    for fold, value in enumerate(slots):
        if value is None or np.isnan(value):
            notes.append(f"fold {fold}: {metric} undefined on this fold; skipped")
            continue
        scores.append(float(value))
    if not scores:
        raise DegenerateFold(f"{metric} undefined on every one of {len(folds)} folds")
    for note in notes:
        logger.debug("event=fold_skipped %s", note)
    return CrossValidation(tuple(scores), tuple(notes))


def train_test_split(
    X: Sized,
    y: Sequence[Any],
    ratio: float,
    seed: int,
    task_type: str = "binary",
) -> tuple[np.ndarray, np.ndarray]:
    """Sorted (train, test) row positions; stratified for binary labels where possible."""
    if not 0.0 < ratio < 1.0:
        raise PipelineError(f"train ratio must be in (0, 1); got {ratio}")
    n_rows = len(X)
    if n_rows < 2:
        raise TooFewRows(f"cannot split {n_rows} rows")
    labels = np.asarray(y)
    n_train = max(1, min(n_rows - 1, int(np.floor(ratio * n_rows))))
    n_test = n_rows - n_train
    stratify = None
    if task_type == "binary":
        classes, counts = np.unique(labels, return_counts=True)
        if (
            len(classes) > 1
            and counts.min() >= 2
            and n_test >= len(classes)
            and n_train >= len(classes)
        ):
            stratify = labels
    train, test = sklearn_split(
        np.arange(n_rows),
        train_size=n_train,
        test_size=n_test,
        random_state=seed,
        shuffle=True,
        stratify=stratify,
    )
    return np.sort(train), np.sort(test)


def build_matrix(
    feature_matrix: FeatureMatrix, label_times: LabelTimes
) -> tuple[pd.DataFrame, np.ndarray, np.ndarray]:
    """Align feature rows with labels on (entity_id, cutoff_time).

    Returns the feature frame, the labels and the matrix positions they came from.
    """
    labels = {
        (row.entity_id, pd.Timestamp(row.cutoff_time)): row.label for row in label_times.rows
    }
    positions: list[int] = []
    y: list[Any] = []
    for position, key in enumerate(
        zip(feature_matrix.entity_ids, map(pd.Timestamp, feature_matrix.cutoff_times))
    ):
        if key in labels:
            positions.append(position)
            y.append(labels[key])
    if len(positions) != len(label_times):
        raise PipelineError(
            f"{len(label_times) - len(positions)} labeled rows have no feature row"
        )
    frame = feature_matrix.frame.iloc[positions].reset_index(drop=True)
    dtype = int if label_times.problem.task_type == "binary" else float
    return frame, np.asarray(y, dtype=dtype), np.asarray(positions, dtype=int)


def _make_transformer(step: StepSpec) -> Any:
    if step.primitive == "impute":
        return Imputer(**step.params)
    if step.primitive == "one_hot":
        return OneHot()
    if step.primitive == "minmax":
        return MinMax()
    raise PipelineError(f"unknown transformer step: {step.primitive}")
