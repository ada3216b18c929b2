"""Stage orchestration: assemble, audit, label, featurize, train, report."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, TypeVar

import numpy as np
import pandas as pd

from fhir_automl.assembler import EntitySet, assemble
from fhir_automl.config import RunConfig, default_metric, parse_duration
from fhir_automl.data_auditor import AuditReport, audit, load_expectations
from fhir_automl.estimators import default_estimators
from fhir_automl.featurizer import (
    FeatureMatrix,
    compute_feature_matrix,
    enumerate_features,
    read_feature_matrix,
)
from fhir_automl.model_auditor import (
    MetadataReport,
    MetricReport,
    classification_metrics,
    metadata_report,
    regression_metrics,
    with_bootstrap,
)
from fhir_automl.pipeline import (
    FittedPipeline,
    build_matrix,
    fit_pipeline,
    load_pipeline,
    make_pipeline_spec,
    train_test_split,
)
from fhir_automl.problems import (
    LabelRow,
    LabelTimes,
    ProblemSpec,
    generate_label_times,
    make_problem,
    read_label_times,
)
from fhir_automl.reports import write_json, write_report
from fhir_automl.schema import SchemaRegistry, load_schema, resolve_schema_path
from fhir_automl.synthetic import generate_synthetic
from fhir_automl.tuning import ModelSelection, select_model, write_trial_log

STAGES = ("assemble", "audit", "label", "featurize", "train", "report")
MANIFEST_NAME = "entityset_manifest.json"
AUDIT_NAME = "audit_report.json"
LABELS_NAME = "label_times.csv"
FEATURES_NAME = "feature_matrix.csv"
FEATURE_DEFS_NAME = "feature_defs.json"
TRIAL_LOG_NAME = "trial_log.csv"
MODEL_NAME = "model.joblib"
TEST_FEATURES_NAME = "test_features.csv"
TEST_LABELS_NAME = "test_label_times.csv"
METRIC_REPORT_NAME = "metric_report.json"
METADATA_REPORT_NAME = "metadata_report.json"
PREDICTIONS_NAME = "predictions.csv"

T = TypeVar("T")


class StageError(RuntimeError):
    """Raised when a stage fails; names the stage and the underlying error."""

    def __init__(self, stage: str, error: BaseException) -> None:
        super().__init__(f"stage {stage} failed: {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


@dataclass(frozen=True)
class TrainResult:
    selection: ModelSelection
    fitted: FittedPipeline
    test_features: FeatureMatrix
    test_labels: LabelTimes


class PipelineOrchestrator:
    def __init__(
        self,
        config: RunConfig,
        logger: logging.Logger | None = None,
    ) -> None:
        self.config = config
        self.logger = logger or logging.getLogger(__name__)

    @property
    def output_dir(self) -> Path:
        return self.config.global_cfg.output_dir

    def artifact(self, name: str) -> Path:
        return self.output_dir / name

    def run(self) -> int:
        """All stages in order; raises StageError naming the first stage that fails."""
        entityset = self.stage("assemble", self.assemble)
        self.stage("audit", lambda: self.audit(entityset))
        label_times = self.stage("label", lambda: self.label(entityset))
        feature_matrix = self.stage("featurize", lambda: self.featurize(entityset, label_times))
        result = self.stage("train", lambda: self.train(feature_matrix, label_times))
        self.stage(
            "report",
            lambda: (
                self.report(result.fitted, result.test_features, result.test_labels),
                self.metadata(entityset, label_times, feature_matrix),
            ),
        )
        self.logger.info("event=run_complete output_dir=%s", self.output_dir)
        return 0

    def stage(self, name: str, action: Callable[[], T]) -> T:
        started = time.perf_counter()
        self.logger.info("event=stage_start stage=%s", name)
        try:
            result = action()
        except StageError:
            raise
        except (ValueError, RuntimeError, OSError, KeyError) as exc:
            self.logger.error("event=stage_failed stage=%s error=%s", name, exc)
            raise StageError(name, exc) from exc
        self.logger.info(
            "event=stage_complete stage=%s elapsed_seconds=%.3f",
            name,
            time.perf_counter() - started,
        )
        return result

    def registry(self) -> SchemaRegistry:
        return load_schema(resolve_schema_path(self.config.data.schema))

    def problem(self) -> ProblemSpec:
        problem = self.config.problem
        return make_problem(
            problem.name,
            target_entity=problem.target_entity,
            offset=parse_duration(problem.offset),
            window=parse_duration(problem.window),
            threshold_days=problem.threshold_days,
            diagnosis_code=problem.diagnosis_code,
            mortality_codes=problem.mortality_codes,
        )

    def assemble(self) -> EntitySet:
        data_dir = self.config.data.data_dir
        if data_dir is None:
            raise ValueError("data.data_dir is not set")
        entityset = assemble(
            data_dir,
            self.registry(),
            strict=self.config.global_cfg.strict,
            jobs=self.config.global_cfg.jobs,
        )
        write_json(self.artifact(MANIFEST_NAME), entityset.to_manifest())
        return entityset

    def audit(self, entityset: EntitySet) -> AuditReport:
        path = self.config.data.expectations
        expectations = load_expectations(path) if path is not None else None
        report = audit(entityset, expectations)
        write_report(self.artifact(AUDIT_NAME), report)
        self.logger.info(
            "event=audit_complete quality=%d distributions=%d violations=%d",
            len(report.quality),
            len(report.distributions),
            report.violation_count,
        )
        return report

    def label(self, entityset: EntitySet) -> LabelTimes:
        label_times = generate_label_times(entityset, self.problem())
        label_times.write_csv(self.artifact(LABELS_NAME))
        return label_times

    def featurize(self, entityset: EntitySet, label_times: LabelTimes) -> FeatureMatrix:
        featurizer = self.config.featurizer
        features = enumerate_features(
            entityset,
            label_times.problem.target_entity,
            featurizer.agg_primitives,
            featurizer.trans_primitives,
            featurizer.max_depth,
            ignore_variables=label_times.problem.ignored_variables,
        )
        matrix = compute_feature_matrix(
            entityset, label_times, features, jobs=self.config.global_cfg.jobs
        )
        matrix.write_csv(self.artifact(FEATURES_NAME), self.artifact(FEATURE_DEFS_NAME))
        return matrix

    def train(self, feature_matrix: FeatureMatrix, label_times: LabelTimes) -> TrainResult:
        automl = self.config.automl
        task_type = label_times.problem.task_type
        metric = automl.metric or default_metric(task_type)
        families = automl.estimators or default_estimators(task_type)
        X, y, positions = build_matrix(feature_matrix, label_times)
        train_rows, test_rows = train_test_split(X, y, automl.train_ratio, automl.seed, task_type)
        X_train = X.iloc[train_rows].reset_index(drop=True)
        y_train = y[train_rows]
        selection = select_model(
            families,
            X_train,
            y_train,
            automl.budget,
            automl.cv_folds,
            metric,
            automl.seed,
            spaces=automl.spaces,
            jobs=self.config.global_cfg.jobs,
        )
        write_trial_log(self.artifact(TRIAL_LOG_NAME), selection.all_trials)
        spec = make_pipeline_spec(selection.family, selection.best.params, task_type)
        fitted = fit_pipeline(spec, X_train, y_train, automl.seed)
        fitted.metadata.update(
            {
                "family": selection.family,
                "metric": metric,
                "cv_mean_score": selection.best.mean_score,
                "best_trial": selection.best.trial_index,
            }
        )
        fitted.save(self.artifact(MODEL_NAME))
        self.logger.info(
            "event=model_selected family=%s trial=%s mean_score=%.6f metric=%s",
            selection.family,
            selection.best.trial_index,
            selection.best.mean_score,
            metric,
        )

        test_positions = positions[test_rows]
        test_features = feature_matrix.take(test_positions)
        test_labels = LabelTimes(
            rows=tuple(
                LabelRow(
                    feature_matrix.entity_ids[position],
                    feature_matrix.cutoff_times[position],
                    _label_value(y[row]),
                )
                for row, position in zip(test_rows, test_positions)
            ),
            problem=label_times.problem,
        )
        test_features.write_csv(self.artifact(TEST_FEATURES_NAME))
        test_labels.write_csv(self.artifact(TEST_LABELS_NAME))
        return TrainResult(selection, fitted, test_features, test_labels)

    def predict(self, fitted: FittedPipeline, feature_matrix: FeatureMatrix) -> pd.DataFrame:
        predictions, scores = fitted.predict(feature_matrix.frame)
        frame = pd.DataFrame(
            {
                "entity_id": list(feature_matrix.entity_ids),
                "cutoff_time": [cutoff.isoformat() for cutoff in feature_matrix.cutoff_times],
                "prediction": predictions,
            }
        )
        if scores is not None:
            frame["score"] = scores
        path = self.artifact(PREDICTIONS_NAME)
        path.parent.mkdir(parents=True, exist_ok=True)
        temp_path = path.with_suffix(".tmp")
        frame.to_csv(temp_path, index=False, lineterminator="\n")
        temp_path.replace(path)
        return frame

    def report(
        self,
        fitted: FittedPipeline,
        test_features: FeatureMatrix,
        test_labels: LabelTimes,
    ) -> MetricReport:
        X, y, _ = build_matrix(test_features, test_labels)
        predictions, scores = fitted.predict(X)
        if test_labels.problem.task_type == "binary":
            report = classification_metrics(y, predictions, scores)
        else:
            report = regression_metrics(y, predictions)
        if self.config.automl.bootstrap:
            report = with_bootstrap(
                report, y, predictions, scores, self.config.automl.bootstrap, self.config.automl.seed
            )
        write_report(self.artifact(METRIC_REPORT_NAME), report)
        return report

    def metadata(
        self,
        entityset: EntitySet,
        label_times: LabelTimes,
        feature_matrix: FeatureMatrix,
    ) -> MetadataReport:
        report = metadata_report(entityset, label_times, feature_matrix)
        write_report(self.artifact(METADATA_REPORT_NAME), report)
        return report

    def load_labels(self, path: Path) -> LabelTimes:
        return read_label_times(path)

    def load_features(self, path: Path, defs_path: Path | None = None) -> FeatureMatrix:
        return read_feature_matrix(path, defs_path or path.with_name(FEATURE_DEFS_NAME))

    def load_model(self, path: Path) -> FittedPipeline:
        return load_pipeline(path)

    def synthesize(self, out_dir: Path) -> dict[str, Any]:
        synthetic = self.config.synthetic
        tables = generate_synthetic(
            self.registry(),
            synthetic.n_patients,
            synthetic.seed,
            synthetic.rates,
            out_dir=out_dir,
        )
        return {name: len(frame) for name, frame in tables.items()}


def _label_value(value: Any) -> Any:
    return value.item() if isinstance(value, np.generic) else value
