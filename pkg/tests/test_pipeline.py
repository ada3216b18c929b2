"""Pipeline fitting, cross-validation and split tests."""

from __future__ import annotations

import tempfile
import unittest
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from fhir_automl.featurizer import FeatureDef, FeatureMatrix
from fhir_automl.pipeline import (
    DegenerateFold,
    PipelineError,
    PipelineSpec,
    StepSpec,
    TooFewRows,
    build_matrix,
    cross_validate,
    fit_pipeline,
    fold_indices,
    load_pipeline,
    make_pipeline_spec,
    train_test_split,
)
from fhir_automl.problems import LabelRow, LabelTimes, make_problem


def _frame(rng: np.random.Generator, n: int) -> tuple[pd.DataFrame, np.ndarray]:
    signal = rng.normal(size=n)
    frame = pd.DataFrame(
        {
            "signal": signal,
            "noise": rng.normal(size=n),
            "kind": rng.choice(["a", "b"], n).astype(object),
        }
    )
    frame.loc[rng.random(n) < 0.1, "noise"] = np.nan
    return frame, (signal > 0).astype(int)


class SpecTests(unittest.TestCase):
    def test_default_steps(self) -> None:
        spec = make_pipeline_spec("knn", {"n_neighbors": 3}, "binary")

        self.assertEqual(
            [step.primitive for step in spec.steps], ["impute", "one_hot", "minmax", "knn"]
        )
        self.assertEqual(spec.estimator.params, {"n_neighbors": 3})

    def test_estimator_must_match_task(self) -> None:
        with self.assertRaises(PipelineError):
            make_pipeline_spec("ridge", {}, "binary")

    def test_transformers_come_first(self) -> None:
        with self.assertRaises(PipelineError):
            PipelineSpec((StepSpec("knn"), StepSpec("impute")), "binary")


class FitTests(unittest.TestCase):
    def test_fit_predict_and_metadata(self) -> None:
        X, y = _frame(np.random.default_rng(0), 80)
        spec = make_pipeline_spec("logistic_regression", {"C": 10.0}, "binary")

        fitted = fit_pipeline(spec, X, y, seed=3)
        predictions, scores = fitted.predict(X)

        self.assertGreater((predictions == y).mean(), 0.9)
        self.assertTrue(np.all((scores >= 0) & (scores <= 1)))
        self.assertEqual(fitted.metadata["seed"], 3)
        self.assertEqual(fitted.metadata["training_rows"], 80)
        self.assertEqual(len(fitted.metadata["data_sha256"]), 64)

    def test_transformer_state_ignores_test_rows(self) -> None:
        X, y = _frame(np.random.default_rng(1), 60)
        train = np.arange(40)
        spec = make_pipeline_spec("gaussian_nb", {}, "binary")
        reference = fit_pipeline(spec, X.iloc[train], y[train], seed=0)

        held_out = X.iloc[40:].sample(frac=1.0, random_state=2).copy()
        held_out["signal"] = 1000.0
        shuffled = pd.concat([X.iloc[:40], held_out]).reset_index(drop=True)
        refit = fit_pipeline(spec, shuffled.iloc[train], y[train], seed=0)

        self.assertEqual(reference.transformers[0].state_, refit.transformers[0].state_)
        self.assertEqual(reference.transformers[2].state, refit.transformers[2].state)

    def test_missing_feature_column_at_predict(self) -> None:
        X, y = _frame(np.random.default_rng(2), 30)
        fitted = fit_pipeline(make_pipeline_spec("gaussian_nb", {}, "binary"), X, y, seed=0)

        with self.assertRaises(PipelineError):
            fitted.predict(X.drop(columns=["signal"]))

    def test_save_and_load(self) -> None:
        X, y = _frame(np.random.default_rng(3), 40)
        fitted = fit_pipeline(make_pipeline_spec("knn", {"n_neighbors": 5}, "binary"), X, y, seed=0)
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "model.joblib"
            fitted.save(path)

            restored = load_pipeline(path)

            self.assertFalse(path.with_suffix(".tmp").exists())
        np.testing.assert_array_equal(restored.predict(X)[0], fitted.predict(X)[0])
        self.assertEqual(restored.metadata, fitted.metadata)

    def test_load_rejects_other_objects(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "model.joblib"
            path.write_bytes(b"not a pickle")

            with self.assertRaises(PipelineError):
                load_pipeline(path)


class FoldTests(unittest.TestCase):
    def test_folds_partition_rows(self) -> None:
        y = np.array([0, 1] * 50)

        folds = fold_indices(y, 5, seed=0, task_type="binary")

        self.assertEqual([len(test) for _, test in folds], [20] * 5)
        covered = np.sort(np.concatenate([test for _, test in folds]))
        np.testing.assert_array_equal(covered, np.arange(100))

    def test_stratified_positive_counts(self) -> None:
        y = np.array([1] * 10 + [0] * 90)

        folds = fold_indices(y, 10, seed=4, task_type="binary")

        for _, test in folds:
            self.assertLessEqual(abs(int(y[test].sum()) - 1), 1)

    def test_rare_positives_spread_one_per_fold(self) -> None:
        y = np.array([1] * 5 + [0] * 95)

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            folds = fold_indices(y, 10, seed=0, task_type="binary")

        positives = [int(y[test].sum()) for _, test in folds]
        self.assertTrue(all(count in (0, 1) for count in positives), positives)
        self.assertEqual(sum(positives), 5)
        self.assertFalse(any("least populated" in str(warning.message) for warning in caught))

    def test_single_positive_still_partitions(self) -> None:
        y = np.array([1] + [0] * 19)

        folds = fold_indices(y, 4, seed=2, task_type="binary")

        self.assertEqual(sorted(int(y[test].sum()) for _, test in folds), [0, 0, 0, 1])
        covered = np.sort(np.concatenate([test for _, test in folds]))
        np.testing.assert_array_equal(covered, np.arange(20))

    def test_too_few_rows(self) -> None:
        with self.assertRaises(TooFewRows):
            fold_indices(np.array([0, 1, 0]), 5, seed=0, task_type="binary")

    def test_perfect_estimator_scores_one(self) -> None:
        X = pd.DataFrame({"signal": np.repeat([0.0, 1.0], 20)})
        y = np.repeat([0, 1], 20)
        spec = make_pipeline_spec("knn", {"n_neighbors": 1}, "binary")

        result = cross_validate(spec, X, y, 4, "f1_macro", seed=0, jobs=2)

        self.assertEqual(result.scores, (1.0, 1.0, 1.0, 1.0))
        self.assertEqual(result.mean, 1.0)

    def test_undefined_folds_are_skipped(self) -> None:
        X = pd.DataFrame({"value": np.arange(6, dtype=float)})
        y = np.array([5.0, 5.0, 5.0, 5.0, 5.0, 7.0])
        spec = make_pipeline_spec("ridge", {}, "regression")

        result = cross_validate(spec, X, y, 3, "r2", seed=0)

        self.assertEqual(len(result.scores) + len(result.notes), 3)
        self.assertEqual(len(result.notes), 2)

    def test_every_fold_undefined(self) -> None:
        X = pd.DataFrame({"value": np.arange(6, dtype=float)})
        y = np.full(6, 5.0)
        spec = make_pipeline_spec("ridge", {}, "regression")

        with self.assertRaises(DegenerateFold):
            cross_validate(spec, X, y, 3, "r2", seed=0)


class SplitTests(unittest.TestCase):
    def test_eighty_twenty(self) -> None:
        train, test = train_test_split(range(10), np.arange(10) % 2, 0.8, seed=0)

        self.assertEqual((len(train), len(test)), (8, 2))
        self.assertFalse(set(train) & set(test))

    def test_same_seed_same_split(self) -> None:
        y = np.arange(50) % 2
        first = train_test_split(range(50), y, 0.8, seed=9)
        second = train_test_split(range(50), y, 0.8, seed=9)

        np.testing.assert_array_equal(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])

    def test_stratified_classes(self) -> None:
        y = np.array([0, 1] * 50)

        train, _ = train_test_split(range(100), y, 0.8, seed=1)

        self.assertLessEqual(abs(int(y[train].sum()) - 40), 1)
        self.assertLessEqual(abs(int((y[train] == 0).sum()) - 40), 1)

    def test_regression_split(self) -> None:
        train, test = train_test_split(range(7), np.linspace(0, 1, 7), 0.5, seed=0, task_type="regression")

        self.assertEqual((len(train), len(test)), (3, 4))

    def test_single_row(self) -> None:
        with self.assertRaises(TooFewRows):
            train_test_split(range(1), [1], 0.8, seed=0)


class BuildMatrixTests(unittest.TestCase):
    def test_aligns_on_entity_and_cutoff(self) -> None:
        cutoff = pd.Timestamp("2020-01-01", tz="UTC")
        feature = FeatureDef("a.value", "direct", "identity", "a", "numeric", 0, variable="value")
        matrix = FeatureMatrix(
            entity_ids=("x", "y", "z"),
            cutoff_times=(cutoff, cutoff, cutoff),
            features=(feature,),
            frame=pd.DataFrame({"a.value": [1.0, 2.0, 3.0]}),
        )
        labels = LabelTimes(
            rows=(LabelRow("z", cutoff, 1), LabelRow("x", cutoff, 0)),
            problem=make_problem("noshow"),
        )

        X, y, positions = build_matrix(matrix, labels)

        self.assertEqual(X["a.value"].tolist(), [1.0, 3.0])
        self.assertEqual(y.tolist(), [0, 1])
        self.assertEqual(positions.tolist(), [0, 2])

    def test_unmatched_labels(self) -> None:
        cutoff = pd.Timestamp("2020-01-01", tz="UTC")
        matrix = FeatureMatrix(("x",), (cutoff,), (), pd.DataFrame(index=range(1)))
        labels = LabelTimes(rows=(LabelRow("q", cutoff, 1),), problem=make_problem("noshow"))

        with self.assertRaises(PipelineError):
            build_matrix(matrix, labels)


if __name__ == "__main__":
    unittest.main()
