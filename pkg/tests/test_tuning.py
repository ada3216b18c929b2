"""Hyperparameter search and model selection tests."""

from __future__ import annotations

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

from fhir_automl.estimators import SingularFit
from fhir_automl.pipeline import DegenerateFold
from fhir_automl.spaces import Choice, FloatRange, HyperparamSpace, IntRange
from fhir_automl.tuning import (
    AllTrialsFailed,
    TrialRecord,
    TuningError,
    best_trial,
    gamma,
    optimize,
    select_model,
    warmup_count,
    warmup_params,
    write_trial_log,
)

UNIT = HyperparamSpace({"x": FloatRange(0.0, 1.0)})


def _quadratic(params: dict[str, float]) -> list[float]:
    return [-((params["x"] - 0.3) ** 2)]


class ScheduleTests(unittest.TestCase):
    def test_warmup_count(self) -> None:
        self.assertEqual(warmup_count(1), 1)
        self.assertEqual(warmup_count(5), 5)
        self.assertEqual(warmup_count(50), 10)
        self.assertEqual(warmup_count(500), 50)

    def test_gamma_keeps_top_quarter(self) -> None:
        self.assertEqual(gamma(1), 1)
        self.assertEqual(gamma(4), 1)
        self.assertEqual(gamma(10), 3)
        self.assertEqual(gamma(100), 25)

    def test_warmup_covers_every_choice(self) -> None:
        space = HyperparamSpace(
            {"kind": Choice(("a", "b", "c")), "depth": IntRange(1, 5), "rate": FloatRange(1e-3, 1.0, log=True)}
        )

        draws = warmup_params(space, 10, seed=7)

        self.assertEqual(len(draws), 10)
        self.assertEqual({draw["kind"] for draw in draws[:3]}, {"a", "b", "c"})
        for draw in draws:
            self.assertTrue(1 <= draw["depth"] <= 5)
            self.assertTrue(1e-3 <= draw["rate"] <= 1.0)
        self.assertEqual(draws, warmup_params(space, 10, seed=7))


class OptimizeTests(unittest.TestCase):
    def test_quadratic_beats_random_search(self) -> None:
        model_based: list[float] = []
        random: list[float] = []
        for seed in range(20):
            with self.subTest(seed=seed):
                result = optimize(_quadratic, UNIT, budget=100, seed=seed)

                self.assertLess(abs(result.best.params["x"] - 0.3), 0.05)
                self.assertEqual(len(result.trials), 100)
            model_based.append(result.best.mean_score)
            random.append(optimize(_quadratic, UNIT, 100, seed, sampler="random").best.mean_score)

        self.assertGreaterEqual(np.median(model_based), np.median(random))

    def test_single_trial_budget(self) -> None:
        result = optimize(_quadratic, UNIT, budget=1, seed=0)

        self.assertEqual(len(result.trials), 1)
        self.assertIs(result.best, result.trials[0])

    def test_invalid_budget_and_sampler(self) -> None:
        with self.assertRaises(TuningError):
            optimize(_quadratic, UNIT, budget=0, seed=0)
        with self.assertRaises(TuningError):
            optimize(_quadratic, UNIT, budget=3, seed=0, sampler="grid")

    def test_failed_trials_are_recorded(self) -> None:
        def objective(params: dict[str, float]) -> list[float]:
            if params["x"] < 0.5:
                raise SingularFit("diverged")
            return [params["x"]]

        result = optimize(objective, UNIT, budget=20, seed=1)

        failed = [trial for trial in result.trials if trial.failed]
        self.assertTrue(failed)
        self.assertTrue(all(trial.note.startswith("SingularFit") for trial in failed))
        self.assertFalse(result.best.failed)
        self.assertGreaterEqual(result.best.params["x"], 0.5)

    def test_all_trials_failed(self) -> None:
        def objective(params: dict[str, float]) -> list[float]:
            raise DegenerateFold("always")

        with self.assertRaises(AllTrialsFailed) as caught:
            optimize(objective, UNIT, budget=4, seed=0)

        self.assertEqual(len(caught.exception.trials), 4)

    def test_unexpected_errors_propagate(self) -> None:
        def objective(params: dict[str, float]) -> list[float]:
            raise ValueError("bad objective")

        with self.assertRaises(ValueError):
            optimize(objective, UNIT, budget=3, seed=0)

    def test_non_finite_scores_fail_the_trial(self) -> None:
        result = optimize(lambda params: [float("nan")] if params["x"] > 0.5 else [1.0], UNIT, 12, 0)

        for trial in result.trials:
            self.assertEqual(trial.failed, trial.params["x"] > 0.5)

    def test_same_seed_same_trials(self) -> None:
        first = optimize(_quadratic, UNIT, budget=15, seed=4)
        second = optimize(_quadratic, UNIT, budget=15, seed=4)

        self.assertEqual(
            [trial.params for trial in first.trials], [trial.params for trial in second.trials]
        )


class BestTrialTests(unittest.TestCase):
    def test_ties_go_to_lowest_index(self) -> None:
        records = [TrialRecord(index, {"x": index}, (0.5,), 0.5, 0.0) for index in range(4)]

        self.assertEqual(best_trial(records).trial_index, 0)

    def test_constant_objective(self) -> None:
        result = optimize(lambda params: [1.0], UNIT, budget=6, seed=2)

        self.assertEqual(result.best.trial_index, 0)


class SelectModelTests(unittest.TestCase):
    def setUp(self) -> None:
        rng = np.random.default_rng(5)
        signal = rng.normal(size=60)
        self.X = pd.DataFrame({"signal": signal, "noise": rng.normal(size=60)})
        self.y = (signal > 0).astype(int)

    def test_families_compete_on_cv_mean(self) -> None:
        selection = select_model(
            ["gaussian_nb", "knn"], self.X, self.y, budget=3, k=3, metric="f1_macro", seed=0
        )

        self.assertIn(selection.family, ("gaussian_nb", "knn"))
        self.assertEqual(set(selection.trials), {"gaussian_nb", "knn"})
        self.assertEqual(len(selection.all_trials), 6)
        best = max(
            (trial for trial in selection.all_trials if not trial.failed),
            key=lambda trial: trial.mean_score,
        )
        self.assertEqual(selection.best.mean_score, best.mean_score)
        self.assertEqual(len(selection.best.cv_scores), 3)

    def test_space_overrides(self) -> None:
        selection = select_model(
            ["knn"],
            self.X,
            self.y,
            budget=4,
            k=3,
            metric="accuracy",
            seed=0,
            spaces={"knn": {"n_neighbors": [3]}},
        )

        self.assertEqual({trial.params["n_neighbors"] for trial in selection.all_trials}, {3})


class TrialLogTests(unittest.TestCase):
    def test_trial_log_rows(self) -> None:
        result = optimize(_quadratic, UNIT, budget=5, seed=0, family="ridge")
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "trials.csv"
            write_trial_log(path, result.trials)
            first = path.read_bytes()
            write_trial_log(path, result.trials)

            frame = pd.read_csv(path)
            self.assertEqual(path.read_bytes(), first)

        self.assertEqual(list(frame.columns), ["family", "trial", "status", "params", "fold_scores", "mean_score"])
        self.assertEqual(frame["trial"].tolist(), [0, 1, 2, 3, 4])
        self.assertEqual(set(frame["family"]), {"ridge"})
        self.assertEqual(json.loads(frame["params"][0]), result.trials[0].params)


if __name__ == "__main__":
    unittest.main()
