"""Sequential model-based hyperparameter search and model selection."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import optuna
import pandas as pd
from optuna.samplers import BaseSampler, RandomSampler, TPESampler
from optuna.trial import TrialState

from fhir_automl.estimators import EstimatorError, get_estimator
from fhir_automl.model_auditor import MetricError
from fhir_automl.pipeline import PipelineError, cross_validate, make_pipeline_spec
from fhir_automl.spaces import Choice, FloatRange, HyperparamSpace, IntRange

SAMPLERS = ("tpe", "random")
GAMMA = 0.25
EI_CANDIDATES = 24
MIN_WARMUP = 10

logger = logging.getLogger(__name__)


class TuningError(RuntimeError):
    """Raised when hyperparameter search cannot produce a result."""


class NonFiniteScore(TuningError):
    """Raised when a trial's objective returns no finite fold scores."""


class AllTrialsFailed(TuningError):
    """Raised when every trial of a search failed."""

    def __init__(self, message: str, trials: Sequence["TrialRecord"] = ()) -> None:
        super().__init__(message)
        self.trials = tuple(trials)


# expected trial failures; other exceptions propagate
TRIAL_FAILURES = (EstimatorError, PipelineError, MetricError, NonFiniteScore)


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    params: dict[str, Any]
    cv_scores: tuple[float, ...]
    mean_score: float
    wall_time: float
    status: str = "complete"
    family: str = ""
    note: str = ""

    @property
    def failed(self) -> bool:
        return self.status != "complete"


@dataclass(frozen=True)
class TuneResult:
    best: TrialRecord
    trials: tuple[TrialRecord, ...]


@dataclass(frozen=True)
class ModelSelection:
    family: str
    best: TrialRecord
    trials: dict[str, tuple[TrialRecord, ...]] = field(default_factory=dict)

    @property
    def all_trials(self) -> list[TrialRecord]:
        return [trial for trials in self.trials.values() for trial in trials]


def warmup_count(budget: int) -> int:
    return min(budget, max(MIN_WARMUP, budget // 10))


def gamma(n_trials: int) -> int:
    return max(1, math.ceil(GAMMA * n_trials))


def warmup_params(space: HyperparamSpace, count: int, seed: int) -> list[dict[str, Any]]:
    """Uniform draws where every categorical value appears before any value repeats."""
    rng = np.random.default_rng(seed)
    columns: dict[str, list[Any]] = {}
    for name, domain in space.domains.items():
        if isinstance(domain, Choice):
            values: list[Any] = []
            while len(values) < count:
                values.extend(domain.values[i] for i in rng.permutation(len(domain.values)))
            columns[name] = values[:count]
        elif isinstance(domain, IntRange):
            if domain.log:
                draws = np.exp(rng.uniform(np.log(domain.low), np.log(domain.high + 1), count))
                columns[name] = [int(min(domain.high, np.floor(draw))) for draw in draws]
            else:
                columns[name] = [int(draw) for draw in rng.integers(domain.low, domain.high + 1, count)]
        elif isinstance(domain, FloatRange):
            if domain.log:
                draws = np.exp(rng.uniform(np.log(domain.low), np.log(domain.high), count))
            else:
                draws = rng.uniform(domain.low, domain.high, count)
            columns[name] = [float(draw) for draw in draws]
    return [{name: column[i] for name, column in columns.items()} for i in range(count)]


def make_sampler(name: str, budget: int, seed: int) -> BaseSampler:
    if name == "random":
        return RandomSampler(seed=seed)
    if name == "tpe":
        return TPESampler(
            n_startup_trials=warmup_count(budget),
            n_ei_candidates=EI_CANDIDATES,
            gamma=gamma,
            seed=seed,
        )
    raise TuningError(f"unknown sampler: {name}")


def optimize(
    objective: Callable[[dict[str, Any]], Sequence[float]],
    space: HyperparamSpace,
    budget: int,
    seed: int,
    sampler: str = "tpe",
    family: str = "",
) -> TuneResult:
    """Run ``budget`` sequential trials; ``objective`` returns per-fold scores to maximize."""
    if budget < 1:
        raise TuningError("budget must be >= 1")
    optuna.logging.set_verbosity(optuna.logging.WARNING)
    study = optuna.create_study(direction="maximize", sampler=make_sampler(sampler, budget, seed))
    if sampler == "tpe":
        for params in warmup_params(space, warmup_count(budget), seed):
            study.enqueue_trial(params)
    distributions = space.distributions()
    records: list[TrialRecord] = []
    for index in range(budget):
        trial = study.ask(distributions)
        params = dict(trial.params)
        started = time.perf_counter()
        try:
            scores = tuple(float(score) for score in objective(params))
            if not scores or not np.all(np.isfinite(scores)):
                raise NonFiniteScore("objective returned no finite scores")
        except TRIAL_FAILURES as exc:
            study.tell(trial, state=TrialState.FAIL)
            record = TrialRecord(
                index,
                params,
                (),
                float("-inf"),
                time.perf_counter() - started,
                status="failed",
                family=family,
                note=f"{type(exc).__name__}: {exc}",
            )
            logger.warning(
                "event=trial_failed family=%s trial=%s error=%s", family, index, record.note
            )
        else:
            mean = float(np.mean(scores))
            study.tell(trial, mean)
            record = TrialRecord(
                index, params, scores, mean, time.perf_counter() - started, family=family
            )
            logger.info(
                "event=trial_complete family=%s trial=%s mean_score=%.6f", family, index, mean
            )
        records.append(record)
    return TuneResult(best_trial(records), tuple(records))


def best_trial(records: Sequence[TrialRecord]) -> TrialRecord:
    completed = [record for record in records if not record.failed]
    if not completed:
        raise AllTrialsFailed(f"all {len(records)} trials failed", records)
    # max keeps the first of equal scores, i.e. the lowest trial index
    return max(completed, key=lambda record: record.mean_score)


def tune(
    family: str,
    space: HyperparamSpace | None,
    X: pd.DataFrame,
    y: Sequence[Any],
    budget: int,
    k: int,
    metric: str,
    seed: int,
    sampler: str = "tpe",
    jobs: int = 1,
) -> TuneResult:
    entry = get_estimator(family)
    space = space if space is not None else entry.space

    def objective(params: dict[str, Any]) -> Sequence[float]:
        spec = make_pipeline_spec(family, params, entry.task_type)
        return cross_validate(spec, X, y, k, metric, seed, jobs=jobs).scores

    return optimize(objective, space, budget, seed, sampler=sampler, family=family)


def select_model(
    families: Sequence[str],
    X: pd.DataFrame,
    y: Sequence[Any],
    budget: int,
    k: int,
    metric: str,
    seed: int,
    spaces: dict[str, dict[str, Any]] | None = None,
    jobs: int = 1,
) -> ModelSelection:
    """Tune every family with the full budget; the best mean wins, ties to the earlier family."""
    spaces = spaces or {}
    trials: dict[str, tuple[TrialRecord, ...]] = {}
    winner: tuple[str, TrialRecord] | None = None
    for family in families:
        space = get_estimator(family).space.merged(spaces.get(family, {}))
        try:
            result = tune(family, space, X, y, budget, k, metric, seed, jobs=jobs)
        except AllTrialsFailed as exc:
            trials[family] = exc.trials
            logger.warning("event=family_failed family=%s error=%s", family, exc)
            continue
        trials[family] = result.trials
        logger.info(
            "event=family_tuned family=%s best_trial=%s mean_score=%.6f",
            family,
            result.best.trial_index,
            result.best.mean_score,
        )
        if winner is None or result.best.mean_score > winner[1].mean_score:
            winner = (family, result.best)
    if winner is None:
        raise AllTrialsFailed(f"every trial of every family failed: {', '.join(families)}")
    return ModelSelection(winner[0], winner[1], trials)


def write_trial_log(path: Path, trials: Sequence[TrialRecord]) -> None:
    """CSV of every trial; wall time is left out so reruns compare byte-identical."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "family": [trial.family for trial in trials],
            "trial": [trial.trial_index for trial in trials],
            "status": [trial.status for trial in trials],
            "params": [json.dumps(_jsonable(trial.params), sort_keys=True) for trial in trials],
            "fold_scores": [json.dumps(list(trial.cv_scores)) for trial in trials],
            "mean_score": [repr(trial.mean_score) for trial in trials],
        }
    )
    temp_path = path.with_suffix(".tmp")
    frame.to_csv(temp_path, index=False, lineterminator="\n")
    temp_path.replace(path)


def _jsonable(params: dict[str, Any]) -> dict[str, Any]:
    return {name: value.item() if isinstance(value, np.generic) else value for name, value in params.items()}
