"""Estimator primitives and the pluggable estimator registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.ensemble import AdaBoostRegressor, RandomForestClassifier
from sklearn.linear_model import LinearRegression, Ridge, SGDClassifier, SGDRegressor
from sklearn.naive_bayes import GaussianNB, MultinomialNB
from sklearn.neighbors import KNeighborsClassifier, KNeighborsRegressor
from sklearn.svm import SVR
from sklearn.tree import DecisionTreeRegressor

from fhir_automl.spaces import Choice, FloatRange, HyperparamSpace, IntRange


class EstimatorError(RuntimeError):
    """Raised when an estimator cannot be built or fitted."""


class SingularFit(EstimatorError):
    """Raised when training data cannot support a fit, e.g. a single class."""


class UnknownEstimator(EstimatorError):
    """Raised when an estimator name is not registered."""


def loss_and_gradient(
    weights: np.ndarray, X: np.ndarray, y: np.ndarray, penalty: float
) -> tuple[float, np.ndarray]:
    """Mean log loss with an L2 penalty on the coefficients (not the intercept).

    ``weights`` holds the coefficients followed by the intercept.
    """
    coef, intercept = weights[:-1], weights[-1]
    z = X @ coef + intercept
    n = len(y)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * penalty * coef @ coef)
    residual = expit(z) - y
    gradient = np.empty_like(weights)
    gradient[:-1] = X.T @ residual / n + penalty * coef
    gradient[-1] = residual.mean()
    return loss, gradient


class LogisticRegression(ClassifierMixin, BaseEstimator):
    def __init__(self, C: float = 1.0, max_iter: int = 500) -> None:
        self.C = C
        self.max_iter = max_iter

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LogisticRegression":
        X = np.asarray(X, dtype=float)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise SingularFit(f"logistic regression needs two classes; got {len(self.classes_)}")
        target = (np.asarray(y) == self.classes_[1]).astype(float)
        penalty = 1.0 / (self.C * len(target))
        result = minimize(
            loss_and_gradient,
            np.zeros(X.shape[1] + 1),
            args=(X, target, penalty),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": self.max_iter},
        )
        self.coef_ = result.x[:-1]
        self.intercept_ = float(result.x[-1])
        self.n_iter_ = int(result.nit)
        return self

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef_ + self.intercept_

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        positive = expit(self.decision_function(X))
        return np.column_stack([1.0 - positive, positive])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


class _GradientBoosting(BaseEstimator):
    """Boosted regression trees; each round backtracks so training loss never rises."""

    def __init__(
        self,
        n_estimators: int = 100,
        learning_rate: float = 0.1,
        max_depth: int = 3,
        min_samples_leaf: int = 1,
        random_state: int | None = None,
    ) -> None:
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state

    def _init_raw(self, y: np.ndarray) -> float:
        raise NotImplementedError

    def _loss(self, y: np.ndarray, raw: np.ndarray) -> float:
        raise NotImplementedError

    def _leaf_values(self, y: np.ndarray, raw: np.ndarray, leaves: np.ndarray) -> dict[int, float]:
        raise NotImplementedError

    def _negative_gradient(self, y: np.ndarray, raw: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _boost(self, X: np.ndarray, y: np.ndarray) -> None:
        self.init_ = self._init_raw(y)
        raw = np.full(len(y), self.init_)
        self.stages_: list[tuple[DecisionTreeRegressor, np.ndarray, float]] = []
        self.train_loss_ = [self._loss(y, raw)]
        for _ in range(self.n_estimators):
            tree = DecisionTreeRegressor(
                max_depth=self.max_depth,
                min_samples_leaf=self.min_samples_leaf,
                random_state=self.random_state,
            )
            tree.fit(X, self._negative_gradient(y, raw))
            leaves = tree.apply(X)
            values = np.zeros(tree.tree_.node_count)
            for leaf, value in self._leaf_values(y, raw, leaves).items():
                values[leaf] = value
            update = values[leaves]
            step = self.learning_rate
            current = self.train_loss_[-1]
            candidate = self._loss(y, raw + step * update)
            while candidate > current and step > 1e-10:
                step /= 2.0
                candidate = self._loss(y, raw + step * update)
            if candidate > current:
                step, candidate = 0.0, current
            raw = raw + step * update
            self.stages_.append((tree, values, step))
            self.train_loss_.append(candidate)

    def _raw_predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        raw = np.full(X.shape[0], self.init_)
        for tree, values, step in self.stages_:
            if step == 0.0:
                continue
            leaves = tree.apply(X)
            raw += step * values[leaves]
        return raw


class GradientBoostingClassifier(ClassifierMixin, _GradientBoosting):
    def fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoostingClassifier":
        X = np.asarray(X, dtype=float)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise SingularFit(f"gradient boosting needs two classes; got {len(self.classes_)}")
        self._boost(X, (np.asarray(y) == self.classes_[1]).astype(float))
        return self

    def _init_raw(self, y: np.ndarray) -> float:
        rate = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        return float(np.log(rate / (1.0 - rate)))

    def _loss(self, y: np.ndarray, raw: np.ndarray) -> float:
        return float(np.mean(np.logaddexp(0.0, raw) - y * raw))

    def _negative_gradient(self, y: np.ndarray, raw: np.ndarray) -> np.ndarray:
        return y - expit(raw)

    def _leaf_values(self, y: np.ndarray, raw: np.ndarray, leaves: np.ndarray) -> dict[int, float]:
        # one Newton step per leaf
        probability = expit(raw)
        gradient = y - probability
        hessian = probability * (1.0 - probability)
        values: dict[int, float] = {}
        for leaf in np.unique(leaves):
            mask = leaves == leaf
            values[int(leaf)] = float(gradient[mask].sum() / (hessian[mask].sum() + 1e-12))
        return values

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self._raw_predict(X)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        positive = expit(self._raw_predict(X))
        return np.column_stack([1.0 - positive, positive])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes_[(self._raw_predict(X) > 0).astype(int)]


class GradientBoostingRegressor(RegressorMixin, _GradientBoosting):
    def fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoostingRegressor":
        self._boost(np.asarray(X, dtype=float), np.asarray(y, dtype=float))
        return self

    def _init_raw(self, y: np.ndarray) -> float:
        return float(y.mean())

    def _loss(self, y: np.ndarray, raw: np.ndarray) -> float:
        return float(np.mean((y - raw) ** 2))

    def _negative_gradient(self, y: np.ndarray, raw: np.ndarray) -> np.ndarray:
        return y - raw

    def _leaf_values(self, y: np.ndarray, raw: np.ndarray, leaves: np.ndarray) -> dict[int, float]:
        residual = y - raw
        return {int(leaf): float(residual[leaves == leaf].mean()) for leaf in np.unique(leaves)}

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._raw_predict(X)


@dataclass(frozen=True)
class EstimatorEntry:
    name: str
    task_type: str
    factory: Callable[[dict[str, Any], int], Any]
    space: HyperparamSpace
    default: bool = True


def _entry(
    name: str,
    task_type: str,
    factory: Callable[[dict[str, Any], int], Any],
    domains: dict[str, Any],
    default: bool = True,
) -> EstimatorEntry:
    return EstimatorEntry(name, task_type, factory, HyperparamSpace(domains), default)


ESTIMATORS: dict[str, EstimatorEntry] = {
    entry.name: entry
    for entry in (
        _entry(
            "logistic_regression",
            "binary",
            lambda params, seed: LogisticRegression(**params),
            {"C": FloatRange(1e-3, 1e3, log=True)},
        ),
        _entry(
            "knn",
            "binary",
            lambda params, seed: KNeighborsClassifier(**params),
            {"n_neighbors": IntRange(1, 30), "weights": Choice(("uniform", "distance"))},
        ),
        _entry(
            "gaussian_nb",
            "binary",
            lambda params, seed: GaussianNB(**params),
            {"var_smoothing": FloatRange(1e-12, 1e-3, log=True)},
        ),
        _entry(
            "gradient_boosting",
            "binary",
            lambda params, seed: GradientBoostingClassifier(random_state=seed, **params),
            {
                "n_estimators": IntRange(10, 200),
                "learning_rate": FloatRange(0.01, 0.5, log=True),
                "max_depth": IntRange(1, 5),
            },
        ),
        _entry(
            "random_forest",
            "binary",
            lambda params, seed: RandomForestClassifier(random_state=seed, **params),
            {"n_estimators": IntRange(10, 200), "max_depth": IntRange(2, 12)},
            default=False,
        ),
        _entry(
            "sgd",
            "binary",
            lambda params, seed: SGDClassifier(loss="log_loss", random_state=seed, **params),
            {"alpha": FloatRange(1e-6, 1e-1, log=True)},
            default=False,
        ),
        _entry(
            "multinomial_nb",
            "binary",
            lambda params, seed: MultinomialNB(**params),
            {"alpha": FloatRange(1e-3, 10.0, log=True)},
            default=False,
        ),
        _entry(
            "ridge",
            "regression",
            lambda params, seed: Ridge(**params),
            {"alpha": FloatRange(1e-4, 10.0, log=True)},
        ),
        _entry(
            "knn_regressor",
            "regression",
            lambda params, seed: KNeighborsRegressor(**params),
            {"n_neighbors": IntRange(1, 30), "weights": Choice(("uniform", "distance"))},
        ),
        _entry(
            "gradient_boosting_regressor",
            "regression",
            lambda params, seed: GradientBoostingRegressor(random_state=seed, **params),
            {
                "n_estimators": IntRange(10, 200),
                "learning_rate": FloatRange(0.01, 0.5, log=True),
                "max_depth": IntRange(1, 5),
            },
        ),
        _entry(
            "linear_regression",
            "regression",
            lambda params, seed: LinearRegression(**params),
            {"fit_intercept": Choice((True, False))},
            default=False,
        ),
        _entry(
            "sgd_regressor",
            "regression",
            lambda params, seed: SGDRegressor(random_state=seed, **params),
            {"alpha": FloatRange(1e-6, 1e-1, log=True)},
            default=False,
        ),
        _entry(
            "adaboost_regressor",
            "regression",
            lambda params, seed: AdaBoostRegressor(random_state=seed, **params),
            {"n_estimators": IntRange(10, 200), "learning_rate": FloatRange(0.01, 1.0, log=True)},
            default=False,
        ),
        _entry(
            "svr",
            "regression",
            lambda params, seed: SVR(**params),
            {"C": FloatRange(1e-2, 1e2, log=True), "epsilon": FloatRange(1e-3, 1.0, log=True)},
            default=False,
        ),
    )
}


def get_estimator(name: str) -> EstimatorEntry:
    try:
        return ESTIMATORS[name]
    except KeyError:
        raise UnknownEstimator(f"unknown estimator: {name}") from None


def default_estimators(task_type: str) -> tuple[str, ...]:
    return tuple(
        entry.name
        for entry in ESTIMATORS.values()
        if entry.task_type == task_type and entry.default
    )


def estimator_fit(
    name: str, hyperparams: dict[str, Any], X: np.ndarray, y: np.ndarray, seed: int
) -> Any:
    entry = get_estimator(name)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if entry.task_type == "binary" and len(np.unique(y)) < 2:
        raise SingularFit(f"{name}: training data holds a single class")
    if len(y) == 0:
        raise SingularFit(f"{name}: no training rows")
    params = dict(hyperparams)
    if "n_neighbors" in params:
        params["n_neighbors"] = min(int(params["n_neighbors"]), len(y))
    estimator = entry.factory(params, seed)
    try:
        estimator.fit(X, y)
    except SingularFit:
        raise
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise SingularFit(f"{name}: {exc}") from exc
    return estimator


def estimator_predict(fitted: Any, X: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Predictions plus positive-class scores for classifiers."""
    X = np.asarray(X, dtype=float)
    predictions = fitted.predict(X)
    scores: np.ndarray | None = None
    if hasattr(fitted, "classes_"):
        if hasattr(fitted, "predict_proba"):
            scores = fitted.predict_proba(X)[:, -1]
        elif hasattr(fitted, "decision_function"):
            scores = fitted.decision_function(X)
    return predictions, scores
