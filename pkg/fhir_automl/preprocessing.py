"""Preprocessing primitives: imputation, one-hot encoding and min-max scaling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import MinMaxScaler, OneHotEncoder

MISSING_CATEGORY = "__missing__"
IMPUTE_STRATEGIES = ("mean", "median")


@dataclass(frozen=True)
class ImputeState:
    strategy: str
    numeric_fill: dict[str, float] = field(default_factory=dict)
    categorical_fill: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class MinMaxState:
    columns: tuple[str, ...]
    data_min: tuple[float, ...]
    data_max: tuple[float, ...]


def categorical_columns(frame: pd.DataFrame) -> list[str]:
    return [
        column
        for column in frame.columns
        if frame[column].dtype == object or pd.api.types.is_string_dtype(frame[column])
    ]


class Imputer(TransformerMixin, BaseEstimator):
    """Fill nulls from training statistics; all-null columns get 0 or a sentinel."""

    def __init__(self, strategy: str = "mean", categorical: list[str] | None = None) -> None:
        self.strategy = strategy
        self.categorical = categorical

    def fit(self, X: pd.DataFrame, y: Any = None) -> "Imputer":
        if self.strategy not in IMPUTE_STRATEGIES:
            raise ValueError(f"unknown impute strategy: {self.strategy}")
        categorical = (
            list(self.categorical) if self.categorical is not None else categorical_columns(X)
        )
        numeric_fill: dict[str, float] = {}
        categorical_fill: dict[str, str] = {}
        for column in X.columns:
            if column in categorical:
                values = X[column].dropna().astype(str)
                if values.empty:
                    categorical_fill[column] = MISSING_CATEGORY
                else:
                    counts = values.value_counts()
                    categorical_fill[column] = min(counts.index[counts == counts.max()])
                continue
            values = _numeric(X[column]).dropna()
            if values.empty:
                numeric_fill[column] = 0.0
            elif self.strategy == "median":
                numeric_fill[column] = float(values.median())
            else:
                numeric_fill[column] = float(values.mean())
        self.state_ = ImputeState(self.strategy, numeric_fill, categorical_fill)
        return self

    def transform(self, X: pd.DataFrame) -> pd.DataFrame:
        columns: dict[str, pd.Series] = {}
        for column in X.columns:
            if column in self.state_.categorical_fill:
                values = X[column].astype(object)
                columns[column] = values.where(values.notna(), self.state_.categorical_fill[column]).astype(str)
            else:
                columns[column] = _numeric(X[column]).fillna(
                    self.state_.numeric_fill.get(column, 0.0)
                )
        return pd.DataFrame(columns, index=X.index)


class OneHot(TransformerMixin, BaseEstimator):
    """Expand categorical columns to indicators; unseen categories encode as zeros."""

    def fit(self, X: pd.DataFrame, y: Any = None) -> "OneHot":
        self.categorical_ = categorical_columns(X)
        self.numeric_ = [column for column in X.columns if column not in self.categorical_]
        self.encoder_: OneHotEncoder | None = None
        if self.categorical_:
            self.encoder_ = OneHotEncoder(handle_unknown="ignore", sparse_output=False)
            self.encoder_.fit(X[self.categorical_].astype(str))
        return self

    def transform(self, X: pd.DataFrame) -> pd.DataFrame:
        out = X[self.numeric_].astype("float64")
        if self.encoder_ is None:
            return out
        encoded = pd.DataFrame(
            self.encoder_.transform(X[self.categorical_].astype(str)),
            columns=self.encoder_.get_feature_names_out(self.categorical_),
            index=X.index,
        )
        return pd.concat([out, encoded], axis=1)


class MinMax(TransformerMixin, BaseEstimator):
    """Scale columns to [0, 1] from training min/max; constant columns map to 0."""

    def fit(self, X: pd.DataFrame, y: Any = None) -> "MinMax":
        self.columns_ = list(X.columns)
        self.scaler_ = MinMaxScaler(clip=True)
        if self.columns_:
            self.scaler_.fit(X.to_numpy(dtype=float))
        return self

    def transform(self, X: pd.DataFrame) -> pd.DataFrame:
        if not self.columns_:
            return X[self.columns_].astype("float64")
        scaled = self.scaler_.transform(X[self.columns_].to_numpy(dtype=float))
        return pd.DataFrame(scaled, columns=self.columns_, index=X.index)

    @property
    def state(self) -> MinMaxState:
        if not self.columns_:
            return MinMaxState((), (), ())
        return MinMaxState(
            columns=tuple(self.columns_),
            data_min=tuple(float(value) for value in self.scaler_.data_min_),
            data_max=tuple(float(value) for value in self.scaler_.data_max_),
        )


def impute_fit_transform(
    frame: pd.DataFrame, strategy: str = "mean"
) -> tuple[pd.DataFrame, ImputeState]:
    imputer = Imputer(strategy=strategy).fit(frame)
    return imputer.transform(frame), imputer.state_


def minmax_fit_transform(frame: pd.DataFrame) -> tuple[pd.DataFrame, MinMaxState]:
    scaler = MinMax().fit(frame)
    return scaler.transform(frame), scaler.state


def _numeric(column: pd.Series) -> pd.Series:
    if pd.api.types.is_bool_dtype(column):
        return pd.Series(
            column.to_numpy(dtype="float64", na_value=np.nan), index=column.index
        )
    return pd.to_numeric(column.astype(object), errors="coerce").astype("float64")
