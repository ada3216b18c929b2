"""Aggregation and transform primitives for feature synthesis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import pandas as pd
from pandas.core.groupby import SeriesGroupBy
from scipy import stats


@dataclass(frozen=True)
class AggregationPrimitive:
    name: str
    input_types: tuple[str, ...]
    output_type: str
    apply: Callable[[SeriesGroupBy], pd.Series]

    def accepts(self, semantic_type: str) -> bool:
        return semantic_type in self.input_types


@dataclass(frozen=True)
class TransformPrimitive:
    name: str
    output_type: str
    apply: Callable[[pd.Series], pd.Series]


def skewness(values: pd.Series) -> float:
    """Adjusted Fisher-Pearson skewness; NaN below three values."""
    values = np.asarray(values, dtype=float)
    values = values[~np.isnan(values)]
    n = len(values)
    if n < 3:
        return float("nan")
    if np.ptp(values) == 0:
        return 0.0
    return float(stats.skew(values, bias=False))


def _mode(values: pd.Series) -> object:
    values = values.dropna()
    if values.empty:
        return np.nan
    counts = values.value_counts()
    # ties resolve to the smallest value
    return min(counts.index[counts == counts.max()])


AGGREGATION_PRIMITIVES: dict[str, AggregationPrimitive] = {
    primitive.name: primitive
    for primitive in (
        AggregationPrimitive(
            "sum", ("numeric", "boolean"), "numeric", lambda g: g.sum(min_count=1)
        ),
        AggregationPrimitive("std", ("numeric",), "numeric", lambda g: g.std(ddof=1)),
        AggregationPrimitive("max", ("numeric",), "numeric", lambda g: g.max()),
        AggregationPrimitive("min", ("numeric",), "numeric", lambda g: g.min()),
        AggregationPrimitive(
            "skew", ("numeric",), "numeric", lambda g: g.agg(skewness)
        ),
        AggregationPrimitive(
            "mean", ("numeric", "boolean"), "numeric", lambda g: g.mean()
        ),
        # count works on rows, not on a column
        AggregationPrimitive("count", (), "numeric", lambda g: g.size()),
        AggregationPrimitive(
            "mode", ("categorical",), "categorical", lambda g: g.agg(_mode)
        ),
    )
}

TRANSFORM_PRIMITIVES: dict[str, TransformPrimitive] = {
    primitive.name: primitive
    for primitive in (
        TransformPrimitive("day", "numeric", lambda s: s.dt.day.astype("float64")),
        TransformPrimitive("month", "numeric", lambda s: s.dt.month.astype("float64")),
        TransformPrimitive("year", "numeric", lambda s: s.dt.year.astype("float64")),
        TransformPrimitive(
            "is_weekend",
            "boolean",
            lambda s: (s.dt.dayofweek >= 5).astype("boolean").mask(s.isna()),
        ),
    )
}


