"""Hyperparameter domains."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

from optuna.distributions import (
    BaseDistribution,
    CategoricalDistribution,
    FloatDistribution,
    IntDistribution,
)


class SpaceError(ValueError):
    """Raised when a hyperparameter domain is invalid."""


@dataclass(frozen=True)
class FloatRange:
    low: float
    high: float
    log: bool = False

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise SpaceError(f"float range needs low < high; got [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise SpaceError("log-scaled float range needs low > 0")

    def distribution(self) -> BaseDistribution:
        return FloatDistribution(self.low, self.high, log=self.log)

    def to_dict(self) -> dict[str, Any]:
        return {"low": self.low, "high": self.high, "log": self.log}


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int
    log: bool = False

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise SpaceError(f"int range needs low < high; got [{self.low}, {self.high}]")
        if self.log and self.low < 1:
            raise SpaceError("log-scaled int range needs low >= 1")

    def distribution(self) -> BaseDistribution:
        return IntDistribution(self.low, self.high, log=self.log)

    def to_dict(self) -> dict[str, Any]:
        return {"low": self.low, "high": self.high, "log": self.log, "type": "int"}


@dataclass(frozen=True)
class Choice:
    values: tuple[Any, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise SpaceError("categorical domain must not be empty")

    def distribution(self) -> BaseDistribution:
        return CategoricalDistribution(self.values)

    def to_dict(self) -> dict[str, Any]:
        return {"values": list(self.values)}


Domain = Union[FloatRange, IntRange, Choice]


@dataclass(frozen=True)
class HyperparamSpace:
    domains: dict[str, Domain]

    def distributions(self) -> dict[str, BaseDistribution]:
        return {name: domain.distribution() for name, domain in self.domains.items()}

    def to_dict(self) -> dict[str, Any]:
        return {name: domain.to_dict() for name, domain in self.domains.items()}

    def merged(self, overrides: dict[str, Any]) -> "HyperparamSpace":
        domains = dict(self.domains)
        for name, raw in overrides.items():
            domains[name] = domain_from_config(name, raw)
        return HyperparamSpace(domains)


def domain_from_config(name: str, raw: Any) -> Domain:
    """Parse ``[a, b]`` choices or ``{low, high, log, type}`` ranges."""
    if isinstance(raw, (list, tuple)):
        return Choice(tuple(raw))
    if not isinstance(raw, dict) or "low" not in raw or "high" not in raw:
        raise SpaceError(f"{name}: expected a list of values or a table with low/high")
    log = bool(raw.get("log", False))
    is_int = raw.get("type") == "int" or (
        isinstance(raw["low"], int) and isinstance(raw["high"], int) and raw.get("type") != "float"
    )
    if is_int:
        return IntRange(int(raw["low"]), int(raw["high"]), log=log)
    return FloatRange(float(raw["low"]), float(raw["high"]), log=log)
