"""Data quality and distribution auditing over an assembled entityset."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd

from fhir_automl.assembler import Entity, EntitySet

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - fallback for 3.10
    import tomli as tomllib  # type: ignore[no-redef]

STD_CONVENTION = "population (divide by n)"
_QUALITY_ONLY_TYPES = {"id", "foreign_key", "text"}

logger = logging.getLogger(__name__)


class AuditError(ValueError):
    """Raised when an audit request is invalid."""


class UnknownVariableInExpectations(AuditError):
    """Raised when expectations name a variable the schema does not declare."""


class NonBinaryVariable(AuditError):
    """Raised when a cohort variable is not boolean or 0/1 coded."""


@dataclass(frozen=True)
class Expectation:
    minimum: float | str | None = None
    maximum: float | str | None = None
    allowed: tuple[str, ...] | None = None
    max_unique: int | None = None

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "Expectation":
        allowed = data.get("allowed")
        max_unique = data.get("max_unique")
        return Expectation(
            minimum=data.get("min"),
            maximum=data.get("max"),
            allowed=tuple(str(value) for value in allowed) if allowed is not None else None,
            max_unique=int(max_unique) if max_unique is not None else None,
        )


@dataclass(frozen=True)
class ExpectationSet:
    expectations: dict[str, Expectation] = field(default_factory=dict)

    def get(self, entity: str, variable: str) -> Expectation | None:
        return self.expectations.get(f"{entity}.{variable}")

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "ExpectationSet":
        raw = data.get("expectations", {})
        if not isinstance(raw, dict):
            raise AuditError("expectations must be a table keyed by entity.variable")
        return ExpectationSet(
            expectations={str(key): Expectation.from_dict(value) for key, value in raw.items()}
        )


@dataclass(frozen=True)
class QualityFinding:
    entity: str
    variable: str
    row_count: int
    missing_count: int
    missing_pct: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity": self.entity,
            "variable": self.variable,
            "row_count": self.row_count,
            "missing_count": self.missing_count,
            "missing_pct": self.missing_pct,
        }


@dataclass(frozen=True)
class DistributionFinding:
    entity: str
    variable: str
    semantic_type: str
    summary: dict[str, Any]
    violations: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity": self.entity,
            "variable": self.variable,
            "type": self.semantic_type,
            "summary": self.summary,
            "violations": list(self.violations),
        }


@dataclass(frozen=True)
class CohortRow:
    variable: str
    count: int
    negative_pct: float | None
    positive_pct: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "variable": self.variable,
            "count": self.count,
            "negative_pct": self.negative_pct,
            "positive_pct": self.positive_pct,
        }


@dataclass(frozen=True)
class AuditReport:
    quality: tuple[QualityFinding, ...]
    distributions: tuple[DistributionFinding, ...]
    cohort: tuple[CohortRow, ...] = ()

    @property
    def violation_count(self) -> int:
        return sum(len(finding.violations) for finding in self.distributions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "std_convention": STD_CONVENTION,
            "quality": [finding.to_dict() for finding in self.quality],
            "distributions": [finding.to_dict() for finding in self.distributions],
            "cohort": [row.to_dict() for row in self.cohort],
            "violation_count": self.violation_count,
        }

    def render_text(self) -> str:
        lines = ["Data audit", f"std: {STD_CONVENTION}", "", "Missing values"]
        for finding in self.quality:
            lines.append(
                f"  {finding.entity}.{finding.variable}: "
                f"{finding.missing_count}/{finding.row_count} "
                f"({finding.missing_pct:.2%})"
            )
        lines += ["", "Distributions"]
        for finding in self.distributions:
            lines.append(
                f"  {finding.entity}.{finding.variable} [{finding.semantic_type}]: "
                f"{_render_summary(finding.summary)}"
            )
            for violation in finding.violations:
                lines.append(f"    violation: {violation}")
        if self.cohort:
            lines += ["", "Cohort", "  variable  negative  positive"]
            for row in self.cohort:
                lines.append(
                    f"  {row.variable}  {_render_pct(row.negative_pct)}  "
                    f"{_render_pct(row.positive_pct)}"
                )
        return "\n".join(lines) + "\n"


def load_expectations(path: Path) -> ExpectationSet:
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise AuditError(f"failed to read expectations {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise AuditError(f"malformed expectations {path}: {exc}") from exc
    return ExpectationSet.from_dict(data)


def audit_quality(entityset: EntitySet) -> list[QualityFinding]:
    findings: list[QualityFinding] = []
    for entity in entityset.entities.values():
        rows = entity.row_count
        for variable in entity.variables:
            missing = int(entity.frame[variable].isna().sum())
            findings.append(
                QualityFinding(
                    entity=entity.name,
                    variable=variable,
                    row_count=rows,
                    missing_count=missing,
                    missing_pct=missing / rows if rows else 0.0,
                )
            )
    return findings


def audit_distributions(
    entityset: EntitySet, expectations: ExpectationSet | None = None
) -> list[DistributionFinding]:
    if expectations is not None:
        _check_expectation_names(entityset, expectations)
    findings: list[DistributionFinding] = []
    for entity in entityset.entities.values():
        for variable, semantic_type in entity.variables.items():
            if semantic_type in _QUALITY_ONLY_TYPES:
                continue
            values = entity.frame[variable].dropna()
            summary = _summarize(values, semantic_type)
            expectation = (
                expectations.get(entity.name, variable) if expectations else None
            )
            violations = (
                _violations(entity.name, variable, semantic_type, values, summary, expectation)
                if expectation is not None
                else ()
            )
            findings.append(
                DistributionFinding(
                    entity=entity.name,
                    variable=variable,
                    semantic_type=semantic_type,
                    summary=summary,
                    violations=tuple(violations),
                )
            )
    return findings


def cohort_summary(
    entityset: EntitySet, binary_variables: Iterable[str]
) -> list[CohortRow]:
    """Tabulate negative/positive percentages for ``entity.variable`` names."""
    rows: list[CohortRow] = []
    for qualified in binary_variables:
        entity, variable = _split_variable(entityset, qualified)
        semantic_type = entity.variables[variable]
        values = entity.frame[variable].dropna()
        if semantic_type == "boolean":
            positives = int(values.astype(bool).sum())
        elif semantic_type == "numeric":
            if not set(values.unique()).issubset({0.0, 1.0}):
                raise NonBinaryVariable(f"{qualified} holds values other than 0/1")
            positives = int((values == 1).sum())
        else:
            raise NonBinaryVariable(f"{qualified} is {semantic_type}, not binary")
        count = len(values)
        if count == 0:
            rows.append(CohortRow(qualified, 0, None, None))
            continue
        positive_pct = 100.0 * positives / count
        rows.append(
            CohortRow(
                variable=qualified,
                count=count,
                negative_pct=100.0 - positive_pct,
                positive_pct=positive_pct,
            )
        )
    return rows


def audit(
    entityset: EntitySet,
    expectations: ExpectationSet | None = None,
    binary_variables: Iterable[str] | None = None,
) -> AuditReport:
    if binary_variables is None:
        binary_variables = [
            f"{entity.name}.{variable}"
            for entity in entityset.entities.values()
            for variable in entity.variables_of_type("boolean")
        ]
    report = AuditReport(
        quality=tuple(audit_quality(entityset)),
        distributions=tuple(audit_distributions(entityset, expectations)),
        cohort=tuple(cohort_summary(entityset, binary_variables)),
    )
    logger.info(
        "event=audit_complete variables=%d violations=%d",
        len(report.quality),
        report.violation_count,
    )
    return report


def _summarize(values: pd.Series, semantic_type: str) -> dict[str, Any]:
    if semantic_type == "numeric":
        if values.empty:
            return {"count": 0, "min": None, "max": None, "mean": None, "std": None}
        return {
            "count": int(len(values)),
            "min": float(values.min()),
            "max": float(values.max()),
            "mean": float(values.mean()),
            "std": float(values.std(ddof=0)),
        }
    if semantic_type == "datetime":
        if values.empty:
            return {"count": 0, "min": None, "max": None}
        return {
            "count": int(len(values)),
            "min": values.min().isoformat(),
            "max": values.max().isoformat(),
        }
    labels = values.map(_label)
    counts = labels.value_counts()
    total = int(counts.sum())
    return {
        "count": total,
        "unique_count": int(len(counts)),
        "frequencies": {
            str(value): int(counts[value]) / total for value in sorted(counts.index)
        },
    }


def _violations(
    entity: str,
    variable: str,
    semantic_type: str,
    values: pd.Series,
    summary: dict[str, Any],
    expectation: Expectation,
) -> list[str]:
    name = f"{entity}.{variable}"
    found: list[str] = []
    if semantic_type in {"numeric", "datetime"} and not values.empty:
        low = _bound(expectation.minimum, semantic_type)
        high = _bound(expectation.maximum, semantic_type)
        if low is not None and values.min() < low:
            found.append(f"{name}: minimum {summary['min']} below expected min {expectation.minimum}")
        if high is not None and values.max() > high:
            found.append(f"{name}: maximum {summary['max']} above expected max {expectation.maximum}")
    if semantic_type in {"categorical", "boolean"}:
        if expectation.allowed is not None:
            unexpected = sorted(set(summary["frequencies"]) - set(expectation.allowed))
            if unexpected:
                found.append(f"{name}: values {unexpected} outside allowed set")
        if (
            expectation.max_unique is not None
            and summary["unique_count"] > expectation.max_unique
        ):
            found.append(
                f"{name}: unique_count {summary['unique_count']} exceeds "
                f"max_unique {expectation.max_unique}"
            )
    return found


def _bound(raw: float | str | None, semantic_type: str) -> Any:
    if raw is None:
        return None
    if semantic_type == "datetime":
        stamp = pd.Timestamp(raw)
        return stamp.tz_localize("UTC") if stamp.tzinfo is None else stamp
    return float(raw)


def _check_expectation_names(entityset: EntitySet, expectations: ExpectationSet) -> None:
    registry = entityset.registry
    for qualified in expectations.expectations:
        entity_name, _, variable = qualified.partition(".")
        if registry is not None:
            schema = registry.resources.get(entity_name)
            declared = schema is not None and schema.variable(variable) is not None
        else:
            entity = entityset.entities.get(entity_name)
            declared = entity is not None and variable in entity.variables
        if not declared:
            raise UnknownVariableInExpectations(
                f"expectation names undeclared variable {qualified}"
            )


def _split_variable(entityset: EntitySet, qualified: str) -> tuple[Entity, str]:
    entity_name, _, variable = qualified.partition(".")
    entity = entityset.entities.get(entity_name)
    if entity is None or variable not in entity.variables:
        raise AuditError(f"variable {qualified} is not loaded")
    return entity, variable


def _label(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    return str(value)


def _render_summary(summary: dict[str, Any]) -> str:
    if "frequencies" in summary:
        top = ", ".join(
            f"{value}={pct:.2%}" for value, pct in list(summary["frequencies"].items())[:5]
        )
        return f"unique={summary['unique_count']} {top}"
    return " ".join(f"{key}={value}" for key, value in summary.items())


def _render_pct(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.2f}%"
