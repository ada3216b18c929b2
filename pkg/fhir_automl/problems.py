"""Prediction problem definitions and cutoff-time label generation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from fhir_automl.assembler import BOOLEAN_VALUES, Entity, EntitySet

ANCHORS = ("event_start", "event_end")
DEFAULT_READMISSION_WINDOW = timedelta(days=30)
DEFAULT_THRESHOLD_DAYS = 7
# ICD-9 external causes: motor vehicle traffic, self-inflicted injury, assault
DEFAULT_MORTALITY_CODES = ("E81", "E95", "E96")
CODE_RESOURCE = "diagnosis"
CODE_VARIABLE = "code"

logger = logging.getLogger(__name__)


class ProblemError(ValueError):
    """Raised when a prediction problem cannot be defined or labeled."""


class UnknownProblem(ProblemError):
    """Raised when a problem name is not in the library."""


class UnknownTargetEntity(ProblemError):
    """Raised when the target entity did not load."""


class MissingParam(ProblemError):
    """Raised when a problem is missing a required parameter."""


class MissingAnchorTime(ProblemError):
    """Raised when an instance has no anchoring timestamp."""


class MissingLabelSource(ProblemError):
    """Raised when the data needed to compute labels did not load."""


class InvalidLabel(ProblemError):
    """Raised when a stored binary label is not a recognizable boolean."""


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    target_entity: str
    anchor: str
    offset: timedelta
    task_type: str
    start_variable: str
    end_variable: str | None = None
    label_variable: str | None = None
    patient_variable: str | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.anchor not in ANCHORS:
            raise ProblemError(f"anchor must be one of {list(ANCHORS)}; got {self.anchor}")
        required = {
            "readmission": "readmission_window",
            "diagnosis": "diagnosis_code",
            "los_classification": "threshold_days",
            "mortality": "mortality_codes",
        }.get(self.name)
        if required is not None and not self.params.get(required):
            raise MissingParam(f"problem {self.name} requires {required}")
        if self.anchor == "event_end" and self.end_variable is None:
            raise MissingParam(f"problem {self.name} anchors on event_end without end_variable")

    @property
    def anchor_variable(self) -> str:
        if self.anchor == "event_end":
            assert self.end_variable is not None
            return self.end_variable
        return self.start_variable

    @property
    def ignored_variables(self) -> tuple[str, ...]:
        """Variables that carry the outcome and must never become features."""
        ignored: list[str] = []
        if self.label_variable is not None:
            ignored.append(f"{self.target_entity}.{self.label_variable}")
        if self.anchor == "event_start" and self.end_variable is not None:
            ignored.append(f"{self.target_entity}.{self.end_variable}")
        if self.name in {"diagnosis", "mortality"}:
            ignored.append(f"{CODE_RESOURCE}.{CODE_VARIABLE}")
        return tuple(ignored)

    def to_dict(self) -> dict[str, Any]:
        params = {key: _param_to_json(value) for key, value in self.params.items()}
        return {
            "name": self.name,
            "target_entity": self.target_entity,
            "anchor": self.anchor,
            "offset_seconds": self.offset.total_seconds(),
            "task_type": self.task_type,
            "start_variable": self.start_variable,
            "end_variable": self.end_variable,
            "label_variable": self.label_variable,
            "patient_variable": self.patient_variable,
            "params": params,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "ProblemSpec":
        params = dict(data.get("params", {}))
        if "readmission_window" in params:
            params["readmission_window"] = timedelta(
                seconds=float(params["readmission_window"])
            )
        for key in ("mortality_codes", "positive_values"):
            if key in params:
                params[key] = tuple(params[key])
        return ProblemSpec(
            name=data["name"],
            target_entity=data["target_entity"],
            anchor=data["anchor"],
            offset=timedelta(seconds=float(data.get("offset_seconds", 0))),
            task_type=data["task_type"],
            start_variable=data["start_variable"],
            end_variable=data.get("end_variable"),
            label_variable=data.get("label_variable"),
            patient_variable=data.get("patient_variable"),
            params=params,
        )


@dataclass(frozen=True)
class LabelRow:
    entity_id: str
    cutoff_time: pd.Timestamp
    label: float | int


@dataclass(frozen=True)
class ExclusionNote:
    entity_id: str
    reason: str

    def to_dict(self) -> dict[str, Any]:
        return {"entity_id": self.entity_id, "reason": self.reason}


@dataclass(frozen=True)
class LabelTimes:
    rows: tuple[LabelRow, ...]
    problem: ProblemSpec
    exclusions: tuple[ExclusionNote, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def candidate_count(self) -> int:
        return len(self.rows) + len(self.exclusions)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "entity_id": pd.Series([row.entity_id for row in self.rows], dtype="string"),
                "cutoff_time": pd.to_datetime(
                    [row.cutoff_time for row in self.rows], utc=True
                ),
                "label": [row.label for row in self.rows],
            }
        )

    def summary(self) -> dict[str, Any]:
        """The problem-definition block of the metadata report."""
        labels = [row.label for row in self.rows]
        data: dict[str, Any] = {
            "problem": self.problem.name,
            "target_entity": self.problem.target_entity,
            "task_type": self.problem.task_type,
            "examples": len(labels),
            "excluded": len(self.exclusions),
        }
        if not labels:
            return data
        if self.problem.task_type == "binary":
            positive = int(sum(labels))
            data.update(
                {
                    "positive": positive,
                    "negative": len(labels) - positive,
                    "positive_pct": 100.0 * positive / len(labels),
                    "negative_pct": 100.0 * (len(labels) - positive) / len(labels),
                }
            )
        else:
            values = np.asarray(labels, dtype=float)
            data.update(
                {
                    "label_mean": float(values.mean()),
                    "label_min": float(values.min()),
                    "label_max": float(values.max()),
                }
            )
        return data

    def write_csv(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(
            {
                "entity_id": [row.entity_id for row in self.rows],
                "cutoff_time": [row.cutoff_time.isoformat() for row in self.rows],
                "label": [row.label for row in self.rows],
            }
        )
        temp_path = path.with_suffix(".tmp")
        frame.to_csv(temp_path, index=False, lineterminator="\n")
        temp_path.replace(path)
        sidecar = {
            "exclusions": [note.to_dict() for note in self.exclusions],
            "problem": self.problem.to_dict(),
            "summary": self.summary(),
        }
        sidecar_path = path.with_suffix(".json")
        temp_sidecar = sidecar_path.with_suffix(".json.tmp")
        with temp_sidecar.open("w", encoding="utf-8") as handle:
            json.dump(sidecar, handle, indent=2, sort_keys=True)
            handle.write("\n")
        temp_sidecar.replace(sidecar_path)


def read_label_times(path: Path, problem: ProblemSpec | None = None) -> LabelTimes:
    """Read a label CSV, taking the problem from its JSON sidecar when not given."""
    exclusions: tuple[ExclusionNote, ...] = ()
    sidecar_path = path.with_suffix(".json")
    if sidecar_path.exists():
        with sidecar_path.open("r", encoding="utf-8") as handle:
            sidecar = json.load(handle)
        if problem is None:
            problem = ProblemSpec.from_dict(sidecar["problem"])
        exclusions = tuple(
            ExclusionNote(str(item["entity_id"]), str(item["reason"]))
            for item in sidecar.get("exclusions", [])
        )
    if problem is None:
        raise ProblemError(f"no problem definition for {path}; sidecar {sidecar_path} missing")
    frame = pd.read_csv(path, dtype={"entity_id": str})
    cutoffs = pd.to_datetime(frame["cutoff_time"], utc=True, format="ISO8601")
    cast = int if problem.task_type == "binary" else float
    rows = tuple(
        LabelRow(entity_id=str(entity_id), cutoff_time=cutoff, label=cast(label))
        for entity_id, cutoff, label in zip(frame["entity_id"], cutoffs, frame["label"])
    )
    return LabelTimes(rows=rows, problem=problem, exclusions=exclusions)


def make_problem(
    name: str,
    target_entity: str | None = None,
    offset: timedelta | None = None,
    window: timedelta | None = None,
    threshold_days: int | None = None,
    diagnosis_code: str | None = None,
    mortality_codes: tuple[str, ...] | None = None,
) -> ProblemSpec:
    """Build a library problem with its default target, anchor and variables."""
    offset = offset if offset is not None else timedelta(0)
    if name == "noshow":
        return ProblemSpec(
            name=name,
            target_entity=target_entity or "appointment",
            anchor="event_start",
            offset=offset,
            task_type="binary",
            start_variable="created",
            label_variable="status",
            patient_variable="patient",
            params={"positive_values": ("noshow",)},
        )
    encounter = {
        "target_entity": target_entity or "encounter",
        "offset": offset,
        "start_variable": "start",
        "end_variable": "end",
        "patient_variable": "subject",
    }
    if name == "los_classification":
        return ProblemSpec(
            name=name,
            anchor="event_start",
            task_type="binary",
            params={
                "threshold_days": threshold_days
                if threshold_days is not None
                else DEFAULT_THRESHOLD_DAYS
            },
            **encounter,
        )
    if name == "los_regression":
        return ProblemSpec(
            name=name, anchor="event_start", task_type="regression", **encounter
        )
    if name == "readmission":
        return ProblemSpec(
            name=name,
            anchor="event_end",
            task_type="binary",
            params={"readmission_window": window or DEFAULT_READMISSION_WINDOW},
            **encounter,
        )
    if name == "diagnosis":
        if not diagnosis_code:
            raise MissingParam("problem diagnosis requires diagnosis_code")
        return ProblemSpec(
            name=name,
            anchor="event_start",
            task_type="binary",
            params={"diagnosis_code": diagnosis_code},
            **encounter,
        )
    if name == "mortality":
        return ProblemSpec(
            name=name,
            anchor="event_start",
            task_type="binary",
            label_variable="expired",
            params={"mortality_codes": tuple(mortality_codes or DEFAULT_MORTALITY_CODES)},
            **encounter,
        )
    raise UnknownProblem(f"unknown problem: {name}")


def gct(
    entityset: EntitySet,
    entity: str,
    entity_id: str,
    anchor_variable: str,
    offset: timedelta,
) -> pd.Timestamp:
    """Cutoff time of one instance: its anchoring timestamp plus ``offset``."""
    target = _target(entityset, entity)
    if anchor_variable not in target.variables:
        raise MissingAnchorTime(f"{entity}.{anchor_variable} is not loaded")
    matches = target.frame.loc[target.frame[target.index] == entity_id, anchor_variable]
    if matches.empty or pd.isna(matches.iloc[0]):
        raise MissingAnchorTime(f"{entity} {entity_id} has no {anchor_variable}")
    return matches.iloc[0] + pd.Timedelta(offset)


def generate_label_times(entityset: EntitySet, spec: ProblemSpec) -> LabelTimes:
    target = _target(entityset, spec.target_entity)
    anchor_variable = spec.anchor_variable
    if anchor_variable not in target.variables:
        raise MissingAnchorTime(
            f"{spec.target_entity}.{anchor_variable} is not loaded; no instance can anchor"
        )
    frame = target.frame
    ids = frame[target.index].astype(str).tolist()
    cutoffs = frame[anchor_variable] + pd.Timedelta(spec.offset)
    labels, reasons = _labels(entityset, target, spec)

    rows: list[LabelRow] = []
    exclusions: list[ExclusionNote] = []
    cast = int if spec.task_type == "binary" else float
    for position, entity_id in enumerate(ids):
        cutoff = cutoffs.iloc[position]
        if pd.isna(cutoff):
            exclusions.append(ExclusionNote(entity_id, f"missing {anchor_variable}"))
            continue
        label = labels[position]
        if label is None or pd.isna(label):
            exclusions.append(ExclusionNote(entity_id, reasons[position] or "missing label"))
            continue
        rows.append(LabelRow(entity_id=entity_id, cutoff_time=cutoff, label=cast(label)))

    label_times = LabelTimes(rows=tuple(rows), problem=spec, exclusions=tuple(exclusions))
    summary = label_times.summary()
    logger.info(
        "event=labels_generated problem=%s examples=%d excluded=%d positive_pct=%s",
        spec.name,
        summary["examples"],
        summary["excluded"],
        summary.get("positive_pct"),
    )
    return label_times


def _labels(
    entityset: EntitySet, target: Entity, spec: ProblemSpec
) -> tuple[list[Any], list[str | None]]:
    frame = target.frame
    count = len(frame)
    reasons: list[str | None] = [None] * count
    if spec.label_variable is not None and spec.label_variable in target.variables:
        return _stored_labels(target, spec), reasons
    if spec.name == "noshow":
        raise MissingLabelSource(
            f"{spec.target_entity}.{spec.label_variable} is not loaded"
        )
    if spec.name in {"los_classification", "los_regression"}:
        stay = _stay_days(target, spec)
        if spec.name == "los_regression":
            labels = [None if pd.isna(value) else float(value) for value in stay]
        else:
            threshold = spec.params["threshold_days"]
            labels = [None if pd.isna(value) else int(value > threshold) for value in stay]
        return labels, [None if label is not None else f"missing {spec.end_variable}" for label in labels]
    if spec.name == "readmission":
        return _readmission_labels(target, spec)
    if spec.name == "diagnosis":
        return _code_labels(entityset, target, (spec.params["diagnosis_code"],)), reasons
    if spec.name == "mortality":
        return _code_labels(entityset, target, spec.params["mortality_codes"]), reasons
    raise UnknownProblem(f"unknown problem: {spec.name}")


def _stored_labels(target: Entity, spec: ProblemSpec) -> list[Any]:
    values = target.frame[spec.label_variable]
    positive_values = spec.params.get("positive_values")
    labels: list[Any] = []
    for value in values:
        if pd.isna(value):
            labels.append(None)
        elif positive_values is not None:
            labels.append(int(str(value).strip().lower() in positive_values))
        elif spec.task_type == "binary":
            labels.append(_binary_label(value, spec))
        else:
            labels.append(float(value))
    return labels


def _binary_label(value: Any, spec: ProblemSpec) -> int:
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, float, np.integer, np.floating)) and value in (0, 1):
        return int(value)
    mapped = BOOLEAN_VALUES.get(str(value).strip().lower())
    if mapped is None:
        raise InvalidLabel(
            f"{spec.target_entity}.{spec.label_variable}: {value!r} is not a boolean label; "
            "set params.positive_values to map categories"
        )
    return int(mapped)


def _stay_days(target: Entity, spec: ProblemSpec) -> pd.Series:
    if spec.end_variable not in target.variables:
        raise MissingLabelSource(f"{spec.target_entity}.{spec.end_variable} is not loaded")
    delta = target.frame[spec.end_variable] - target.frame[spec.start_variable]
    return delta.dt.total_seconds() / 86400.0


def _readmission_labels(
    target: Entity, spec: ProblemSpec
) -> tuple[list[Any], list[str | None]]:
    patient_variable = spec.patient_variable
    if patient_variable is None or patient_variable not in target.variables:
        raise MissingLabelSource(
            f"{spec.target_entity}.{patient_variable} is not loaded"
        )
    if spec.start_variable not in target.variables:
        raise MissingLabelSource(
            f"{spec.target_entity}.{spec.start_variable} is not loaded"
        )
    frame = target.frame
    window = np.timedelta64(pd.Timedelta(spec.params["readmission_window"]))
    starts = _naive(frame[spec.start_variable])
    ends = _naive(frame[spec.end_variable])
    patients = frame[patient_variable]
    labels: list[Any] = [None] * len(frame)
    reasons: list[str | None] = [None] * len(frame)

    starts_by_patient: dict[Any, np.ndarray] = {}
    for patient, positions in patients.groupby(patients, sort=False).groups.items():
        patient_starts = starts[np.asarray(positions)]
        starts_by_patient[patient] = np.sort(patient_starts[~np.isnat(patient_starts)])

    for position in range(len(frame)):
        patient = patients.iloc[position]
        if pd.isna(patient):
            reasons[position] = f"missing {patient_variable}"
            continue
        discharge = ends[position]
        if np.isnat(discharge):
            continue
        sorted_starts = starts_by_patient[patient]
        horizon = discharge + window
        # encounters starting in the closed window (discharge, discharge + window]
        count = np.searchsorted(sorted_starts, horizon, side="right") - np.searchsorted(
            sorted_starts, discharge, side="right"
        )
        own_start = starts[position]
        if not np.isnat(own_start) and discharge < own_start <= horizon:
            count -= 1
        labels[position] = int(count > 0)
    return labels, reasons


def _code_labels(
    entityset: EntitySet, target: Entity, prefixes: tuple[str, ...]
) -> list[Any]:
    codes = entityset.entities.get(CODE_RESOURCE)
    relation = next(
        (
            rel
            for rel in entityset.relations
            if rel.child_resource == CODE_RESOURCE and rel.parent_resource == target.name
        ),
        None,
    )
    if codes is None or relation is None or CODE_VARIABLE not in codes.variables:
        raise MissingLabelSource(
            f"{CODE_RESOURCE}.{CODE_VARIABLE} linked to {target.name} is not loaded"
        )
    table = codes.frame[[relation.child_variable, CODE_VARIABLE]].dropna()
    matched = table[CODE_VARIABLE].astype(str).str.startswith(tuple(prefixes))
    positive_ids = set(table.loc[matched, relation.child_variable].astype(str))
    return [int(str(value) in positive_ids) for value in target.frame[target.index]]


def _naive(series: pd.Series) -> np.ndarray:
    if getattr(series.dt, "tz", None) is not None:
        series = series.dt.tz_convert("UTC").dt.tz_localize(None)
    return series.to_numpy(dtype="datetime64[ns]")


def _target(entityset: EntitySet, name: str) -> Entity:
    entity = entityset.entities.get(name)
    if entity is None:
        raise UnknownTargetEntity(f"target entity {name} is not loaded")
    return entity


def _param_to_json(value: Any) -> Any:
    if isinstance(value, timedelta):
        return value.total_seconds()
    if isinstance(value, tuple):
        return list(value)
    return value
