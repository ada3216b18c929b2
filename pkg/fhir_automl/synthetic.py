"""Seeded synthetic datasets that conform to any schema registry.

Known resources follow a small latent clinical model (appointment no-shows,
encounter stays and readmissions, diagnosis codes); every other declared
resource or variable is filled generically so the assembler always accepts
the output.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import expit

from fhir_automl.schema import ResourceSchema, SchemaRegistry

DEFAULT_RATES: dict[str, float] = {
    "noshow_rate": 0.2,
    "scholarship": 0.0929,
    "hypertension": 0.1965,
    "diabetes": 0.0709,
    "alcoholism": 0.0242,
    "reminder_rate": 0.45,
    "mortality_rate": 0.05,
    "appointments_per_patient": 1.0,
    "encounters_per_patient": 2.0,
}
BASE_DATE = pd.Timestamp("2016-04-01", tz="UTC")
GENERATION_ORDER = (
    "address",
    "practitioner",
    "location",
    "coding",
    "reference_range",
    "patient",
    "coverage",
    "encounter",
    "condition",
    "diagnosis",
    "appointment",
    "communication_request",
    "observation",
    "procedure",
    "medication",
)
CITIES = ("Vitoria", "Serra", "Vila Velha", "Cariacica", "Guarapari")
NEIGHBOURHOODS = ("Centro", "Jardim Camburi", "Maruipe", "Itarare", "Resistencia", "Praia do Canto")
SPECIALTIES = ("general_practice", "cardiology", "pediatrics", "dermatology", "orthopedics")
ENCOUNTER_CLASSES = ("inpatient", "emergency", "ambulatory")
ORDINARY_CODES = ("401.9", "250.00", "486", "585.9", "530.81", "428.0", "414.01", "496")
MORTALITY_CODES = ("E812.0", "E950.4", "E966")
OBSERVATION_CODES = ("heart_rate", "glucose", "systolic_bp", "temperature")
MEDICATION_CODES = ("metformin", "lisinopril", "heparin", "insulin", "furosemide")
PROCEDURE_CODES = ("ct_head", "xray_chest", "ecg", "dialysis")
READMISSION_PROBABILITY = 0.15

logger = logging.getLogger(__name__)


def generate_synthetic(
    registry: SchemaRegistry,
    n_patients: int,
    seed: int,
    rates: dict[str, float] | None = None,
    out_dir: Path | None = None,
) -> dict[str, pd.DataFrame]:
    """Generate one table per declared resource; write ``<resource>.csv`` when ``out_dir`` is set."""
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    merged = dict(DEFAULT_RATES)
    merged.update(rates or {})
    generator = _Generator(registry, n_patients, np.random.default_rng(seed), merged)
    tables = generator.run()
    if out_dir is not None:
        write_tables(tables, out_dir)
    logger.info(
        "event=synthetic_generated resources=%s patients=%s seed=%s",
        len(tables),
        n_patients,
        seed,
    )
    return tables


def write_tables(tables: dict[str, pd.DataFrame], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, frame in tables.items():
        path = out_dir / f"{name}.csv"
        temp_path = path.with_suffix(".tmp")
        frame.to_csv(temp_path, index=False, lineterminator="\n")
        temp_path.replace(path)


def calibrate_intercept(linear: np.ndarray, rate: float) -> float:
    """Intercept b with mean(sigmoid(b + linear)) == rate."""
    if len(linear) == 0:
        return 0.0
    return float(brentq(lambda b: float(np.mean(expit(b + linear))) - rate, -50.0, 50.0))


class _Generator:
    def __init__(
        self,
        registry: SchemaRegistry,
        n_patients: int,
        rng: np.random.Generator,
        rates: dict[str, float],
    ) -> None:
        self.registry = registry
        self.n_patients = n_patients
        self.rng = rng
        self.rates = rates
        self.tables: dict[str, pd.DataFrame] = {}
        self.latent: dict[str, Any] = {}
        self.builders: dict[str, Callable[[], dict[str, pd.DataFrame]]] = {
            "address": lambda: self._lookup("address", max(1, n_patients // 20), city=CITIES),
            "practitioner": self._practitioners,
            "location": lambda: self._lookup(
                "location", max(1, n_patients // 25), neighbourhood=NEIGHBOURHOODS
            ),
            "coding": self._codings,
            "reference_range": self._reference_ranges,
            "patient": self._patients,
            "coverage": self._coverage,
            "encounter": self._encounters,
            "condition": self._conditions,
            "diagnosis": self._diagnoses,
            "appointment": self._appointments,
            "communication_request": self._reminders,
            "observation": self._observations,
            "procedure": self._procedures,
            "medication": self._medications,
        }

    def run(self) -> dict[str, pd.DataFrame]:
        known = [name for name in GENERATION_ORDER if name in self.registry.resources]
        for name in known:
            if name in self.tables:
                continue
            for table_name, frame in self.builders[name]().items():
                if table_name in self.registry.resources:
                    self.tables[table_name] = frame
        for name in self.registry.resources:
            if name not in self.tables:
                self.tables[name] = pd.DataFrame(
                    {self.registry.resource(name).primary_key: self._ids(name, self.n_patients)}
                )
        return {
            name: self._conform(self.registry.resource(name), self.tables[name])
            for name in self.registry.resources
        }

    def has(self, resource: str, variable: str) -> bool:
        schema = self.registry.resources.get(resource)
        return schema is not None and variable in schema.variable_names

    def ids(self, resource: str) -> np.ndarray:
        frame = self.tables.get(resource)
        if frame is None:
            return np.array([], dtype=object)
        return frame[self.registry.resource(resource).primary_key].to_numpy()

    def pick(self, resource: str, size: int) -> np.ndarray:
        pool = self.ids(resource)
        if len(pool) == 0:
            return np.full(size, None, dtype=object)
        return pool[self.rng.integers(0, len(pool), size)]

    def flag(self, rate_name: str, size: int) -> np.ndarray:
        return self.rng.random(size) < self.rates[rate_name]

    def _ids(self, resource: str, count: int) -> list[str]:
        return [f"{resource}-{i}" for i in range(count)]

    def _lookup(self, resource: str, count: int, **choices: tuple[str, ...]) -> dict[str, pd.DataFrame]:
        columns: dict[str, Any] = {"identifier": self._ids(resource, count)}
        for variable, values in choices.items():
            columns[variable] = [values[i % len(values)] for i in range(count)]
        return {resource: pd.DataFrame(columns)}

    def _practitioners(self) -> dict[str, pd.DataFrame]:
        count = max(1, self.n_patients // 20)
        return {
            "practitioner": pd.DataFrame(
                {
                    "identifier": self._ids("practitioner", count),
                    "gender": self.rng.choice(["female", "male"], count),
                    "specialty": self.rng.choice(SPECIALTIES, count),
                }
            )
        }

    def _codings(self) -> dict[str, pd.DataFrame]:
        codes = ORDINARY_CODES + MORTALITY_CODES
        return {
            "coding": pd.DataFrame(
                {
                    "identifier": self._ids("coding", len(codes)),
                    "system": "icd9",
                    "code": codes,
                    "display": [f"condition {code}" for code in codes],
                }
            )
        }

    def _reference_ranges(self) -> dict[str, pd.DataFrame]:
        return {
            "reference_range": pd.DataFrame(
                {
                    "identifier": self._ids("reference_range", len(OBSERVATION_CODES)),
                    "low": [60.0, 70.0, 90.0, 36.1],
                    "high": [100.0, 140.0, 140.0, 37.5],
                    "type": "normal",
                }
            )
        }

    def _patients(self) -> dict[str, pd.DataFrame]:
        n = self.n_patients
        ages = self.rng.integers(0, 96, n)
        self.latent["age"] = dict(zip(self._ids("patient", n), ages))
        birth_dates = [
            (BASE_DATE - pd.Timedelta(days=int(age * 365.25 + offset))).isoformat()
            for age, offset in zip(ages, self.rng.integers(0, 365, n))
        ]
        marital = self.rng.choice(["married", "single", "divorced", "widowed"], n).astype(object)
        marital[self.rng.random(n) < 0.05] = None
        return {
            "patient": pd.DataFrame(
                {
                    "identifier": self._ids("patient", n),
                    "gender": self.rng.choice(["F", "M"], n, p=[0.65, 0.35]),
                    "age": ages,
                    "birth_date": birth_dates,
                    "marital_status": marital,
                    "address": self.pick("address", n),
                }
            )
        }

    def _coverage(self) -> dict[str, pd.DataFrame]:
        patients = self.ids("patient")
        scholarship = self.flag("scholarship", len(patients))
        self.latent["scholarship"] = dict(zip(patients, scholarship))
        return {
            "coverage": pd.DataFrame(
                {
                    "identifier": self._ids("coverage", len(patients)),
                    "beneficiary": patients,
                    "scholarship": scholarship,
                }
            )
        }

    def _encounters(self) -> dict[str, pd.DataFrame]:
        rows: list[dict[str, Any]] = []
        extra = max(0.0, self.rates["encounters_per_patient"] - 1.0)
        for patient in self.ids("patient"):
            start = BASE_DATE + pd.Timedelta(
                days=int(self.rng.integers(0, 720)), hours=int(self.rng.integers(0, 24))
            )
            for _ in range(1 + int(self.rng.poisson(extra))):
                stay = pd.Timedelta(days=float(np.exp(self.rng.normal(1.0, 0.8))))
                end = start + stay
                rows.append(
                    {
                        "identifier": f"encounter-{len(rows)}",
                        "subject": patient,
                        "participant": self.pick("practitioner", 1)[0],
                        "part_of": None,
                        "class": self.rng.choice(ENCOUNTER_CLASSES),
                        "start": start,
                        "end": end,
                    }
                )
                if self.rng.random() < READMISSION_PROBABILITY:
                    gap = pd.Timedelta(days=float(self.rng.uniform(1, 30)))
                else:
                    gap = pd.Timedelta(days=float(self.rng.uniform(31, 400)))
                start = end + gap
        frame = pd.DataFrame(
            rows, columns=["identifier", "subject", "participant", "part_of", "class", "start", "end"]
        )
        if len(frame) > 1:
            # an occasional sub-encounter points at its predecessor
            linked = np.flatnonzero(self.rng.random(len(frame)) < 0.05)
            frame.loc[linked[linked > 0], "part_of"] = frame["identifier"].shift(1)[linked[linked > 0]]
        frame["start"] = frame["start"].map(pd.Timestamp.isoformat)
        frame["end"] = frame["end"].map(pd.Timestamp.isoformat)
        return {"encounter": frame}

    def _conditions(self) -> dict[str, pd.DataFrame]:
        if self.has("condition", "hypertension"):
            patients = self.ids("patient")
            n = len(patients)
            flags = {name: self.flag(name, n) for name in ("hypertension", "diabetes", "alcoholism")}
            for name, values in flags.items():
                self.latent[name] = dict(zip(patients, values))
            handicap = np.where(self.rng.random(n) < 0.02, self.rng.integers(1, 4, n), 0)
            return {
                "condition": pd.DataFrame(
                    {
                        "identifier": self._ids("condition", n),
                        "subject": patients,
                        **flags,
                        "handicap": handicap,
                    }
                )
            }
        encounters = self.tables.get("encounter")
        if encounters is None:
            return {"condition": pd.DataFrame({"identifier": self._ids("condition", self.n_patients)})}
        n = len(encounters)
        return {
            "condition": pd.DataFrame(
                {
                    "identifier": self._ids("condition", n),
                    "subject": encounters["subject"].to_numpy(),
                    "encounter": encounters["identifier"].to_numpy(),
                    "coding": self.pick("coding", n),
                    "clinical_status": self.rng.choice(["active", "resolved"], n),
                    "onset": encounters["start"].to_numpy(),
                }
            )
        }

    def _diagnoses(self) -> dict[str, pd.DataFrame]:
        encounters = self.tables.get("encounter")
        if encounters is None:
            return {}
        conditions = self.tables.get("condition")
        rows: list[dict[str, Any]] = []
        for position, encounter in enumerate(encounters["identifier"]):
            fatal = self.rng.random() < self.rates["mortality_rate"]
            count = 1 + int(self.rng.integers(0, 2))
            for rank in range(1, count + 1):
                if fatal and rank == 1:
                    code = self.rng.choice(MORTALITY_CODES)
                else:
                    code = self.rng.choice(ORDINARY_CODES)
                rows.append(
                    {
                        "identifier": f"diagnosis-{len(rows)}",
                        "encounter": encounter,
                        "condition": (
                            conditions["identifier"].iloc[position]
                            if conditions is not None and "encounter" in conditions
                            else None
                        ),
                        "code": code,
                        "rank": rank,
                    }
                )
        return {
            "diagnosis": pd.DataFrame(
                rows, columns=["identifier", "encounter", "condition", "code", "rank"]
            )
        }

    def _appointments(self) -> dict[str, pd.DataFrame]:
        patients = self.ids("patient")
        extra = max(0.0, self.rates["appointments_per_patient"] - 1.0)
        owners = np.repeat(patients, 1 + self.rng.poisson(extra, len(patients)))
        n = len(owners)
        created = BASE_DATE + pd.to_timedelta(self.rng.integers(0, 60, n), unit="D")
        lead_days = np.minimum(self.rng.exponential(10.0, n).astype(int), 60)
        start = created + pd.to_timedelta(lead_days, unit="D") + pd.to_timedelta(
            self.rng.integers(7, 18, n), unit="h"
        )
        minutes = self.rng.choice([15, 20, 30], n)
        reminder = self.flag("reminder_rate", n)
        age = np.array([self.latent.get("age", {}).get(owner, 40) for owner in owners], dtype=float)
        linear = (
            -1.2 * reminder
            + 0.05 * lead_days
            - 0.02 * (age - 37.0)
            + 0.3 * self._owner_flag("scholarship", owners)
            + 0.4 * self._owner_flag("alcoholism", owners)
            - 0.2 * self._owner_flag("hypertension", owners)
            - 0.1 * self._owner_flag("diabetes", owners)
        )
        rate = float(np.clip(self.rates["noshow_rate"], 0.0, 1.0))
        if rate in (0.0, 1.0):
            noshow = np.full(n, rate == 1.0)
        else:
            probability = expit(calibrate_intercept(linear, rate) + linear)
            noshow = self.rng.random(n) < probability
        identifiers = self._ids("appointment", n)
        self.latent["reminder"] = dict(zip(identifiers, reminder))
        period_ids = self._ids("period", n)
        period_key = "period" if self.has("appointment", "period") else "requested_period"
        tables = {
            "appointment": pd.DataFrame(
                {
                    "identifier": identifiers,
                    "patient": owners,
                    "practitioner": self.pick("practitioner", n),
                    "location": self.pick("location", n),
                    period_key: period_ids,
                    "status": np.where(noshow, "noshow", "fulfilled"),
                    "created": [value.isoformat() for value in created],
                    "start": [value.isoformat() for value in start],
                    "minutes_duration": minutes,
                    "reminder_sent": reminder,
                }
            ),
            "period": pd.DataFrame(
                {
                    "identifier": period_ids,
                    "start": [value.isoformat() for value in start],
                    "end": [
                        (value + pd.Timedelta(minutes=int(length))).isoformat()
                        for value, length in zip(start, minutes)
                    ],
                }
            ),
        }
        return tables

    def _owner_flag(self, name: str, owners: np.ndarray) -> np.ndarray:
        values = self.latent.get(name, {})
        return np.array([bool(values.get(owner, False)) for owner in owners], dtype=float)

    def _reminders(self) -> dict[str, pd.DataFrame]:
        sent = [appointment for appointment, flag in self.latent.get("reminder", {}).items() if flag]
        return {
            "communication_request": pd.DataFrame(
                {
                    "identifier": self._ids("communication_request", len(sent)),
                    "appointment": sent,
                    "category": "reminder",
                }
            )
        }

    def _per_encounter(self, resource: str, per: int) -> pd.DataFrame:
        encounters = self.tables.get("encounter")
        if encounters is None:
            return pd.DataFrame({"identifier": self._ids(resource, self.n_patients)})
        repeated = encounters.loc[encounters.index.repeat(per)].reset_index(drop=True)
        starts = pd.to_datetime(repeated["start"], utc=True, format="ISO8601")
        ends = pd.to_datetime(repeated["end"], utc=True, format="ISO8601")
        offsets = self.rng.random(len(repeated))
        moments = starts + (ends - starts) * offsets
        return pd.DataFrame(
            {
                "identifier": self._ids(resource, len(repeated)),
                "subject": repeated["subject"].to_numpy(),
                "encounter": repeated["identifier"].to_numpy(),
                "moment": [value.isoformat() for value in moments],
            }
        )

    def _observations(self) -> dict[str, pd.DataFrame]:
        frame = self._per_encounter("observation", 2)
        if "moment" not in frame:
            return {"observation": frame}
        n = len(frame)
        codes = self.rng.integers(0, len(OBSERVATION_CODES), n)
        means = np.array([80.0, 110.0, 120.0, 36.8])[codes]
        spreads = np.array([15.0, 30.0, 18.0, 0.6])[codes]
        ranges = self.ids("reference_range")
        frame["code"] = np.asarray(OBSERVATION_CODES)[codes]
        frame["value"] = np.round(self.rng.normal(means, spreads), 2)
        frame["reference_range"] = ranges[codes] if len(ranges) == len(OBSERVATION_CODES) else None
        frame = frame.rename(columns={"moment": "effective"})
        return {"observation": frame}

    def _procedures(self) -> dict[str, pd.DataFrame]:
        frame = self._per_encounter("procedure", 1)
        if "moment" not in frame:
            return {"procedure": frame}
        frame = frame[self.rng.random(len(frame)) < 0.5].reset_index(drop=True)
        frame["identifier"] = self._ids("procedure", len(frame))
        frame["performer"] = self.pick("practitioner", len(frame))
        frame["code"] = self.rng.choice(PROCEDURE_CODES, len(frame))
        return {"procedure": frame.rename(columns={"moment": "performed"})}

    def _medications(self) -> dict[str, pd.DataFrame]:
        frame = self._per_encounter("medication", 1)
        if "moment" not in frame:
            return {"medication": frame}
        frame["code"] = self.rng.choice(MEDICATION_CODES, len(frame))
        frame["dose"] = np.round(self.rng.uniform(1.0, 100.0, len(frame)), 1)
        return {"medication": frame.rename(columns={"moment": "authored"})}

    def _conform(self, schema: ResourceSchema, frame: pd.DataFrame) -> pd.DataFrame:
        """Keep declared columns in declaration order; fill undeclared ones generically."""
        n = len(frame)
        columns: dict[str, Any] = {}
        for variable in schema.variables:
            if variable.name in frame.columns:
                values = frame[variable.name]
            else:
                values = self._generic(schema, variable.name, variable.semantic_type, n)
            if variable.semantic_type == "boolean":
                values = pd.Series(values).map(
                    lambda value: None if value is None or pd.isna(value) else ("true" if value else "false")
                )
            columns[variable.name] = np.asarray(values, dtype=object)
        return pd.DataFrame(columns, columns=schema.variable_names)

    def _generic(self, schema: ResourceSchema, variable: str, semantic_type: str, n: int) -> Any:
        if variable == schema.primary_key:
            return self._ids(schema.name, n)
        if semantic_type == "foreign_key":
            for relation in self.registry.relations:
                if relation.child_resource == schema.name and relation.child_variable == variable:
                    if relation.parent_resource not in self.tables:
                        break
                    pool = self.tables[relation.parent_resource][relation.parent_variable].to_numpy()
                    if relation.is_self_reference or len(pool) == 0:
                        break
                    return pool[self.rng.integers(0, len(pool), n)]
            return [None] * n
        if semantic_type == "numeric":
            return np.round(self.rng.normal(50.0, 15.0, n), 3)
        if semantic_type == "boolean":
            return self.rng.random(n) < 0.5
        if semantic_type == "datetime":
            offsets = pd.to_timedelta(self.rng.integers(0, 720, n), unit="D")
            return [(BASE_DATE + offset).isoformat() for offset in offsets]
        if semantic_type == "categorical":
            return self.rng.choice(["alpha", "beta", "gamma"], n)
        if semantic_type == "text":
            return [f"{schema.name} note {i}" for i in range(n)]
        return self._ids(f"{schema.name}.{variable}", n)
