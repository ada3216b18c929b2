"""Configuration loading and validation."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from datetime import timedelta
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - fallback for 3.10
    import tomli as tomllib  # type: ignore[no-redef]

OUTPUT_DIR_ENV = "FHIR_AUTOML_OUTPUT_DIR"

DEFAULT_LOG_LEVEL = "info"
DEFAULT_OUTPUT_DIR = "./fhir_automl_out"
DEFAULT_JOBS = 1
DEFAULT_STRICT = False
DEFAULT_SCHEMA = "noshow"
DEFAULT_PROBLEM = "noshow"
DEFAULT_OFFSET = "0"
DEFAULT_WINDOW = "30d"
DEFAULT_THRESHOLD_DAYS = 7
DEFAULT_MORTALITY_CODES = ("E81", "E95", "E96")
DEFAULT_MAX_DEPTH = 2
DEFAULT_AGG_PRIMITIVES = ("sum", "std", "max", "min", "skew", "mean", "count", "mode")
DEFAULT_TRANS_PRIMITIVES = ("day", "month", "year", "is_weekend")
DEFAULT_BUDGET = 100
DEFAULT_CV_FOLDS = 10
DEFAULT_SEED = 42
DEFAULT_TRAIN_RATIO = 0.8
DEFAULT_BOOTSTRAP = 0
DEFAULT_N_PATIENTS = 500
DEFAULT_SYNTHETIC_SEED = 42

PROBLEM_NAMES = (
    "noshow",
    "los_classification",
    "los_regression",
    "readmission",
    "diagnosis",
    "mortality",
)
METRICS = {
    "binary": ("accuracy", "f1_macro", "precision_macro", "recall_macro", "auc"),
    "regression": ("r2", "neg_mse", "neg_mae"),
}

_DURATION_RE = re.compile(r"^(?P<value>\d+)(?P<unit>[smhd])$")
_DURATION_UNITS = {"s": "seconds", "m": "minutes", "h": "hours", "d": "days"}


class ConfigError(ValueError):
    """Raised when configuration is invalid."""


@dataclass(frozen=True)
class GlobalConfig:
    log_level: str
    output_dir: Path
    jobs: int
    strict: bool


@dataclass(frozen=True)
class DataConfig:
    schema: str
    data_dir: Path | None
    expectations: Path | None


@dataclass(frozen=True)
class ProblemConfig:
    name: str
    target_entity: str | None
    offset: str
    window: str
    threshold_days: int
    diagnosis_code: str | None
    mortality_codes: tuple[str, ...]


@dataclass(frozen=True)
class FeaturizerConfig:
    max_depth: int
    agg_primitives: tuple[str, ...]
    trans_primitives: tuple[str, ...]


@dataclass(frozen=True)
class AutoMLConfig:
    estimators: tuple[str, ...]
    budget: int
    cv_folds: int
    metric: str | None
    seed: int
    train_ratio: float
    bootstrap: int
    spaces: dict[str, dict[str, Any]] = field(default_factory=dict)


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int
    seed: int
    rates: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    global_cfg: GlobalConfig
    data: DataConfig
    problem: ProblemConfig
    featurizer: FeaturizerConfig
    automl: AutoMLConfig
    synthetic: SyntheticConfig

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "RunConfig":
        global_data = data.get("global", {})
        data_data = data.get("data", {})
        problem_data = data.get("problem", {})
        featurizer_data = data.get("featurizer", {})
        automl_data = data.get("automl", {})
        synthetic_data = data.get("synthetic", {})

        global_cfg = GlobalConfig(
            log_level=str(global_data.get("log_level", DEFAULT_LOG_LEVEL)),
            output_dir=_expand_path(
                global_data.get(
                    "output_dir", os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)
                ),
                resolve=True,
            ),
            jobs=int(global_data.get("jobs", DEFAULT_JOBS)),
            strict=global_data.get("strict", DEFAULT_STRICT),
        )
        data_cfg = DataConfig(
            schema=str(data_data.get("schema", DEFAULT_SCHEMA)),
            data_dir=_optional_path(data_data.get("data_dir")),
            expectations=_optional_path(data_data.get("expectations")),
        )
        problem = ProblemConfig(
            name=str(problem_data.get("name", DEFAULT_PROBLEM)),
            target_entity=_optional_str(problem_data.get("target_entity")),
            offset=str(problem_data.get("offset", DEFAULT_OFFSET)),
            window=str(problem_data.get("window", DEFAULT_WINDOW)),
            threshold_days=int(
                problem_data.get("threshold_days", DEFAULT_THRESHOLD_DAYS)
            ),
            diagnosis_code=_optional_str(problem_data.get("diagnosis_code")),
            mortality_codes=tuple(
                str(code)
                for code in problem_data.get("mortality_codes", DEFAULT_MORTALITY_CODES)
            ),
        )
        featurizer = FeaturizerConfig(
            max_depth=int(featurizer_data.get("max_depth", DEFAULT_MAX_DEPTH)),
            agg_primitives=_as_names(
                featurizer_data.get("agg_primitives", DEFAULT_AGG_PRIMITIVES)
            ),
            trans_primitives=_as_names(
                featurizer_data.get("trans_primitives", DEFAULT_TRANS_PRIMITIVES)
            ),
        )
        automl = AutoMLConfig(
            estimators=_as_names(automl_data.get("estimators", ())),
            budget=int(automl_data.get("budget", DEFAULT_BUDGET)),
            cv_folds=int(automl_data.get("cv_folds", DEFAULT_CV_FOLDS)),
            metric=_optional_str(automl_data.get("metric")),
            seed=int(automl_data.get("seed", DEFAULT_SEED)),
            train_ratio=float(automl_data.get("train_ratio", DEFAULT_TRAIN_RATIO)),
            bootstrap=int(automl_data.get("bootstrap", DEFAULT_BOOTSTRAP)),
            spaces={
                str(name): dict(space)
                for name, space in automl_data.get("spaces", {}).items()
            },
        )
        synthetic = SyntheticConfig(
            n_patients=int(synthetic_data.get("n_patients", DEFAULT_N_PATIENTS)),
            seed=int(synthetic_data.get("seed", DEFAULT_SYNTHETIC_SEED)),
            rates={
                str(name): float(value)
                for name, value in synthetic_data.get("rates", {}).items()
            },
        )
        config = RunConfig(
            global_cfg=global_cfg,
            data=data_cfg,
            problem=problem,
            featurizer=featurizer,
            automl=automl,
            synthetic=synthetic,
        )
        validate_config(config)
        return config

    def with_overrides(self, **sections: dict[str, Any]) -> "RunConfig":
        """Return a copy with per-section field overrides, re-validated.

        ``None`` values are skipped so argparse defaults never clobber config keys.
        """
        updated: dict[str, Any] = {}
        for section, values in sections.items():
            current = getattr(self, section)
            changes = {key: value for key, value in values.items() if value is not None}
            if changes:
                updated[section] = replace(current, **changes)
        config = replace(self, **updated) if updated else self
        validate_config(config)
        return config


def load_config(path: Path) -> RunConfig:
    if not path.is_absolute():
        raise ConfigError(f"config path must be absolute: {path}")
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise ConfigError(f"failed to read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return RunConfig.from_dict(data)


def default_config() -> RunConfig:
    return RunConfig.from_dict({})


def validate_config(config: RunConfig) -> None:
    _validate_log_level(config.global_cfg.log_level)
    _validate_path(config.global_cfg.output_dir, "global.output_dir")
    if config.global_cfg.jobs < 1:
        raise ConfigError("global.jobs must be >= 1")
    if not isinstance(config.global_cfg.strict, bool):
        raise ConfigError("global.strict must be true or false")

    if not config.data.schema:
        raise ConfigError("data.schema is required")
    if config.data.schema not in {"fhir", "noshow"}:
        _validate_path(Path(config.data.schema), "data.schema")
    if config.data.data_dir is not None:
        _validate_path(config.data.data_dir, "data.data_dir")
    if config.data.expectations is not None:
        _validate_path(config.data.expectations, "data.expectations")

    if config.problem.name not in PROBLEM_NAMES:
        raise ConfigError(
            f"problem.name must be one of {list(PROBLEM_NAMES)}; got {config.problem.name}"
        )
    _validate_duration(config.problem.offset, "problem.offset")
    _validate_duration(config.problem.window, "problem.window")
    _validate_positive(config.problem.threshold_days, "problem.threshold_days")
    if config.problem.name == "diagnosis" and not config.problem.diagnosis_code:
        raise ConfigError("problem.diagnosis_code is required for diagnosis")
    if config.problem.name == "mortality" and not config.problem.mortality_codes:
        raise ConfigError("problem.mortality_codes must not be empty")

    if config.featurizer.max_depth < 0:
        raise ConfigError("featurizer.max_depth must be >= 0")
    # deferred import: primitives pulls in pandas
    from fhir_automl.primitives import AGGREGATION_PRIMITIVES, TRANSFORM_PRIMITIVES

    for name in config.featurizer.agg_primitives:
        if name not in AGGREGATION_PRIMITIVES:
            raise ConfigError(f"featurizer.agg_primitives: unknown primitive {name}")
    for name in config.featurizer.trans_primitives:
        if name not in TRANSFORM_PRIMITIVES:
            raise ConfigError(f"featurizer.trans_primitives: unknown primitive {name}")

    _validate_positive(config.automl.budget, "automl.budget")
    if config.automl.cv_folds < 2:
        raise ConfigError("automl.cv_folds must be >= 2")
    task_type = task_type_for(config.problem.name)
    if config.automl.metric is not None and config.automl.metric not in METRICS[task_type]:
        raise ConfigError(
            f"automl.metric must be one of {list(METRICS[task_type])} "
            f"for {task_type} tasks; got {config.automl.metric}"
        )
    if not 0.0 < config.automl.train_ratio < 1.0:
        raise ConfigError("automl.train_ratio must be between 0 and 1")
    if config.automl.bootstrap != 0 and config.automl.bootstrap < 100:
        raise ConfigError("automl.bootstrap must be 0 or >= 100")
    from fhir_automl.estimators import ESTIMATORS

    for name in config.automl.estimators:
        entry = ESTIMATORS.get(name)
        if entry is None:
            raise ConfigError(f"automl.estimators: unknown estimator {name}")
        if entry.task_type != task_type:
            raise ConfigError(
                f"automl.estimators: {name} is a {entry.task_type} estimator, "
                f"problem {config.problem.name} is {task_type}"
            )

    _validate_positive(config.synthetic.n_patients, "synthetic.n_patients")
    for name, value in config.synthetic.rates.items():
        if value < 0:
            raise ConfigError(f"synthetic.rates.{name} must be >= 0")


def task_type_for(problem_name: str) -> str:
    return "regression" if problem_name == "los_regression" else "binary"


def default_metric(task_type: str) -> str:
    return "r2" if task_type == "regression" else "f1_macro"


def parse_duration(value: str) -> timedelta:
    """Parse ``"48h"``-style durations; ``"0"`` means no offset."""
    text = str(value).strip()
    if text == "0":
        return timedelta(0)
    match = _DURATION_RE.match(text)
    if not match:
        raise ConfigError(f"invalid duration {value!r}; expected <int><s|m|h|d> or 0")
    unit = _DURATION_UNITS[match.group("unit")]
    return timedelta(**{unit: int(match.group("value"))})


def _expand_path(raw: Any, resolve: bool = False) -> Path:
    path = Path(str(raw)).expanduser()
    if resolve and not path.is_absolute():
        path = path.resolve()
    return path


def _optional_path(raw: Any) -> Path | None:
    if raw is None or raw == "":
        return None
    return _expand_path(raw)


def _optional_str(raw: Any) -> str | None:
    if raw is None or raw == "":
        return None
    return str(raw)


def _as_names(raw: Any) -> tuple[str, ...]:
    if isinstance(raw, str):
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return tuple(str(part) for part in raw)


def _validate_path(path: Path, field: str) -> None:
    if not path.is_absolute():
        raise ConfigError(f"{field} must be an absolute path: {path}")


def _validate_positive(value: int, field: str) -> None:
    if value <= 0:
        raise ConfigError(f"{field} must be > 0")


def _validate_duration(value: str, field: str) -> None:
    try:
        parse_duration(value)
    except ConfigError as exc:
        raise ConfigError(f"{field}: {exc}") from exc


def _validate_log_level(value: str) -> None:
    valid = {"debug", "info", "warning", "error", "critical"}
    if value.lower() not in valid:
        raise ConfigError(
            f"global.log_level must be one of {sorted(valid)}; got {value}"
        )
