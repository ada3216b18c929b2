"""CLI entrypoint and logging setup."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Iterable

from fhir_automl.config import (
    PROBLEM_NAMES,
    ConfigError,
    RunConfig,
    default_config,
    load_config,
    task_type_for,
)
from fhir_automl.orchestrator import (
    FEATURE_DEFS_NAME,
    FEATURES_NAME,
    LABELS_NAME,
    MODEL_NAME,
    TEST_FEATURES_NAME,
    TEST_LABELS_NAME,
    PipelineOrchestrator,
    StageError,
)

DATA_COMMANDS = {"assemble", "audit", "label", "featurize", "run", "synth"}
PROBLEM_COMMANDS = {"label", "featurize", "run"}
FEATURIZE_COMMANDS = {"featurize", "run"}
AUTOML_COMMANDS = {"train", "run"}


def parse_args(argv: Iterable[str] | None = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to config.toml (defaults apply when omitted)")
    common.add_argument("--log-level", help="override log level")
    common.add_argument("--output-dir", help="directory for stage artifacts")
    common.add_argument("--jobs", type=int, help="worker threads for parallel stages")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--schema", help="schema file or bundled schema name (fhir, noshow)")
    data.add_argument("--data", help="directory of <resource>.csv files")
    data.add_argument(
        "--strict",
        action="store_true",
        default=None,
        help="fail on values that do not coerce to their declared type",
    )

    problem = argparse.ArgumentParser(add_help=False)
    problem.add_argument("--problem", choices=PROBLEM_NAMES, help="prediction problem")
    problem.add_argument("--target", help="override the problem's target entity")
    problem.add_argument("--offset", help="cutoff offset from the anchor, e.g. 48h")
    problem.add_argument("--window", help="readmission window, e.g. 30d")
    problem.add_argument("--threshold-days", type=int, help="length-of-stay threshold")
    problem.add_argument("--diagnosis-code", help="code prefix for the diagnosis problem")
    problem.add_argument(
        "--mortality-codes", help="comma-separated code prefixes for the mortality problem"
    )

    featurize = argparse.ArgumentParser(add_help=False)
    featurize.add_argument("--depth", type=int, help="maximum feature depth")
    featurize.add_argument("--agg", help="comma-separated aggregation primitives")
    featurize.add_argument("--trans", help="comma-separated transform primitives")

    automl = argparse.ArgumentParser(add_help=False)
    automl.add_argument("--task", choices=("binary", "regression"), help="expected task type")
    automl.add_argument("--estimators", help="comma-separated estimator families")
    automl.add_argument("--budget", type=int, help="trials per estimator family")
    automl.add_argument("--cv", type=int, help="cross-validation folds")
    automl.add_argument("--seed", type=int, help="random seed")
    automl.add_argument("--metric", help="metric to optimize")
    automl.add_argument("--ratio", type=float, help="train share of the train/test split")

    bootstrap = argparse.ArgumentParser(add_help=False)
    bootstrap.add_argument(
        "--bootstrap", type=int, help="bootstrap resamples for metric intervals (0 disables)"
    )

    parser = argparse.ArgumentParser(prog="fhir_automl")
    subparsers = parser.add_subparsers(dest="command")

    subparsers.add_parser(
        "assemble", parents=[common, data], help="load CSVs into an entityset"
    )
    audit = subparsers.add_parser(
        "audit", parents=[common, data], help="profile data quality and distributions"
    )
    audit.add_argument("--expect", help="expectations TOML")
    subparsers.add_parser(
        "label", parents=[common, data, problem], help="generate label times"
    )
    featurize_cmd = subparsers.add_parser(
        "featurize",
        parents=[common, data, problem, featurize],
        help="compute the feature matrix",
    )
    featurize_cmd.add_argument("--labels", help="label_times.csv from the label stage")

    train = subparsers.add_parser(
        "train", parents=[common, automl], help="tune and fit a pipeline"
    )
    train.add_argument("--features", help="feature_matrix.csv")
    train.add_argument("--labels", help="label_times.csv")

    predict = subparsers.add_parser("predict", parents=[common], help="score a feature matrix")
    predict.add_argument("--model", help="model.joblib from the train stage")
    predict.add_argument("--features", help="feature CSV to score")

    report = subparsers.add_parser(
        "report", parents=[common, bootstrap], help="evaluate a model on held-out rows"
    )
    report.add_argument("--model", help="model.joblib from the train stage")
    report.add_argument("--test-features", help="test_features.csv")
    report.add_argument("--test-labels", help="test_label_times.csv")

    run = subparsers.add_parser(
        "run",
        parents=[common, data, problem, featurize, automl, bootstrap],
        help="run every stage",
    )
    run.add_argument("--expect", help="expectations TOML")

    synth = subparsers.add_parser(
        "synth", parents=[common, data], help="write a synthetic dataset"
    )
    synth.add_argument("--n-patients", type=int, help="number of patients")
    synth.add_argument("--synth-seed", type=int, help="generator seed")
    synth.add_argument(
        "--rate",
        action="append",
        default=[],
        metavar="NAME=VALUE",
        help="override a generator rate (repeatable)",
    )
    synth.add_argument("--out", help="output directory (defaults to --data)")

    if argv is None:
        argv = sys.argv[1:]
    argv = list(argv)
    if not argv:
        parser.print_help()
        raise SystemExit(0)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("command required")
    return args


def setup_logging(level: str) -> None:
    numeric = _parse_level(level)
    logging.basicConfig(
        level=numeric,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    logging.getLogger("optuna").setLevel(max(numeric, logging.WARNING))


def main(argv: Iterable[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        code = int(exc.code or 0)
        # argparse reports usage errors as 2; stage failures own that code here
        return 1 if code == 2 else code

    try:
        config = _load_and_override_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    setup_logging(config.global_cfg.log_level)
    logger = logging.getLogger(__name__)
    logger.info(
        "event=command_start command=%s output_dir=%s",
        args.command,
        config.global_cfg.output_dir,
    )
    orchestrator = PipelineOrchestrator(config, logger=logging.getLogger("fhir_automl.orchestrator"))
    try:
        return COMMAND_HANDLERS[args.command](args, orchestrator)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 2


def run_assemble(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    orchestrator.stage("assemble", orchestrator.assemble)
    return 0


def run_audit(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    entityset = orchestrator.stage("assemble", orchestrator.assemble)
    orchestrator.stage("audit", lambda: orchestrator.audit(entityset))
    return 0


def run_label(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    entityset = orchestrator.stage("assemble", orchestrator.assemble)
    orchestrator.stage("label", lambda: orchestrator.label(entityset))
    return 0


def run_featurize(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    labels_path = _path_or(args.labels, orchestrator.artifact(LABELS_NAME))
    entityset = orchestrator.stage("assemble", orchestrator.assemble)

    def featurize() -> Any:
        label_times = orchestrator.load_labels(labels_path)
        return orchestrator.featurize(entityset, label_times)

    orchestrator.stage("featurize", featurize)
    return 0


def run_train(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    features_path = _path_or(args.features, orchestrator.artifact(FEATURES_NAME))
    labels_path = _path_or(args.labels, orchestrator.artifact(LABELS_NAME))

    def train() -> Any:
        label_times = orchestrator.load_labels(labels_path)
        feature_matrix = orchestrator.load_features(features_path)
        return orchestrator.train(feature_matrix, label_times)

    orchestrator.stage("train", train)
    return 0


def run_predict(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    model_path = _path_or(args.model, orchestrator.artifact(MODEL_NAME))
    features_path = _path_or(args.features, orchestrator.artifact(TEST_FEATURES_NAME))

    def predict() -> Any:
        fitted = orchestrator.load_model(model_path)
        return orchestrator.predict(fitted, orchestrator.load_features(features_path))

    orchestrator.stage("predict", predict)
    return 0


def run_report(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    model_path = _path_or(args.model, orchestrator.artifact(MODEL_NAME))
    features_path = _path_or(args.test_features, orchestrator.artifact(TEST_FEATURES_NAME))
    labels_path = _path_or(args.test_labels, orchestrator.artifact(TEST_LABELS_NAME))

    def report() -> Any:
        fitted = orchestrator.load_model(model_path)
        return orchestrator.report(
            fitted,
            orchestrator.load_features(
                features_path, features_path.with_name(FEATURE_DEFS_NAME)
            ),
            orchestrator.load_labels(labels_path),
        )

    orchestrator.stage("report", report)
    return 0


def run_pipeline(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    return orchestrator.run()


def run_synth(args: argparse.Namespace, orchestrator: PipelineOrchestrator) -> int:
    config = orchestrator.config
    if args.out:
        out_dir = Path(args.out).expanduser().resolve()
    elif config.data.data_dir is not None:
        out_dir = config.data.data_dir
    else:
        out_dir = config.global_cfg.output_dir / "data"
    counts = orchestrator.stage("synth", lambda: orchestrator.synthesize(out_dir))
    logging.getLogger(__name__).info(
        "event=synth_complete out_dir=%s rows=%s", out_dir, json.dumps(counts, sort_keys=True)
    )
    return 0


COMMAND_HANDLERS = {
    "assemble": run_assemble,
    "audit": run_audit,
    "label": run_label,
    "featurize": run_featurize,
    "train": run_train,
    "predict": run_predict,
    "report": run_report,
    "run": run_pipeline,
    "synth": run_synth,
}


def _load_and_override_config(args: argparse.Namespace) -> RunConfig:
    if args.config:
        config = load_config(Path(args.config).expanduser())
    else:
        config = default_config()
    return config.with_overrides(**_overrides(args, config))


def _overrides(args: argparse.Namespace, config: RunConfig) -> dict[str, dict[str, Any]]:
    command = args.command
    sections: dict[str, dict[str, Any]] = {
        "global_cfg": {
            "log_level": args.log_level,
            "output_dir": _abs_path(args.output_dir),
            "jobs": args.jobs,
        }
    }
    if command in DATA_COMMANDS:
        sections["global_cfg"]["strict"] = args.strict
        sections["data"] = {
            "schema": _schema_value(args.schema),
            "data_dir": _abs_path(args.data),
            "expectations": _abs_path(getattr(args, "expect", None)),
        }
    if command in PROBLEM_COMMANDS:
        sections["problem"] = {
            "name": args.problem,
            "target_entity": args.target,
            "offset": args.offset,
            "window": args.window,
            "threshold_days": args.threshold_days,
            "diagnosis_code": args.diagnosis_code,
            "mortality_codes": _names(args.mortality_codes),
        }
    if command in FEATURIZE_COMMANDS:
        sections["featurizer"] = {
            "max_depth": args.depth,
            "agg_primitives": _names(args.agg),
            "trans_primitives": _names(args.trans),
        }
    if command in AUTOML_COMMANDS:
        sections["automl"] = {
            "estimators": _names(args.estimators),
            "budget": args.budget,
            "cv_folds": args.cv,
            "seed": args.seed,
            "metric": args.metric,
            "train_ratio": args.ratio,
        }
        if command == "train":
            problem_name = _labels_problem(args) or (
                "los_regression" if args.task == "regression" else None
            )
            if problem_name is not None:
                sections["problem"] = {"name": problem_name}
        problem_name = sections.get("problem", {}).get("name") or config.problem.name
        if args.task and args.task != task_type_for(problem_name):
            raise ConfigError(f"--task {args.task} does not match problem {problem_name}")
    if command in {"report", "run"}:
        sections.setdefault("automl", {})["bootstrap"] = args.bootstrap
    if command == "synth":
        rates = dict(config.synthetic.rates)
        rates.update(_rates(args.rate))
        sections["synthetic"] = {
            "n_patients": args.n_patients,
            "seed": args.synth_seed,
            "rates": rates,
        }
    return sections


def _labels_problem(args: argparse.Namespace) -> str | None:
    """Problem name recorded in the label sidecar, so metric checks use its task type."""
    if not args.labels:
        return None
    sidecar = Path(args.labels).expanduser().with_suffix(".json")
    try:
        with sidecar.open("r", encoding="utf-8") as handle:
            return str(json.load(handle)["problem"]["name"])
    except (OSError, ValueError, KeyError):
        return None


def _rates(values: list[str]) -> dict[str, float]:
    rates: dict[str, float] = {}
    for value in values:
        name, sep, number = value.partition("=")
        if not sep:
            raise ConfigError(f"--rate expects NAME=VALUE; got {value}")
        try:
            rates[name.strip()] = float(number)
        except ValueError as exc:
            raise ConfigError(f"--rate {name}: {exc}") from exc
    return rates


def _names(value: str | None) -> tuple[str, ...] | None:
    if value is None:
        return None
    return tuple(part.strip() for part in value.split(",") if part.strip())


def _abs_path(value: str | None) -> Path | None:
    if value is None:
        return None
    return Path(value).expanduser().resolve()


def _schema_value(value: str | None) -> str | None:
    if value is None or value in {"fhir", "noshow"}:
        return value
    return str(Path(value).expanduser().resolve())


def _path_or(value: str | None, default: Path) -> Path:
    return Path(value).expanduser().resolve() if value else default


def _parse_level(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        pass
    normalized = value.lower()
    mapping = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "error": logging.ERROR,
        "critical": logging.CRITICAL,
    }
    if normalized not in mapping:
        raise ConfigError(f"invalid log level: {value}")
    return mapping[normalized]
