"""Run the fhir_automl CLI from harness configuration."""

from __future__ import annotations

import os
import shlex
import subprocess
from pathlib import Path
from typing import Any, Sequence

import tomli_w

CMD_ENV = "FHIR_AUTOML_CMD"
REPO_ROOT = Path(__file__).resolve().parents[2]


def resolve_command(config: dict[str, Any]) -> list[str]:
    """CLI command from config; ``FHIR_AUTOML_CMD`` (shell syntax) replaces it."""
    override = os.environ.get(CMD_ENV, "").strip()
    if not override:
        return list(config["tool"]["cmd"])
    try:
        command = shlex.split(override)
    except ValueError as exc:
        raise ValueError(f"{CMD_ENV}: cannot parse {override!r}: {exc}") from exc
    return command


def tool_config(config: dict[str, Any], output_dir: Path) -> dict[str, Any]:
    """The tool's own config for one run, built from the harness [run] table."""
    run = config["run"]
    return {
        "global": {
            "log_level": run.get("log_level", "info"),
            "output_dir": str(output_dir.resolve()),
            "jobs": int(run.get("jobs", 1)),
        },
        "data": {
            "schema": run["schema"],
            "data_dir": str(Path(config["paths"]["data_dir"]).resolve()),
        },
        "problem": {"name": run["problem"]},
        "featurizer": {"max_depth": int(run["max_depth"])},
        "automl": {
            "estimators": list(run["estimators"]),
            "budget": int(run["budget"]),
            "cv_folds": int(run["cv_folds"]),
            "seed": int(run["seed"]),
            "bootstrap": int(run.get("bootstrap", 0)),
        },
        "synthetic": {
            "n_patients": int(run["n_patients"]),
            "seed": int(run["synth_seed"]),
        },
    }


def write_tool_config(config: dict[str, Any], output_dir: str | Path) -> Path:
    output_dir = Path(output_dir)
    run_dir = Path(config["paths"]["run_dir"]).resolve()
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / f"tool_config_{output_dir.name}.toml"
    path.write_text(tomli_w.dumps(tool_config(config, output_dir)), encoding="utf-8")
    return path


def build_env(*, set_pythonpath: bool = True) -> dict[str, str]:
    """Environment for the child; the checkout goes first on PYTHONPATH."""
    env = dict(os.environ)
    if set_pythonpath:
        entries = [entry for entry in env.get("PYTHONPATH", "").split(os.pathsep) if entry]
        if str(REPO_ROOT) not in entries:
            entries.insert(0, str(REPO_ROOT))
        env["PYTHONPATH"] = os.pathsep.join(entries)
    return env


def run_tool(
    config: dict[str, Any],
    args: Sequence[str],
    *,
    output_dir: str | Path | None = None,
    dry_run: bool = False,
    check: bool = True,
) -> subprocess.CompletedProcess[str] | None:
    """Run one CLI command against a freshly rendered tool config."""
    config_path = write_tool_config(config, output_dir or config["paths"]["output_dir"])
    command = [*resolve_command(config), *args, "--config", str(config_path)]
    if dry_run:
        print(shlex.join(command))
        return None
    return subprocess.run(command, check=check, text=True, capture_output=True, env=build_env())
