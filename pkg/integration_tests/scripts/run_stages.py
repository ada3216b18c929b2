"""Drive each stage command separately and check exit codes."""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import tempfile

TESTING_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if TESTING_DIR not in sys.path:
    sys.path.insert(0, TESTING_DIR)

from harness.assertions import assert_artifacts, assert_eq
from harness.config import load_config
from harness.logs import open_log
from harness.runner import build_env, resolve_command, run_tool


DEFAULT_CONFIG = os.path.abspath(
    os.path.join(os.path.dirname(__file__), os.pardir, "config", "test_small.toml")
)
STAGE_COMMANDS = (
    ("synth", []),
    ("assemble", []),
    ("audit", []),
    ("label", []),
    ("featurize", []),
    ("train", []),
    ("report", ["--bootstrap", "100"]),
    ("predict", []),
)


def main() -> int:
    parser = argparse.ArgumentParser(description="Run each stage command in turn.")
    parser.add_argument("--config", default=DEFAULT_CONFIG)
    args = parser.parse_args()

    config = load_config(os.path.abspath(args.config))
    paths = config["paths"]
    output_dir = os.path.abspath(paths["output_dir"])

    with open_log(os.path.join(paths["logs_dir"], "run_stages.log")) as log:
        try:
            for command, extra in STAGE_COMMANDS:
                result = run_tool(config, [command, *extra])
                if result:
                    log.process(command, result)
            assert_artifacts(output_dir, config["checks"]["artifacts"] + ["predictions.csv"])
            _check_exit_codes(config, log)
        except subprocess.CalledProcessError as exc:
            log.process(" ".join(exc.cmd[-3:]), exc, failed=True)
            return 1
        except AssertionError as exc:
            log.write(f"check failed: {exc}", level="ERROR")
            return 1
    return 0


def _check_exit_codes(config: dict, log) -> None:
    command = resolve_command(config)
    env = build_env()
    with tempfile.TemporaryDirectory() as empty_dir:
        cases = (
            ("stage failure", ["assemble", "--data", empty_dir, "--output-dir", empty_dir], 2),
            ("config error", ["assemble", "--config", os.path.join(empty_dir, "missing.toml")], 1),
            ("usage error", ["run", "--problem", "sepsis"], 1),
            ("help", [], 0),
        )
        for label, extra, expected in cases:
            result = subprocess.run(command + extra, text=True, capture_output=True, env=env)
            assert_eq(result.returncode, expected, f"{label}: exit {result.returncode}, expected {expected}")
            log.write(f"{label} exited {result.returncode}")


if __name__ == "__main__":
    raise SystemExit(main())
