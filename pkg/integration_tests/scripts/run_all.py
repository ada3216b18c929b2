"""Synthesize data, run every stage twice and check the artifacts."""

from __future__ import annotations

import argparse
import os
import subprocess
import sys

TESTING_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), os.pardir))
if TESTING_DIR not in sys.path:
    sys.path.insert(0, TESTING_DIR)

from harness.assertions import assert_artifacts, assert_min_score, assert_same_files
from harness.config import load_config
from harness.logs import open_log, stage_timings
from harness.runner import run_tool


DEFAULT_CONFIG = os.path.abspath(
    os.path.join(os.path.dirname(__file__), os.pardir, "config", "test.toml")
)


def main() -> int:
    parser = argparse.ArgumentParser(description="Run the end-to-end harness.")
    parser.add_argument("--config", default=DEFAULT_CONFIG)
    parser.add_argument("--dry-run", action="store_true")
    parser.add_argument(
        "--skip-repeat",
        action="store_true",
        help="Skip the second run and the reproducibility check.",
    )
    args = parser.parse_args()

    config = load_config(os.path.abspath(args.config))
    paths = config["paths"]
    checks = config["checks"]
    output_dir = os.path.abspath(paths["output_dir"])
    repeat_dir = output_dir.rstrip(os.sep) + "_repeat"

    with open_log(os.path.join(paths["logs_dir"], "run_all.log")) as log:
        log.write(f"loading config from {os.path.abspath(args.config)}")
        runs = [("run", output_dir)]
        if not args.skip_repeat:
            runs.append(("repeat", repeat_dir))
        try:
            result = run_tool(config, ["synth"], dry_run=args.dry_run)
            if result:
                log.process("synth", result)
            for label, directory in runs:
                log.write(f"running every stage into {directory}")
                result = run_tool(config, ["run"], output_dir=directory, dry_run=args.dry_run)
                if result:
                    log.process(label, result)
                    for stage, seconds in stage_timings(result.stderr).items():
                        log.write(f"{label} stage={stage} seconds={seconds:.2f}")
            if args.dry_run:
                return 0
            assert_artifacts(output_dir, checks["artifacts"])
            score = assert_min_score(output_dir, checks["metric"], float(checks["min_score"]))
            log.write(f"held-out {checks['metric']}={score:.4f}")
            if not args.skip_repeat:
                assert_same_files(output_dir, repeat_dir, checks.get("reproducible", []))
                log.write("repeat run matched byte for byte")
        except subprocess.CalledProcessError as exc:
            log.process(" ".join(exc.cmd[-3:]), exc, failed=True)
            return 1
        except AssertionError as exc:
            log.write(f"check failed: {exc}", level="ERROR")
            return 1
        except Exception as exc:
            log.write(f"run failed: {exc}", level="ERROR")
            return 1

    return 0


if __name__ == "__main__":
    raise SystemExit(main())
