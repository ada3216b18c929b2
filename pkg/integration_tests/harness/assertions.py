"""Checks over a finished run's output directory."""

from __future__ import annotations

from typing import Any, Sequence
import hashlib
import json
import os


def assert_true(condition: bool, message: str | None = None) -> None:
    if not condition:
        raise AssertionError(message or "Assertion failed")


def assert_eq(actual: Any, expected: Any, message: str | None = None) -> None:
    if actual != expected:
        raise AssertionError(message or f"Expected {expected!r}, got {actual!r}")


def assert_artifacts(output_dir: str, names: Sequence[str]) -> None:
    missing = [name for name in names if not os.path.isfile(os.path.join(output_dir, name))]
    assert_true(not missing, f"{output_dir}: missing artifacts {missing}")


def read_metric(output_dir: str, metric: str) -> float:
    with open(os.path.join(output_dir, "metric_report.json"), "r", encoding="utf-8") as handle:
        report = json.load(handle)
    value = report["metrics"].get(metric)
    assert_true(value is not None, f"metric {metric} undefined in metric_report.json")
    return float(value)


def assert_min_score(output_dir: str, metric: str, minimum: float) -> float:
    value = read_metric(output_dir, metric)
    assert_true(value > minimum, f"{metric}={value:.4f} is not above {minimum}")
    return value


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def assert_same_files(first_dir: str, second_dir: str, names: Sequence[str]) -> None:
    """Byte-identical artifacts across two runs with the same seeds."""
    differing = [
        name
        for name in names
        if file_sha256(os.path.join(first_dir, name)) != file_sha256(os.path.join(second_dir, name))
    ]
    assert_eq(differing, [], f"artifacts differ between runs: {differing}")
