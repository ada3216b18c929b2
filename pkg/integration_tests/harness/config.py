"""Load and validate harness configuration."""

from __future__ import annotations

from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

# section -> key -> (kind, minimum)
REQUIRED: dict[str, dict[str, tuple[str, int | None]]] = {
    "tool": {"cmd": ("names", None)},
    "paths": {
        "run_dir": ("text", None),
        "logs_dir": ("text", None),
        "data_dir": ("text", None),
        "output_dir": ("text", None),
    },
    "run": {
        "schema": ("text", None),
        "problem": ("text", None),
        "n_patients": ("int", 1),
        "synth_seed": ("int", 0),
        "max_depth": ("int", 0),
        "budget": ("int", 1),
        "cv_folds": ("int", 2),
        "seed": ("int", 0),
        "estimators": ("names", None),
    },
    "checks": {
        "min_score": ("number", None),
        "metric": ("text", None),
        "artifacts": ("names", None),
    },
}


def load_config(path: str | Path) -> dict[str, Any]:
    with Path(path).open("rb") as handle:
        data = tomllib.load(handle)
    validate_config(data, str(path))
    return data


def validate_config(data: Any, path: str = "<config>") -> None:
    """Raise ValueError naming the file and the first bad field."""
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected top-level table")
    for section, keys in REQUIRED.items():
        table = data.get(section)
        if not isinstance(table, dict):
            raise ValueError(f"{path}: missing or invalid table [{section}]")
        for key, (kind, minimum) in keys.items():
            problem = _check(table.get(key), kind, minimum)
            if problem:
                raise ValueError(f"{path}: {section}.{key} {problem}")


def _check(value: Any, kind: str, minimum: int | None) -> str | None:
    if kind == "text":
        return None if isinstance(value, str) and value else "must be a non-empty string"
    if kind == "names":
        if isinstance(value, list) and value and all(isinstance(item, str) and item for item in value):
            return None
        return "must be a non-empty list of strings"
    if isinstance(value, bool):
        return f"must be {'an integer' if kind == 'int' else 'a number'}"
    if kind == "int" and not isinstance(value, int):
        return "must be an integer"
    if kind == "number" and not isinstance(value, (int, float)):
        return "must be a number"
    if minimum is not None and value < minimum:
        return f"must be >= {minimum}"
    return None
