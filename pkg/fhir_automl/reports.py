"""JSON and text report writers shared by every stage."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Protocol


class Report(Protocol):
    def to_dict(self) -> dict[str, Any]: ...

    def render_text(self) -> str: ...


def to_json(data: Any) -> str:
    return json.dumps(_finite(data), indent=2, sort_keys=True, default=_default) + "\n"


def write_json(path: Path, data: Any) -> None:
    _write_atomic(path, to_json(data))


def write_text(path: Path, text: str) -> None:
    _write_atomic(path, text if text.endswith("\n") else text + "\n")


def write_report(path: Path, report: Report) -> Path:
    """Write ``report`` as JSON at ``path`` and its rendering beside it as ``.txt``."""
    write_json(path, report.to_dict())
    text_path = path.with_suffix(".txt")
    write_text(text_path, report.render_text())
    return text_path


def read_json(path: Path) -> Any:
    with path.open("r", encoding="utf-8") as handle:
        return json.load(handle)


def _write_atomic(path: Path, payload: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(path.name + ".tmp")
    with temp_path.open("w", encoding="utf-8") as handle:
        handle.write(payload)
    temp_path.replace(path)


def _finite(value: Any) -> Any:
    """NaN and infinities become null; JSON has no spelling for them."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(item) for item in value]
    return value


def _default(value: Any) -> Any:
    if hasattr(value, "isoformat"):
        return value.isoformat()
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")
