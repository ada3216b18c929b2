"""Report writer tests."""

from __future__ import annotations

import json
import tempfile
import unittest
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from fhir_automl.reports import read_json, to_json, write_json, write_report


class _Report:
    def to_dict(self) -> dict[str, Any]:
        return {"b": 1, "a": float("nan")}

    def render_text(self) -> str:
        return "summary"


class ReportsTests(unittest.TestCase):
    def test_json_is_sorted_and_terminated(self) -> None:
        payload = to_json({"b": 1, "a": [1.5, float("inf")]})

        self.assertTrue(payload.endswith("}\n"))
        self.assertLess(payload.index('"a"'), payload.index('"b"'))
        self.assertEqual(json.loads(payload), {"a": [1.5, None], "b": 1})

    def test_numpy_and_time_values(self) -> None:
        data = {
            "count": np.int64(3),
            "score": np.float64(0.25),
            "at": pd.Timestamp("2016-04-01", tz="UTC"),
            "where": Path("/tmp/out"),
        }

        decoded = json.loads(to_json(data))

        self.assertEqual(decoded["count"], 3)
        self.assertEqual(decoded["score"], 0.25)
        self.assertEqual(decoded["at"], "2016-04-01T00:00:00+00:00")
        self.assertEqual(decoded["where"], "/tmp/out")

    def test_unserializable_value(self) -> None:
        with self.assertRaises(TypeError):
            to_json({"value": object()})

    def test_write_report_pair(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "nested" / "audit_report.json"

            text_path = write_report(path, _Report())

            self.assertEqual(read_json(path), {"a": None, "b": 1})
            self.assertEqual(text_path.read_text(encoding="utf-8"), "summary\n")
            self.assertEqual(sorted(p.name for p in path.parent.iterdir()), ["audit_report.json", "audit_report.txt"])

    def test_rewrite_is_byte_identical(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "report.json"
            write_json(path, {"x": [3, 2, 1]})
            first = path.read_bytes()
            write_json(path, {"x": [3, 2, 1]})

            self.assertEqual(path.read_bytes(), first)


if __name__ == "__main__":
    unittest.main()
