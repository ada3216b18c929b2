"""Problem library and label generation tests."""

from __future__ import annotations

import random
import tempfile
import unittest
from datetime import timedelta
from pathlib import Path

import pandas as pd

from fhir_automl.assembler import Entity, EntitySet
from fhir_automl.problems import (
    InvalidLabel,
    MissingAnchorTime,
    MissingLabelSource,
    MissingParam,
    ProblemSpec,
    UnknownProblem,
    UnknownTargetEntity,
    gct,
    generate_label_times,
    make_problem,
    read_label_times,
)
from fhir_automl.schema import RelationshipDecl

DAY0 = pd.Timestamp("2012-03-01", tz="UTC")


def _encounters(rows: list[tuple[str, str | None, pd.Timestamp | None, pd.Timestamp | None]]) -> Entity:
    frame = pd.DataFrame(
        {
            "identifier": pd.Series([row[0] for row in rows], dtype="string"),
            "subject": pd.Series([row[1] for row in rows], dtype="string"),
            "start": pd.to_datetime([row[2] for row in rows], utc=True),
            "end": pd.to_datetime([row[3] for row in rows], utc=True),
        }
    )
    variables = {"identifier": "id", "subject": "foreign_key", "start": "datetime", "end": "datetime"}
    return Entity("encounter", frame, "identifier", "start", variables)


def _entityset(encounter: Entity, diagnoses: list[tuple[str, str]] | None = None) -> EntitySet:
    entities = {"encounter": encounter}
    relations: tuple[RelationshipDecl, ...] = ()
    if diagnoses is not None:
        frame = pd.DataFrame(
            {
                "identifier": pd.Series([f"d{i}" for i in range(len(diagnoses))], dtype="string"),
                "encounter": pd.Series([row[0] for row in diagnoses], dtype="string"),
                "code": pd.Series([row[1] for row in diagnoses], dtype="string"),
            }
        )
        entities["diagnosis"] = Entity(
            "diagnosis",
            frame,
            "identifier",
            None,
            {"identifier": "id", "encounter": "foreign_key", "code": "categorical"},
        )
        relations = (RelationshipDecl("diagnosis", "encounter", "encounter", "identifier"),)
    return EntitySet(entities=entities, relations=relations)


def _days(value: float) -> pd.Timestamp:
    return DAY0 + pd.Timedelta(days=value)


class ProblemSpecTests(unittest.TestCase):
    def test_library_defaults(self) -> None:
        noshow = make_problem("noshow")
        readmission = make_problem("readmission")

        self.assertEqual((noshow.target_entity, noshow.anchor_variable), ("appointment", "created"))
        self.assertEqual(readmission.anchor_variable, "end")
        self.assertEqual(readmission.params["readmission_window"], timedelta(days=30))
        self.assertEqual(make_problem("los_classification").params["threshold_days"], 7)
        self.assertEqual(make_problem("los_regression").task_type, "regression")

    def test_required_params(self) -> None:
        with self.assertRaises(MissingParam):
            make_problem("diagnosis")
        with self.assertRaises(MissingParam):
            ProblemSpec("readmission", "encounter", "event_end", timedelta(0), "binary", "start", "end")
        with self.assertRaises(UnknownProblem):
            make_problem("sepsis")

    def test_outcome_variables_are_ignored(self) -> None:
        self.assertEqual(make_problem("noshow").ignored_variables, ("appointment.status",))
        self.assertEqual(make_problem("los_regression").ignored_variables, ("encounter.end",))
        self.assertIn("diagnosis.code", make_problem("diagnosis", diagnosis_code="428").ignored_variables)
        self.assertEqual(make_problem("readmission").ignored_variables, ())

    def test_dict_round_trip_keeps_params(self) -> None:
        spec = make_problem("readmission", window=timedelta(days=14), offset=timedelta(hours=6))

        self.assertEqual(ProblemSpec.from_dict(spec.to_dict()), spec)


class CutoffTests(unittest.TestCase):
    def setUp(self) -> None:
        self.entityset = _entityset(
            _encounters(
                [
                    ("e1", "p1", pd.Timestamp("2012-03-01T00:00", tz="UTC"), pd.Timestamp("2012-03-05T10:00", tz="UTC")),
                    ("e2", "p1", None, None),
                ]
            )
        )

    def test_offset_added_to_anchor(self) -> None:
        cutoff = gct(self.entityset, "encounter", "e1", "start", timedelta(hours=48))

        self.assertEqual(cutoff, pd.Timestamp("2012-03-03T00:00", tz="UTC"))

    def test_zero_offset_on_discharge(self) -> None:
        cutoff = gct(self.entityset, "encounter", "e1", "end", timedelta(0))

        self.assertEqual(cutoff, pd.Timestamp("2012-03-05T10:00", tz="UTC"))

    def test_null_anchor(self) -> None:
        with self.assertRaises(MissingAnchorTime):
            gct(self.entityset, "encounter", "e2", "start", timedelta(0))

    def test_null_anchor_rows_are_excluded_with_notes(self) -> None:
        label_times = generate_label_times(self.entityset, make_problem("los_classification"))

        self.assertEqual([row.entity_id for row in label_times.rows], ["e1"])
        self.assertEqual([note.entity_id for note in label_times.exclusions], ["e2"])
        self.assertEqual(label_times.candidate_count, 2)


class LabelTests(unittest.TestCase):
    def test_readmission_window(self) -> None:
        encounter = _encounters(
            [
                ("e1", "p1", _days(-3), _days(0)),
                ("e2", "p1", _days(10), _days(12)),
                ("e3", "p2", _days(-2), _days(0)),
                ("e4", "p2", _days(45), _days(46)),
                ("e5", "p3", _days(0), _days(1)),
                ("e6", "p3", _days(31), _days(32)),
            ]
        )

        label_times = generate_label_times(_entityset(encounter), make_problem("readmission"))

        labels = {row.entity_id: row.label for row in label_times.rows}
        self.assertEqual(labels, {"e1": 1, "e2": 0, "e3": 0, "e4": 0, "e5": 1, "e6": 0})
        cutoffs = {row.entity_id: row.cutoff_time for row in label_times.rows}
        self.assertEqual(cutoffs["e1"], _days(0))

    def test_readmission_matches_pairwise_scan(self) -> None:
        rng = random.Random(1)
        window = pd.Timedelta(days=30)
        for trial in range(100):
            with self.subTest(trial=trial):
                rows = []
                for index in range(rng.randint(1, 50)):
                    start = _days(rng.randint(0, 200) + rng.random())
                    end = start + pd.Timedelta(days=rng.choice([0.5, 2, 5, 30]))
                    if rng.random() < 0.05:
                        end = None
                    patient = f"p{rng.randint(0, 6)}" if rng.random() > 0.03 else None
                    rows.append((f"e{index}", patient, start, end))

                label_times = generate_label_times(
                    _entityset(_encounters(rows)), make_problem("readmission")
                )

                expected = {}
                for identifier, patient, start, end in rows:
                    if end is None or patient is None:
                        continue
                    expected[identifier] = int(
                        any(
                            other_patient == patient
                            and other_id != identifier
                            and end < other_start <= end + window
                            for other_id, other_patient, other_start, _ in rows
                        )
                    )
                self.assertEqual({row.entity_id: row.label for row in label_times.rows}, expected)
                self.assertEqual(label_times.candidate_count, len(rows))

    def test_window_boundary_is_closed(self) -> None:
        encounter = _encounters(
            [("e1", "p1", _days(-1), _days(0)), ("e2", "p1", _days(30), _days(31))]
        )

        label_times = generate_label_times(_entityset(encounter), make_problem("readmission"))

        self.assertEqual(label_times.rows[0].label, 1)

    def test_length_of_stay(self) -> None:
        encounter = _encounters(
            [("e1", "p1", _days(0), _days(8)), ("e2", "p1", _days(20), _days(21.5))]
        )
        entityset = _entityset(encounter)

        classified = generate_label_times(entityset, make_problem("los_classification"))
        regressed = generate_label_times(entityset, make_problem("los_regression"))

        self.assertEqual([row.label for row in classified.rows], [1, 0])
        self.assertEqual([row.label for row in regressed.rows], [8.0, 1.5])
        self.assertEqual(classified.rows[1].cutoff_time, _days(20))

    def test_mortality_from_diagnosis_codes(self) -> None:
        rows = [(f"e{i}", f"p{i}", _days(i), _days(i + 2)) for i in range(20)]
        diagnoses = [(f"e{i}", "401.9") for i in range(20)]
        diagnoses += [("e3", "E812.0"), ("e7", "E950.4"), ("e11", "E966")]
        entityset = _entityset(_encounters(rows), diagnoses)

        label_times = generate_label_times(entityset, make_problem("mortality"))

        positives = [row.entity_id for row in label_times.rows if row.label == 1]
        self.assertEqual(positives, ["e3", "e7", "e11"])
        self.assertTrue(all(row.cutoff_time == _days(int(row.entity_id[1:])) for row in label_times.rows))
        self.assertEqual(label_times.summary()["positive"], 3)

    def test_diagnosis_code_prefix(self) -> None:
        rows = [("e1", "p1", _days(0), _days(1)), ("e2", "p1", _days(5), _days(6))]
        entityset = _entityset(_encounters(rows), [("e1", "428.0"), ("e2", "401.9")])

        label_times = generate_label_times(entityset, make_problem("diagnosis", diagnosis_code="428"))

        self.assertEqual([row.label for row in label_times.rows], [1, 0])

    def test_mortality_without_diagnoses(self) -> None:
        entityset = _entityset(_encounters([("e1", "p1", _days(0), _days(1))]))

        with self.assertRaises(MissingLabelSource):
            generate_label_times(entityset, make_problem("mortality"))

    def test_noshow_reads_stored_status(self) -> None:
        frame = pd.DataFrame(
            {
                "identifier": pd.Series(["a1", "a2", "a3"], dtype="string"),
                "status": pd.Series(["noshow", "fulfilled", None], dtype="string"),
                "created": pd.to_datetime(["2016-04-01", "2016-04-02", "2016-04-03"], utc=True),
            }
        )
        appointment = Entity(
            "appointment",
            frame,
            "identifier",
            "created",
            {"identifier": "id", "status": "categorical", "created": "datetime"},
        )
        entityset = EntitySet(entities={"appointment": appointment}, relations=())

        label_times = generate_label_times(entityset, make_problem("noshow"))

        self.assertEqual([(row.entity_id, row.label) for row in label_times.rows], [("a1", 1), ("a2", 0)])
        self.assertEqual(label_times.rows[0].cutoff_time, pd.Timestamp("2016-04-01", tz="UTC"))
        self.assertEqual(len(label_times.exclusions), 1)
        summary = label_times.summary()
        self.assertEqual((summary["positive_pct"], summary["negative_pct"]), (50.0, 50.0))

    def _flagged(self, flags: list[object], dtype: str) -> EntitySet:
        frame = pd.DataFrame(
            {
                "identifier": pd.Series([f"a{i}" for i in range(len(flags))], dtype="string"),
                "flag": pd.Series(flags, dtype=dtype),
                "created": pd.to_datetime(["2016-04-01"] * len(flags), utc=True),
            }
        )
        appointment = Entity(
            "appointment",
            frame,
            "identifier",
            "created",
            {"identifier": "id", "flag": "categorical", "created": "datetime"},
        )
        return EntitySet(entities={"appointment": appointment}, relations=())

    def _custom_problem(self) -> ProblemSpec:
        return ProblemSpec.from_dict(
            {
                "name": "flagged",
                "target_entity": "appointment",
                "anchor": "event_start",
                "task_type": "binary",
                "start_variable": "created",
                "label_variable": "flag",
            }
        )

    def test_stored_boolean_words(self) -> None:
        entityset = self._flagged(["false", "No", "0", "TRUE", "y", "1"], "string")

        label_times = generate_label_times(entityset, self._custom_problem())

        self.assertEqual([row.label for row in label_times.rows], [0, 0, 0, 1, 1, 1])

    def test_stored_numeric_and_boolean_dtypes(self) -> None:
        for flags, dtype in (([0, 1, 1], "Int64"), ([False, True, True], "boolean")):
            with self.subTest(dtype=dtype):
                label_times = generate_label_times(self._flagged(flags, dtype), self._custom_problem())

                self.assertEqual([row.label for row in label_times.rows], [0, 1, 1])

    def test_stored_label_outside_boolean_vocabulary(self) -> None:
        entityset = self._flagged(["yes", "maybe"], "string")

        with self.assertRaises(InvalidLabel):
            generate_label_times(entityset, self._custom_problem())

    def test_unknown_target(self) -> None:
        entityset = _entityset(_encounters([("e1", "p1", _days(0), _days(1))]))

        with self.assertRaises(UnknownTargetEntity):
            generate_label_times(entityset, make_problem("noshow"))

    def test_csv_round_trip_with_sidecar(self) -> None:
        encounter = _encounters(
            [("e1", "p1", _days(0), _days(8)), ("e2", "p1", _days(20), _days(21.5))]
        )
        label_times = generate_label_times(_entityset(encounter), make_problem("los_regression"))
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "label_times.csv"
            label_times.write_csv(path)

            restored = read_label_times(path)

        self.assertEqual(restored.problem, label_times.problem)
        self.assertEqual(restored.rows, label_times.rows)


if __name__ == "__main__":
    unittest.main()
