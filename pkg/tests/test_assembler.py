"""Entityset assembly tests."""

from __future__ import annotations

import random
import tempfile
import unittest
from pathlib import Path

import networkx as nx

from fhir_automl.assembler import (
    AssemblyNote,
    EmptyDataFile,
    NoRecognizedFiles,
    NullPrimaryKey,
    TypeCoercionError,
    assemble,
    break_cycles,
    discover_files,
    load_resource,
    relation_graph,
)
from fhir_automl.schema import (
    DuplicatePrimaryKey,
    RelationshipDecl,
    load_schema,
    loads_schema,
    resolve_schema_path,
)
from fhir_automl.synthetic import generate_synthetic, write_tables

TWO_RESOURCE_SCHEMA = """
relations = ["encounter.subject -> patient.identifier"]

[resources.patient]
primary_key = "identifier"

[resources.patient.variables]
identifier = "id"
gender = "categorical"
age = "numeric"

[resources.encounter]
primary_key = "identifier"
time_index = "start"

[resources.encounter.variables]
identifier = "id"
subject = "foreign_key"
class = "categorical"
start = "datetime"
"""

CONDITION_SCHEMA = """
relations = ["condition.subject -> patient.identifier"]

[resources.patient]
primary_key = "identifier"

[resources.patient.variables]
identifier = "id"

[resources.condition]
primary_key = "identifier"

[resources.condition.variables]
identifier = "id"
subject = "foreign_key"
code = "categorical"
"""

PATIENTS = "identifier,gender,age\np1,F,30\np2,M,41\np3,F,\n"
ENCOUNTERS = (
    "identifier,subject,class,start\n"
    "e1,p1,inpatient,2020-01-01T08:00:00\n"
    "e2,p1,emergency,2020-02-01\n"
    "e3,p2,inpatient,2020-03-01T00:00:00Z\n"
    "e4,p3,ambulatory,2020-04-01\n"
    "e5,,ambulatory,2020-05-01\n"
)


def _write(directory: Path, files: dict[str, str]) -> None:
    for name, text in files.items():
        (directory / name).write_text(text, encoding="utf-8")


def _kinds(notes: tuple[AssemblyNote, ...]) -> list[tuple[str, str]]:
    return [(note.kind, note.subject) for note in notes]


class AssembleTests(unittest.TestCase):
    def setUp(self) -> None:
        self.registry = loads_schema(TWO_RESOURCE_SCHEMA)

    def test_fully_present_data(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": PATIENTS, "encounter.csv": ENCOUNTERS})

            entityset = assemble(Path(temp_dir), self.registry)

        self.assertEqual(sorted(entityset.entities), ["encounter", "patient"])
        self.assertEqual(len(entityset.relations), 1)
        self.assertEqual(entityset.provenance, ())
        encounter = entityset.entity("encounter")
        self.assertEqual(encounter.row_count, 5)
        self.assertEqual(encounter.time_index, "start")
        self.assertEqual(str(encounter.frame["start"].dt.tz), "UTC")
        self.assertTrue(encounter.frame["subject"].isna().iloc[4])
        self.assertTrue(entityset.entity("patient").frame["age"].isna().iloc[2])

    def test_missing_optional_column_is_noted(self) -> None:
        encounters = "\n".join(
            ",".join(cell for index, cell in enumerate(line.split(",")) if index != 2)
            for line in ENCOUNTERS.splitlines()
        )
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": PATIENTS, "encounter.csv": encounters + "\n"})

            entityset = assemble(Path(temp_dir), self.registry)

        self.assertEqual(len(entityset.entities), 2)
        self.assertEqual(len(entityset.relations), 1)
        self.assertEqual(_kinds(entityset.provenance), [("missing_variable", "encounter.class")])
        self.assertNotIn("class", entityset.entity("encounter").variables)

    def test_absent_parent_resource(self) -> None:
        registry = loads_schema(CONDITION_SCHEMA)
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"condition.csv": "identifier,subject,code\nc1,p1,401.9\n"})

            entityset = assemble(Path(temp_dir), registry)

        self.assertEqual(list(entityset.entities), ["condition"])
        self.assertEqual(entityset.relations, ())
        self.assertEqual(
            _kinds(entityset.provenance),
            [
                ("missing_resource", "patient"),
                ("broken_link", "condition.subject -> patient.identifier"),
            ],
        )

    def test_few_dangling_keys_are_nulled(self) -> None:
        patients = "identifier\n" + "".join(f"p{i}\n" for i in range(40))
        encounters = "identifier,subject,class,start\n" + "".join(
            f"e{i},p{i % 40},inpatient,2020-01-01\n" for i in range(39)
        ) + "e39,ghost,inpatient,2020-01-01\n"
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": patients, "encounter.csv": encounters})

            entityset = assemble(Path(temp_dir), self.registry)

        self.assertEqual(len(entityset.relations), 1)
        subjects = entityset.entity("encounter").frame["subject"]
        self.assertTrue(subjects.isna().iloc[39])
        self.assertIn("nulled", entityset.provenance[-1].detail)

    def test_many_dangling_keys_drop_the_relation(self) -> None:
        encounters = ENCOUNTERS.replace("e3,p2", "e3,ghost")
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": PATIENTS, "encounter.csv": encounters})

            entityset = assemble(Path(temp_dir), self.registry)

        self.assertEqual(entityset.relations, ())
        self.assertEqual(entityset.provenance[-1].kind, "broken_link")
        self.assertIn("dropped", entityset.provenance[-1].detail)

    def test_referential_integrity_after_assembly(self) -> None:
        registry = load_schema(resolve_schema_path("fhir"))
        with tempfile.TemporaryDirectory() as temp_dir:
            generate_synthetic(registry, 30, seed=5, out_dir=Path(temp_dir))

            entityset = assemble(Path(temp_dir), registry)

        for relation in entityset.relations:
            child = entityset.entity(relation.child_resource).frame[relation.child_variable]
            parent = entityset.entity(relation.parent_resource)
            keys = set(parent.frame[parent.index])
            self.assertTrue(child.dropna().isin(keys).all(), str(relation))

    def test_null_primary_key(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": "identifier,gender\n,F\n"})

            with self.assertRaises(NullPrimaryKey):
                assemble(Path(temp_dir), self.registry)

    def test_duplicate_primary_key(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": "identifier,gender\np1,F\np1,M\n"})

            with self.assertRaises(DuplicatePrimaryKey):
                assemble(Path(temp_dir), self.registry)

    def test_uncoercible_cell_is_lenient_by_default(self) -> None:
        patients = PATIENTS.replace("p2,M,41", "p2,M,forty")
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": patients})

            entityset = assemble(Path(temp_dir), self.registry)
            with self.assertRaises(TypeCoercionError):
                assemble(Path(temp_dir), self.registry, strict=True)

        self.assertEqual(_kinds(entityset.provenance), [("coerced_value", "patient.age")])
        self.assertTrue(entityset.entity("patient").frame["age"].isna().iloc[1])

    def test_no_recognized_files(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"notes.csv": "a\n1\n", "patient.txt": "x\n"})

            with self.assertRaises(NoRecognizedFiles):
                assemble(Path(temp_dir), self.registry)

    def test_empty_file_skips_the_resource(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": "", "encounter.csv": ENCOUNTERS})

            entityset = assemble(Path(temp_dir), self.registry)
            with self.assertRaises(EmptyDataFile):
                load_resource(Path(temp_dir) / "patient.csv", self.registry.resource("patient"))

        self.assertEqual(list(entityset.entities), ["encounter"])
        self.assertEqual(
            _kinds(entityset.provenance),
            [
                ("missing_resource", "patient"),
                ("broken_link", "encounter.subject -> patient.identifier"),
            ],
        )
        self.assertIn("patient.csv is empty", entityset.provenance[0].detail)

    def test_every_file_empty(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": "", "encounter.csv": "\n"})

            with self.assertRaises(NoRecognizedFiles):
                assemble(Path(temp_dir), self.registry)

    def test_file_discovery_is_case_insensitive(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"Patient.CSV": PATIENTS})

            found = discover_files(Path(temp_dir), self.registry)

        self.assertEqual(list(found), ["patient"])

    def test_manifest_totals(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            _write(Path(temp_dir), {"patient.csv": PATIENTS, "encounter.csv": ENCOUNTERS})

            manifest = assemble(Path(temp_dir), self.registry, jobs=2).to_manifest()

        self.assertEqual(
            manifest["totals"],
            {"loaded_resources": 2, "loaded_variables": 7, "active_relations": 1, "notes": 0},
        )


class SubsetRobustnessTests(unittest.TestCase):
    def test_random_resource_subsets_assemble_acyclic(self) -> None:
        registry = load_schema(resolve_schema_path("fhir"))
        tables = generate_synthetic(registry, 20, seed=11)
        rng = random.Random(0)
        names = list(registry.resources)
        for trial in range(100):
            subset = rng.sample(names, rng.randint(1, len(names)))
            with self.subTest(trial=trial, subset=sorted(subset)):
                with tempfile.TemporaryDirectory() as temp_dir:
                    write_tables({name: tables[name] for name in subset}, Path(temp_dir))

                    entityset = assemble(Path(temp_dir), registry)

                self.assertEqual(sorted(entityset.entities), sorted(subset))
                self.assertTrue(entityset.is_acyclic())
                for relation in entityset.relations:
                    self.assertIn(relation.child_resource, subset)
                    self.assertIn(relation.parent_resource, subset)

    def test_self_reference_is_removed_and_noted(self) -> None:
        registry = load_schema(resolve_schema_path("fhir"))
        with tempfile.TemporaryDirectory() as temp_dir:
            generate_synthetic(registry, 60, seed=2, out_dir=Path(temp_dir))

            entityset = assemble(Path(temp_dir), registry)

        consolidated = [note.subject for note in entityset.provenance if note.kind == "consolidated"]
        self.assertEqual(consolidated, ["encounter.part_of -> encounter.identifier"])
        self.assertTrue(entityset.is_acyclic())


class CycleTests(unittest.TestCase):
    def test_acyclic_relations_unchanged(self) -> None:
        relations = [
            RelationshipDecl("a", "b_id", "b", "id"),
            RelationshipDecl("b", "c_id", "c", "id"),
        ]

        kept, removed = break_cycles(relations)

        self.assertEqual(kept, relations)
        self.assertEqual(removed, [])

    def test_triangle_loses_one_edge(self) -> None:
        relations = [
            RelationshipDecl("a", "b_id", "b", "id"),
            RelationshipDecl("b", "c_id", "c", "id"),
            RelationshipDecl("c", "a_id", "a", "id"),
        ]

        kept, removed = break_cycles(relations)

        self.assertEqual(removed, [RelationshipDecl("c", "a_id", "a", "id")])
        self.assertEqual(len(list(nx.topological_sort(relation_graph(kept)))), 3)

    def test_random_cyclic_graphs(self) -> None:
        rng = random.Random(7)
        for trial in range(50):
            with self.subTest(trial=trial):
                nodes = [f"r{i}" for i in range(rng.randint(1, 10))]
                relations = []
                cycle = rng.sample(nodes, rng.randint(1, len(nodes)))
                for position, child in enumerate(cycle):
                    parent = cycle[(position + 1) % len(cycle)]
                    relations.append(RelationshipDecl(child, f"cyc{position}", parent, "id"))
                for extra in range(rng.randint(0, 15)):
                    child, parent = rng.choice(nodes), rng.choice(nodes)
                    relations.append(RelationshipDecl(child, f"fk{extra}", parent, "id"))
                self.assertFalse(nx.is_directed_acyclic_graph(relation_graph(relations)))

                kept, removed = break_cycles(relations, nodes)

                graph = relation_graph(kept, nodes)
                self.assertTrue(nx.is_directed_acyclic_graph(graph))
                self.assertEqual(len(kept) + len(removed), len(relations))
                self.assertEqual(set(kept) | set(removed), set(relations))
                self.assertFalse(set(kept) & set(removed))


if __name__ == "__main__":
    unittest.main()
