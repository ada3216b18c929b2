"""Schema registry tests."""

from __future__ import annotations

import tempfile
import unittest
from pathlib import Path

from fhir_automl.schema import (
    DanglingReference,
    ParseError,
    RelationshipDecl,
    SchemaError,
    UnknownResource,
    dump_schema,
    load_schema,
    loads_schema,
    relations_for,
    resolve_schema_path,
)

TOY_SCHEMA = """
relations = ["encounter.subject -> patient.identifier"]

[resources.patient]
primary_key = "identifier"

[resources.patient.variables]
identifier = "id"
gender = "categorical"
age = { type = "numeric", nullable = false }

[resources.encounter]
primary_key = "identifier"
time_index = "start"

[resources.encounter.variables]
identifier = "id"
subject = "foreign_key"
start = "datetime"
"""


class SchemaParseTests(unittest.TestCase):
    def test_parses_resources_and_relations(self) -> None:
        registry = loads_schema(TOY_SCHEMA)

        self.assertEqual(list(registry.resources), ["patient", "encounter"])
        patient = registry.resource("patient")
        self.assertEqual(patient.variable_names, ("identifier", "gender", "age"))
        self.assertFalse(patient.variable("age").nullable)
        self.assertFalse(patient.variable("identifier").nullable)
        self.assertTrue(patient.variable("gender").nullable)
        self.assertEqual(registry.resource("encounter").time_index, "start")
        self.assertEqual(
            registry.relations,
            (RelationshipDecl("encounter", "subject", "patient", "identifier"),),
        )

    def test_relation_to_undeclared_resource_is_dangling(self) -> None:
        text = TOY_SCHEMA.replace("patient.identifier", "practitioner.identifier")

        with self.assertRaises(DanglingReference):
            loads_schema(text)

    def test_relation_to_undeclared_variable_is_dangling(self) -> None:
        text = TOY_SCHEMA.replace("encounter.subject", "encounter.participant")

        with self.assertRaises(DanglingReference):
            loads_schema(text)

    def test_malformed_text_is_parse_error(self) -> None:
        with self.assertRaises(ParseError):
            loads_schema("[resources.patient\nidentifier = ")

    def test_unknown_semantic_type_rejected(self) -> None:
        text = TOY_SCHEMA.replace('gender = "categorical"', 'gender = "colour"')

        with self.assertRaises(SchemaError):
            loads_schema(text)

    def test_unknown_resource_lookup(self) -> None:
        registry = loads_schema(TOY_SCHEMA)

        with self.assertRaises(UnknownResource):
            registry.resource("observation")
        with self.assertRaises(UnknownResource):
            relations_for(registry, "observation")

    def test_relations_for_child_and_parent_side(self) -> None:
        registry = loads_schema(TOY_SCHEMA)

        self.assertEqual(len(relations_for(registry, "encounter")), 1)
        self.assertEqual(relations_for(registry, "patient"), [])
        self.assertEqual(len(registry.relations_to("patient")), 1)

    def test_dump_reloads_to_equal_registry(self) -> None:
        registry = loads_schema(TOY_SCHEMA)

        reloaded = loads_schema(dump_schema(registry))

        self.assertEqual(reloaded.to_dict(), registry.to_dict())

    def test_load_schema_from_file(self) -> None:
        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "schema.toml"
            path.write_text(TOY_SCHEMA, encoding="utf-8")

            registry = load_schema(path)

        self.assertIn("encounter", registry.resources)


class BundledSchemaTests(unittest.TestCase):
    def test_reference_schema_shape(self) -> None:
        registry = load_schema(resolve_schema_path("fhir"))

        self.assertEqual(len(registry.resources), 12)
        self.assertEqual(len(registry.relations), 19)
        self.assertTrue(any(rel.is_self_reference for rel in registry.relations))

    def test_noshow_schema_shape(self) -> None:
        registry = load_schema(resolve_schema_path("noshow"))

        self.assertEqual(len(registry.resources), 9)
        self.assertEqual(registry.resource("appointment").time_index, "created")

    def test_paths_pass_through(self) -> None:
        self.assertEqual(resolve_schema_path("/tmp/x.toml"), Path("/tmp/x.toml"))


if __name__ == "__main__":
    unittest.main()
