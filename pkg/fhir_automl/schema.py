"""Declarative resource schema loading and validation."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - fallback for 3.10
    import tomli as tomllib  # type: ignore[no-redef]

SEMANTIC_TYPES = (
    "id",
    "foreign_key",
    "numeric",
    "categorical",
    "datetime",
    "boolean",
    "text",
)
BUNDLED_SCHEMAS = {
    "fhir": "fhir_reference.toml",
    "noshow": "noshow.toml",
}

_RELATION_RE = re.compile(
    r"^\s*(?P<child>\w+)\.(?P<child_var>\w+)\s*->\s*(?P<parent>\w+)\.(?P<parent_var>\w+)\s*$"
)


class SchemaError(ValueError):
    """Raised when a schema is invalid."""


class ParseError(SchemaError):
    """Raised when the schema file cannot be parsed."""


class DanglingReference(SchemaError):
    """Raised when a relation names an undeclared resource or variable."""


class DuplicatePrimaryKey(SchemaError):
    """Raised when a primary key is declared twice or holds duplicate values."""


class UnknownResource(SchemaError):
    """Raised when a resource is not declared in the registry."""


@dataclass(frozen=True)
class VariableDecl:
    name: str
    semantic_type: str
    nullable: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "type": self.semantic_type,
            "nullable": self.nullable,
        }


@dataclass(frozen=True)
class ResourceSchema:
    name: str
    variables: tuple[VariableDecl, ...]
    primary_key: str
    time_index: str | None = None

    def variable(self, name: str) -> VariableDecl | None:
        for variable in self.variables:
            if variable.name == name:
                return variable
        return None

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(variable.name for variable in self.variables)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "primary_key": self.primary_key,
            "variables": {
                variable.name: _variable_to_toml(variable)
                for variable in self.variables
            },
        }
        if self.time_index is not None:
            data["time_index"] = self.time_index
        return data


@dataclass(frozen=True, order=True)
class RelationshipDecl:
    child_resource: str
    child_variable: str
    parent_resource: str
    parent_variable: str

    def __str__(self) -> str:
        return (
            f"{self.child_resource}.{self.child_variable} -> "
            f"{self.parent_resource}.{self.parent_variable}"
        )

    @property
    def is_self_reference(self) -> bool:
        return self.child_resource == self.parent_resource


@dataclass(frozen=True)
class SchemaRegistry:
    resources: dict[str, ResourceSchema]
    relations: tuple[RelationshipDecl, ...]

    def resource(self, name: str) -> ResourceSchema:
        try:
            return self.resources[name]
        except KeyError:
            raise UnknownResource(f"unknown resource: {name}") from None

    def relations_to(self, resource: str) -> list[RelationshipDecl]:
        self.resource(resource)
        return [rel for rel in self.relations if rel.parent_resource == resource]

    def to_dict(self) -> dict[str, Any]:
        return {
            "resources": {
                name: schema.to_dict() for name, schema in self.resources.items()
            },
            "relations": [str(relation) for relation in self.relations],
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "SchemaRegistry":
        raw_resources = data.get("resources")
        if not isinstance(raw_resources, dict) or not raw_resources:
            raise ParseError("schema must declare a non-empty [resources] table")
        resources_by_name: dict[str, ResourceSchema] = {}
        for name, raw in raw_resources.items():
            resources_by_name[name] = _parse_resource(name, raw)
        raw_relations = data.get("relations", [])
        if not isinstance(raw_relations, list):
            raise ParseError("relations must be a list of 'child.var -> parent.var'")
        relations = tuple(_parse_relation(raw) for raw in raw_relations)
        registry = SchemaRegistry(resources=resources_by_name, relations=relations)
        validate_registry(registry)
        return registry


def load_schema(path: Path) -> SchemaRegistry:
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise ParseError(f"failed to read schema {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed schema {path}: {exc}") from exc
    return SchemaRegistry.from_dict(data)


def loads_schema(text: str) -> SchemaRegistry:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed schema: {exc}") from exc
    return SchemaRegistry.from_dict(data)


def dump_schema(registry: SchemaRegistry) -> str:
    data = registry.to_dict()
    # relations must precede the resource tables in TOML output
    ordered = {"relations": data["relations"], "resources": data["resources"]}
    return tomli_w.dumps(ordered)


def relations_for(registry: SchemaRegistry, resource: str) -> list[RelationshipDecl]:
    registry.resource(resource)
    return [rel for rel in registry.relations if rel.child_resource == resource]


def resolve_schema_path(value: str | Path) -> Path:
    """Map a bundled schema name to its packaged file, or return the path."""
    text = str(value)
    if text in BUNDLED_SCHEMAS:
        bundled = resources.files("fhir_automl") / "schemas" / BUNDLED_SCHEMAS[text]
        return Path(str(bundled))
    return Path(text).expanduser()


def validate_registry(registry: SchemaRegistry) -> None:
    for relation in registry.relations:
        child = registry.resources.get(relation.child_resource)
        parent = registry.resources.get(relation.parent_resource)
        if child is None:
            raise DanglingReference(
                f"relation {relation} names undeclared resource "
                f"{relation.child_resource}"
            )
        if parent is None:
            raise DanglingReference(
                f"relation {relation} names undeclared resource "
                f"{relation.parent_resource}"
            )
        child_var = child.variable(relation.child_variable)
        if child_var is None:
            raise DanglingReference(
                f"relation {relation} names undeclared variable "
                f"{relation.child_resource}.{relation.child_variable}"
            )
        if parent.variable(relation.parent_variable) is None:
            raise DanglingReference(
                f"relation {relation} names undeclared variable "
                f"{relation.parent_resource}.{relation.parent_variable}"
            )
        if child_var.semantic_type != "foreign_key":
            raise SchemaError(
                f"relation {relation}: {relation.child_variable} must be a foreign_key"
            )
        if relation.parent_variable != parent.primary_key:
            raise SchemaError(
                f"relation {relation}: {relation.parent_variable} is not the "
                f"primary key of {relation.parent_resource}"
            )
    if len(set(registry.relations)) != len(registry.relations):
        raise SchemaError("relations must be declared once")


def _parse_resource(name: str, raw: Any) -> ResourceSchema:
    if not isinstance(raw, dict):
        raise ParseError(f"resources.{name} must be a table")
    raw_variables = raw.get("variables")
    if not isinstance(raw_variables, dict) or not raw_variables:
        raise ParseError(f"resources.{name}.variables must be a non-empty table")
    primary_key = raw.get("primary_key")
    if isinstance(primary_key, list):
        if len(primary_key) > 1:
            raise DuplicatePrimaryKey(
                f"resources.{name} declares {len(primary_key)} primary keys"
            )
        primary_key = primary_key[0] if primary_key else None
    if not primary_key:
        raise ParseError(f"resources.{name}.primary_key is required")
    variables = tuple(
        _parse_variable(name, var_name, var_raw, primary_key)
        for var_name, var_raw in raw_variables.items()
    )
    id_variables = [var.name for var in variables if var.semantic_type == "id"]
    if len(id_variables) > 1:
        raise DuplicatePrimaryKey(
            f"resources.{name} declares several id variables: {id_variables}"
        )
    schema = ResourceSchema(
        name=name,
        variables=variables,
        primary_key=str(primary_key),
        time_index=raw.get("time_index"),
    )
    if schema.variable(schema.primary_key) is None:
        raise ParseError(
            f"resources.{name}.primary_key names undeclared variable {primary_key}"
        )
    if schema.time_index is not None:
        time_var = schema.variable(schema.time_index)
        if time_var is None or time_var.semantic_type != "datetime":
            raise ParseError(
                f"resources.{name}.time_index must name a datetime variable"
            )
    return schema


def _parse_variable(
    resource: str, name: str, raw: Any, primary_key: str
) -> VariableDecl:
    nullable = name != primary_key
    if isinstance(raw, dict):
        semantic_type = raw.get("type")
        nullable = bool(raw.get("nullable", nullable))
    else:
        semantic_type = raw
    if semantic_type not in SEMANTIC_TYPES:
        raise ParseError(
            f"resources.{resource}.variables.{name}: unknown type {semantic_type!r}"
        )
    if name == primary_key:
        semantic_type = "id"
        nullable = False
    return VariableDecl(name=name, semantic_type=semantic_type, nullable=nullable)


def _parse_relation(raw: Any) -> RelationshipDecl:
    if isinstance(raw, (list, tuple)) and len(raw) == 4:
        return RelationshipDecl(*(str(part) for part in raw))
    match = _RELATION_RE.match(str(raw))
    if not match:
        raise ParseError(f"invalid relation {raw!r}; expected 'child.var -> parent.var'")
    return RelationshipDecl(
        child_resource=match.group("child"),
        child_variable=match.group("child_var"),
        parent_resource=match.group("parent"),
        parent_variable=match.group("parent_var"),
    )


def _variable_to_toml(variable: VariableDecl) -> Any:
    default_nullable = variable.semantic_type != "id"
    if variable.nullable == default_nullable:
        return variable.semantic_type
    return {"type": variable.semantic_type, "nullable": variable.nullable}
