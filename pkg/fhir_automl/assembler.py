"""Adaptive entityset assembly from whatever resource files are present."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

import networkx as nx
import pandas as pd

from fhir_automl.schema import (
    DuplicatePrimaryKey,
    RelationshipDecl,
    ResourceSchema,
    SchemaRegistry,
)

NOTE_KINDS = (
    "missing_variable",
    "missing_resource",
    "broken_link",
    "consolidated",
    "coerced_value",
)
DANGLING_NULL_THRESHOLD = 0.05

BOOLEAN_VALUES = {
    "true": True,
    "t": True,
    "yes": True,
    "y": True,
    "1": True,
    "false": False,
    "f": False,
    "no": False,
    "n": False,
    "0": False,
}

logger = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    """Raised when the entityset cannot be assembled."""


class NoRecognizedFiles(AssemblyError):
    """Raised when no data file matches a declared resource."""


class TypeCoercionError(AssemblyError):
    """Raised in strict mode when a cell cannot be coerced to its declared type."""


class NullPrimaryKey(AssemblyError):
    """Raised when a primary-key cell is empty."""


class EmptyDataFile(AssemblyError):
    """Raised when a resource's data file has no header row."""


@dataclass(frozen=True)
class AssemblyNote:
    kind: str
    subject: str
    detail: str

    def __post_init__(self) -> None:
        if self.kind not in NOTE_KINDS:
            raise ValueError(f"unknown note kind: {self.kind}")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "subject": self.subject, "detail": self.detail}


@dataclass(frozen=True)
class Entity:
    name: str
    frame: pd.DataFrame
    index: str
    time_index: str | None
    variables: dict[str, str]

    @property
    def row_count(self) -> int:
        return len(self.frame)

    def variables_of_type(self, *semantic_types: str) -> list[str]:
        return [
            name
            for name, semantic_type in self.variables.items()
            if semantic_type in semantic_types
        ]


@dataclass(frozen=True)
class EntitySet:
    entities: dict[str, Entity]
    relations: tuple[RelationshipDecl, ...]
    provenance: tuple[AssemblyNote, ...] = ()
    registry: SchemaRegistry | None = field(default=None, compare=False)

    def entity(self, name: str) -> Entity:
        return self.entities[name]

    def children_of(self, name: str) -> list[RelationshipDecl]:
        return [rel for rel in self.relations if rel.parent_resource == name]

    def parents_of(self, name: str) -> list[RelationshipDecl]:
        return [rel for rel in self.relations if rel.child_resource == name]

    def graph(self) -> nx.MultiDiGraph:
        return relation_graph(self.relations, self.entities)

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.graph())

    def with_frames(self, frames: dict[str, pd.DataFrame]) -> "EntitySet":
        entities = {
            name: replace(entity, frame=frames[name]) if name in frames else entity
            for name, entity in self.entities.items()
        }
        return replace(self, entities=entities)

    def to_manifest(self) -> dict[str, Any]:
        resources = {
            name: {
                "index": entity.index,
                "rows": entity.row_count,
                "time_index": entity.time_index,
                "variables": list(entity.variables),
            }
            for name, entity in self.entities.items()
        }
        return {
            "notes": [note.to_dict() for note in self.provenance],
            "relations": [str(relation) for relation in self.relations],
            "resources": resources,
            "totals": {
                "loaded_resources": len(self.entities),
                "loaded_variables": sum(
                    len(entity.variables) for entity in self.entities.values()
                ),
                "active_relations": len(self.relations),
                "notes": len(self.provenance),
            },
        }


def discover_files(data_dir: Path, registry: SchemaRegistry) -> dict[str, Path]:
    if not data_dir.is_dir():
        return {}
    by_lower = {name.lower(): name for name in registry.resources}
    found: dict[str, Path] = {}
    for path in sorted(data_dir.iterdir()):
        if path.suffix.lower() != ".csv" or not path.is_file():
            continue
        name = by_lower.get(path.stem.lower())
        if name is not None and name not in found:
            found[name] = path
    return found


def assemble(
    data_dir: Path,
    registry: SchemaRegistry,
    strict: bool = False,
    jobs: int = 1,
) -> EntitySet:
    files = discover_files(data_dir, registry)
    if not files:
        raise NoRecognizedFiles(
            f"no CSV in {data_dir} matches a declared resource "
            f"({', '.join(registry.resources)})"
        )
    present = [name for name in registry.resources if name in files]

    def load(name: str) -> tuple[Entity | None, list[AssemblyNote]]:
        try:
            return load_resource(files[name], registry.resource(name), strict)
        except EmptyDataFile as exc:
            logger.warning("event=assemble_resource_empty resource=%s path=%s", name, files[name])
            return None, [AssemblyNote("missing_resource", name, f"{exc}; resource skipped")]

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        loaded = list(executor.map(load, present))
    entities: dict[str, Entity] = {}
    notes: list[AssemblyNote] = []
    for entity, entity_notes in loaded:
        notes.extend(entity_notes)
        if entity is None:
            continue
        entities[entity.name] = entity
        logger.info(
            "event=assemble_resource_loaded resource=%s rows=%d variables=%d",
            entity.name,
            entity.row_count,
            len(entity.variables),
        )
    if not entities:
        raise NoRecognizedFiles(f"every matching CSV in {data_dir} is empty")

    skipped = {note.subject for note in notes if note.kind == "missing_resource"}
    relations, wiring_notes = _wire_relations(registry, entities, skipped)
    notes.extend(wiring_notes)
    entityset = EntitySet(
        entities=entities,
        relations=tuple(relations),
        provenance=tuple(notes),
        registry=registry,
    )
    entityset = resolve_cycles(entityset)
    logger.info(
        "event=assemble_complete resources=%d relations=%d notes=%d",
        len(entityset.entities),
        len(entityset.relations),
        len(entityset.provenance),
    )
    return entityset


def load_resource(
    path: Path, schema: ResourceSchema, strict: bool = False
) -> tuple[Entity, list[AssemblyNote]]:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
    except pd.errors.EmptyDataError as exc:
        raise EmptyDataFile(f"{path.name} is empty") from exc
    raw.columns = [str(column).strip() for column in raw.columns]
    notes: list[AssemblyNote] = []
    declared = set(schema.variable_names)
    for column in raw.columns:
        if column not in declared:
            logger.debug(
                "event=assemble_column_ignored resource=%s column=%s",
                schema.name,
                column,
            )

    columns: dict[str, pd.Series] = {}
    variables: dict[str, str] = {}
    for variable in schema.variables:
        if variable.name not in raw.columns:
            if variable.name == schema.primary_key:
                columns[variable.name] = pd.Series(
                    [str(position) for position in range(len(raw))], dtype="string"
                )
                variables[variable.name] = "id"
                detail = "primary key column absent; row-number index synthesized"
            else:
                detail = "declared variable absent from data file"
            notes.append(
                AssemblyNote(
                    "missing_variable", f"{schema.name}.{variable.name}", detail
                )
            )
            continue
        series, bad = coerce_column(raw[variable.name], variable.semantic_type)
        if bad:
            subject = f"{schema.name}.{variable.name}"
            if strict:
                raise TypeCoercionError(
                    f"{subject}: {bad} cell(s) cannot be read as {variable.semantic_type}"
                )
            notes.append(
                AssemblyNote(
                    "coerced_value",
                    subject,
                    f"{bad} cell(s) not readable as {variable.semantic_type}; set to null",
                )
            )
        columns[variable.name] = series
        variables[variable.name] = variable.semantic_type

    frame = pd.DataFrame(columns, index=pd.RangeIndex(len(raw)))
    index_values = frame[schema.primary_key]
    if index_values.isna().any():
        raise NullPrimaryKey(
            f"{schema.name}.{schema.primary_key} has "
            f"{int(index_values.isna().sum())} empty cell(s)"
        )
    duplicated = index_values[index_values.duplicated()]
    if not duplicated.empty:
        raise DuplicatePrimaryKey(
            f"{schema.name}.{schema.primary_key} repeats value(s) "
            f"{sorted(set(duplicated.astype(str)))[:5]}"
        )
    time_index = schema.time_index if schema.time_index in variables else None
    entity = Entity(
        name=schema.name,
        frame=frame,
        index=schema.primary_key,
        time_index=time_index,
        variables=variables,
    )
    return entity, notes


def coerce_column(raw: pd.Series, semantic_type: str) -> tuple[pd.Series, int]:
    """Coerce string cells to the declared type, returning the failure count."""
    present = raw.notna()
    if semantic_type == "numeric":
        series = pd.to_numeric(raw, errors="coerce").astype("float64")
    elif semantic_type == "datetime":
        series = pd.to_datetime(raw, errors="coerce", utc=True, format="ISO8601")
    elif semantic_type == "boolean":
        mapped = raw.str.strip().str.lower().map(BOOLEAN_VALUES)
        series = mapped.astype("boolean")
    else:
        series = raw.astype("string")
    bad = int((present & series.isna()).sum())
    return series.reset_index(drop=True), bad


def resolve_cycles(entityset: EntitySet) -> EntitySet:
    kept, removed = break_cycles(entityset.relations, entityset.entities)
    if not removed:
        return entityset
    notes = list(entityset.provenance)
    for relation in removed:
        notes.append(
            AssemblyNote(
                "consolidated",
                str(relation),
                "relation removed to break a cycle in the relationship graph",
            )
        )
        logger.info("event=assemble_cycle_broken relation=%s", relation)
    return replace(entityset, relations=tuple(kept), provenance=tuple(notes))


def break_cycles(
    relations: Iterable[RelationshipDecl], vertices: Iterable[str] = ()
) -> tuple[list[RelationshipDecl], list[RelationshipDecl]]:
    """Remove, cycle by cycle, the edge with the greatest child endpoint."""
    relations = list(relations)
    graph = relation_graph(relations, vertices)
    removed: list[RelationshipDecl] = []
    while True:
        start = _first_cyclic_vertex(graph)
        if start is None:
            break
        cycle = nx.find_cycle(graph, source=start, orientation="original")
        edges = [graph.edges[u, v, key]["relation"] for u, v, key, _ in cycle]
        victim = max(edges, key=lambda rel: (rel.child_resource, rel.child_variable))
        graph.remove_edge(
            victim.child_resource, victim.parent_resource, key=victim.child_variable
        )
        removed.append(victim)
    removed_set = set(removed)
    kept = [relation for relation in relations if relation not in removed_set]
    return kept, removed


def relation_graph(
    relations: Iterable[RelationshipDecl], vertices: Iterable[str] = ()
) -> nx.MultiDiGraph:
    relations = list(relations)
    graph = nx.MultiDiGraph()
    names = set(vertices)
    for relation in relations:
        names.update((relation.child_resource, relation.parent_resource))
    graph.add_nodes_from(sorted(names))
    for relation in relations:
        graph.add_edge(
            relation.child_resource,
            relation.parent_resource,
            key=relation.child_variable,
            relation=relation,
        )
    return graph


def _first_cyclic_vertex(graph: nx.MultiDiGraph) -> str | None:
    candidates: list[str] = []
    for component in nx.strongly_connected_components(graph):
        if len(component) > 1:
            candidates.append(min(component))
            continue
        (vertex,) = component
        if graph.has_edge(vertex, vertex):
            candidates.append(vertex)
    return min(candidates) if candidates else None


def _wire_relations(
    registry: SchemaRegistry,
    entities: dict[str, Entity],
    reported_missing: set[str] | None = None,
) -> tuple[list[RelationshipDecl], list[AssemblyNote]]:
    active: list[RelationshipDecl] = []
    notes: list[AssemblyNote] = []
    reported_missing = set(reported_missing or ())
    for relation in registry.relations:
        child = entities.get(relation.child_resource)
        if child is None:
            continue
        parent = entities.get(relation.parent_resource)
        if parent is None:
            if relation.parent_resource not in reported_missing:
                reported_missing.add(relation.parent_resource)
                notes.append(
                    AssemblyNote(
                        "missing_resource",
                        relation.parent_resource,
                        f"not loaded; referenced by {relation.child_resource}",
                    )
                )
            notes.append(
                AssemblyNote("broken_link", str(relation), "parent resource not loaded")
            )
            continue
        if relation.child_variable not in child.variables:
            notes.append(
                AssemblyNote(
                    "broken_link", str(relation), "foreign key column not loaded"
                )
            )
            continue
        keys = child.frame[relation.child_variable]
        non_null = keys.notna()
        dangling = non_null & ~keys.isin(set(parent.frame[parent.index]))
        dangling_count = int(dangling.sum())
        if dangling_count:
            fraction = dangling_count / int(non_null.sum())
            if fraction >= DANGLING_NULL_THRESHOLD:
                notes.append(
                    AssemblyNote(
                        "broken_link",
                        str(relation),
                        f"{dangling_count} of {int(non_null.sum())} foreign key "
                        f"values dangle; relation dropped",
                    )
                )
                continue
            # in place: the child frame was built by this assembly
            child.frame.loc[dangling, relation.child_variable] = pd.NA
            notes.append(
                AssemblyNote(
                    "broken_link",
                    str(relation),
                    f"{dangling_count} of {int(non_null.sum())} foreign key "
                    f"values dangle; nulled and relation kept",
                )
            )
        active.append(relation)
    return active, notes
