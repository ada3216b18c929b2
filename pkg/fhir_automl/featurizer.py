"""Depth-bounded relational feature synthesis under cutoff times."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

from fhir_automl.assembler import EntitySet
from fhir_automl.primitives import AGGREGATION_PRIMITIVES, TRANSFORM_PRIMITIVES
from fhir_automl.problems import LabelTimes
from fhir_automl.schema import RelationshipDecl

FEATURE_TYPES = {"numeric", "categorical", "boolean"}

logger = logging.getLogger(__name__)


class FeaturizeError(ValueError):
    """Raised when features cannot be enumerated or computed."""


class UnknownEntity(FeaturizeError):
    """Raised when the target entity is not in the entityset."""


class UnknownPrimitive(FeaturizeError):
    """Raised when a primitive name is not registered."""


@dataclass(frozen=True)
class FeatureDef:
    """One synthesized column, evaluated on ``entity``.

    ``kind`` is ``direct`` for identity columns (no relation) and parent
    lookups (``relation`` followed child to parent), ``transform`` for
    datetime transforms and ``aggregation`` for child-to-parent rollups.
    """

    name: str
    kind: str
    primitive: str
    entity: str
    output_type: str
    depth: int
    path: tuple[str, ...] = ()
    variable: str | None = None
    base: "FeatureDef | None" = None
    relation: RelationshipDecl | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "primitive": self.primitive,
            "entity": self.entity,
            "output_type": self.output_type,
            "depth": self.depth,
            "path": list(self.path),
            "variable": self.variable,
            "base": self.base.name if self.base is not None else None,
            "relation": str(self.relation) if self.relation is not None else None,
        }


@dataclass(frozen=True)
class FeatureMatrix:
    entity_ids: tuple[str, ...]
    cutoff_times: tuple[pd.Timestamp, ...]
    features: tuple[FeatureDef, ...]
    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.entity_ids)

    @property
    def feature_names(self) -> list[str]:
        return [feature.name for feature in self.features]

    @property
    def output_types(self) -> dict[str, str]:
        return {feature.name: feature.output_type for feature in self.features}

    def take(self, positions: Sequence[int]) -> "FeatureMatrix":
        positions = list(positions)
        return FeatureMatrix(
            entity_ids=tuple(self.entity_ids[i] for i in positions),
            cutoff_times=tuple(self.cutoff_times[i] for i in positions),
            features=self.features,
            frame=self.frame.iloc[positions].reset_index(drop=True),
        )

    def write_csv(self, path: Path, defs_path: Path | None = None) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        out = pd.DataFrame(
            {
                "entity_id": list(self.entity_ids),
                "cutoff_time": [cutoff.isoformat() for cutoff in self.cutoff_times],
            }
        )
        for feature in self.features:
            column = self.frame[feature.name]
            if feature.output_type == "boolean":
                column = column.astype("boolean").astype("Int64")
            out[feature.name] = column.to_numpy()
        temp_path = path.with_suffix(".tmp")
        out.to_csv(temp_path, index=False, lineterminator="\n")
        temp_path.replace(path)
        if defs_path is not None:
            write_feature_defs(defs_path, self.features)


def write_feature_defs(path: Path, features: Iterable[FeatureDef]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(".tmp")
    with temp_path.open("w", encoding="utf-8") as handle:
        json.dump([feature.to_dict() for feature in features], handle, indent=2, sort_keys=True)
        handle.write("\n")
    temp_path.replace(path)


def read_feature_matrix(path: Path, defs_path: Path) -> FeatureMatrix:
    """Restore a written matrix; definitions come back without their base chain."""
    with defs_path.open("r", encoding="utf-8") as handle:
        raw_defs = json.load(handle)
    features = tuple(
        FeatureDef(
            name=item["name"],
            kind=item["kind"],
            primitive=item["primitive"],
            entity=item["entity"],
            output_type=item["output_type"],
            depth=int(item["depth"]),
            path=tuple(item.get("path", ())),
            variable=item.get("variable"),
        )
        for item in raw_defs
    )
    dtypes: dict[str, Any] = {"entity_id": str, "cutoff_time": str}
    for feature in features:
        dtypes[feature.name] = str if feature.output_type == "categorical" else "float64"
    raw = pd.read_csv(path, dtype=dtypes, keep_default_na=False, na_values=[""])
    columns: dict[str, pd.Series] = {}
    for feature in features:
        column = raw[feature.name]
        if feature.output_type == "boolean":
            column = column.astype("boolean")
        elif feature.output_type == "categorical":
            column = column.astype(object).where(column.notna(), np.nan)
        columns[feature.name] = column
    frame = pd.DataFrame(columns, index=pd.RangeIndex(len(raw)))
    cutoffs = pd.to_datetime(raw["cutoff_time"], utc=True, format="ISO8601")
    return FeatureMatrix(
        entity_ids=tuple(raw["entity_id"].astype(str)),
        cutoff_times=tuple(cutoffs),
        features=features,
        frame=frame,
    )


def apply_cutoff(entityset: EntitySet, cutoff: pd.Timestamp) -> EntitySet:
    """View of the entityset holding only rows timestamped at or before ``cutoff``."""
    frames: dict[str, pd.DataFrame] = {}
    for name, entity in entityset.entities.items():
        if entity.time_index is None:
            continue
        visible = entity.frame[entity.time_index] <= cutoff
        frames[name] = entity.frame[visible.fillna(False).astype(bool)]
    return entityset.with_frames(frames)


def enumerate_features(
    entityset: EntitySet,
    target_entity: str,
    agg_primitives: Sequence[str],
    trans_primitives: Sequence[str],
    max_depth: int,
    ignore_variables: Iterable[str] = (),
) -> list[FeatureDef]:
    if target_entity not in entityset.entities:
        raise UnknownEntity(f"entity {target_entity} is not in the entityset")
    if max_depth < 0:
        raise FeaturizeError("max_depth must be >= 0")
    for name in agg_primitives:
        if name not in AGGREGATION_PRIMITIVES:
            raise UnknownPrimitive(f"unknown aggregation primitive: {name}")
    for name in trans_primitives:
        if name not in TRANSFORM_PRIMITIVES:
            raise UnknownPrimitive(f"unknown transform primitive: {name}")
    builder = _FeatureBuilder(
        entityset,
        tuple(agg_primitives),
        tuple(trans_primitives),
        frozenset(ignore_variables),
    )
    features = builder.build(target_entity, max_depth, path=(), allow_transforms=True, blocked=None)
    unique: dict[str, FeatureDef] = {}
    for feature in features:
        unique.setdefault(feature.name, feature)
    logger.info(
        "event=features_enumerated target=%s depth=%d features=%d",
        target_entity,
        max_depth,
        len(unique),
    )
    return list(unique.values())


def compute_feature_matrix(
    entityset: EntitySet,
    label_times: LabelTimes,
    feature_defs: Sequence[FeatureDef],
    jobs: int = 1,
) -> FeatureMatrix:
    target_name = label_times.problem.target_entity
    if target_name not in entityset.entities:
        raise UnknownEntity(f"entity {target_name} is not in the entityset")
    rows = label_times.rows
    groups: dict[pd.Timestamp, list[int]] = {}
    for position, row in enumerate(rows):
        groups.setdefault(row.cutoff_time, []).append(position)
    ordered_cutoffs = sorted(groups)
    slots: list[pd.DataFrame | None] = [None] * len(ordered_cutoffs)

    def compute_group(slot: int) -> None:
        cutoff = ordered_cutoffs[slot]
        positions = groups[cutoff]
        view = apply_cutoff(entityset, cutoff)
        evaluator = _Evaluator(view)
        ids = [rows[position].entity_id for position in positions]
        columns = {
            feature.name: evaluator.values(feature).reindex(ids).to_numpy()
            for feature in feature_defs
        }
        slots[slot] = pd.DataFrame(columns, index=pd.Index(positions, name="position"))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        list(executor.map(compute_group, range(len(ordered_cutoffs))))

    names = [feature.name for feature in feature_defs]
    if slots:
        frame = pd.concat([slot for slot in slots if slot is not None]).sort_index()
        frame = frame.reset_index(drop=True)
    else:
        frame = pd.DataFrame(columns=names)
    for feature in feature_defs:
        frame[feature.name] = _as_output_type(frame[feature.name], feature.output_type)
    logger.info(
        "event=feature_matrix_computed rows=%d features=%d cutoff_groups=%d",
        len(rows),
        len(names),
        len(ordered_cutoffs),
    )
    return FeatureMatrix(
        entity_ids=tuple(row.entity_id for row in rows),
        cutoff_times=tuple(row.cutoff_time for row in rows),
        features=tuple(feature_defs),
        frame=frame[names] if names else frame,
    )


class _FeatureBuilder:
    def __init__(
        self,
        entityset: EntitySet,
        agg_primitives: tuple[str, ...],
        trans_primitives: tuple[str, ...],
        ignored: frozenset[str],
    ) -> None:
        self.entityset = entityset
        self.agg_primitives = agg_primitives
        self.trans_primitives = trans_primitives
        self.ignored = ignored

    def build(
        self,
        entity_name: str,
        budget: int,
        path: tuple[str, ...],
        allow_transforms: bool,
        blocked: RelationshipDecl | None,
    ) -> list[FeatureDef]:
        """Features of ``entity_name`` within ``budget`` relation hops.

        ``blocked`` is the relation just aggregated over; following it back to
        the parent would only reproduce the parent's own features.
        """
        entity = self.entityset.entity(entity_name)
        features: list[FeatureDef] = []
        for variable, semantic_type in entity.variables.items():
            if semantic_type not in FEATURE_TYPES or self._ignored(entity_name, variable):
                continue
            features.append(
                FeatureDef(
                    name=f"{entity_name}.{variable}",
                    kind="direct",
                    primitive="identity",
                    entity=entity_name,
                    output_type=semantic_type,
                    depth=0,
                    path=path,
                    variable=variable,
                )
            )
        if allow_transforms:
            for variable in entity.variables_of_type("datetime"):
                if self._ignored(entity_name, variable):
                    continue
                for primitive_name in self.trans_primitives:
                    primitive = TRANSFORM_PRIMITIVES[primitive_name]
                    features.append(
                        FeatureDef(
                            name=f"{primitive_name.upper()}({entity_name}.{variable})",
                            kind="transform",
                            primitive=primitive_name,
                            entity=entity_name,
                            output_type=primitive.output_type,
                            depth=0,
                            path=path,
                            variable=variable,
                        )
                    )
        if budget < 1:
            return features

        for relation in self.entityset.parents_of(entity_name):
            if relation == blocked:
                continue
            step = path + (f"{relation.child_resource}.{relation.child_variable}->",)
            parent_features = self.build(
                relation.parent_resource,
                budget - 1,
                step,
                allow_transforms=allow_transforms,
                blocked=None,
            )
            for base in parent_features:
                features.append(
                    FeatureDef(
                        name=f"{relation.child_resource}.{relation.child_variable}->{base.name}",
                        kind="direct",
                        primitive="identity",
                        entity=entity_name,
                        output_type=base.output_type,
                        depth=base.depth + 1,
                        path=path,
                        base=base,
                        relation=relation,
                    )
                )

        for relation in self.entityset.children_of(entity_name):
            child = relation.child_resource
            where = f"WHERE {relation.child_variable} = {entity_name}"
            step = path + (f"<-{child}.{relation.child_variable}",)
            if "count" in self.agg_primitives:
                features.append(
                    FeatureDef(
                        name=f"COUNT({child} {where})",
                        kind="aggregation",
                        primitive="count",
                        entity=entity_name,
                        output_type="numeric",
                        depth=1,
                        path=path,
                        relation=relation,
                    )
                )
            child_features = self.build(
                child, budget - 1, step, allow_transforms=False, blocked=relation
            )
            for base in child_features:
                for primitive_name in self.agg_primitives:
                    primitive = AGGREGATION_PRIMITIVES[primitive_name]
                    if not primitive.accepts(base.output_type):
                        continue
                    features.append(
                        FeatureDef(
                            name=f"{primitive_name.upper()}({base.name} {where})",
                            kind="aggregation",
                            primitive=primitive_name,
                            entity=entity_name,
                            output_type=primitive.output_type,
                            depth=base.depth + 1,
                            path=path,
                            base=base,
                            relation=relation,
                        )
                    )
        return features

    def _ignored(self, entity_name: str, variable: str) -> bool:
        return f"{entity_name}.{variable}" in self.ignored


class _Evaluator:
    """Evaluates features on one cutoff view, memoized by feature name."""

    def __init__(self, view: EntitySet) -> None:
        self.view = view
        self.cache: dict[str, pd.Series] = {}

    def values(self, feature: FeatureDef) -> pd.Series:
        cached = self.cache.get(feature.name)
        if cached is None:
            cached = self._compute(feature)
            self.cache[feature.name] = cached
        return cached

    def _compute(self, feature: FeatureDef) -> pd.Series:
        entity = self.view.entity(feature.entity)
        frame = entity.frame
        index = pd.Index(frame[entity.index].astype(str), name=entity.index)
        if feature.kind == "transform":
            primitive = TRANSFORM_PRIMITIVES[feature.primitive]
            result = primitive.apply(frame[feature.variable])
            return pd.Series(result.to_numpy(), index=index)
        if feature.kind == "direct" and feature.relation is None:
            return pd.Series(frame[feature.variable].to_numpy(), index=index)
        if feature.kind == "direct":
            assert feature.base is not None and feature.relation is not None
            parent_values = self.values(feature.base)
            keys = frame[feature.relation.child_variable]
            present = keys.notna().to_numpy()
            looked_up = np.full(len(frame), np.nan, dtype=object)
            looked_up[present] = parent_values.reindex(
                keys[present].astype(str).to_numpy()
            ).to_numpy()
            return pd.Series(looked_up, index=index)
        return self._aggregate(feature, index)

    def _aggregate(self, feature: FeatureDef, parent_index: pd.Index) -> pd.Series:
        assert feature.relation is not None
        child = self.view.entity(feature.relation.child_resource)
        keys = child.frame[feature.relation.child_variable].astype(object)
        primitive = AGGREGATION_PRIMITIVES[feature.primitive]
        present = keys.notna()
        keys = keys[present].astype(str)
        if feature.primitive == "count":
            counts = primitive.apply(keys.groupby(keys.to_numpy()))
            result = counts.reindex(parent_index, fill_value=0).astype("float64")
            return pd.Series(result.to_numpy(), index=parent_index)
        assert feature.base is not None
        child_values = self.values(feature.base)
        values = pd.Series(child_values.to_numpy()[present.to_numpy()], index=keys.index)
        if feature.base.output_type in {"numeric", "boolean"}:
            values = pd.to_numeric(values.astype(object), errors="coerce").astype("float64")
        else:
            values = values.astype(object).where(values.notna(), np.nan)
        if values.empty:
            return pd.Series([np.nan] * len(parent_index), index=parent_index, dtype=object)
        grouped = primitive.apply(values.groupby(keys.to_numpy()))
        return pd.Series(grouped.reindex(parent_index).to_numpy(), index=parent_index)


def _as_output_type(column: pd.Series, output_type: str) -> pd.Series:
    if output_type == "numeric":
        return pd.to_numeric(column.astype(object), errors="coerce").astype("float64")
    if output_type == "boolean":
        return column.astype(object).where(column.notna(), None).astype("boolean")
    return column.astype(object).where(column.notna(), np.nan)
