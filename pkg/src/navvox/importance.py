"""Per-voxel semantic importance from weighted gameplay markers.

Each marker contributes its weight to every walkable voxel whose center lies
within the marker's influence radius; contributions add. The resulting field
drives prioritized exploration and the importance-weighted coverage metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geom import Index, VoxelGrid
from .walk import WalkGraph

MARKER_KINDS = ("PatrolPath", "SpawnPoint", "InteractionZone", "Custom")

DEFAULT_KIND_WEIGHTS: dict[str, float] = {
    "InteractionZone": 1.0,
    "SpawnPoint": 0.8,
    "PatrolPath": 0.6,
}

DEFAULT_MARKER_RADIUS = 5.0


@dataclass(frozen=True)
class GameplayMarker:
    """A navigation-relevant gameplay element with an influence ball."""

    kind: str
    position: tuple[float, float, float]
    weight: float
    radius: float = DEFAULT_MARKER_RADIUS

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("marker weight must be non-negative")
        if self.radius <= 0:
            raise ValueError("marker radius must be positive")


@dataclass(frozen=True)
class ImportanceField:
    """Importance score per walkable voxel, plus the field total."""

    values: dict[Index, float]
    total: float

    def value(self, index: Index) -> float:
        return self.values.get(index, 0.0)


def load_markers(path, kind_weights: Mapping[str, float] | None = None) -> list[GameplayMarker]:
    """Read a JSON marker array; records without a weight fall back to the
    per-kind default table (optionally overridden)."""
    weights = dict(DEFAULT_KIND_WEIGHTS)
    if kind_weights:
        weights.update(kind_weights)
    records = json.loads(Path(path).read_text())
    if not isinstance(records, list):
        raise ValueError(f"{path}: markers file must contain a JSON array")
    markers = []
    for k, rec in enumerate(records):
        try:
            kind = rec["kind"]
            pos = tuple(float(c) for c in rec["position"])
            weight = float(rec["weight"]) if "weight" in rec else weights.get(kind, 1.0)
            radius = float(rec.get("radius", DEFAULT_MARKER_RADIUS))
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"{path}: bad marker record {k}: {e}") from None
        if len(pos) != 3:
            raise ValueError(f"{path}: marker {k} position must have 3 components")
        markers.append(GameplayMarker(kind, pos, weight, radius))
    return markers


def save_markers(markers: Sequence[GameplayMarker], path) -> None:
    records = [
        {"kind": m.kind, "position": list(m.position), "weight": m.weight, "radius": m.radius}
        for m in markers
    ]
    Path(path).write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")


def compute_importance(
    graph: WalkGraph, grid: VoxelGrid, markers: Iterable[GameplayMarker]
) -> ImportanceField:
    """Sum marker weights over every walkable voxel within each marker's radius."""
    values = {idx: 0.0 for idx in graph.nodes}
    markers = list(markers)
    if graph.nodes and markers:
        tree = cKDTree(graph.positions)
        for m in markers:
            for ordinal in tree.query_ball_point(np.asarray(m.position), m.radius):
                values[graph.nodes[ordinal]] += m.weight
    total = float(sum(values.values()))
    return ImportanceField(values, total)


def coverage(field: ImportanceField, visited: Iterable[Index]) -> float:
    """Fraction of total importance carried by the visited voxels.

    Degenerates to the spatial fraction |visited| / |walkable| when the field
    total is zero.
    """
    visited_keys = [v for v in visited if v in field.values]
    if field.total > 0:
        return float(sum(field.values[v] for v in visited_keys) / field.total)
    if not field.values:
        return 0.0
    return len(set(visited_keys)) / len(field.values)
