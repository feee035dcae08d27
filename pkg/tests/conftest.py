"""Shared fixtures and oracle helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from navvox.geom import (
    KIND_TERRAIN,
    HeightField,
    Region,
    Voxel,
    build_grid,
    snap_origin,
    voxel_center,
    voxelize_terrain,
)
from navvox.importance import ImportanceField
from navvox.walk import AgentParams, WalkGraph, build_walk_graph


def flat_heightfield(extent: float = 10.0, cell: float = 0.5, height: float = 0.0) -> HeightField:
    n = int(round(extent / cell)) + 1
    return HeightField((0.0, 0.0, 0.0), cell, np.full((n, n), height))


def make_grid_from_heights(
    heights: dict[tuple[int, int], float], resolution: float = 0.5
) -> tuple:
    """Build a grid with one terrain voxel per given column, heights exact."""
    origin = (0.0, 0.0, 0.0)
    terrain = {}
    for (ix, iy), h in heights.items():
        iz = int(np.floor(h / resolution))
        idx = (ix, iy, iz)
        terrain[idx] = Voxel(idx, voxel_center(origin, idx, resolution), KIND_TERRAIN, surface_z=h)
    return build_grid(terrain, {}, resolution)


def grid_graph(
    heights: dict[tuple[int, int], float],
    resolution: float = 0.5,
    agent: AgentParams | None = None,
    neighbor_radius: float | None = None,
) -> WalkGraph:
    """Walk graph over hand-specified column heights (all columns walkable)."""
    agent = agent or AgentParams()
    grid = make_grid_from_heights(heights, resolution)
    walkable = set(grid.terrain)
    r = neighbor_radius if neighbor_radius is not None else 1.5 * resolution
    return build_walk_graph(walkable, grid, agent, r)


def flat_square_graph(n: int = 10, resolution: float = 0.5) -> WalkGraph:
    return grid_graph({(ix, iy): 0.0 for ix in range(n) for iy in range(n)}, resolution)


def uniform_field(graph: WalkGraph, value: float = 0.0) -> ImportanceField:
    values = {idx: value for idx in graph.nodes}
    return ImportanceField(values, float(sum(values.values())))


@pytest.fixture
def flat_hf():
    return flat_heightfield()


@pytest.fixture
def small_region():
    return Region((0.0, 0.0, -2.0), (4.0, 4.0, 4.0))
