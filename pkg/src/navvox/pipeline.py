"""Load a generated world directory and rebuild validation state from files."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

from .geom import (
    CollisionMesh,
    HeightField,
    Index,
    Region,
    VoxelGrid,
    build_grid,
    load_heightfield,
    load_mesh,
    voxelize_collision,
    voxelize_terrain,
)
from .importance import GameplayMarker, ImportanceField, compute_importance, load_markers
from .navmesh import NavMesh, NavQueryConfig, load_navmesh
from .walk import AgentParams, ReachableSet, WalkGraph, build_walk_graph, classify_walkable, flood_fill


@dataclass
class WorldDir:
    """Parsed artifacts of one world directory."""

    root: Path
    hf: HeightField
    meshes: list[CollisionMesh]
    markers: list[GameplayMarker]
    navmesh: NavMesh | None
    meta: dict
    ground_truth: frozenset[Index]


def load_world(root, kind_weights=None, adjacency_z_tol: float | None = None) -> WorldDir:
    root = Path(root)
    meta_path = root / "world.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{meta_path}: world directory has no world.json")
    meta = json.loads(meta_path.read_text())
    files = meta.get("files", {})
    hf = load_heightfield(root / files.get("heightfield", "terrain.txt"))
    meshes = [load_mesh(root / name) for name in files.get("colliders", [])]
    markers_path = root / files.get("markers", "markers.json")
    markers = load_markers(markers_path, kind_weights) if markers_path.exists() else []

    navmesh = None
    nm_path = root / "navmesh.txt"
    if nm_path.exists():
        gt_path = root / "ground_truth.json"
        ztol = adjacency_z_tol
        gt: frozenset[Index] = frozenset()
        if gt_path.exists():
            gt_payload = json.loads(gt_path.read_text())
            gt = frozenset(tuple(v) for v in gt_payload.get("ground_truth_voxels", []))
            if ztol is None:
                ztol = gt_payload.get("adjacency_z_tol")
        navmesh = load_navmesh(nm_path) if ztol is None else load_navmesh(nm_path, ztol)
    else:
        gt = frozenset()
    return WorldDir(root, hf, meshes, markers, navmesh, meta, gt)


@dataclass
class Reconstruction:
    grid: VoxelGrid
    graph: WalkGraph
    reach: ReachableSet
    field: ImportanceField
    seed_pos: tuple[float, float, float]
    timings_ms: dict


def reconstruct(
    world: WorldDir,
    resolution: float = 0.5,
    agent: AgentParams | None = None,
    neighbor_radius: float | None = None,
    region: Region | None = None,
    seed_pos=None,
) -> Reconstruction:
    """Voxelize, classify, connect, flood-fill, and score importance."""
    agent = agent or AgentParams()
    r = neighbor_radius if neighbor_radius is not None else 1.5 * resolution
    if seed_pos is None:
        seed_pos = tuple(world.meta.get("seed_pos", (0.0, 0.0, 0.0)))
    if region is None:
        x0, y0, x1, y1 = world.hf.bounds_xy()
        zmin = float(world.hf.heights.min()) - 2.0
        zmax = float(world.hf.heights.max()) + 8.0
        region = Region((x0, y0, zmin), (x1, y1, zmax))

    t0 = time.perf_counter()
    terrain = voxelize_terrain(world.hf, region, resolution)
    occupied = voxelize_collision(world.meshes, region, resolution)
    grid = build_grid(terrain, occupied, resolution)
    walkable = classify_walkable(grid, world.hf, agent)
    graph = build_walk_graph(walkable, grid, agent, r)
    reach = flood_fill(graph, seed_pos)
    field = compute_importance(graph, grid, world.markers)
    elapsed = (time.perf_counter() - t0) * 1000.0
    return Reconstruction(grid, graph, reach, field, tuple(seed_pos), {"reconstruction_ms": elapsed})
