"""Walkability classification, the walkable connectivity graph, and flood fill.

A terrain voxel is walkable when its local slope, vertical clearance, and
radius clearance admit the configured agent. The step-height constraint is
pairwise and therefore enforced on graph edges, not on vertices: two walkable
voxels are connected when their centers are within the neighbor radius and
their surface heights differ by at most the step height.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

from .geom import HeightField, Index, VoxelGrid

UP = np.asarray([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class AgentParams:
    """Traversal constraints of the agent the space is reconstructed for."""

    theta_max: float = math.radians(45.0)  # max slope, radians
    h_step: float = 0.4  # max step height, m
    r_agent: float = 0.5  # agent radius, m
    h_agent: float = 2.0  # required vertical clearance, m

    def __post_init__(self):
        if not (0 < self.theta_max < math.pi / 2):
            raise ValueError("theta_max must be in (0, pi/2)")
        if self.h_step <= 0 or self.r_agent <= 0 or self.h_agent <= 0:
            raise ValueError("agent parameters must be strictly positive")


def surface_normal(hf: HeightField, x: float, y: float, delta: float | None = None) -> np.ndarray:
    """Upward unit normal from central finite differences of the heightfield.

    Raises for positions whose central-difference window leaves the footprint
    (the extreme border band of the heightfield).
    """
    d = hf.cell_size if delta is None else delta
    x0, y0, x1, y1 = hf.bounds_xy()
    if not (x0 + d <= x <= x1 - d and y0 + d <= y <= y1 - d):
        raise ValueError(f"({x}, {y}) too close to heightfield border for a normal")
    dhdx = (hf.sample(x + d, y) - hf.sample(x - d, y)) / (2 * d)
    dhdy = (hf.sample(x, y + d) - hf.sample(x, y - d)) / (2 * d)
    n = np.asarray([-dhdx, -dhdy, 1.0])
    return n / np.linalg.norm(n)


def _slopes_at(hf: HeightField, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Slope angle at each position, evaluation window clamped into the footprint."""
    d = hf.cell_size
    x0, y0, x1, y1 = hf.bounds_xy()
    cx = np.clip(xs, x0 + d, x1 - d)
    cy = np.clip(ys, y0 + d, y1 - d)
    dhdx = (hf.sample_many(cx + d, cy) - hf.sample_many(cx - d, cy)) / (2 * d)
    dhdy = (hf.sample_many(cx, cy + d) - hf.sample_many(cx, cy - d)) / (2 * d)
    nz = 1.0 / np.sqrt(dhdx**2 + dhdy**2 + 1.0)
    return np.arccos(np.clip(nz, -1.0, 1.0))


def classify_walkable(grid: VoxelGrid, hf: HeightField, params: AgentParams) -> set[Index]:
    """Terrain voxels passing the slope, vertical-clearance, and radius tests.

    The agent body occupies the vertical interval [h + h_step, h + h_agent]
    above the surface height h; an occupied voxel blocks the cell when its
    horizontal center distance is below r_agent and its vertical span overlaps
    that interval. Vertical clearance is the free column gap above the surface
    voxel. The pairwise step test lives in :func:`build_walk_graph`.
    """
    if not grid.terrain:
        return set()
    indices = sorted(grid.terrain)
    centers = np.asarray([grid.terrain[i].center for i in indices])
    surf = np.asarray(
        [
            grid.terrain[i].surface_z if grid.terrain[i].surface_z is not None else grid.terrain[i].center[2]
            for i in indices
        ]
    )

    x0, y0, x1, y1 = hf.bounds_xy()
    in_fp = (centers[:, 0] >= x0) & (centers[:, 0] <= x1) & (centers[:, 1] >= y0) & (centers[:, 1] <= y1)
    theta = np.full(len(indices), np.inf)
    if in_fp.any():
        theta[in_fp] = _slopes_at(hf, centers[in_fp, 0], centers[in_fp, 1])
    ok = theta <= params.theta_max

    s = grid.resolution
    columns: dict[tuple[int, int], list[int]] = {}
    for ix, iy, iz in grid.occupied:
        columns.setdefault((ix, iy), []).append(iz)
    for col in columns.values():
        col.sort()

    occ_centers = None
    occ_tree = None
    if grid.occupied:
        occ_centers = np.asarray([v.center for v in grid.occupied.values()])
        occ_tree = cKDTree(occ_centers)

    body_span = params.h_agent - params.h_step
    walkable: set[Index] = set()
    for k, idx in enumerate(indices):
        if not ok[k]:
            continue
        h = surf[k]
        # vertical clearance: gap between the surface voxel top and the first
        # occupied voxel strictly above it in the same column
        col = columns.get((idx[0], idx[1]))
        if col is not None:
            pos = bisect_right(col, idx[2])
            if pos < len(col):
                h_free = (col[pos] - idx[2] - 1) * s
                if h_free < params.h_agent:
                    continue
        if occ_tree is not None:
            body_lo = h + params.h_step
            body_hi = h + params.h_agent
            q = np.asarray([centers[k, 0], centers[k, 1], (body_lo + body_hi) / 2.0])
            radius = math.hypot(params.r_agent, body_span / 2.0 + s / 2.0) + 1e-9
            blocked = False
            for j in occ_tree.query_ball_point(q, radius):
                oc = occ_centers[j]
                if (oc[0] - q[0]) ** 2 + (oc[1] - q[1]) ** 2 >= params.r_agent**2:
                    continue
                if oc[2] + s / 2.0 > body_lo and oc[2] - s / 2.0 < body_hi:
                    blocked = True
                    break
            if blocked:
                continue
        walkable.add(idx)
    return walkable


class WalkGraph:
    """Adjacency over walkable voxels; immutable once built.

    Edges are symmetric, connect only walkable voxels, and satisfy both the
    center-distance bound (<= neighbor_radius) and the step-height bound on
    surface heights. Adjacency lists are sorted for determinism.
    """

    def __init__(
        self,
        nodes: list[Index],
        adjacency: dict[Index, tuple[Index, ...]],
        neighbor_radius: float,
        centers: dict[Index, tuple[float, float, float]],
        surface_z: dict[Index, float],
        resolution: float,
        origin: tuple[float, float, float],
    ):
        self.nodes = nodes
        self.adjacency = adjacency
        self.neighbor_radius = neighbor_radius
        self.centers = centers
        self.surface_z = surface_z
        self.resolution = resolution
        self.origin = origin

        self.ordinal = {idx: k for k, idx in enumerate(nodes)}
        self.positions = np.asarray([centers[i] for i in nodes]) if nodes else np.zeros((0, 3))
        self.surfaces = np.asarray([surface_z[i] for i in nodes]) if nodes else np.zeros(0)
        self.adj_ordinals: list[np.ndarray] = [
            np.asarray([self.ordinal[j] for j in adjacency[i]], dtype=np.int64) for i in nodes
        ]

    def __len__(self) -> int:
        return len(self.nodes)

    def neighbors(self, index: Index) -> tuple[Index, ...]:
        return self.adjacency[index]

    def column_map(self) -> dict[tuple[int, int], Index]:
        return {(ix, iy): (ix, iy, iz) for ix, iy, iz in self.nodes}


def build_walk_graph(
    walkable: Iterable[Index], grid: VoxelGrid, params: AgentParams, neighbor_radius: float
) -> WalkGraph:
    """Connect walkable voxels within the neighbor radius and step height."""
    s = grid.resolution
    if neighbor_radius < s:
        # legal but produces an edgeless graph; keep going
        pass
    nodes = sorted(walkable)
    centers: dict[Index, tuple[float, float, float]] = {}
    surface: dict[Index, float] = {}
    for idx in nodes:
        v = grid.terrain.get(idx)
        if v is None:
            raise ValueError(f"walkable voxel {idx} is not a terrain voxel of the grid")
        if v.surface_z is None:
            raise ValueError(f"terrain voxel {idx} carries no surface height")
        centers[idx] = v.center
        surface[idx] = v.surface_z

    reach = int(math.floor(neighbor_radius / s + 1e-9))
    offsets: list[tuple[int, int, int]] = []
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            for dz in range(-reach, reach + 1):
                if (dx, dy, dz) == (0, 0, 0):
                    continue
                if s * math.sqrt(dx * dx + dy * dy + dz * dz) <= neighbor_radius:
                    offsets.append((dx, dy, dz))

    node_set = set(nodes)
    adjacency: dict[Index, tuple[Index, ...]] = {}
    for idx in nodes:
        neigh = []
        for dx, dy, dz in offsets:
            j = (idx[0] + dx, idx[1] + dy, idx[2] + dz)
            if j in node_set and abs(surface[idx] - surface[j]) <= params.h_step:
                neigh.append(j)
        adjacency[idx] = tuple(sorted(neigh))
    return WalkGraph(nodes, adjacency, neighbor_radius, centers, surface, s, grid.origin)


@dataclass(frozen=True)
class ReachableSet:
    """The connected component of the walk graph containing the seed."""

    seed: Index
    members: frozenset[Index]


def flood_fill(graph: WalkGraph, seed_pos: Iterable[float]) -> ReachableSet:
    """Breadth-first component of the walkable voxel nearest to ``seed_pos``.

    Raises when no walkable voxel lies within twice the neighbor radius of the
    given position.
    """
    if not graph.nodes:
        raise ValueError("flood_fill on empty walk graph")
    p = np.asarray(list(seed_pos), dtype=np.float64)
    d2 = np.einsum("ij,ij->i", graph.positions - p, graph.positions - p)
    start = int(np.argmin(d2))
    if math.sqrt(d2[start]) > 2 * graph.neighbor_radius:
        raise ValueError(
            f"no walkable voxel within {2 * graph.neighbor_radius} m of seed position {tuple(p)}"
        )
    seen = np.zeros(len(graph.nodes), dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nxt in graph.adj_ordinals[cur]:
            if not seen[nxt]:
                seen[nxt] = True
                queue.append(int(nxt))
    members = frozenset(graph.nodes[k] for k in np.flatnonzero(seen))
    return ReachableSet(graph.nodes[start], members)


def dump_point_cloud(grid: VoxelGrid, walkable: set[Index], path) -> None:
    """Debug dump: one ``x y z kind`` line per voxel for external viewers."""
    lines = []
    for idx in sorted(grid.terrain):
        v = grid.terrain[idx]
        kind = "walkable" if idx in walkable else "terrain"
        lines.append(f"{v.center[0]!r} {v.center[1]!r} {v.center[2]!r} {kind}")
    for idx in sorted(grid.occupied):
        v = grid.occupied[idx]
        lines.append(f"{v.center[0]!r} {v.center[1]!r} {v.center[2]!r} occupied")
    Path(path).write_text("\n".join(lines) + "\n")
