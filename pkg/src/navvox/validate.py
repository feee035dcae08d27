"""The consistency check: voxel reachability vs navmesh reachability.

Every checked waypoint is a walkable voxel. Voxel-side reachability is
membership in the seed's connected component of the walk graph; navmesh-side
reachability is projection plus polygon-component connectivity. A mismatch is
recorded with its distance to the nearest agreeing feature (reachable mesh
footprint for missing-navmesh items, reachable voxel for phantom-navmesh
items), which drives tolerance filtering. Filtered items are clustered under
the voxel neighbor radius and clusters below the size threshold pruned.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .explore import ExplorationEnv, PolicyFn, Trajectory, run_strategy
from .geom import Index
from .importance import ImportanceField, coverage
from .navmesh import NavMesh, NavQueryConfig, project_point
from .walk import ReachableSet, WalkGraph

REPORT_SCHEMA = "navvox-report v1"

MISSING_NAVMESH = "missing_navmesh"  # geometry reachable, navmesh disagrees
PHANTOM_NAVMESH = "phantom_navmesh"  # navmesh reachable, geometry disagrees

EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True)
class Inconsistency:
    voxel: Index
    position: tuple[float, float, float]
    kind: str
    boundary_distance: float


@dataclass
class DefectCluster:
    id: int
    members: list[Inconsistency]
    centroid: tuple[float, float, float]
    aabb_min: tuple[float, float, float]
    aabb_max: tuple[float, float, float]

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass
class ValidationConfig:
    """Tolerances and query settings; epsilon/cluster_radius default from the
    voxel resolution when left unset."""

    epsilon: float | None = None  # tolerance filter distance, m
    tau: int = 3  # minimum cluster size, voxels
    cluster_radius: float | None = None  # defect clustering radius, m
    nav: NavQueryConfig = field(default_factory=NavQueryConfig)
    include_timings: bool = True

    def resolved(self, resolution: float) -> "ValidationConfig":
        return ValidationConfig(
            epsilon=self.epsilon if self.epsilon is not None else resolution,
            tau=self.tau,
            cluster_radius=self.cluster_radius if self.cluster_radius is not None else 1.5 * resolution,
            nav=self.nav,
            include_timings=self.include_timings,
        )


class ValidationContext:
    """Per-run caches shared by all waypoint checks (pure, read-only)."""

    def __init__(
        self,
        graph: WalkGraph,
        reach: ReachableSet,
        mesh: NavMesh,
        seed_pos: Sequence[float],
        cfg: NavQueryConfig,
    ):
        self.graph = graph
        self.reach = reach
        self.mesh = mesh
        self.cfg = cfg
        seed_pid = project_point(mesh, seed_pos, cfg)
        if seed_pid is None:
            raise ValueError(f"seed position {tuple(seed_pos)} does not project onto the navmesh")
        self.seed_component = int(mesh.components[seed_pid])
        self.reachable_polys = [
            pid for pid in range(len(mesh.polygons)) if mesh.components[pid] == self.seed_component
        ]
        member_pos = np.asarray([graph.centers[i] for i in sorted(reach.members)])
        self._member_tree = cKDTree(member_pos) if len(member_pos) else None

    def nav_reachable_at(self, pos: Sequence[float]) -> bool:
        pid = project_point(self.mesh, pos, self.cfg)
        return pid is not None and int(self.mesh.components[pid]) == self.seed_component

    def distance_to_reachable_mesh(self, x: float, y: float) -> float:
        best = math.inf
        for pid in self.reachable_polys:
            d, _, _ = self.mesh.distance_2d(pid, x, y)
            if d < best:
                best = d
        return best

    def distance_to_reachable_voxel(self, pos: Sequence[float]) -> float:
        if self._member_tree is None:
            return math.inf
        d, _ = self._member_tree.query(np.asarray(pos))
        return float(d)


def check_waypoint(
    w: Index,
    reach: ReachableSet,
    mesh: NavMesh,
    seed_pos: Sequence[float],
    cfg: NavQueryConfig,
    ctx: ValidationContext | None = None,
    graph: WalkGraph | None = None,
) -> Inconsistency | None:
    """Compare voxel and navmesh reachability at one walkable voxel.

    Returns None when the two representations agree. The walk graph is taken
    from the context when one is supplied.
    """
    if ctx is None:
        if graph is None:
            raise ValueError("check_waypoint needs either a context or the walk graph")
        ctx = ValidationContext(graph, reach, mesh, seed_pos, cfg)
    pos = ctx.graph.centers[w]
    r_vox = w in reach.members
    r_nav = ctx.nav_reachable_at(pos)
    if r_vox == r_nav:
        return None
    if r_vox:
        dist = ctx.distance_to_reachable_mesh(pos[0], pos[1])
        return Inconsistency(w, pos, MISSING_NAVMESH, dist)
    dist = ctx.distance_to_reachable_voxel(pos)
    return Inconsistency(w, pos, PHANTOM_NAVMESH, dist)


def tolerance_filter(raw: Sequence[Inconsistency], epsilon: float) -> list[Inconsistency]:
    """Drop items within epsilon of the agreeing feature (discretization noise).

    Order-preserving; epsilon = 0 is the identity since recorded distances are
    strictly positive for genuine detections.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    return [item for item in raw if item.boundary_distance > epsilon]


def cluster_defects(
    filtered: Sequence[Inconsistency], tau: int, radius: float
) -> list[DefectCluster]:
    """Connected components of defect voxels under the neighbor radius.

    Components smaller than tau are pruned. Clusters come back sorted by size
    descending, ties by lexicographic centroid, with ids assigned in that
    order.
    """
    if tau < 1:
        raise ValueError("tau must be at least 1")
    items = list(filtered)
    if not items:
        return []
    positions = np.asarray([it.position for it in items])
    tree = cKDTree(positions)
    pairs = tree.query_pairs(radius + 1e-9, output_type="ndarray")

    adj: list[list[int]] = [[] for _ in items]
    for a, b in pairs:
        if np.linalg.norm(positions[a] - positions[b]) <= radius + 1e-9:
            adj[a].append(int(b))
            adj[b].append(int(a))

    seen = [False] * len(items)
    groups: list[list[int]] = []
    for start in range(len(items)):
        if seen[start]:
            continue
        seen[start] = True
        queue = deque([start])
        group = [start]
        while queue:
            cur = queue.popleft()
            for nxt in adj[cur]:
                if not seen[nxt]:
                    seen[nxt] = True
                    group.append(nxt)
                    queue.append(nxt)
        groups.append(group)

    clusters = []
    for group in groups:
        if len(group) < tau:
            continue
        members = sorted((items[k] for k in group), key=lambda it: it.voxel)
        pts = np.asarray([m.position for m in members])
        clusters.append(
            DefectCluster(
                id=-1,
                members=members,
                centroid=tuple(pts.mean(axis=0).tolist()),
                aabb_min=tuple(pts.min(axis=0).tolist()),
                aabb_max=tuple(pts.max(axis=0).tolist()),
            )
        )
    clusters.sort(key=lambda c: (-c.size, c.centroid))
    for k, c in enumerate(clusters):
        c.id = k
    return clusters


@dataclass
class DefectReport:
    """Full validation outcome: raw and filtered items, clusters, metrics."""

    raw: list[Inconsistency]
    filtered: list[Inconsistency]
    clusters: list[DefectCluster]
    metrics: dict
    config: dict

    @property
    def has_defects(self) -> bool:
        return bool(self.clusters)

    def cluster_of(self, voxel: Index) -> int | None:
        for c in self.clusters:
            for m in c.members:
                if m.voxel == voxel:
                    return c.id
        return None

    def to_dict(self) -> dict:
        membership = {}
        for c in self.clusters:
            for m in c.members:
                membership[m.voxel] = c.id
        return {
            "schema": REPORT_SCHEMA,
            "config": self.config,
            "summary": self.metrics,
            "clusters": [
                {
                    "id": c.id,
                    "size": c.size,
                    "centroid": list(c.centroid),
                    "aabb": {"min": list(c.aabb_min), "max": list(c.aabb_max)},
                    "kinds": sorted({m.kind for m in c.members}),
                }
                for c in self.clusters
            ],
            "defects": [
                {
                    "voxel": list(it.voxel),
                    "position": list(it.position),
                    "kind": it.kind,
                    "boundary_distance": it.boundary_distance,
                    "cluster_id": membership.get(it.voxel),
                }
                for it in self.filtered
            ],
        }


def save_report(report: DefectReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def run_validation(
    graph: WalkGraph,
    reach: ReachableSet,
    field_: ImportanceField,
    mesh: NavMesh,
    seed_pos: Sequence[float],
    strategy: str = "bfs",
    budget: int | str | None = EXHAUSTIVE,
    seed: int = 0,
    vcfg: ValidationConfig | None = None,
    policy: PolicyFn | None = None,
) -> DefectReport:
    """Explore, check every visited waypoint once, filter, and cluster.

    ``budget=None`` or ``"exhaustive"`` (or any budget >= the walkable count)
    checks every walkable voxel directly, independent of the strategy; that is
    also the ground-truth procedure budgeted runs are compared against.
    """
    vcfg = (vcfg or ValidationConfig()).resolved(graph.resolution)
    t0 = time.perf_counter()
    ctx = ValidationContext(graph, reach, mesh, seed_pos, vcfg.nav)

    exhaustive = budget is None or budget == EXHAUSTIVE or (
        isinstance(budget, int) and budget >= len(graph.nodes)
    )
    trajectory: Trajectory | None = None
    if exhaustive:
        waypoints: list[Index] = list(graph.nodes)
        visited: set[Index] = set(graph.nodes)
    else:
        env = ExplorationEnv(graph, field_, reach)
        trajectory = run_strategy(env, strategy, int(budget), seed, policy=policy)
        seen: set[Index] = set()
        waypoints = []
        for w in trajectory.waypoints:
            if w not in seen:
                seen.add(w)
                waypoints.append(w)
        visited = seen

    raw: list[Inconsistency] = []
    for w in waypoints:
        item = check_waypoint(w, reach, mesh, seed_pos, vcfg.nav, ctx=ctx)
        if item is not None:
            raw.append(item)
    filtered = tolerance_filter(raw, vcfg.epsilon)
    clusters = cluster_defects(filtered, vcfg.tau, vcfg.cluster_radius)
    elapsed_ms = (time.perf_counter() - t0) * 1000.0

    clustered_voxels = {m.voxel for c in clusters for m in c.members}
    kind_counts = {MISSING_NAVMESH: 0, PHANTOM_NAVMESH: 0}
    for it in filtered:
        kind_counts[it.kind] += 1
    metrics = {
        "raw_count": len(raw),
        "filtered_count": len(filtered),
        "cluster_count": len(clusters),
        "clustered_voxels": len(clustered_voxels),
        "counts_by_kind": kind_counts,
        "coverage": coverage(field_, visited),
        "samples_used": len(waypoints),
        "exhaustive_samples": len(graph.nodes),
        "validate_ms": elapsed_ms if vcfg.include_timings else None,
    }
    config_echo = {
        "epsilon": vcfg.epsilon,
        "tau": vcfg.tau,
        "cluster_radius": vcfg.cluster_radius,
        "proj_radius": vcfg.nav.proj_radius,
        "height_tol": vcfg.nav.height_tol,
        "adjacency_z_tol": mesh.adjacency_z_tol,
        "resolution": graph.resolution,
        "neighbor_radius": graph.neighbor_radius,
        "strategy": "exhaustive" if exhaustive else strategy,
        "budget": None if exhaustive else budget,
        "seed": seed,
        "seed_pos": list(seed_pos),
    }
    return DefectReport(raw, filtered, clusters, metrics, config_echo)
