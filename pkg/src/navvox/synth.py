"""Deterministic synthetic environments with exact defect ground truth.

Generates heightfields, obstacle meshes, and gameplay markers from a compact
JSON world spec; derives a reference navmesh from the voxel walkable set; and
injects controlled navmesh defects while computing exactly which walkable
voxels change reachability status.

The reference navmesh is built so its polygon-graph connectivity reproduces
the walk-graph connectivity component-for-component: one square per walkable
cell at its surface height, equal-height cells merged into rectangles,
T-junctions between differently-sized neighbors eliminated by edge splitting,
and diagonal-only walk links (where neither orthogonal elbow cell provides a
path) bridged by chamfering the two touching corners and inserting a small
diamond polygon between them.
"""

from __future__ import annotations

import json
import math
import tempfile
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geom import (
    CollisionMesh,
    HeightField,
    Index,
    Region,
    VoxelGrid,
    build_grid,
    load_heightfield,
    load_mesh,
    save_heightfield,
    save_mesh,
    voxelize_collision,
    voxelize_terrain,
)
from .importance import GameplayMarker, ImportanceField, compute_importance, load_markers, save_markers
from .navmesh import NavMesh, NavQueryConfig, build_navmesh, project_point, save_navmesh
from .walk import AgentParams, ReachableSet, WalkGraph, build_walk_graph, classify_walkable, flood_fill

WORLD_FORMAT = "NAVVOX-WORLD v1"

_QUANT = 1e-7


def _qk(v: float) -> int:
    return int(round(v / _QUANT))


# ---------------------------------------------------------------------------
# Terrain profiles


def terrain_functions(tspec: dict) -> tuple[Callable, Callable]:
    """(height_fn, gradient_fn) for a terrain profile; both vectorized.

    The gradient is the analytic derivative of the generating function, used
    as the oracle for finite-difference surface normals.
    """
    profile = tspec.get("profile", "flat")
    if profile == "flat":
        h0 = float(tspec.get("height", 0.0))

        def h(x, y):
            return np.broadcast_to(np.float64(h0), np.broadcast_shapes(np.shape(x), np.shape(y))).copy()

        def g(x, y):
            shape = np.broadcast_shapes(np.shape(x), np.shape(y))
            return np.zeros(shape), np.zeros(shape)

        return h, g
    if profile == "ramp":
        slope = float(tspec.get("slope", 0.5))
        axis = tspec.get("axis", "x")

        def h(x, y):
            return slope * (np.asarray(x, dtype=np.float64) if axis == "x" else np.asarray(y, dtype=np.float64))

        def g(x, y):
            shape = np.broadcast_shapes(np.shape(x), np.shape(y))
            gx = np.full(shape, slope if axis == "x" else 0.0)
            gy = np.full(shape, slope if axis == "y" else 0.0)
            return gx, gy

        return h, g
    if profile == "noise":
        amp = float(tspec.get("amplitude", 1.0))
        freq = float(tspec.get("frequency", 0.05))
        w = 2 * math.pi * freq

        def h(x, y):
            x = np.asarray(x, dtype=np.float64)
            y = np.asarray(y, dtype=np.float64)
            return amp * np.sin(w * x) * np.cos(w * y) + 0.35 * amp * np.sin(2.3 * w * x + 1.3) * np.sin(
                1.7 * w * y + 0.7
            )

        def g(x, y):
            x = np.asarray(x, dtype=np.float64)
            y = np.asarray(y, dtype=np.float64)
            gx = amp * w * np.cos(w * x) * np.cos(w * y) + 0.35 * amp * 2.3 * w * np.cos(
                2.3 * w * x + 1.3
            ) * np.sin(1.7 * w * y + 0.7)
            gy = -amp * w * np.sin(w * x) * np.sin(w * y) + 0.35 * amp * 1.7 * w * np.sin(
                2.3 * w * x + 1.3
            ) * np.cos(1.7 * w * y + 0.7)
            return gx, gy

        return h, g
    if profile == "staircase":
        riser = float(tspec.get("riser", 0.3))
        tread = float(tspec.get("tread", 1.0))
        axis = tspec.get("axis", "x")

        def h(x, y):
            t = np.asarray(x, dtype=np.float64) if axis == "x" else np.asarray(y, dtype=np.float64)
            return riser * np.floor(t / tread)

        def g(x, y):
            shape = np.broadcast_shapes(np.shape(x), np.shape(y))
            return np.zeros(shape), np.zeros(shape)  # zero almost everywhere; jumps at risers

        return h, g
    raise ValueError(f"unknown terrain profile {profile!r}")


def box_collision_mesh(
    center_xy: Sequence[float], size: Sequence[float], bottom_z: float, name: str = "box"
) -> CollisionMesh:
    """Axis-aligned box as a 12-triangle collision mesh."""
    cx, cy = center_xy
    sx, sy, sz = size
    x0, x1 = cx - sx / 2, cx + sx / 2
    y0, y1 = cy - sy / 2, cy + sy / 2
    z0, z1 = bottom_z, bottom_z + sz
    v = np.asarray(
        [
            (x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
            (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1),
        ]
    )
    f = np.asarray(
        [
            (0, 2, 1), (0, 3, 2),  # bottom
            (4, 5, 6), (4, 6, 7),  # top
            (0, 1, 5), (0, 5, 4),
            (1, 2, 6), (1, 6, 5),
            (2, 3, 7), (2, 7, 6),
            (3, 0, 4), (3, 4, 7),
        ]
    )
    return CollisionMesh(v, f, name=name)


# ---------------------------------------------------------------------------
# World spec


@dataclass
class DefectInjection:
    """One navmesh modification with a world-space target region."""

    kind: str  # remove_polygons | shrink_mesh | phantom_polygons | disconnect_island
    region: tuple[tuple[float, float], tuple[float, float]] | None = None
    margin: float = 0.0  # shrink_mesh only

    KINDS = ("remove_polygons", "shrink_mesh", "phantom_polygons", "disconnect_island")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown injection kind {self.kind!r}")
        if self.kind != "shrink_mesh" and self.region is None:
            raise ValueError(f"{self.kind} requires a region")

    @classmethod
    def from_dict(cls, d: dict) -> "DefectInjection":
        region = d.get("region")
        if region is not None:
            region = (tuple(region[0]), tuple(region[1]))
        return cls(d["kind"], region, float(d.get("margin", 0.0)))

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.region is not None:
            out["region"] = [list(self.region[0]), list(self.region[1])]
        if self.kind == "shrink_mesh":
            out["margin"] = self.margin
        return out


@dataclass
class WorldSpec:
    """Deterministic recipe for one synthetic world; the seed fixes everything."""

    seed: int = 0
    extent: float = 20.0
    terrain: dict = field(default_factory=lambda: {"profile": "flat"})
    obstacles: dict = field(default_factory=dict)
    markers: dict = field(default_factory=dict)
    defects: list[DefectInjection] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        return cls(
            seed=int(d.get("seed", 0)),
            extent=float(d.get("extent", 20.0)),
            terrain=dict(d.get("terrain", {"profile": "flat"})),
            obstacles=dict(d.get("obstacles", {})),
            markers=dict(d.get("markers", {})),
            defects=[DefectInjection.from_dict(x) for x in d.get("defects", [])],
        )

    @classmethod
    def from_json(cls, path) -> "WorldSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "extent": self.extent,
            "terrain": self.terrain,
            "obstacles": self.obstacles,
            "markers": self.markers,
            "defects": [d.to_dict() for d in self.defects],
        }


@dataclass
class WorldFiles:
    heightfield: Path
    colliders: list[Path]
    markers: Path
    meta: Path


def _generate_markers(spec: WorldSpec, height_fn, rng: np.random.Generator) -> list[GameplayMarker]:
    markers: list[GameplayMarker] = []
    mspec = spec.markers
    clusters = list(mspec.get("clusters", []))
    for _ in range(int(mspec.get("random_clusters", 0))):
        cx, cy = rng.uniform(0.15 * spec.extent, 0.85 * spec.extent, size=2)
        clusters.append(
            {
                "center": [float(cx), float(cy)],
                "count": int(mspec.get("points_per_cluster", 3)),
                "kind": "InteractionZone",
                "weight": 1.0,
                "radius": float(mspec.get("radius", 3.0)),
                "spread": float(mspec.get("spread", 1.0)),
            }
        )
    for cl in clusters:
        cx, cy = cl["center"]
        count = int(cl.get("count", 1))
        spread = float(cl.get("spread", 1.0))
        for _ in range(count):
            dx, dy = rng.normal(0.0, spread, size=2)
            x = float(np.clip(cx + dx, 0.0, spec.extent))
            y = float(np.clip(cy + dy, 0.0, spec.extent))
            z = float(height_fn(x, y))
            markers.append(
                GameplayMarker(
                    kind=cl.get("kind", "InteractionZone"),
                    position=(x, y, z),
                    weight=float(cl.get("weight", 1.0)),
                    radius=float(cl.get("radius", 3.0)),
                )
            )
    return markers


def generate_world(spec: WorldSpec, out_dir) -> WorldFiles:
    """Write heightfield, collider, and marker files for a world spec.

    Byte-identical output for identical specs: one rng stream seeded by the
    spec seed drives every random draw in a fixed order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    height_fn, _ = terrain_functions(spec.terrain)

    cell = float(spec.terrain.get("cell_size", 0.25))
    n = int(round(spec.extent / cell)) + 1
    xs = np.arange(n) * cell
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    heights = np.asarray(height_fn(gx, gy), dtype=np.float64).reshape(n, n)
    hf = HeightField((0.0, 0.0, 0.0), cell, heights)
    hf_path = out / "terrain.txt"
    save_heightfield(hf, hf_path)

    ospec = spec.obstacles
    boxes: list[CollisionMesh] = []
    for k, b in enumerate(ospec.get("boxes", [])):
        cx, cy = b["center"]
        bz = float(height_fn(float(cx), float(cy))) - 0.2
        boxes.append(box_collision_mesh((float(cx), float(cy)), [float(v) for v in b["size"]], bz, f"box{k}"))
    count = int(ospec.get("count", 0))
    size_lo, size_hi = ospec.get("size_range", [0.5, 2.0])
    height_lo, height_hi = ospec.get("height_range", [1.0, 3.0])
    margin = float(ospec.get("margin", 2.0))
    clear = float(ospec.get("seed_clearance", 3.0))
    center = spec.extent / 2.0
    placed = 0
    attempts = 0
    while placed < count and attempts < count * 50 + 50:
        attempts += 1
        cx, cy = rng.uniform(margin, spec.extent - margin, size=2)
        if math.hypot(cx - center, cy - center) < clear:
            continue
        sx, sy = rng.uniform(size_lo, size_hi, size=2)
        sz = rng.uniform(height_lo, height_hi)
        bz = float(height_fn(float(cx), float(cy))) - 0.2
        boxes.append(box_collision_mesh((float(cx), float(cy)), (float(sx), float(sy), float(sz)), bz, f"obstacle{placed}"))
        placed += 1

    collider_paths: list[Path] = []
    if boxes:
        verts_all, tris_all = [], []
        off = 0
        for b in boxes:
            verts_all.append(b.vertices)
            tris_all.append(b.triangles + off)
            off += len(b.vertices)
        merged = CollisionMesh(np.vstack(verts_all), np.vstack(tris_all), name="colliders")
        p = out / "colliders.txt"
        save_mesh(merged, p)
        collider_paths.append(p)
    for k in range(int(ospec.get("decorative", 0))):
        cx, cy = rng.uniform(margin, spec.extent - margin, size=2)
        sx, sy = rng.uniform(size_lo, size_hi, size=2)
        bz = float(height_fn(float(cx), float(cy)))
        decor = box_collision_mesh((float(cx), float(cy)), (float(sx), float(sy), 1.0), bz, f"decor{k}")
        decor = CollisionMesh(decor.vertices, decor.triangles, nav_excluded=True, name=decor.name)
        p = out / f"decor{k}.txt"
        save_mesh(decor, p)
        collider_paths.append(p)

    markers = _generate_markers(spec, height_fn, rng)
    markers_path = out / "markers.json"
    save_markers(markers, markers_path)

    seed_pos = [center, center, float(height_fn(center, center))]
    meta = {
        "format": WORLD_FORMAT,
        "seed_pos": seed_pos,
        "extent": spec.extent,
        "files": {
            "heightfield": hf_path.name,
            "colliders": [p.name for p in collider_paths],
            "markers": markers_path.name,
        },
        "spec": spec.to_dict(),
    }
    meta_path = out / "world.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return WorldFiles(hf_path, collider_paths, markers_path, meta_path)


# ---------------------------------------------------------------------------
# Reference navmesh emitter


@dataclass
class _Prim:
    """Horizontal polygon primitive prior to stitching/welding."""

    points: list[tuple[float, float]]  # CCW
    z: float
    cells: list[tuple[int, int]] = field(default_factory=list)


def _stitch(prims: list[_Prim], ztol: float) -> list[_Prim]:
    """Split axis-aligned prim edges at other prims' vertices (T-junction removal)."""
    by_x: dict[int, list[tuple[float, float]]] = {}
    by_y: dict[int, list[tuple[float, float]]] = {}
    for prim in prims:
        for x, y in prim.points:
            by_x.setdefault(_qk(x), []).append((y, prim.z))
            by_y.setdefault(_qk(y), []).append((x, prim.z))

    out_prims = []
    for prim in prims:
        pts = prim.points
        n = len(pts)
        out: list[tuple[float, float]] = []
        for k in range(n):
            a, b = pts[k], pts[(k + 1) % n]
            out.append(a)
            vertical = _qk(a[0]) == _qk(b[0])
            horizontal = _qk(a[1]) == _qk(b[1])
            if not (vertical or horizontal):
                continue  # chamfer/diamond diagonals never carry T-junctions
            if vertical:
                cands = by_x.get(_qk(a[0]), ())
                lo, hi = sorted((a[1], b[1]))
            else:
                cands = by_y.get(_qk(a[1]), ())
                lo, hi = sorted((a[0], b[0]))
            lo_q, hi_q = _qk(lo), _qk(hi)
            seen: set[int] = set()
            inner: list[float] = []
            for c, z in cands:
                cq = _qk(c)
                if lo_q < cq < hi_q and abs(z - prim.z) <= ztol + 1e-12 and cq not in seen:
                    seen.add(cq)
                    inner.append(c)
            inner.sort(reverse=(a[1] > b[1]) if vertical else (a[0] > b[0]))
            if vertical:
                out.extend((a[0], c) for c in inner)
            else:
                out.extend((c, a[1]) for c in inner)
        out_prims.append(replace(prim, points=out))
    return out_prims


def _assemble_mesh(prims: list[_Prim], ztol: float) -> tuple[NavMesh, dict[tuple[int, int], int]]:
    """Stitch, weld, and build; returns the mesh and a cell -> polygon map."""
    prims = sorted(prims, key=lambda p: (p.z, min(p.points)))
    prims = _stitch(prims, ztol)
    vert_ids: dict[tuple[float, float, float], int] = {}
    vertices: list[tuple[float, float, float]] = []
    polygons: list[list[int]] = []
    cell_to_poly: dict[tuple[int, int], int] = {}
    for prim in prims:
        poly = []
        for x, y in prim.points:
            key = (x, y, prim.z)
            vid = vert_ids.get(key)
            if vid is None:
                vid = len(vertices)
                vert_ids[key] = vid
                vertices.append(key)
            poly.append(vid)
        pid = len(polygons)
        polygons.append(poly)
        for cell in prim.cells:
            cell_to_poly[cell] = pid
    mesh = build_navmesh(np.asarray(vertices, dtype=np.float64), polygons, adjacency_z_tol=ztol)
    return mesh, cell_to_poly


def _voxel_components(graph: WalkGraph) -> dict[Index, int]:
    comp: dict[Index, int] = {}
    label = 0
    for node in graph.nodes:
        if node in comp:
            continue
        comp[node] = label
        queue = deque([node])
        while queue:
            cur = queue.popleft()
            for nxt in graph.adjacency[cur]:
                if nxt not in comp:
                    comp[nxt] = label
                    queue.append(nxt)
        label += 1
    return comp


def _verify_connectivity(graph: WalkGraph, mesh: NavMesh, cell_to_poly: dict) -> None:
    vcomp = _voxel_components(graph)
    mapping: dict[int, set[int]] = {}
    for node in graph.nodes:
        pid = cell_to_poly[(node[0], node[1])]
        mapping.setdefault(vcomp[node], set()).add(int(mesh.components[pid]))
    used: list[int] = []
    for vc, pcs in mapping.items():
        if len(pcs) != 1:
            raise RuntimeError(f"emitted navmesh splits walk component {vc} into {len(pcs)} parts")
        used.extend(pcs)
    if len(set(used)) != len(mapping):
        raise RuntimeError("emitted navmesh merges distinct walk components")


def emit_reference_navmesh(graph: WalkGraph) -> NavMesh:
    """Defect-free navmesh whose connectivity equals the walk graph's.

    One square per walkable cell at its surface height; equal-height cells
    merge into rectangles; diagonal-only links get corner-chamfer diamond
    bridges. The adjacency z-tolerance is derived from the graph itself (the
    largest orthogonal edge step, or half the largest bridged diagonal step),
    which provably admits every graph edge and no non-edge.
    """
    if not graph.nodes:
        raise ValueError("cannot emit a navmesh from an empty walk graph")
    s = graph.resolution
    ox, oy, _ = graph.origin
    g = s / 4.0

    def gx(i: int) -> float:
        return ox + i * s

    def gy(i: int) -> float:
        return oy + i * s

    colmap = graph.column_map()
    cells = {(ix, iy): graph.surface_z[(ix, iy, iz)] for ix, iy, iz in graph.nodes}

    # diagonal links with no orthogonal 2-hop path get a corner bridge
    chamfers: dict[tuple[int, int], set[tuple[float, float]]] = {}
    diamonds: list[_Prim] = []
    max_orth_dz = 0.0
    max_diag_dz = 0.0
    for u in graph.nodes:
        for w in graph.adjacency[u]:
            if w <= u:
                continue
            dx, dy = w[0] - u[0], w[1] - u[1]
            if abs(dx) <= 1 and abs(dy) <= 1 and abs(dx) + abs(dy) == 1:
                max_orth_dz = max(max_orth_dz, abs(graph.surface_z[u] - graph.surface_z[w]))
            if abs(dx) == 1 and abs(dy) == 1:
                bridged = False
                for elbow_key in ((w[0], u[1]), (u[0], w[1])):
                    elbow = colmap.get(elbow_key)
                    if elbow is not None and elbow in graph.adjacency[u] and w in graph.adjacency[elbow]:
                        bridged = True
                        break
                if bridged:
                    continue
                corner = (gx(max(u[0], w[0])), gy(max(u[1], w[1])))
                zmid = (graph.surface_z[u] + graph.surface_z[w]) / 2.0
                max_diag_dz = max(max_diag_dz, abs(graph.surface_z[u] - graph.surface_z[w]))
                chamfers.setdefault((u[0], u[1]), set()).add(corner)
                chamfers.setdefault((w[0], w[1]), set()).add(corner)
                diamonds.append(
                    _Prim(
                        [
                            (corner[0], corner[1] - g),
                            (corner[0] + g, corner[1]),
                            (corner[0], corner[1] + g),
                            (corner[0] - g, corner[1]),
                        ],
                        zmid,
                    )
                )
    ztol = max(max_orth_dz, max_diag_dz / 2.0) + 1e-9

    # greedy rectangle merge over unchamfered, equal-height cells
    prims: list[_Prim] = list(diamonds)
    plain = {c: z for c, z in cells.items() if c not in chamfers}
    rows: dict[int, list[tuple[int, float]]] = {}
    for (ix, iy), z in plain.items():
        rows.setdefault(iy, []).append((ix, z))
    open_rects: dict[tuple[int, int, float], tuple[int, int]] = {}  # (ix0, ix1, z) -> (iy0, iy1)
    closed: list[tuple[int, int, float, int, int]] = []
    for iy in range(min(rows), max(rows) + 2) if rows else []:
        runs: list[tuple[int, int, float]] = []
        for ix, z in sorted(rows.get(iy, [])):
            if runs and runs[-1][1] == ix - 1 and runs[-1][2] == z:
                runs[-1] = (runs[-1][0], ix, z)
            else:
                runs.append((ix, ix, z))
        next_open: dict[tuple[int, int, float], tuple[int, int]] = {}
        for run in runs:
            if run in open_rects and open_rects[run][1] == iy - 1:
                y0, _ = open_rects.pop(run)
                next_open[run] = (y0, iy)
            else:
                next_open[run] = (iy, iy)
        for run, (y0, y1) in open_rects.items():
            closed.append((run[0], run[1], run[2], y0, y1))
        open_rects = next_open
    for run, (y0, y1) in open_rects.items():
        closed.append((run[0], run[1], run[2], y0, y1))

    for ix0, ix1, z, iy0, iy1 in closed:
        pts = [
            (gx(ix0), gy(iy0)),
            (gx(ix1 + 1), gy(iy0)),
            (gx(ix1 + 1), gy(iy1 + 1)),
            (gx(ix0), gy(iy1 + 1)),
        ]
        covered = [(ix, iy) for ix in range(ix0, ix1 + 1) for iy in range(iy0, iy1 + 1)]
        prims.append(_Prim(pts, z, covered))

    # chamfered cells stay single squares with their cut corners
    for cell, corners in sorted(chamfers.items()):
        ix, iy = cell
        square = [(gx(ix), gy(iy)), (gx(ix + 1), gy(iy)), (gx(ix + 1), gy(iy + 1)), (gx(ix), gy(iy + 1))]
        pts: list[tuple[float, float]] = []
        cut = {(_qk(cx), _qk(cy)) for cx, cy in corners}
        for k in range(4):
            p = square[k]
            if (_qk(p[0]), _qk(p[1])) in cut:
                prev_c = square[(k - 1) % 4]
                next_c = square[(k + 1) % 4]
                pts.append((p[0] + (prev_c[0] - p[0]) / s * g, p[1] + (prev_c[1] - p[1]) / s * g))
                pts.append((p[0] + (next_c[0] - p[0]) / s * g, p[1] + (next_c[1] - p[1]) / s * g))
            else:
                pts.append(p)
        prims.append(_Prim(pts, cells[cell], [cell]))

    mesh, cell_to_poly = _assemble_mesh(prims, ztol)
    _verify_connectivity(graph, mesh, cell_to_poly)
    return mesh


# ---------------------------------------------------------------------------
# Defect injection


@dataclass
class InjectionContext:
    """Pipeline state the injector needs for snapping and ground truth."""

    graph: WalkGraph
    reach: ReachableSet
    grid: VoxelGrid
    nav_cfg: NavQueryConfig
    seed_pos: Sequence[float]


def _snap_region(region, origin_x, origin_y, s) -> tuple[float, float, float, float]:
    (x0, y0), (x1, y1) = region
    sx0 = origin_x + math.floor((x0 - origin_x) / s) * s
    sy0 = origin_y + math.floor((y0 - origin_y) / s) * s
    sx1 = origin_x + math.ceil((x1 - origin_x) / s) * s
    sy1 = origin_y + math.ceil((y1 - origin_y) / s) * s
    return sx0, sy0, sx1, sy1


def _mesh_to_prims(mesh: NavMesh) -> list[_Prim]:
    prims = []
    for pid, poly in enumerate(mesh.polygons):
        pts3 = mesh.vertices[poly]
        if pts3[:, 2].max() - pts3[:, 2].min() > 1e-9:
            raise ValueError("defect injection supports horizontal navmesh polygons only")
        pts2 = [(float(x), float(y)) for x, y in pts3[:, :2]]
        # strip collinear vertices introduced by stitching
        out = []
        n = len(pts2)
        for k in range(n):
            a, b, c = pts2[(k - 1) % n], pts2[k], pts2[(k + 1) % n]
            cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
            if abs(cross) > 1e-12:
                out.append(b)
        prims.append(_Prim(out, float(pts3[0, 2])))
    return prims


def _is_rect(prim: _Prim) -> bool:
    if len(prim.points) != 4:
        return False
    for k in range(4):
        a, b = prim.points[k], prim.points[(k + 1) % 4]
        if _qk(a[0]) != _qk(b[0]) and _qk(a[1]) != _qk(b[1]):
            return False
    return True


def _rect_bounds(prim: _Prim) -> tuple[float, float, float, float]:
    xs = [p[0] for p in prim.points]
    ys = [p[1] for p in prim.points]
    return min(xs), min(ys), max(xs), max(ys)


def _rect_prim(x0, y0, x1, y1, z) -> _Prim:
    return _Prim([(x0, y0), (x1, y0), (x1, y1), (x0, y1)], z)


def _remove_area(prims: list[_Prim], area: tuple[float, float, float, float]) -> list[_Prim]:
    """Carve an axis-aligned area out of the prim soup."""
    ax0, ay0, ax1, ay1 = area
    out: list[_Prim] = []
    for prim in prims:
        bx0, by0, bx1, by1 = _rect_bounds(prim)
        ix0, iy0 = max(ax0, bx0), max(ay0, by0)
        ix1, iy1 = min(ax1, bx1), min(ay1, by1)
        if ix0 >= ix1 - 1e-12 or iy0 >= iy1 - 1e-12:
            out.append(prim)
            continue
        if not _is_rect(prim):
            continue  # diamonds and chamfered cells are dropped whole
        if ix0 - bx0 > 1e-12:
            out.append(_rect_prim(bx0, by0, ix0, by1, prim.z))
        if bx1 - ix1 > 1e-12:
            out.append(_rect_prim(ix1, by0, bx1, by1, prim.z))
        if iy0 - by0 > 1e-12:
            out.append(_rect_prim(ix0, by0, ix1, iy0, prim.z))
        if by1 - iy1 > 1e-12:
            out.append(_rect_prim(ix0, iy1, ix1, by1, prim.z))
    return out


def _shrink(prims: list[_Prim], margin: float, ztol: float) -> list[_Prim]:
    """Inset boundary sides of rectangle prims by the margin."""
    sides = []  # (axis, coord_q, lo, hi, z, prim_idx, side_name)
    rect_idx = [k for k, p in enumerate(prims) if _is_rect(p)]
    rect_bounds = {k: _rect_bounds(prims[k]) for k in rect_idx}
    for k in rect_idx:
        x0, y0, x1, y1 = rect_bounds[k]
        sides.append(("x", _qk(x0), y0, y1, prims[k].z, k, "west"))
        sides.append(("x", _qk(x1), y0, y1, prims[k].z, k, "east"))
        sides.append(("y", _qk(y0), x0, x1, prims[k].z, k, "south"))
        sides.append(("y", _qk(y1), x0, x1, prims[k].z, k, "north"))

    def shared(side) -> bool:
        axis, coord, lo, hi, z, idx, _ = side
        for other in sides:
            if other[5] == idx or other[0] != axis or other[1] != coord:
                continue
            if min(hi, other[3]) - max(lo, other[2]) > 1e-9 and abs(z - other[4]) <= ztol + 1e-12:
                return True
        return False

    out = [p for k, p in enumerate(prims) if k not in rect_idx]
    for k in rect_idx:
        x0, y0, x1, y1 = rect_bounds[k]
        for side in sides:
            if side[5] != k or shared(side):
                continue
            name = side[6]
            if name == "west":
                x0 += margin
            elif name == "east":
                x1 -= margin
            elif name == "south":
                y0 += margin
            else:
                y1 -= margin
        if x1 - x0 > 1e-9 and y1 - y0 > 1e-9:
            out.append(_rect_prim(x0, y0, x1, y1, prims[k].z))
    return out


def _nav_flags(mesh: NavMesh, ctx: InjectionContext) -> dict[Index, bool]:
    seed_pid = project_point(mesh, ctx.seed_pos, ctx.nav_cfg)
    if seed_pid is None:
        raise ValueError("seed position does not project onto the navmesh")
    seed_comp = int(mesh.components[seed_pid])
    flags = {}
    for node in ctx.graph.nodes:
        pid = project_point(mesh, ctx.graph.centers[node], ctx.nav_cfg)
        flags[node] = pid is not None and int(mesh.components[pid]) == seed_comp
    return flags


def inject_defects(
    mesh: NavMesh, injections: Sequence[DefectInjection], ctx: InjectionContext
) -> tuple[NavMesh, frozenset[Index]]:
    """Apply injections and return the modified mesh plus exact ground truth.

    Ground truth is the set of walkable voxels whose navmesh reachability
    flips relative to the input mesh. Injections whose region covers the
    validation seed are rejected up front.
    """
    if not injections:
        return mesh, frozenset()
    s = ctx.graph.resolution
    ox, oy, _ = ctx.graph.origin
    sx, sy = float(ctx.seed_pos[0]), float(ctx.seed_pos[1])
    for inj in injections:
        if inj.region is None:
            continue
        x0, y0, x1, y1 = _snap_region(inj.region, ox, oy, s)
        if x0 - s <= sx <= x1 + s and y0 - s <= sy <= y1 + s:
            raise ValueError(f"injection region {inj.region} touches the validation seed")

    before = _nav_flags(mesh, ctx)
    ztol = mesh.adjacency_z_tol
    prims = _mesh_to_prims(mesh)
    walkable_columns = {(ix, iy) for ix, iy, _ in ctx.graph.nodes}

    for inj in injections:
        if inj.kind == "remove_polygons":
            prims = _remove_area(prims, _snap_region(inj.region, ox, oy, s))
        elif inj.kind == "disconnect_island":
            x0, y0, x1, y1 = _snap_region(inj.region, ox, oy, s)
            ring = 2 * s
            if x1 - x0 <= 2 * ring or y1 - y0 <= 2 * ring:
                raise ValueError("disconnect_island region too small for its boundary ring")
            prims = _remove_area(prims, (x0, y0, x0 + ring, y1))
            prims = _remove_area(prims, (x1 - ring, y0, x1, y1))
            prims = _remove_area(prims, (x0 + ring, y0, x1 - ring, y0 + ring))
            prims = _remove_area(prims, (x0 + ring, y1 - ring, x1 - ring, y1))
        elif inj.kind == "phantom_polygons":
            x0, y0, x1, y1 = _snap_region(inj.region, ox, oy, s)
            ix0 = int(round((x0 - ox) / s))
            ix1 = int(round((x1 - ox) / s))
            iy0 = int(round((y0 - oy) / s))
            iy1 = int(round((y1 - oy) / s))
            terrain_cols = {(jx, jy): v for (jx, jy, _), v in sorted(ctx.grid.terrain.items())}
            for ix in range(ix0, ix1):
                for iy in range(iy0, iy1):
                    if (ix, iy) in walkable_columns:
                        continue
                    v = terrain_cols.get((ix, iy))
                    if v is None or v.surface_z is None:
                        continue
                    prims.append(
                        _Prim(
                            [
                                (ox + ix * s, oy + iy * s),
                                (ox + (ix + 1) * s, oy + iy * s),
                                (ox + (ix + 1) * s, oy + (iy + 1) * s),
                                (ox + ix * s, oy + (iy + 1) * s),
                            ],
                            float(v.surface_z),
                        )
                    )
        elif inj.kind == "shrink_mesh":
            prims = _shrink(prims, inj.margin, ztol)
        else:  # pragma: no cover - guarded by DefectInjection
            raise ValueError(f"unknown injection kind {inj.kind!r}")

    if not prims:
        raise ValueError("injections removed the entire navmesh")
    new_mesh, _ = _assemble_mesh(prims, ztol)
    after = _nav_flags(new_mesh, ctx)
    ground_truth = frozenset(n for n in ctx.graph.nodes if before[n] != after[n])
    return new_mesh, ground_truth


# ---------------------------------------------------------------------------
# Fixture pipeline


@dataclass
class FixtureBundle:
    """Everything a validation or benchmark run needs, plus exact ground truth."""

    spec: WorldSpec
    hf: HeightField
    meshes: list[CollisionMesh]
    markers: list[GameplayMarker]
    grid: VoxelGrid
    graph: WalkGraph
    reach: ReachableSet
    field: ImportanceField
    mesh: NavMesh
    baseline_mesh: NavMesh
    ground_truth: frozenset[Index]
    seed_pos: tuple[float, float, float]
    resolution: float
    agent: AgentParams
    nav_cfg: NavQueryConfig
    out_dir: Path | None = None


def build_fixture(
    spec: WorldSpec,
    out_dir=None,
    resolution: float = 0.5,
    agent: AgentParams | None = None,
    neighbor_radius: float | None = None,
    nav_cfg: NavQueryConfig | None = None,
) -> FixtureBundle:
    """Generate a world, reconstruct walkable space, emit and (optionally)
    corrupt the reference navmesh, and compute injection ground truth.

    When ``out_dir`` is given all artifacts are written there through the real
    file formats and read back, exercising the full round trip.
    """
    agent = agent or AgentParams()
    r = neighbor_radius if neighbor_radius is not None else 1.5 * resolution
    nav_cfg = nav_cfg or NavQueryConfig(proj_radius=resolution, height_tol=agent.h_step)

    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory(prefix="navvox-fixture-")
        out_path = Path(tmp.name)
    else:
        out_path = Path(out_dir)
    try:
        files = generate_world(spec, out_path)
        hf = load_heightfield(files.heightfield)
        meshes = [load_mesh(p) for p in files.colliders]
        markers = load_markers(files.markers)
        meta = json.loads(files.meta.read_text())
        seed_pos = tuple(meta["seed_pos"])

        zmin = float(hf.heights.min()) - 2.0
        zmax = float(hf.heights.max()) + 8.0
        region = Region((0.0, 0.0, zmin), (spec.extent, spec.extent, zmax))
        terrain = voxelize_terrain(hf, region, resolution)
        occupied = voxelize_collision(meshes, region, resolution)
        grid = build_grid(terrain, occupied, resolution)
        walkable = classify_walkable(grid, hf, agent)
        graph = build_walk_graph(walkable, grid, agent, r)
        reach = flood_fill(graph, seed_pos)
        imp_field = compute_importance(graph, grid, markers)

        baseline = emit_reference_navmesh(graph)
        ctx = InjectionContext(graph, reach, grid, nav_cfg, seed_pos)
        if spec.defects:
            mesh, ground_truth = inject_defects(baseline, spec.defects, ctx)
        else:
            mesh, ground_truth = baseline, frozenset()

        if out_dir is not None:
            save_navmesh(mesh, out_path / "navmesh.txt")
            gt_payload = {
                "ground_truth_voxels": [list(v) for v in sorted(ground_truth)],
                "resolution": resolution,
                "adjacency_z_tol": mesh.adjacency_z_tol,
            }
            (out_path / "ground_truth.json").write_text(json.dumps(gt_payload, indent=2, sort_keys=True) + "\n")

        return FixtureBundle(
            spec=spec,
            hf=hf,
            meshes=meshes,
            markers=markers,
            grid=grid,
            graph=graph,
            reach=reach,
            field=imp_field,
            mesh=mesh,
            baseline_mesh=baseline,
            ground_truth=ground_truth,
            seed_pos=seed_pos,  # type: ignore[arg-type]
            resolution=resolution,
            agent=agent,
            nav_cfg=nav_cfg,
            out_dir=None if out_dir is None else out_path,
        )
    finally:
        if tmp is not None:
            tmp.cleanup()
