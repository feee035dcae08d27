"""Navigation-mesh model and query layer: point projection and reachability.

Polygons are convex, planar within tolerance, and wound counter-clockwise when
viewed from above. Adjacency links two polygons that share a full edge in plan
view (identical 2D endpoints) with vertex heights within a configurable
z-tolerance; this covers both exactly-welded meshes and stepped meshes whose
shared boundaries sit at slightly different heights. Reachability between two
points is connectivity of their projected polygons in the adjacency graph.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geom import FileFormatError

PLANARITY_TOL = 1e-4
CONVEXITY_TOL = 1e-9
_QUANT = 1e-7  # edge-key quantization, meters

DEFAULT_ADJACENCY_Z_TOL = 0.4


@dataclass(frozen=True)
class NavQueryConfig:
    """Snap tolerances for point-to-mesh queries."""

    proj_radius: float = 0.5  # max horizontal snap distance, m
    height_tol: float = 0.4  # max vertical distance point-to-surface, m

    def __post_init__(self):
        if self.proj_radius <= 0 or self.height_tol <= 0:
            raise ValueError("query tolerances must be positive")


def _qk(v: float) -> int:
    return int(round(v / _QUANT))


def _edge_key_2d(a: Sequence[float], b: Sequence[float]):
    ka = (_qk(a[0]), _qk(a[1]))
    kb = (_qk(b[0]), _qk(b[1]))
    return (ka, kb) if ka <= kb else (kb, ka)


class NavMesh:
    """Convex-polygon navigation mesh with cached adjacency and components."""

    def __init__(
        self,
        vertices: np.ndarray,
        polygons: list[list[int]],
        adjacency_z_tol: float = DEFAULT_ADJACENCY_Z_TOL,
        _validated: bool = False,
    ):
        self.vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.polygons = [list(p) for p in polygons]
        self.adjacency_z_tol = adjacency_z_tol
        self._pts2d = [self.vertices[p][:, :2] for p in self.polygons]
        self._pts3d = [self.vertices[p] for p in self.polygons]
        if not _validated:
            self._validate()
        self._planes = [self._plane(i) for i in range(len(self.polygons))]
        self.adjacency = self._build_adjacency()
        self.components = self._label_components()
        self._build_buckets()

    # -- construction ------------------------------------------------------

    def _validate(self):
        if not len(self.polygons):
            raise ValueError("navmesh has no polygons")
        for pid, poly in enumerate(self.polygons):
            if len(poly) < 3:
                raise ValueError(f"polygon {pid} has fewer than 3 vertices")
            if min(poly) < 0 or max(poly) >= len(self.vertices):
                raise ValueError(f"polygon {pid} references a missing vertex")
            pts = self._pts2d[pid]
            n = len(pts)
            area2 = 0.0
            for k in range(n):
                a, b = pts[k], pts[(k + 1) % n]
                area2 += a[0] * b[1] - b[0] * a[1]
            if area2 <= CONVEXITY_TOL:
                raise ValueError(f"polygon {pid} is degenerate or not CCW from above")
            for k in range(n):
                a, b, c = pts[k], pts[(k + 1) % n], pts[(k + 2) % n]
                cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
                if cross < -CONVEXITY_TOL:
                    raise ValueError(f"polygon {pid} is not convex")
            # planarity against the Newell normal
            p3 = self._pts3d[pid]
            normal = np.zeros(3)
            for k in range(n):
                a, b = p3[k], p3[(k + 1) % n]
                normal[0] += (a[1] - b[1]) * (a[2] + b[2])
                normal[1] += (a[2] - b[2]) * (a[0] + b[0])
                normal[2] += (a[0] - b[0]) * (a[1] + b[1])
            norm = np.linalg.norm(normal)
            if norm <= 0:
                raise ValueError(f"polygon {pid} has no usable plane")
            normal /= norm
            dev = np.abs((p3 - p3[0]) @ normal)
            if dev.max() > PLANARITY_TOL:
                raise ValueError(f"polygon {pid} is non-planar by {dev.max():.2e} m")

    def _plane(self, pid: int):
        p3 = self._pts3d[pid]
        n = len(p3)
        normal = np.zeros(3)
        for k in range(n):
            a, b = p3[k], p3[(k + 1) % n]
            normal[0] += (a[1] - b[1]) * (a[2] + b[2])
            normal[1] += (a[2] - b[2]) * (a[0] + b[0])
            normal[2] += (a[0] - b[0]) * (a[1] + b[1])
        normal /= np.linalg.norm(normal)
        if normal[2] < 0:
            normal = -normal
        if normal[2] < 1e-9:
            raise ValueError(f"polygon {pid} is vertical; walkable polygons must face up")
        return normal, p3[0]

    def _build_adjacency(self) -> list[list[int]]:
        edge_map: dict[tuple, list[tuple[float, int]]] = {}
        for pid, poly in enumerate(self.polygons):
            n = len(poly)
            for k in range(n):
                a = self.vertices[poly[k]]
                b = self.vertices[poly[(k + 1) % n]]
                key = _edge_key_2d(a, b)
                edge_map.setdefault(key, []).append(((a[2] + b[2]) / 2.0, pid))

        adjacency: list[set[int]] = [set() for _ in self.polygons]
        tol = self.adjacency_z_tol
        for key, entries in edge_map.items():
            entries.sort()
            zs = [z for z, _ in entries]
            for k in range(len(entries) - 2):
                if zs[k + 1] - zs[k] <= tol and zs[k + 2] - zs[k + 1] <= tol:
                    raise ValueError(
                        f"non-manifold edge: {len(entries)} polygons share edge {key} within z-tolerance"
                    )
            for k in range(len(entries) - 1):
                if zs[k + 1] - zs[k] <= tol:
                    _, p = entries[k]
                    _, q = entries[k + 1]
                    if p != q:
                        adjacency[p].add(q)
                        adjacency[q].add(p)
        return [sorted(s) for s in adjacency]

    def _label_components(self) -> np.ndarray:
        labels = np.full(len(self.polygons), -1, dtype=np.int64)
        comp = 0
        for start in range(len(self.polygons)):
            if labels[start] >= 0:
                continue
            labels[start] = comp
            queue = deque([start])
            while queue:
                cur = queue.popleft()
                for nxt in self.adjacency[cur]:
                    if labels[nxt] < 0:
                        labels[nxt] = comp
                        queue.append(nxt)
            comp += 1
        return labels

    def _build_buckets(self):
        los = np.asarray([pts.min(axis=0) for pts in self._pts2d])
        his = np.asarray([pts.max(axis=0) for pts in self._pts2d])
        spans = np.maximum(his - los, 1e-6)
        self._bucket_size = float(max(np.median(spans), 0.25))
        self._bucket_lo = los.min(axis=0)
        self._buckets: dict[tuple[int, int], list[int]] = {}
        for pid in range(len(self.polygons)):
            bx0, by0 = np.floor((los[pid] - self._bucket_lo) / self._bucket_size).astype(int)
            bx1, by1 = np.floor((his[pid] - self._bucket_lo) / self._bucket_size).astype(int)
            for bx in range(bx0, bx1 + 1):
                for by in range(by0, by1 + 1):
                    self._buckets.setdefault((bx, by), []).append(pid)

    # -- queries -----------------------------------------------------------

    def candidate_polygons(self, x: float, y: float, radius: float) -> list[int]:
        b = self._bucket_size
        bx0 = int(np.floor((x - radius - self._bucket_lo[0]) / b))
        bx1 = int(np.floor((x + radius - self._bucket_lo[0]) / b))
        by0 = int(np.floor((y - radius - self._bucket_lo[1]) / b))
        by1 = int(np.floor((y + radius - self._bucket_lo[1]) / b))
        seen: set[int] = set()
        for bx in range(bx0, bx1 + 1):
            for by in range(by0, by1 + 1):
                seen.update(self._buckets.get((bx, by), ()))
        return sorted(seen)

    def height_at(self, pid: int, x: float, y: float) -> float:
        normal, p0 = self._planes[pid]
        return float(p0[2] - (normal[0] * (x - p0[0]) + normal[1] * (y - p0[1])) / normal[2])

    def distance_2d(self, pid: int, x: float, y: float) -> tuple[float, float, float]:
        """(distance, qx, qy): horizontal distance to the polygon footprint and
        the nearest footprint point (the query itself when inside)."""
        pts = self._pts2d[pid]
        if _point_in_convex_2d(pts, x, y):
            return 0.0, x, y
        best = np.inf
        bx, by = x, y
        n = len(pts)
        for k in range(n):
            a, b = pts[k], pts[(k + 1) % n]
            d, qx, qy = _point_segment_2d(x, y, a, b)
            if d < best:
                best, bx, by = d, qx, qy
        return float(best), float(bx), float(by)


def _point_in_convex_2d(pts: np.ndarray, x: float, y: float) -> bool:
    n = len(pts)
    for k in range(n):
        a, b = pts[k], pts[(k + 1) % n]
        if (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]) < -CONVEXITY_TOL:
            return False
    return True


def _point_segment_2d(x: float, y: float, a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    abx, aby = b[0] - a[0], b[1] - a[1]
    l2 = abx * abx + aby * aby
    if l2 <= 0:
        t = 0.0
    else:
        t = ((x - a[0]) * abx + (y - a[1]) * aby) / l2
        t = min(1.0, max(0.0, t))
    qx, qy = a[0] + t * abx, a[1] + t * aby
    return float(np.hypot(x - qx, y - qy)), qx, qy


def build_navmesh(
    vertices: np.ndarray,
    polygons: list[list[int]],
    adjacency_z_tol: float = DEFAULT_ADJACENCY_Z_TOL,
) -> NavMesh:
    return NavMesh(vertices, polygons, adjacency_z_tol)


def load_navmesh(path, adjacency_z_tol: float = DEFAULT_ADJACENCY_Z_TOL) -> NavMesh:
    """Parse a ``NAVVOX-NM v1`` file and validate all mesh invariants."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "NAVVOX-NM v1":
        raise FileFormatError(path, 1, "expected header 'NAVVOX-NM v1'")
    verts: list[tuple[float, float, float]] = []
    polys: list[list[int]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if parts[0] == "v":
            if len(parts) != 4:
                raise FileFormatError(path, lineno, "expected 'v x y z'")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as e:
                raise FileFormatError(path, lineno, f"bad vertex: {e}") from None
        elif parts[0] == "p":
            if len(parts) < 4:
                raise FileFormatError(path, lineno, "polygon needs at least 3 vertices")
            try:
                poly = [int(tok) - 1 for tok in parts[1:]]
            except ValueError as e:
                raise FileFormatError(path, lineno, f"bad polygon: {e}") from None
            if any(i < 0 or i >= len(verts) for i in poly):
                raise FileFormatError(path, lineno, "polygon index out of range")
            polys.append(poly)
        else:
            raise FileFormatError(path, lineno, f"unsupported line {parts[0]!r}")
    try:
        return build_navmesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), polys, adjacency_z_tol)
    except ValueError as e:
        raise FileFormatError(path, len(lines), str(e)) from None


def save_navmesh(mesh: NavMesh, path) -> None:
    out = ["NAVVOX-NM v1"]
    for v in mesh.vertices.tolist():
        out.append(f"v {v[0]!r} {v[1]!r} {v[2]!r}")
    for poly in mesh.polygons:
        out.append("p " + " ".join(str(i + 1) for i in poly))
    Path(path).write_text("\n".join(out) + "\n")


def project_point(mesh: NavMesh, p: Iterable[float], cfg: NavQueryConfig) -> int | None:
    """Polygon id the point snaps to, or None when off-mesh.

    Candidates are polygons whose footprint contains the point's (x, y) or lies
    within ``proj_radius`` horizontally, with surface height within
    ``height_tol`` of the point's z. Ranking is by horizontal distance first
    (containment beats proximity), then vertical distance, then polygon id.
    """
    x, y, z = list(p)
    best: tuple[float, float, int] | None = None
    for pid in mesh.candidate_polygons(x, y, cfg.proj_radius):
        hdist, qx, qy = mesh.distance_2d(pid, x, y)
        if hdist > cfg.proj_radius:
            continue
        vdist = abs(z - mesh.height_at(pid, qx, qy))
        if vdist > cfg.height_tol:
            continue
        cand = (hdist, vdist, pid)
        if best is None or cand < best:
            best = cand
    return best[2] if best is not None else None


def nav_reachable(
    mesh: NavMesh, seed: Iterable[float], query: Iterable[float], cfg: NavQueryConfig
) -> bool:
    """True iff both points project and land in the same mesh component.

    A seed that fails to project is an error (validation cannot proceed); a
    query that fails to project simply is not reachable.
    """
    seed_pid = project_point(mesh, seed, cfg)
    if seed_pid is None:
        raise ValueError(f"seed position {tuple(seed)} does not project onto the navmesh")
    query_pid = project_point(mesh, query, cfg)
    if query_pid is None:
        return False
    return bool(mesh.components[seed_pid] == mesh.components[query_pid])
