"""Geometric core: heightfields, collision meshes, regions, and voxelization.

World convention is z-up, right-handed, all lengths in meters. A voxel grid
over a region uses an origin snapped to an integer multiple of the resolution,
so voxel indices are stable when overlapping regions are re-extracted.

File formats:
  heightfield  -- text, header ``NAVVOX-HF v1``, then ``origin x y z``,
                  ``cell_size c``, ``width depth``, then width*depth
                  whitespace-separated heights (row-major, row = y).
  mesh         -- Wavefront-style subset: ``v x y z`` and ``f i j k`` lines
                  only (1-based indices, triangles only). A comment line
                  ``# navvox: nav_excluded`` marks the whole file as excluded
                  from occupancy voxelization.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

Index = tuple[int, int, int]

KIND_TERRAIN = "terrain"
KIND_OCCUPIED = "occupied"

# Triangles thinner than this (squared-area scale) are dropped at load time;
# the separating-axis test is ill-conditioned on them.
DEGENERATE_AREA = 1e-12


class FileFormatError(ValueError):
    """An input file does not conform to its declared format."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def snap_origin(corner: Iterable[float], resolution: float) -> tuple[float, float, float]:
    """Snap a world position down to an integer multiple of the resolution."""
    x, y, z = corner
    return (
        math.floor(x / resolution) * resolution,
        math.floor(y / resolution) * resolution,
        math.floor(z / resolution) * resolution,
    )


def voxel_center(origin: tuple[float, float, float], index: Index, resolution: float) -> tuple[float, float, float]:
    """Center of the cell ``index``; the inverse of :func:`world_to_index`."""
    return (
        origin[0] + (index[0] + 0.5) * resolution,
        origin[1] + (index[1] + 0.5) * resolution,
        origin[2] + (index[2] + 0.5) * resolution,
    )


def world_to_index(origin: tuple[float, float, float], p: Iterable[float], resolution: float) -> Index:
    x, y, z = p
    return (
        int(math.floor((x - origin[0]) / resolution)),
        int(math.floor((y - origin[1]) / resolution)),
        int(math.floor((z - origin[2]) / resolution)),
    )


@dataclass(frozen=True)
class Region:
    """Axis-aligned world-space box selecting what to voxelize."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        for lo, hi in zip(self.min_corner, self.max_corner):
            if not (hi > lo):
                raise ValueError(f"degenerate region: {self.min_corner} .. {self.max_corner}")

    @classmethod
    def from_seed(cls, seed: Iterable[float], half_extent: float) -> "Region":
        if half_extent <= 0:
            raise ValueError("half_extent must be positive")
        sx, sy, sz = seed
        return cls(
            (sx - half_extent, sy - half_extent, sz - half_extent),
            (sx + half_extent, sy + half_extent, sz + half_extent),
        )

    def contains_xy(self, x: float, y: float) -> bool:
        # Half-open on the max side so abutting regions do not double-claim cells.
        return (
            self.min_corner[0] <= x < self.max_corner[0]
            and self.min_corner[1] <= y < self.max_corner[1]
        )

    def contains(self, x: float, y: float, z: float) -> bool:
        return self.contains_xy(x, y) and self.min_corner[2] <= z < self.max_corner[2]


@dataclass(frozen=True)
class Voxel:
    """One grid cell: either a terrain-surface sample or an occupancy sample.

    ``center`` is always reconstructible from ``index`` as
    ``origin + (index + 0.5) * resolution`` on each axis. Terrain voxels carry
    the unquantized interpolated surface height in ``surface_z``.
    """

    index: Index
    center: tuple[float, float, float]
    kind: str
    surface_z: float | None = None


@dataclass
class HeightField:
    """Regular grid of absolute surface heights h(x, y).

    ``heights[j, i]`` is the height at ``(origin.x + i*cell_size,
    origin.y + j*cell_size)``. Heights are absolute world z.
    """

    origin: tuple[float, float, float]
    cell_size: float
    heights: np.ndarray

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.ndim != 2 or self.heights.shape[0] < 2 or self.heights.shape[1] < 2:
            raise ValueError("heightfield needs at least 2x2 samples")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("heightfield contains non-finite heights")

    @property
    def width(self) -> int:
        return self.heights.shape[1]

    @property
    def depth(self) -> int:
        return self.heights.shape[0]

    def bounds_xy(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) of the interpolatable footprint."""
        x0, y0, _ = self.origin
        return (
            x0,
            y0,
            x0 + (self.width - 1) * self.cell_size,
            y0 + (self.depth - 1) * self.cell_size,
        )

    def contains_xy(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds_xy()
        return x0 <= x <= x1 and y0 <= y <= y1

    def sample_many(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Bilinear height samples at arbitrary (inside-footprint) positions."""
        u = (np.asarray(xs, dtype=np.float64) - self.origin[0]) / self.cell_size
        v = (np.asarray(ys, dtype=np.float64) - self.origin[1]) / self.cell_size
        if np.any(u < -1e-9) or np.any(u > self.width - 1 + 1e-9) or np.any(v < -1e-9) or np.any(v > self.depth - 1 + 1e-9):
            raise ValueError("sample position outside heightfield footprint")
        i0 = np.clip(np.floor(u).astype(int), 0, self.width - 2)
        j0 = np.clip(np.floor(v).astype(int), 0, self.depth - 2)
        fu = u - i0
        fv = v - j0
        h = self.heights
        return (
            (1 - fu) * (1 - fv) * h[j0, i0]
            + fu * (1 - fv) * h[j0, i0 + 1]
            + (1 - fu) * fv * h[j0 + 1, i0]
            + fu * fv * h[j0 + 1, i0 + 1]
        )

    def sample(self, x: float, y: float) -> float:
        return float(self.sample_many(np.asarray([x]), np.asarray([y]))[0])


@dataclass
class CollisionMesh:
    """Triangle mesh used for occupancy voxelization."""

    vertices: np.ndarray
    triangles: np.ndarray
    nav_excluded: bool = False
    name: str = ""

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError(f"mesh {self.name!r}: triangle index out of range")


def clean_degenerate_triangles(mesh: CollisionMesh) -> CollisionMesh:
    """Drop triangles with (near-)zero area; returns a new mesh."""
    if not len(mesh.triangles):
        return mesh
    pts = mesh.vertices[mesh.triangles]
    cross = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
    area_sq = np.einsum("ij,ij->i", cross, cross)
    keep = area_sq > (2.0 * DEGENERATE_AREA) ** 2
    dropped = int((~keep).sum())
    if dropped:
        log.warning("mesh %r: dropped %d degenerate triangles", mesh.name, dropped)
    return CollisionMesh(mesh.vertices, mesh.triangles[keep], mesh.nav_excluded, mesh.name)


# ---------------------------------------------------------------------------
# File I/O


def load_heightfield(path) -> HeightField:
    """Parse a ``NAVVOX-HF v1`` file; raises FileFormatError with a line number."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "NAVVOX-HF v1":
        raise FileFormatError(path, 1, "expected header 'NAVVOX-HF v1'")
    if len(lines) < 4:
        raise FileFormatError(path, len(lines), "truncated heightfield file")

    parts = lines[1].split()
    if len(parts) != 4 or parts[0] != "origin":
        raise FileFormatError(path, 2, "expected 'origin x y z'")
    try:
        origin = (float(parts[1]), float(parts[2]), float(parts[3]))
    except ValueError as e:
        raise FileFormatError(path, 2, f"bad origin: {e}") from None

    parts = lines[2].split()
    if len(parts) != 2 or parts[0] != "cell_size":
        raise FileFormatError(path, 3, "expected 'cell_size c'")
    try:
        cell_size = float(parts[1])
    except ValueError as e:
        raise FileFormatError(path, 3, f"bad cell_size: {e}") from None

    parts = lines[3].split()
    if len(parts) != 2:
        raise FileFormatError(path, 4, "expected 'width depth'")
    try:
        width, depth = int(parts[0]), int(parts[1])
    except ValueError as e:
        raise FileFormatError(path, 4, f"bad width/depth: {e}") from None

    values: list[float] = []
    for lineno, line in enumerate(lines[4:], start=5):
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise FileFormatError(path, lineno, f"bad height value {tok!r}") from None
    if len(values) != width * depth:
        raise FileFormatError(path, len(lines), f"expected {width * depth} heights, found {len(values)}")
    heights = np.asarray(values, dtype=np.float64).reshape(depth, width)
    if not np.all(np.isfinite(heights)):
        j, i = np.argwhere(~np.isfinite(heights))[0]
        raise FileFormatError(path, 5 + int(j), f"non-finite height at row {j}, column {i}")
    return HeightField(origin, cell_size, heights)


def save_heightfield(hf: HeightField, path) -> None:
    out = ["NAVVOX-HF v1"]
    out.append(f"origin {hf.origin[0]!r} {hf.origin[1]!r} {hf.origin[2]!r}")
    out.append(f"cell_size {hf.cell_size!r}")
    out.append(f"{hf.width} {hf.depth}")
    for row in hf.heights:
        out.append(" ".join(repr(v) for v in row.tolist()))
    Path(path).write_text("\n".join(out) + "\n")


NAV_EXCLUDED_FLAG = "# navvox: nav_excluded"


def load_mesh(path) -> CollisionMesh:
    """Parse the ``v``/``f`` mesh subset; drops degenerate triangles."""
    path = Path(path)
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    nav_excluded = False
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if stripped == NAV_EXCLUDED_FLAG:
                nav_excluded = True
            continue
        parts = stripped.split()
        if parts[0] == "v":
            if len(parts) != 4:
                raise FileFormatError(path, lineno, "expected 'v x y z'")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError as e:
                raise FileFormatError(path, lineno, f"bad vertex: {e}") from None
        elif parts[0] == "f":
            if len(parts) != 4:
                raise FileFormatError(path, lineno, "only triangles are supported ('f i j k')")
            try:
                idx = tuple(int(p) - 1 for p in parts[1:])
            except ValueError as e:
                raise FileFormatError(path, lineno, f"bad face: {e}") from None
            if any(i < 0 or i >= len(verts) for i in idx):
                raise FileFormatError(path, lineno, "face index out of range")
            tris.append(idx)  # type: ignore[arg-type]
        else:
            raise FileFormatError(path, lineno, f"unsupported line {parts[0]!r}")
    mesh = CollisionMesh(
        np.asarray(verts, dtype=np.float64).reshape(-1, 3),
        np.asarray(tris, dtype=np.int64).reshape(-1, 3),
        nav_excluded=nav_excluded,
        name=path.name,
    )
    return clean_degenerate_triangles(mesh)


def save_mesh(mesh: CollisionMesh, path) -> None:
    out = []
    if mesh.nav_excluded:
        out.append(NAV_EXCLUDED_FLAG)
    for v in mesh.vertices.tolist():
        out.append(f"v {v[0]!r} {v[1]!r} {v[2]!r}")
    for t in mesh.triangles.tolist():
        out.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Voxelization


def _index_range(origin_c: float, resolution: float, lo: float, hi: float) -> tuple[int, int]:
    """Inclusive index range of cells whose centers lie in [lo, hi)."""
    i_lo = int(math.floor((lo - origin_c) / resolution)) - 1
    while origin_c + (i_lo + 0.5) * resolution < lo:
        i_lo += 1
    i_hi = int(math.ceil((hi - origin_c) / resolution)) + 1
    while origin_c + (i_hi + 0.5) * resolution >= hi:
        i_hi -= 1
    return i_lo, i_hi


def voxelize_terrain(hf: HeightField, region: Region, resolution: float) -> dict[Index, Voxel]:
    """One surface voxel per in-region (x, y) cell.

    The voxel z index is the cell containing the bilinearly interpolated
    height at the cell-center (x, y). Cells whose centers fall outside the
    heightfield footprint are skipped; an empty result is reported, not fatal.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    origin = snap_origin(region.min_corner, resolution)
    ix_lo, ix_hi = _index_range(origin[0], resolution, region.min_corner[0], region.max_corner[0])
    iy_lo, iy_hi = _index_range(origin[1], resolution, region.min_corner[1], region.max_corner[1])
    if ix_hi < ix_lo or iy_hi < iy_lo:
        log.warning("terrain voxelization: region selects no cells")
        return {}

    ixs = np.arange(ix_lo, ix_hi + 1)
    iys = np.arange(iy_lo, iy_hi + 1)
    gx, gy = np.meshgrid(ixs, iys, indexing="ij")
    gx = gx.ravel()
    gy = gy.ravel()
    cx = origin[0] + (gx + 0.5) * resolution
    cy = origin[1] + (gy + 0.5) * resolution

    x0, y0, x1, y1 = hf.bounds_xy()
    inside = (cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)
    if not inside.any():
        log.warning("terrain voxelization: region does not overlap heightfield footprint")
        return {}
    gx, gy, cx, cy = gx[inside], gy[inside], cx[inside], cy[inside]
    h = hf.sample_many(cx, cy)
    iz = np.floor((h - origin[2]) / resolution).astype(int)

    voxels: dict[Index, Voxel] = {}
    for k in range(len(gx)):
        idx = (int(gx[k]), int(gy[k]), int(iz[k]))
        voxels[idx] = Voxel(idx, voxel_center(origin, idx, resolution), KIND_TERRAIN, surface_z=float(h[k]))
    return voxels


# The 13 separating-axis candidates: 3 box axes, the triangle normal, and the
# 9 cross products of box axes with triangle edges.
_BOX_AXES = np.eye(3)


def triangle_box_overlaps(tri: np.ndarray, centers: np.ndarray, half: float) -> np.ndarray:
    """Closed-box triangle/AABB overlap test, vectorized over box centers.

    Boxes are treated as closed: a triangle exactly touching a face counts as
    intersecting. Returns a boolean array of shape (len(centers),).
    """
    tri = np.asarray(tri, dtype=np.float64)
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    rel = tri[None, :, :] - centers[:, None, :]  # (N, 3, 3)

    edges = (tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2])
    axes = [_BOX_AXES[0], _BOX_AXES[1], _BOX_AXES[2], np.cross(edges[0], edges[1])]
    for box_axis in _BOX_AXES:
        for e in edges:
            axes.append(np.cross(box_axis, e))

    separated = np.zeros(len(centers), dtype=bool)
    for ax in axes:
        r = half * (abs(ax[0]) + abs(ax[1]) + abs(ax[2]))
        proj = rel @ ax  # (N, 3)
        separated |= (proj.min(axis=1) > r) | (proj.max(axis=1) < -r)
        if separated.all():
            break
    return ~separated


def voxelize_collision(
    meshes: Iterable[CollisionMesh], region: Region, resolution: float
) -> dict[Index, Voxel]:
    """Occupancy voxels: cells whose closed box intersects any included triangle.

    Meshes flagged ``nav_excluded`` contribute nothing. Candidate cells are
    limited per-triangle by the triangle's bounding box, then decided by the
    exact separating-axis test. Only cells whose centers lie inside the region
    are considered.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    origin = snap_origin(region.min_corner, resolution)
    half = resolution / 2.0
    bounds = [
        _index_range(origin[d], resolution, region.min_corner[d], region.max_corner[d])
        for d in range(3)
    ]

    occupied: dict[Index, Voxel] = {}
    for mesh in meshes:
        if mesh.nav_excluded:
            continue
        verts = mesh.vertices
        for t in mesh.triangles:
            tri = verts[t]
            lo = tri.min(axis=0)
            hi = tri.max(axis=0)
            ranges = []
            empty = False
            for d in range(3):
                # Pad by one cell; exact membership is decided by the SAT test.
                a = max(int(math.floor((lo[d] - origin[d]) / resolution)) - 1, bounds[d][0])
                b = min(int(math.floor((hi[d] - origin[d]) / resolution)) + 1, bounds[d][1])
                if b < a:
                    empty = True
                    break
                ranges.append((a, b))
            if empty:
                continue
            ixs = np.arange(ranges[0][0], ranges[0][1] + 1)
            iys = np.arange(ranges[1][0], ranges[1][1] + 1)
            izs = np.arange(ranges[2][0], ranges[2][1] + 1)
            gx, gy, gz = np.meshgrid(ixs, iys, izs, indexing="ij")
            idx_flat = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
            centers = origin + (idx_flat + 0.5) * resolution
            hit = triangle_box_overlaps(tri, centers, half)
            for row in idx_flat[hit]:
                idx = (int(row[0]), int(row[1]), int(row[2]))
                if idx not in occupied:
                    occupied[idx] = Voxel(idx, voxel_center(origin, idx, resolution), KIND_OCCUPIED)
    return occupied


# ---------------------------------------------------------------------------
# Grid


class VoxelGrid:
    """Unified terrain + occupancy voxel set with an exact nearest-neighbor index.

    Immutable after construction; safe for concurrent reads.
    """

    def __init__(
        self,
        resolution: float,
        origin: tuple[float, float, float],
        terrain: Mapping[Index, Voxel],
        occupied: Mapping[Index, Voxel],
    ):
        self.resolution = resolution
        self.origin = origin
        self.terrain = dict(terrain)
        self.occupied = dict(occupied)
        indices = sorted(set(self.terrain) | set(self.occupied))
        self._indices: list[Index] = indices
        if indices:
            self._centers = np.asarray(
                [voxel_center(origin, i, resolution) for i in indices], dtype=np.float64
            )
            self._kdtree = cKDTree(self._centers)
        else:
            self._centers = np.zeros((0, 3))
            self._kdtree = None

    def __len__(self) -> int:
        return len(self._indices)

    @property
    def indices(self) -> list[Index]:
        return self._indices

    def voxel_at(self, index: Index) -> Voxel | None:
        v = self.terrain.get(index)
        return v if v is not None else self.occupied.get(index)

    def center_of(self, index: Index) -> tuple[float, float, float]:
        return voxel_center(self.origin, index, self.resolution)


def build_grid(
    terrain: Mapping[Index, Voxel] | Iterable[Voxel],
    occupied: Mapping[Index, Voxel] | Iterable[Voxel],
    resolution: float,
) -> VoxelGrid:
    """Combine terrain and occupancy voxel sets into one indexed grid.

    Both sets must share the same resolution and snapped origin; voxels that
    do not reconstruct exactly from their index raise a mismatch error.
    """
    terrain_map = terrain if isinstance(terrain, Mapping) else {v.index: v for v in terrain}
    occ_map = occupied if isinstance(occupied, Mapping) else {v.index: v for v in occupied}

    origin: tuple[float, float, float] | None = None
    for v in list(terrain_map.values()) + list(occ_map.values()):
        derived = tuple(c - (i + 0.5) * resolution for c, i in zip(v.center, v.index))
        if origin is None:
            origin = derived  # type: ignore[assignment]
        if voxel_center(origin, v.index, resolution) != v.center:
            raise ValueError(
                f"voxel {v.index} center {v.center} inconsistent with grid resolution {resolution}"
            )
    if origin is None:
        origin = (0.0, 0.0, 0.0)
    return VoxelGrid(resolution, origin, terrain_map, occ_map)


def nearest_voxel(grid: VoxelGrid, p: Iterable[float]) -> Voxel:
    """Voxel whose center minimizes Euclidean distance to ``p``.

    Exact ties are broken by the lexicographically smallest (ix, iy, iz).
    """
    if grid._kdtree is None:
        raise ValueError("nearest_voxel on empty grid")
    p = np.asarray(list(p), dtype=np.float64)
    d, _ = grid._kdtree.query(p)
    ball = grid._kdtree.query_ball_point(p, d + 1e-9 * max(1.0, d))
    diffs = grid._centers[ball] - p
    d2 = np.einsum("ij,ij->i", diffs, diffs)
    best = d2.min()
    # ball indices are grid ordinals; ordinal order == lexicographic index order
    winner = min(ball[k] for k in range(len(ball)) if d2[k] == best)
    return grid.voxel_at(grid._indices[winner])  # type: ignore[return-value]
