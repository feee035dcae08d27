"""Navmesh model and queries: loading, adjacency, projection, reachability.

Adjacency is checked against a brute-force all-pairs shared-edge scan,
projection against a brute-force scan over all polygons, and reachability
against a union-find over the adjacency lists.
"""

from __future__ import annotations

import numpy as np
import pytest

from navvox.geom import FileFormatError
from navvox.navmesh import (
    NavMesh,
    NavQueryConfig,
    _edge_key_2d,
    build_navmesh,
    load_navmesh,
    nav_reachable,
    project_point,
    save_navmesh,
)
from navvox.synth import WorldSpec, build_fixture


def quad_mesh(quads, z=0.0, ztol=0.4):
    """Mesh of horizontal unit-grid quads given as (x0, y0, x1, y1, z)."""
    verts = []
    ids = {}
    polys = []
    for x0, y0, x1, y1, qz in quads:
        poly = []
        for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1)):
            key = (x, y, qz)
            if key not in ids:
                ids[key] = len(verts)
                verts.append(key)
            poly.append(ids[key])
        polys.append(poly)
    return build_navmesh(np.asarray(verts, dtype=float), polys, adjacency_z_tol=ztol)


def adjacency_oracle(mesh: NavMesh) -> list[set[int]]:
    """All-pairs shared-edge scan with the same 2D-key + z-tolerance rule."""
    edges = []
    for pid, poly in enumerate(mesh.polygons):
        n = len(poly)
        for k in range(n):
            a = mesh.vertices[poly[k]]
            b = mesh.vertices[poly[(k + 1) % n]]
            edges.append((pid, _edge_key_2d(a, b), (a[2] + b[2]) / 2.0))
    out = [set() for _ in mesh.polygons]
    for i in range(len(edges)):
        for j in range(i + 1, len(edges)):
            pi, ki, zi = edges[i]
            pj, kj, zj = edges[j]
            if pi != pj and ki == kj and abs(zi - zj) <= mesh.adjacency_z_tol:
                out[pi].add(pj)
                out[pj].add(pi)
    return out


class UnionFind:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, a):
        while self.p[a] != a:
            self.p[a] = self.p[self.p[a]]
            a = self.p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[rb] = ra


# --- loading and validation ---------------------------------------------------


def test_single_quad(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("NAVVOX-NM v1\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\np 1 2 3 4\n")
    mesh = load_navmesh(p)
    assert len(mesh.polygons) == 1
    assert mesh.adjacency == [[]]


def test_two_quads_share_edge(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text(
        "NAVVOX-NM v1\n"
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 2 0 0\nv 2 1 0\n"
        "p 1 2 3 4\np 2 5 6 3\n"
    )
    mesh = load_navmesh(p)
    assert mesh.adjacency == [[1], [0]]
    assert mesh.components[0] == mesh.components[1]


def test_non_convex_polygon_rejected():
    verts = np.asarray([(0, 0, 0), (2, 0, 0), (1, 0.2, 0), (2, 2, 0), (0, 2, 0)], dtype=float)
    with pytest.raises(ValueError, match="convex"):
        build_navmesh(verts, [[0, 1, 2, 3, 4]])


def test_clockwise_polygon_rejected():
    verts = np.asarray([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], dtype=float)
    with pytest.raises(ValueError, match="CCW"):
        build_navmesh(verts, [[0, 3, 2, 1]])


def test_non_planar_polygon_rejected():
    verts = np.asarray([(0, 0, 0), (1, 0, 0), (1, 1, 0.2), (0, 1, 0)], dtype=float)
    with pytest.raises(ValueError, match="planar"):
        build_navmesh(verts, [[0, 1, 2, 3]])


def test_non_manifold_edge_rejected():
    # three polygons sharing one edge at the same height
    verts = np.asarray(
        [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (2, 0, 0), (2, 1, 0), (1, -1, 0), (0, -1, 0)],
        dtype=float,
    )
    polys = [[0, 1, 2, 3], [1, 4, 5, 2], [1, 0, 7, 6]]
    # make the third polygon share the 1-2 edge instead
    verts2 = np.vstack([verts, [(1.5, 0.5, 0.0)]])
    polys2 = [[0, 1, 2, 3], [1, 4, 5, 2], [1, 8, 2]]
    with pytest.raises(ValueError, match="non-manifold"):
        build_navmesh(verts2, polys2)


def test_parse_errors(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("NAVVOX-NM v0\n")
    with pytest.raises(FileFormatError):
        load_navmesh(p)
    p.write_text("NAVVOX-NM v1\nv 0 0 0\np 1 2 3\n")
    with pytest.raises(FileFormatError):
        load_navmesh(p)


def test_roundtrip_bit_exact(tmp_path):
    spec = WorldSpec(seed=9, extent=10.0, terrain={"profile": "noise", "amplitude": 0.6, "frequency": 0.07})
    b = build_fixture(spec)
    p1 = tmp_path / "a.txt"
    p2 = tmp_path / "b.txt"
    save_navmesh(b.mesh, p1)
    again = load_navmesh(p1, adjacency_z_tol=b.mesh.adjacency_z_tol)
    save_navmesh(again, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_emitted_adjacency_matches_all_pairs_scan():
    spec = WorldSpec(
        seed=4, extent=10.0,
        terrain={"profile": "noise", "amplitude": 0.8, "frequency": 0.08},
        obstacles={"count": 3, "size_range": [0.8, 1.6], "height_range": [1.0, 2.0]},
    )
    b = build_fixture(spec)
    oracle = adjacency_oracle(b.mesh)
    got = [set(a) for a in b.mesh.adjacency]
    assert got == oracle


# --- projection -----------------------------------------------------------------


CFG = NavQueryConfig(proj_radius=0.5, height_tol=0.4)


def test_project_at_centroid():
    mesh = quad_mesh([(0, 0, 2, 2, 0.0)])
    assert project_point(mesh, (1.0, 1.0, 0.1), CFG) == 0


def test_project_far_above_is_none():
    mesh = quad_mesh([(0, 0, 2, 2, 0.0)])
    assert project_point(mesh, (1.0, 1.0, 10.0), NavQueryConfig(0.5, 0.5)) is None


def test_project_prefers_containment_over_snap():
    mesh = quad_mesh([(0, 0, 1, 1, 0.0), (1.2, 0, 2.2, 1, 0.0)])
    # inside polygon 0 but within proj_radius of polygon 1
    assert project_point(mesh, (0.9, 0.5, 0.0), CFG) == 0


def test_project_vertical_tie_breaks_by_id():
    mesh = quad_mesh([(0, 0, 1, 1, 0.0), (2, 0, 3, 1, 0.0)])
    # equidistant horizontally from both, same vertical distance
    pid = project_point(mesh, (1.5, 0.5, 0.0), NavQueryConfig(proj_radius=0.6, height_tol=0.4))
    assert pid == 0


@pytest.mark.parametrize("seed", range(3))
def test_project_matches_brute_force(seed):
    spec = WorldSpec(seed=seed, extent=10.0,
                     terrain={"profile": "noise", "amplitude": 0.7, "frequency": 0.07},
                     obstacles={"count": 2, "size_range": [0.8, 1.5], "height_range": [1.0, 2.0]})
    b = build_fixture(spec)
    mesh, cfg = b.mesh, b.nav_cfg
    rng = np.random.default_rng(seed)
    for _ in range(500 // 3 + 1):
        p = (rng.uniform(-1, 11), rng.uniform(-1, 11), rng.uniform(-2, 3))
        got = project_point(mesh, p, cfg)
        best = None
        for pid in range(len(mesh.polygons)):
            hdist, qx, qy = mesh.distance_2d(pid, p[0], p[1])
            if hdist > cfg.proj_radius:
                continue
            vdist = abs(p[2] - mesh.height_at(pid, qx, qy))
            if vdist > cfg.height_tol:
                continue
            cand = (hdist, vdist, pid)
            if best is None or cand < best:
                best = cand
        assert got == (best[2] if best else None)


def test_outer_bound_no_projection():
    mesh = quad_mesh([(0, 0, 2, 2, 0.0)])
    cfg = NavQueryConfig(proj_radius=0.5, height_tol=0.4)
    # farther than proj_radius + height_tol from the polygon in every metric
    for p in ((3.0, 3.0, 0.0), (1.0, 1.0, 1.0), (-1.0, -1.0, -1.0)):
        assert project_point(mesh, p, cfg) is None


# --- reachability ----------------------------------------------------------------


def test_same_polygon_reachable():
    mesh = quad_mesh([(0, 0, 2, 2, 0.0)])
    assert nav_reachable(mesh, (0.5, 0.5, 0.0), (1.5, 1.5, 0.0), CFG)


def test_hole_not_reachable():
    mesh = quad_mesh([(0, 0, 1, 1, 0.0), (3, 0, 4, 1, 0.0)])
    assert not nav_reachable(mesh, (0.5, 0.5, 0.0), (3.5, 0.5, 0.0), CFG)
    assert not nav_reachable(mesh, (0.5, 0.5, 0.0), (2.0, 0.5, 0.0), CFG)


def test_seed_off_mesh_is_error():
    mesh = quad_mesh([(0, 0, 1, 1, 0.0)])
    with pytest.raises(ValueError, match="seed"):
        nav_reachable(mesh, (5.0, 5.0, 0.0), (0.5, 0.5, 0.0), CFG)


def test_islands_match_union_find():
    quads = [(x, y, x + 1, y + 1, 0.0) for x in range(3) for y in range(3)]
    quads += [(x + 10, y, x + 11, y + 1, 0.0) for x in range(2) for y in range(2)]
    mesh = quad_mesh(quads)
    uf = UnionFind(len(mesh.polygons))
    for pid, neighbors in enumerate(mesh.adjacency):
        for n in neighbors:
            uf.union(pid, n)
    for pid in range(len(mesh.polygons)):
        for qid in range(len(mesh.polygons)):
            same = uf.find(pid) == uf.find(qid)
            assert (mesh.components[pid] == mesh.components[qid]) == same


def test_reachability_symmetric_and_transitive():
    quads = [(x, 0, x + 1, 1, 0.0) for x in range(4)] + [(6, 0, 7, 1, 0.0)]
    mesh = quad_mesh(quads)
    pts = [(0.5, 0.5, 0.0), (2.5, 0.5, 0.0), (3.5, 0.5, 0.0), (6.5, 0.5, 0.0)]
    for a in pts:
        for b in pts:
            assert nav_reachable(mesh, a, b, CFG) == nav_reachable(mesh, b, a, CFG)
    # transitivity over projected points
    for a in pts:
        for b in pts:
            for c in pts:
                if nav_reachable(mesh, a, b, CFG) and nav_reachable(mesh, b, c, CFG):
                    assert nav_reachable(mesh, a, c, CFG)


def test_step_adjacency_within_z_tolerance():
    low = quad_mesh([(0, 0, 1, 1, 0.0), (1, 0, 2, 1, 0.35)], ztol=0.4)
    assert low.components[0] == low.components[1]
    high = quad_mesh([(0, 0, 1, 1, 0.0), (1, 0, 2, 1, 0.55)], ztol=0.4)
    assert high.components[0] != high.components[1]
