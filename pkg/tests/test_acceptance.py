"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints a single PASS line (visible with ``pytest -s``) so the suite
doubles as a release checklist. Some criteria train policies and take a few
minutes; the whole module is designed to stay within a coffee break on a
laptop-class machine.
"""

from __future__ import annotations

import math
import statistics
import time

import numpy as np
import pytest
from scipy import stats as sps

from navvox.explore import ExplorationEnv, run_strategy, samples_to_coverage
from navvox.geom import CollisionMesh, Region, snap_origin, voxel_center, voxelize_collision
from navvox.importance import compute_importance
from navvox.navmesh import NavQueryConfig
from navvox.rl import (
    ReplayBuffer,
    TrainConfig,
    Transition,
    greedy_policy,
    init_qnetwork,
    q_forward_batch,
    td_loss_and_grads,
    train,
)
from navvox.synth import DefectInjection, WorldSpec, build_fixture
from navvox.validate import EXHAUSTIVE, ValidationConfig, cluster_defects, run_validation
from navvox.walk import AgentParams, flood_fill

from conftest import grid_graph, make_grid_from_heights


def ok(criterion: int, message: str) -> None:
    print(f"\nACCEPTANCE {criterion:02d} PASS: {message}")


# -- 1: voxelization equals all-pairs brute force ------------------------------------


def independent_voxelizer(meshes, region: Region, s: float) -> set:
    """Brute force: every in-region voxel against every triangle.

    Re-derived from the separating-axis theorem with its own axis enumeration
    and projection code; shares nothing with the production implementation
    but the definition.
    """
    origin = snap_origin(region.min_corner, s)
    ranges = []
    for d in range(3):
        i = int(math.floor((region.min_corner[d] - origin[d]) / s)) - 1
        idxs = []
        while True:
            c = origin[d] + (i + 0.5) * s
            if c >= region.max_corner[d]:
                break
            if c >= region.min_corner[d]:
                idxs.append(i)
            i += 1
        ranges.append(idxs)
    gx, gy, gz = np.meshgrid(ranges[0], ranges[1], ranges[2], indexing="ij")
    idx = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    centers = np.asarray(origin) + (idx + 0.5) * s
    hit = np.zeros(len(idx), dtype=bool)
    half = s / 2.0
    basis = np.eye(3)
    for mesh in meshes:
        if mesh.nav_excluded:
            continue
        for t in mesh.triangles:
            a, b, c = mesh.vertices[t]
            test_axes = list(basis)
            test_axes.append(np.cross(b - a, c - b))
            for e in (b - a, c - b, a - c):
                for u in basis:
                    test_axes.append(np.cross(u, e))
            pending = ~hit
            sep = np.zeros(pending.sum(), dtype=bool)
            rel_a = a - centers[pending]
            rel_b = b - centers[pending]
            rel_c = c - centers[pending]
            for ax in test_axes:
                r = half * np.abs(ax).sum()
                pa, pb, pc = rel_a @ ax, rel_b @ ax, rel_c @ ax
                lo = np.minimum(np.minimum(pa, pb), pc)
                hi = np.maximum(np.maximum(pa, pb), pc)
                sep |= (lo > r) | (hi < -r)
            hit[np.flatnonzero(pending)[~sep]] = True
    return {tuple(map(int, row)) for row in idx[hit]}


def test_criterion_1_voxelization_oracle_equivalence():
    started = time.perf_counter()
    rng = np.random.default_rng(1001)
    checked = 0
    for k in range(100):
        n_tris = int(rng.integers(1, 201))
        span = float(rng.uniform(1.5, 4.0))
        verts = rng.uniform(-span, span, size=(n_tris * 3, 3))
        mesh = CollisionMesh(verts, np.arange(n_tris * 3).reshape(-1, 3), name=f"m{k}")
        s = float(rng.choice([0.25, 0.5]))
        half_extent = float(rng.uniform(1.0, min(4.0, 16 * s)))  # grid stays <= 32^3
        region = Region.from_seed(rng.uniform(-1, 1, size=3), half_extent)
        got = set(voxelize_collision([mesh], region, s))
        expected = independent_voxelizer([mesh], region, s)
        assert got == expected, f"mesh {k}: {len(got ^ expected)} differing voxels"
        checked += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"voxelization equivalence took {elapsed:.1f}s"
    ok(1, f"{checked} random meshes match the brute-force voxelizer exactly ({elapsed:.1f}s)")


# -- 2: flood fill and clustering match union-find -----------------------------------


class _UF:
    def __init__(self, items):
        self.p = {i: i for i in items}

    def find(self, a):
        while self.p[a] != a:
            self.p[a] = self.p[self.p[a]]
            a = self.p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[rb] = ra


def test_criterion_2_flood_fill_and_clustering_oracle():
    started = time.perf_counter()
    rng = np.random.default_rng(2002)
    for k in range(100):
        side = int(rng.integers(8, 36)) if k < 90 else 100  # a few at ~10^4 nodes
        density = float(rng.uniform(0.4, 0.95))
        cols = {
            (ix, iy): float(rng.integers(0, 3)) * 0.35
            for ix in range(side)
            for iy in range(side)
            if rng.random() < density
        }
        if not cols:
            continue
        graph = grid_graph(cols)
        uf = _UF(graph.nodes)
        for node, neighbors in graph.adjacency.items():
            for n in neighbors:
                uf.union(node, n)
        start = graph.nodes[int(rng.integers(len(graph.nodes)))]
        reach = flood_fill(graph, graph.centers[start])
        expected = frozenset(x for x in graph.nodes if uf.find(x) == uf.find(reach.seed))
        assert reach.members == expected

        # clustering against pairwise-distance union-find
        from navvox.validate import Inconsistency, MISSING_NAVMESH

        pts = rng.uniform(0, 8, size=(int(rng.integers(5, 60)), 2))
        items = [
            Inconsistency((j, 0, 0), (float(x), float(y), 0.0), MISSING_NAVMESH, 1.0)
            for j, (x, y) in enumerate(pts)
        ]
        radius = 0.75
        clusters = cluster_defects(items, tau=1, radius=radius)
        uf2 = _UF(range(len(items)))
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                if np.hypot(*(pts[i] - pts[j])) <= radius:
                    uf2.union(i, j)
        oracle = {}
        for j in range(len(items)):
            oracle.setdefault(uf2.find(j), set()).add(items[j].voxel)
        assert {frozenset(m.voxel for m in c.members) for c in clusters} == {
            frozenset(g) for g in oracle.values()
        }
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"flood-fill equivalence took {elapsed:.1f}s"
    ok(2, f"100 random graphs: flood fill and clustering match union-find ({elapsed:.1f}s)")


# -- 3: walkability constraints at their boundaries -----------------------------------


def test_criterion_3_walkability_boundaries():
    stair = {"profile": "staircase", "tread": 1.0, "cell_size": 0.25}
    b_low = build_fixture(WorldSpec(seed=1, extent=8.0, terrain={**stair, "riser": 0.3}))
    assert len(b_low.reach.members) == len(b_low.graph.nodes), "riser 0.3 must stay connected"
    b_high = build_fixture(WorldSpec(seed=1, extent=8.0, terrain={**stair, "riser": 0.5}))
    assert len(b_high.reach.members) < len(b_high.graph.nodes), "riser 0.5 must disconnect"

    ramp = WorldSpec(seed=1, extent=8.0, terrain={"profile": "ramp", "slope": 1.0, "cell_size": 0.25})
    open_agent = AgentParams(theta_max=math.radians(45.0) + 1e-6)
    b_open = build_fixture(ramp, agent=open_agent)
    assert len(b_open.graph.nodes) == 256, "45-degree ramp walkable just above the limit"
    strict_agent = AgentParams(theta_max=math.radians(45.0) - 1e-3)
    with pytest.raises(ValueError):
        build_fixture(ramp, agent=strict_agent)  # empty walk graph: nothing walkable
    ok(3, "staircase 0.3/0.5 and 45-degree ramp behave exactly at the constraint boundaries")


# -- 4: analytic gradients match finite differences ------------------------------------


def test_criterion_4_gradient_check():
    started = time.perf_counter()
    rng = np.random.default_rng(4004)
    worst = 0.0
    for pair in range(20):
        hidden = tuple(int(rng.integers(8, 24)) for _ in range(int(rng.integers(1, 3))))
        net = init_qnetwork((9, *hidden, 8), seed=int(rng.integers(10_000)))
        n = int(rng.integers(3, 9))
        states = rng.normal(size=(n, 9))
        actions = rng.integers(0, 8, size=n)
        targets = rng.normal(size=n)
        weights = rng.uniform(0.2, 1.0, size=n)
        _, _, gw, gb = td_loss_and_grads(net, states, actions, targets, weights)

        def loss_of():
            q = q_forward_batch(net, states)
            resid = q[np.arange(n), actions] - targets
            return float(np.mean(weights * resid**2))

        h = 1e-6
        for layer in range(len(net.weights)):
            for arr, grad in ((net.weights[layer], gw[layer]), (net.biases[layer], gb[layer])):
                flat, gflat = arr.reshape(-1), grad.reshape(-1)
                for j in rng.choice(flat.size, size=min(8, flat.size), replace=False):
                    orig = flat[j]
                    flat[j] = orig + h
                    up = loss_of()
                    flat[j] = orig - h
                    down = loss_of()
                    flat[j] = orig
                    fd = (up - down) / (2 * h)
                    rel = abs(fd - gflat[j]) / max(abs(fd), abs(gflat[j]), 1e-8)
                    worst = max(worst, rel)
                    assert rel <= 1e-4, f"pair {pair}: relative gradient error {rel:.2e}"
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    ok(4, f"20 (net, batch) pairs: worst relative gradient error {worst:.2e} ({elapsed:.1f}s)")


# -- 5: prioritized replay sampling distribution ----------------------------------------


def test_criterion_5_replay_distribution():
    rng = np.random.default_rng(5005)

    def fill(buf, priorities):
        for _ in priorities:
            buf.add(Transition(rng.normal(size=9), 0, 0.0, rng.normal(size=9), False))
        buf._priorities[: len(priorities)] = priorities

    buf = ReplayBuffer(capacity=2, alpha=1.0)
    fill(buf, [1.0, 3.0])
    draw_rng = np.random.default_rng(55)
    idx = np.concatenate([buf.sample(2, draw_rng, beta=0.0)[0] for _ in range(50_000)])
    freq = np.bincount(idx, minlength=2) / len(idx)
    assert abs(freq[0] - 0.25) <= 0.02 and abs(freq[1] - 0.75) <= 0.02

    buf0 = ReplayBuffer(capacity=4, alpha=0.0)
    fill(buf0, [0.1, 1.0, 10.0, 100.0])
    idx0 = np.concatenate([buf0.sample(4, draw_rng, beta=0.4)[0] for _ in range(25_000)])
    _, p = sps.chisquare(np.bincount(idx0, minlength=4))
    assert p > 0.01
    ok(5, f"priorities [1,3] sample at {freq[1]:.3f}/{freq[0]:.3f}; alpha=0 uniform (chi2 p={p:.3f})")


# -- 6: zero-defect soundness across random worlds ---------------------------------------


def test_criterion_6_zero_defect_soundness():
    rng = np.random.default_rng(6006)
    profiles = [
        lambda: {"profile": "flat"},
        lambda: {"profile": "ramp", "slope": float(rng.uniform(0.1, 0.5))},
        lambda: {"profile": "noise", "amplitude": float(rng.uniform(0.4, 1.2)),
                 "frequency": float(rng.uniform(0.04, 0.09))},
    ]
    for k in range(20):
        spec = WorldSpec(
            seed=600 + k,
            extent=float(rng.uniform(10.0, 16.0)),
            terrain=profiles[k % 3](),
            obstacles={"count": int(rng.integers(0, 6))},
            markers={"random_clusters": int(rng.integers(0, 3))},
        )
        b = build_fixture(spec)
        report = run_validation(
            b.graph, b.reach, b.field, b.mesh, b.seed_pos, budget=None,
            vcfg=ValidationConfig(epsilon=b.resolution / 4, tau=1, nav=b.nav_cfg),
        )
        assert report.metrics["filtered_count"] == 0, f"world {k}: spurious defects"
    ok(6, "20 random worlds validate perfectly clean at epsilon=s/4, tau=1")


# -- 7: exhaustive recall of injected defects ----------------------------------------------


def _random_defect_spec(seed: int) -> WorldSpec:
    rng = np.random.default_rng(seed)
    extent = 24.0
    count = int(rng.integers(3, 11))
    regions = []
    attempts = 0
    while len(regions) < count and attempts < 300:
        attempts += 1
        size = float(rng.choice([2.0, 2.5, 3.0]))
        x0 = float(rng.uniform(1.0, extent - size - 1.0))
        y0 = float(rng.uniform(1.0, extent - size - 1.0))
        box = (x0, y0, x0 + size, y0 + size)
        center = extent / 2
        if x0 - 2 <= center <= box[2] + 2 and y0 - 2 <= center <= box[3] + 2:
            continue
        if any(not (box[2] + 1.5 < r[0] or r[2] + 1.5 < box[0] or box[3] + 1.5 < r[1] or r[3] + 1.5 < box[1])
               for r in regions):
            continue
        regions.append(box)
    return WorldSpec(
        seed=seed, extent=extent, terrain={"profile": "flat"},
        defects=[DefectInjection("remove_polygons", ((r[0], r[1]), (r[2], r[3]))) for r in regions],
    )


def test_criterion_7_exhaustive_defect_recall():
    for k in range(20):
        spec = _random_defect_spec(700 + k)
        assert len(spec.defects) >= 3
        b = build_fixture(spec)
        vcfg = ValidationConfig(nav=b.nav_cfg).resolved(b.resolution)
        report = run_validation(b.graph, b.reach, b.field, b.mesh, b.seed_pos, budget=None, vcfg=vcfg)
        gt_clusters = cluster_defects(
            [item for item in report.raw if item.voxel in b.ground_truth],
            tau=1, radius=vcfg.cluster_radius,
        )
        # ground truth from injection, clustered the same way
        flagged = {it.voxel for it in report.filtered}
        missed = [c for c in gt_clusters if c.size >= vcfg.tau and not ({m.voxel for m in c.members} & flagged)]
        assert not missed, f"world {k}: {len(missed)} injected clusters missed"
        # no false-positive clusters outside the tolerance band of the ground truth
        gt_pos = np.asarray([b.graph.centers[v] for v in sorted(b.ground_truth)])
        band = vcfg.epsilon + vcfg.cluster_radius
        for c in report.clusters:
            pos = np.asarray([m.position for m in c.members])
            d = np.sqrt(((pos[:, None, :] - gt_pos[None, :, :]) ** 2).sum(-1)).min()
            assert d <= band, f"world {k}: cluster {c.id} outside ground-truth band"
    ok(7, "20 random worlds: every injected cluster found at exhaustive budget, no false clusters")


# -- 8: validation independent of exploration strategy --------------------------------------


def test_criterion_8_strategy_independent_validation():
    spec = _random_defect_spec(808)
    b = build_fixture(spec)
    vcfg = ValidationConfig(nav=b.nav_cfg)
    policy = greedy_policy(init_qnetwork(seed=0))
    results = []
    for strategy, pol in (
        ("random", None), ("bfs", None), ("dfs", None), ("heuristic", None), ("rl", policy),
    ):
        r = run_validation(b.graph, b.reach, b.field, b.mesh, b.seed_pos,
                           strategy=strategy, budget=EXHAUSTIVE, seed=3, vcfg=vcfg, policy=pol)
        results.append([(it.voxel, it.kind) for it in r.filtered])
    assert all(r == results[0] for r in results[1:])
    ok(8, "random/bfs/dfs/heuristic/rl produce identical filtered defects at exhaustive budget")


# -- 9 and 10: learning efficiency and training signal ---------------------------------------

EFFICIENCY_SPEC = WorldSpec(
    seed=5, extent=48.0, terrain={"profile": "flat"},
    markers={"clusters": [
        {"center": [9.0, 9.0], "count": 1, "kind": "InteractionZone", "weight": 1.0, "radius": 1.5, "spread": 0.01},
        {"center": [39.0, 9.0], "count": 1, "kind": "InteractionZone", "weight": 1.0, "radius": 1.5, "spread": 0.01},
        {"center": [24.0, 39.0], "count": 1, "kind": "InteractionZone", "weight": 1.0, "radius": 1.5, "spread": 0.01},
    ]},
)

DESK_TRAIN = dict(episodes=200, steps_per_episode=500, lr=1e-3, momentum=0.9)
TRAIN_SEED = 7


@pytest.fixture(scope="module")
def efficiency_bundle():
    b = build_fixture(EFFICIENCY_SPEC)
    env = ExplorationEnv(b.graph, b.field, b.reach)
    return b, env


@pytest.fixture(scope="module")
def trained_policies(efficiency_bundle):
    _, env = efficiency_bundle
    t0 = time.perf_counter()
    prio = train(env, TrainConfig(**DESK_TRAIN), seed=TRAIN_SEED)
    prio_seconds = time.perf_counter() - t0
    unif = train(env, TrainConfig(**DESK_TRAIN, alpha=0.0), seed=TRAIN_SEED)
    return prio, unif, prio_seconds


def _samples_to_target(env, members, kind, budget, seed, policy=None):
    rng = np.random.default_rng([seed, 42])
    start = members[int(rng.integers(len(members)))]
    t = run_strategy(env, kind, budget, seed, policy=policy, start=start, stop_at_coverage=0.85)
    s = samples_to_coverage(t, 0.85)
    return s if s is not None else budget  # never reached: consumed the budget


def test_criterion_9_efficiency_ordering(efficiency_bundle, trained_policies):
    b, env = efficiency_bundle
    prio, unif, prio_seconds = trained_policies
    assert prio_seconds < 900.0, f"desk-scale training took {prio_seconds:.0f}s"
    budget = 2 * len(b.reach.members)
    members = sorted(b.reach.members)
    medians = {}
    for name, kind, pol in (
        ("rl-prioritized", "rl", greedy_policy(prio.net)),
        ("rl-uniform", "rl", greedy_policy(unif.net)),
        ("heuristic", "heuristic", None),
        ("random", "random", None),
    ):
        vals = [_samples_to_target(env, members, kind, budget, seed, pol) for seed in range(20)]
        medians[name] = statistics.median(vals)
    assert medians["rl-prioritized"] <= medians["rl-uniform"], medians
    assert medians["rl-uniform"] <= medians["heuristic"], medians
    assert medians["heuristic"] <= medians["random"], medians
    assert medians["rl-prioritized"] <= 0.8 * medians["random"], medians
    ok(9, "samples-to-85%: " + " <= ".join(f"{k}={medians[k]:.0f}" for k in
        ("rl-prioritized", "rl-uniform", "heuristic", "random")) + f"; training {prio_seconds:.0f}s")


CORRIDOR_SPEC = WorldSpec(
    seed=10, extent=40.0, terrain={"profile": "flat"},
    obstacles={"boxes": [
        {"center": [20.0, 16.5], "size": [36.0, 1.0, 2.5]},
        {"center": [20.0, 23.5], "size": [36.0, 1.0, 2.5]},
    ]},
    markers={"clusters": [
        {"center": [36.0, 20.0], "count": 2, "kind": "InteractionZone", "weight": 1.0, "radius": 2.5, "spread": 0.5},
    ]},
)


def test_criterion_10_learning_signal():
    b = build_fixture(CORRIDOR_SPEC)
    env = ExplorationEnv(b.graph, b.field, b.reach)
    result = train(env, TrainConfig(**DESK_TRAIN), seed=TRAIN_SEED)
    first = statistics.median(r["coverage"] for r in result.log[:50])
    last = statistics.median(r["coverage"] for r in result.log[-50:])
    assert last >= 1.25 * max(first, 1e-9), f"first={first:.3f} last={last:.3f}"
    ok(10, f"corridor training coverage: first-50 median {first:.3f} -> last-50 median {last:.3f}")


# -- 11: desk-scale throughput ----------------------------------------------------------------


def test_criterion_11_throughput_200k_voxels():
    spec = WorldSpec(seed=11, extent=225.0,
                     terrain={"profile": "noise", "amplitude": 1.0, "frequency": 0.01, "cell_size": 1.0},
                     obstacles={"count": 10, "size_range": [1.0, 4.0]})
    started = time.perf_counter()
    b = build_fixture(spec)
    assert len(b.grid.terrain) >= 200_000
    report = run_validation(
        b.graph, b.reach, b.field, b.mesh, b.seed_pos, budget=None,
        vcfg=ValidationConfig(nav=b.nav_cfg),
    )
    elapsed = time.perf_counter() - started
    assert report.metrics["filtered_count"] == 0
    assert elapsed < 300.0, f"200k-voxel reconstruct+validate took {elapsed:.0f}s"
    ok(11, f"{len(b.grid.terrain)} terrain voxels reconstructed and validated in {elapsed:.0f}s")


# -- 12: byte-identical determinism -----------------------------------------------------------


def test_criterion_12_pipeline_determinism(tmp_path):
    spec_dict = {
        "seed": 12, "extent": 14.0,
        "terrain": {"profile": "noise", "amplitude": 0.6, "frequency": 0.06},
        "obstacles": {"count": 3},
        "markers": {"random_clusters": 2},
        "defects": [{"kind": "remove_polygons", "region": [[2.0, 2.0], [4.5, 4.5]]}],
    }

    def run(out):
        b = build_fixture(WorldSpec.from_dict(spec_dict), out_dir=out)
        vcfg = ValidationConfig(nav=b.nav_cfg, include_timings=False)
        report = run_validation(b.graph, b.reach, b.field, b.mesh, b.seed_pos,
                                strategy="random", budget=300, seed=4, vcfg=vcfg)
        from navvox.validate import save_report

        save_report(report, out / "report.json")
        env = ExplorationEnv(b.graph, b.field, b.reach)
        result = train(env, TrainConfig(episodes=2, steps_per_episode=40, batch_size=16), seed=2)
        from navvox.rl import save_policy, save_training_log

        save_policy(result.net, out / "policy.json")
        save_training_log(result.log, out / "log.csv")

    a, c = tmp_path / "a", tmp_path / "b"
    run(a)
    run(c)
    files_a = {p.name: p.read_bytes() for p in sorted(a.iterdir())}
    files_c = {p.name: p.read_bytes() for p in sorted(c.iterdir())}
    assert files_a.keys() == files_c.keys()
    for name in files_a:
        assert files_a[name] == files_c[name], f"{name} differs between runs"
    ok(12, f"{len(files_a)} pipeline artifacts byte-identical across two runs")
