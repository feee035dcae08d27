"""Benchmark harness comparing exploration strategies on synthetic fixtures.

For each fixture the harness establishes ground truth by exhaustive
validation, optionally trains prioritized and uniform-replay policies, then
runs every (strategy, seed, budget) combination and scores detection rate,
importance coverage, samples-to-target-coverage, and false positives.
Aggregates are medians with interquartile ranges.
"""

from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .explore import ExplorationEnv, Trajectory, run_strategy, samples_to_coverage
from .geom import Index
from .importance import coverage as importance_coverage
from .rl import TrainConfig, greedy_policy, train
from .synth import FixtureBundle, WorldSpec, build_fixture
from .validate import DefectReport, ValidationConfig, run_validation

log = logging.getLogger(__name__)

CSV_HEADER = (
    "strategy,seed,budget_pct,detection_rate,coverage,samples_to_85,"
    "false_positive_rate,recon_ms,validate_ms"
)

BENCH_STRATEGIES = ("random", "random-teleport", "bfs", "dfs", "heuristic", "rl-prioritized", "rl-uniform")


@dataclass
class Metrics:
    """Scores of one budgeted validation run against ground truth."""

    detection_rate: float  # % of ground-truth clusters found
    coverage: float  # importance-weighted coverage achieved, %
    samples_pct: float  # samples used / exhaustive samples * 100
    samples_to_target: int | None  # unique samples to reach target coverage
    false_positive_rate: float  # % of filtered detections outside ground truth
    recon_ms: float = 0.0
    validate_ms: float = 0.0

    def __post_init__(self):
        for name in ("detection_rate", "coverage", "samples_pct", "false_positive_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 100.0 + 1e-9):
                raise ValueError(f"{name} out of range: {v}")


@dataclass
class BenchConfig:
    strategies: tuple[str, ...] = ("random", "heuristic", "rl-prioritized", "rl-uniform")
    budget_pcts: tuple[float, ...] = (25.0, 50.0, 75.0, 100.0)
    seeds: tuple[int, ...] = tuple(range(20))
    coverage_target: float = 0.85
    fixtures: list[WorldSpec] = field(default_factory=list)
    resolution: float = 0.5
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    train_seed: int = 7
    include_timings: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not (0.0 < self.coverage_target <= 1.0):
            raise ValueError("coverage_target must be in (0, 1]")
        for s in self.strategies:
            if s not in BENCH_STRATEGIES:
                raise ValueError(f"unknown benchmark strategy {s!r}")


def score_run(
    report: DefectReport,
    trajectory: Trajectory | None,
    gt_clusters: list[set[Index]],
    injected_positions: np.ndarray | None,
    bundle: FixtureBundle,
    coverage_target: float,
) -> Metrics:
    """Score one run: cluster detection, coverage, efficiency, false positives.

    A ground-truth cluster counts as detected when at least one of its voxels
    appears among the run's filtered detections. A detection is a false
    positive when it lies farther than (epsilon + cluster radius) from every
    injected ground-truth voxel.
    """
    flagged = {it.voxel for it in report.filtered}
    if gt_clusters:
        detected = sum(1 for cluster in gt_clusters if cluster & flagged)
        detection = 100.0 * detected / len(gt_clusters)
    else:
        detection = 100.0 if not flagged else 0.0

    epsilon = report.config["epsilon"]
    radius = report.config["cluster_radius"]
    if report.filtered and injected_positions is not None and len(injected_positions):
        tree = cKDTree(injected_positions)
        pos = np.asarray([it.position for it in report.filtered])
        d, _ = tree.query(pos)
        fp = 100.0 * float(np.count_nonzero(d > epsilon + radius)) / len(report.filtered)
    elif report.filtered and (injected_positions is None or not len(injected_positions)):
        fp = 100.0
    else:
        fp = 0.0

    samples_to = samples_to_coverage(trajectory, coverage_target) if trajectory is not None else None
    return Metrics(
        detection_rate=detection,
        coverage=100.0 * report.metrics["coverage"],
        samples_pct=100.0 * report.metrics["samples_used"] / max(report.metrics["exhaustive_samples"], 1),
        samples_to_target=samples_to,
        false_positive_rate=fp,
    )


def _strategy_kind_and_policy(name: str, policies: dict):
    if name == "rl-prioritized":
        return "rl", policies.get("rl-prioritized")
    if name == "rl-uniform":
        return "rl", policies.get("rl-uniform")
    return name, None


def train_benchmark_policies(
    bundle: FixtureBundle, cfg: BenchConfig, strategies: Sequence[str] | None = None
) -> dict:
    """Train the prioritized and/or uniform-replay policies a run needs."""
    strategies = strategies or cfg.strategies
    env = ExplorationEnv(bundle.graph, bundle.field, bundle.reach)
    policies = {}
    if "rl-prioritized" in strategies:
        result = train(env, cfg.train_cfg, cfg.train_seed)
        policies["rl-prioritized"] = greedy_policy(result.net)
        policies["rl-prioritized-log"] = result.log
    if "rl-uniform" in strategies:
        uniform_cfg = TrainConfig(**{**cfg.train_cfg.__dict__, "alpha": 0.0})
        result = train(env, uniform_cfg, cfg.train_seed)
        policies["rl-uniform"] = greedy_policy(result.net)
        policies["rl-uniform-log"] = result.log
    return policies


@dataclass
class BenchRow:
    fixture: int
    strategy: str
    seed: int
    budget_pct: float
    metrics: Metrics | None
    error: str = ""


def run_benchmark(cfg: BenchConfig, out_dir=None) -> dict:
    """Run the full strategy comparison; returns rows, aggregates, and curves.

    Writes ``results.csv``, ``aggregates.json``, and ``coverage_curves.json``
    when an output directory is given. Failed runs are isolated: they produce
    an error row and the batch continues.
    """
    if not cfg.fixtures:
        raise ValueError("benchmark needs at least one fixture spec")
    rows: list[BenchRow] = []
    curves: dict[str, list[list[float]]] = {}

    for f_idx, spec in enumerate(cfg.fixtures):
        t0 = time.perf_counter()
        bundle = build_fixture(spec, resolution=cfg.resolution)
        recon_ms = (time.perf_counter() - t0) * 1000.0

        vcfg = ValidationConfig(nav=bundle.nav_cfg, include_timings=cfg.include_timings)
        exhaustive = run_validation(
            bundle.graph, bundle.reach, bundle.field, bundle.mesh, bundle.seed_pos,
            budget=None, vcfg=vcfg,
        )
        gt_clusters = [set(m.voxel for m in c.members) for c in exhaustive.clusters]
        injected_positions = (
            np.asarray([bundle.graph.centers[v] for v in sorted(bundle.ground_truth)])
            if bundle.ground_truth
            else None
        )
        policies = train_benchmark_policies(bundle, cfg)
        env = ExplorationEnv(bundle.graph, bundle.field, bundle.reach)
        exhaustive_samples = len(bundle.graph.nodes)

        for strategy in cfg.strategies:
            kind, policy = _strategy_kind_and_policy(strategy, policies)
            for seed in cfg.seeds:
                for pct in cfg.budget_pcts:
                    budget = max(1, int(round(pct / 100.0 * exhaustive_samples)))
                    try:
                        t1 = time.perf_counter()
                        trajectory = run_strategy(env, kind, budget, seed, policy=policy)
                        report = run_validation(
                            bundle.graph, bundle.reach, bundle.field, bundle.mesh, bundle.seed_pos,
                            strategy=kind, budget=budget, seed=seed, vcfg=vcfg, policy=policy,
                        )
                        validate_ms = (time.perf_counter() - t1) * 1000.0
                        m = score_run(
                            report, trajectory, gt_clusters, injected_positions, bundle, cfg.coverage_target
                        )
                        m.recon_ms = recon_ms if cfg.include_timings else 0.0
                        m.validate_ms = validate_ms if cfg.include_timings else 0.0
                        rows.append(BenchRow(f_idx, strategy, seed, pct, m))
                        if pct == max(cfg.budget_pcts):
                            curves.setdefault(strategy, []).append(trajectory.coverage_curve)
                    except Exception as e:  # noqa: BLE001 - per-run isolation
                        log.exception("run failed: %s seed=%d pct=%s", strategy, seed, pct)
                        rows.append(BenchRow(f_idx, strategy, seed, pct, None, error=str(e)))

    aggregates = aggregate_rows(rows)
    result = {"rows": rows, "aggregates": aggregates, "curves": _median_curves(curves)}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(rows_to_csv(rows))
        (out / "aggregates.json").write_text(json.dumps(aggregates, indent=2, sort_keys=True) + "\n")
        (out / "coverage_curves.json").write_text(
            json.dumps(result["curves"], indent=2, sort_keys=True) + "\n"
        )
    return result


def rows_to_csv(rows: Sequence[BenchRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        if r.metrics is None:
            lines.append(f"{r.strategy},{r.seed},{r.budget_pct!r},,,,,,")
            continue
        m = r.metrics
        s85 = "" if m.samples_to_target is None else str(m.samples_to_target)
        lines.append(
            f"{r.strategy},{r.seed},{r.budget_pct!r},{m.detection_rate!r},{m.coverage!r},"
            f"{s85},{m.false_positive_rate!r},{m.recon_ms!r},{m.validate_ms!r}"
        )
    return "\n".join(lines) + "\n"


def _quartiles(values: list[float]) -> dict:
    values = sorted(values)
    return {
        "median": statistics.median(values),
        "q1": values[max(0, int(0.25 * (len(values) - 1)))],
        "q3": values[min(len(values) - 1, int(0.75 * (len(values) - 1)))],
        "n": len(values),
    }


def aggregate_rows(rows: Sequence[BenchRow]) -> dict:
    """Median and IQR per (strategy, budget_pct) over seeds; clipped
    samples-to-target uses the run's unique-sample total when the target was
    never reached."""
    groups: dict[tuple[str, float], list[Metrics]] = {}
    for r in rows:
        if r.metrics is not None:
            groups.setdefault((r.strategy, r.budget_pct), []).append(r.metrics)
    out: dict[str, dict] = {}
    for (strategy, pct), ms in sorted(groups.items()):
        key = f"{strategy}@{pct:g}"
        samples = [
            float(m.samples_to_target) if m.samples_to_target is not None else float("nan") for m in ms
        ]
        reached = [s for s in samples if not np.isnan(s)]
        out[key] = {
            "detection_rate": _quartiles([m.detection_rate for m in ms]),
            "coverage": _quartiles([m.coverage for m in ms]),
            "false_positive_rate": _quartiles([m.false_positive_rate for m in ms]),
            "samples_to_target": _quartiles(reached) if reached else None,
            "target_reached_runs": len(reached),
            "runs": len(ms),
        }
    return out


def _median_curves(curves: dict[str, list[list[float]]]) -> dict[str, list[float]]:
    out = {}
    for strategy, runs in curves.items():
        if not runs:
            continue
        n = min(len(c) for c in runs)
        arr = np.asarray([c[:n] for c in runs])
        med = np.median(arr, axis=0)
        stride = max(1, n // 200)
        out[strategy] = [float(v) for v in med[::stride]]
    return out


def format_table(aggregates: dict) -> str:
    """Human-readable strategy comparison."""
    lines = [f"{'run':<28}{'det%':>8}{'cov%':>8}{'fp%':>8}{'samples@target':>16}"]
    for key, agg in aggregates.items():
        s = agg["samples_to_target"]
        s_txt = f"{s['median']:.0f}" if s else "-"
        lines.append(
            f"{key:<28}{agg['detection_rate']['median']:>8.1f}{agg['coverage']['median']:>8.1f}"
            f"{agg['false_positive_rate']['median']:>8.1f}{s_txt:>16}"
        )
    return "\n".join(lines)
