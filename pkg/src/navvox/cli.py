"""Command-line interface.

Subcommands: ``gen`` (synthesize a world), ``voxelize`` (reconstruct and dump
walkable space), ``validate`` (full consistency check, report to JSON),
``train`` (fit an exploration policy), ``bench`` (strategy comparison).

Exit codes: 0 success / no defects, 1 defects found (validate), 2 runtime
error, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EX_OK = 0
EX_DEFECTS = 1
EX_ERROR = 2
EX_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EX_USAGE)


def _build_parser() -> _Parser:
    p = _Parser(prog="navvox", description="Voxel-based navmesh validation toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--config", type=Path, help="JSON config overriding defaults")
    common.add_argument("--out", type=Path, help="output directory or file")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic world + reference navmesh")
    g.add_argument("--spec", type=Path, required=True, help="world spec JSON")
    g.add_argument("--resolution", type=float, default=0.5)

    v = sub.add_parser("voxelize", parents=[common], help="reconstruct walkable space from a world directory")
    v.add_argument("--world", type=Path, required=True)
    v.add_argument("--resolution", type=float, default=0.5)
    v.add_argument("--dump-voxels", type=Path, help="write an x y z kind point cloud")

    val = sub.add_parser("validate", parents=[common], help="check navmesh consistency against geometry")
    val.add_argument("--world", type=Path, required=True)
    val.add_argument("--resolution", type=float, default=0.5)
    val.add_argument("--strategy", default="bfs",
                     choices=["random", "random-teleport", "bfs", "dfs", "heuristic", "rl", "exhaustive"])
    val.add_argument("--budget", type=int, help="max waypoints; omit for exhaustive")
    val.add_argument("--epsilon", type=float, help="tolerance filter distance (default: resolution)")
    val.add_argument("--tau", type=int, default=3, help="minimum defect cluster size")
    val.add_argument("--policy", type=Path, help="trained policy file (strategy rl)")
    val.add_argument("--markers", type=Path, help="override markers file")
    val.add_argument("--weight", action="append", default=[], metavar="KIND=VALUE",
                     help="override a marker kind weight")
    val.add_argument("--dump-voxels", type=Path)
    val.add_argument("--no-timings", action="store_true", help="omit wall-clock timings from the report")

    t = sub.add_parser("train", parents=[common], help="train an exploration policy on a world")
    t.add_argument("--world", type=Path, required=True)
    t.add_argument("--resolution", type=float, default=0.5)
    t.add_argument("--episodes", type=int, default=200)
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--alpha", type=float, default=0.6, help="replay prioritization exponent")
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--log", type=Path, help="training log CSV path")

    b = sub.add_parser("bench", parents=[common], help="compare exploration strategies")
    b.add_argument("--bench-config", type=Path, help="benchmark config JSON")
    return p


def _agent_from_config(config: dict):
    from .walk import AgentParams

    agent_cfg = config.get("agent", {})
    import math

    return AgentParams(
        theta_max=math.radians(agent_cfg.get("theta_max_deg", 45.0)),
        h_step=agent_cfg.get("h_step", 0.4),
        r_agent=agent_cfg.get("r_agent", 0.5),
        h_agent=agent_cfg.get("h_agent", 2.0),
    )


def _load_config(args) -> dict:
    if args.config is None:
        return {}
    return json.loads(args.config.read_text())


def _cmd_gen(args, config) -> int:
    from .synth import WorldSpec, build_fixture

    spec = WorldSpec.from_json(args.spec)
    out = args.out or Path(f"world-{spec.seed}")
    build_fixture(spec, out_dir=out, resolution=args.resolution, agent=_agent_from_config(config))
    print(f"world written to {out}")
    return EX_OK


def _cmd_voxelize(args, config) -> int:
    from .pipeline import load_world, reconstruct
    from .walk import dump_point_cloud

    world = load_world(args.world)
    recon = reconstruct(world, resolution=args.resolution, agent=_agent_from_config(config))
    stats = {
        "terrain_voxels": len(recon.grid.terrain),
        "occupied_voxels": len(recon.grid.occupied),
        "walkable_voxels": len(recon.graph.nodes),
        "reachable_voxels": len(recon.reach.members),
        "timings_ms": recon.timings_ms,
    }
    print(json.dumps(stats, indent=2, sort_keys=True))
    if args.dump_voxels:
        dump_point_cloud(recon.grid, set(recon.graph.nodes), args.dump_voxels)
    return EX_OK


def _parse_weight_overrides(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--weight expects KIND=VALUE, got {pair!r}")
        kind, value = pair.split("=", 1)
        out[kind] = float(value)
    return out


def _cmd_validate(args, config) -> int:
    from .importance import compute_importance, load_markers
    from .pipeline import load_world, reconstruct
    from .validate import ValidationConfig, run_validation, save_report
    from .walk import dump_point_cloud

    world = load_world(args.world, kind_weights=_parse_weight_overrides(args.weight))
    if world.navmesh is None:
        raise FileNotFoundError(f"{args.world}/navmesh.txt not found")
    recon = reconstruct(world, resolution=args.resolution, agent=_agent_from_config(config))
    field = recon.field
    if args.markers:
        markers = load_markers(args.markers, _parse_weight_overrides(args.weight))
        field = compute_importance(recon.graph, recon.grid, markers)

    policy = None
    if args.strategy == "rl":
        if args.policy is None:
            raise ValueError("--strategy rl requires --policy")
        from .rl import greedy_policy, load_policy

        policy = greedy_policy(load_policy(args.policy))

    from .navmesh import NavQueryConfig

    nav = NavQueryConfig(
        proj_radius=config.get("proj_radius", args.resolution),
        height_tol=config.get("height_tol", 0.4),
    )
    vcfg = ValidationConfig(
        epsilon=args.epsilon, tau=args.tau, nav=nav, include_timings=not args.no_timings
    )
    budget = None if args.strategy == "exhaustive" else args.budget
    strategy = "bfs" if args.strategy == "exhaustive" else args.strategy
    report = run_validation(
        recon.graph, recon.reach, field, world.navmesh, recon.seed_pos,
        strategy=strategy, budget=budget, seed=args.seed, vcfg=vcfg, policy=policy,
    )
    out = args.out or Path("report.json")
    save_report(report, out)
    summary = report.metrics
    print(
        f"checked {summary['samples_used']} waypoints: {summary['filtered_count']} defects "
        f"in {summary['cluster_count']} clusters -> {out}"
    )
    if args.dump_voxels:
        dump_point_cloud(recon.grid, set(recon.graph.nodes), args.dump_voxels)
    return EX_DEFECTS if report.has_defects else EX_OK


def _cmd_train(args, config) -> int:
    from .explore import ExplorationEnv
    from .pipeline import load_world, reconstruct
    from .rl import TrainConfig, save_policy, save_training_log, train

    world = load_world(args.world)
    recon = reconstruct(world, resolution=args.resolution, agent=_agent_from_config(config))
    env = ExplorationEnv(recon.graph, recon.field, recon.reach)
    cfg = TrainConfig(
        episodes=args.episodes,
        steps_per_episode=args.steps,
        alpha=args.alpha,
        lr=args.lr,
        **config.get("train", {}),
    )
    result = train(env, cfg, args.seed)
    out = args.out or Path("policy.json")
    save_policy(result.net, out)
    if args.log:
        save_training_log(result.log, args.log)
    final = result.log[-1] if result.log else {}
    print(f"trained {cfg.episodes} episodes; final coverage {final.get('coverage', 0.0):.3f} -> {out}")
    return EX_OK


def _cmd_bench(args, config) -> int:
    from .bench import BenchConfig, format_table, run_benchmark
    from .rl import TrainConfig
    from .synth import WorldSpec

    bcfg_dict = {}
    if args.bench_config:
        bcfg_dict = json.loads(args.bench_config.read_text())
    fixtures = [WorldSpec.from_dict(d) for d in bcfg_dict.get("fixtures", [])]
    if not fixtures:
        fixtures = [WorldSpec(seed=args.seed, extent=30.0, markers={"random_clusters": 3})]
    cfg = BenchConfig(
        strategies=tuple(bcfg_dict.get("strategies", ("random", "heuristic"))),
        budget_pcts=tuple(bcfg_dict.get("budget_pcts", (25.0, 50.0, 75.0, 100.0))),
        seeds=tuple(bcfg_dict.get("seeds", range(5))),
        coverage_target=bcfg_dict.get("coverage_target", 0.85),
        fixtures=fixtures,
        resolution=bcfg_dict.get("resolution", 0.5),
        train_cfg=TrainConfig(**bcfg_dict.get("train", {})),
    )
    result = run_benchmark(cfg, out_dir=args.out)
    print(format_table(result["aggregates"]))
    return EX_OK


_COMMANDS = {
    "gen": _cmd_gen,
    "voxelize": _cmd_voxelize,
    "validate": _cmd_validate,
    "train": _cmd_train,
    "bench": _cmd_bench,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EX_USAGE
    try:
        config = _load_config(args)
        return _COMMANDS[args.command](args, config)
    except Exception as e:  # noqa: BLE001 - structured diagnostic for CI
        diagnostic = {"error": type(e).__name__, "message": str(e)}
        print(json.dumps(diagnostic), file=sys.stderr)
        return EX_ERROR


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
