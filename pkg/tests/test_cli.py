"""Command-line interface: subcommands, exit codes, end-to-end pipeline."""

from __future__ import annotations

import json

import pytest

from navvox.cli import EX_DEFECTS, EX_ERROR, EX_OK, EX_USAGE, cli_main


def write_spec(tmp_path, with_defect=True):
    spec = {
        "seed": 60,
        "extent": 12.0,
        "terrain": {"profile": "flat"},
        "markers": {"random_clusters": 1},
    }
    if with_defect:
        spec["defects"] = [
            {"kind": "remove_polygons", "region": [[2.0, 2.0], [4.5, 4.5]]},
            {"kind": "remove_polygons", "region": [[8.0, 2.5], [10.5, 5.0]]},
            {"kind": "remove_polygons", "region": [[2.5, 8.0], [5.0, 10.5]]},
        ]
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec))
    return p


def test_help_exits_zero(capsys):
    assert cli_main(["validate", "--help"]) == EX_OK
    assert "usage" in capsys.readouterr().out


def test_usage_error_is_64():
    assert cli_main(["validate"]) == EX_USAGE  # missing --world
    assert cli_main(["frobnicate"]) == EX_USAGE


def test_missing_input_is_error_with_diagnostic(tmp_path, capsys):
    code = cli_main(["validate", "--world", str(tmp_path / "nope")])
    assert code == EX_ERROR
    err = json.loads(capsys.readouterr().err)
    assert err["error"] and err["message"]


def test_gen_voxelize_validate_pipeline(tmp_path, capsys):
    spec = write_spec(tmp_path)
    world = tmp_path / "world"
    assert cli_main(["gen", "--spec", str(spec), "--out", str(world)]) == EX_OK
    capsys.readouterr()

    assert cli_main(["voxelize", "--world", str(world)]) == EX_OK
    stats = json.loads(capsys.readouterr().out)
    assert stats["walkable_voxels"] > 0

    report_path = tmp_path / "report.json"
    code = cli_main([
        "validate", "--world", str(world), "--strategy", "exhaustive",
        "--out", str(report_path),
    ])
    assert code == EX_DEFECTS
    report = json.loads(report_path.read_text())
    assert report["summary"]["cluster_count"] == 3


def test_validate_clean_world_exits_zero(tmp_path, capsys):
    spec = write_spec(tmp_path, with_defect=False)
    world = tmp_path / "world"
    cli_main(["gen", "--spec", str(spec), "--out", str(world)])
    code = cli_main([
        "validate", "--world", str(world), "--strategy", "exhaustive",
        "--out", str(tmp_path / "r.json"),
    ])
    assert code == EX_OK


def test_train_then_validate_with_policy(tmp_path, capsys):
    spec = write_spec(tmp_path, with_defect=False)
    world = tmp_path / "world"
    cli_main(["gen", "--spec", str(spec), "--out", str(world)])
    policy = tmp_path / "policy.json"
    log = tmp_path / "log.csv"
    code = cli_main([
        "train", "--world", str(world), "--episodes", "2", "--steps", "30",
        "--out", str(policy), "--log", str(log), "--seed", "1",
    ])
    assert code == EX_OK
    assert policy.exists()
    assert log.read_text().startswith("episode,total_reward,coverage,mean_td_error")

    code = cli_main([
        "validate", "--world", str(world), "--strategy", "rl", "--policy", str(policy),
        "--budget", "50", "--out", str(tmp_path / "r.json"),
    ])
    assert code in (EX_OK, EX_DEFECTS)


def test_validate_rl_requires_policy(tmp_path):
    spec = write_spec(tmp_path, with_defect=False)
    world = tmp_path / "world"
    cli_main(["gen", "--spec", str(spec), "--out", str(world)])
    assert cli_main(["validate", "--world", str(world), "--strategy", "rl"]) == EX_ERROR


def test_dump_voxels_flag(tmp_path, capsys):
    spec = write_spec(tmp_path, with_defect=False)
    world = tmp_path / "world"
    cli_main(["gen", "--spec", str(spec), "--out", str(world)])
    cloud = tmp_path / "cloud.txt"
    assert cli_main(["voxelize", "--world", str(world), "--dump-voxels", str(cloud)]) == EX_OK
    assert cloud.exists() and "walkable" in cloud.read_text()


def test_weight_override_changes_importance(tmp_path, capsys):
    spec = write_spec(tmp_path, with_defect=False)
    world = tmp_path / "world"
    cli_main(["gen", "--spec", str(spec), "--out", str(world)])
    code = cli_main([
        "validate", "--world", str(world), "--strategy", "exhaustive",
        "--weight", "InteractionZone=0.0", "--out", str(tmp_path / "r.json"),
    ])
    assert code == EX_OK


def test_bench_subcommand_smoke(tmp_path, capsys):
    bench_cfg = {
        "strategies": ["random", "bfs"],
        "budget_pcts": [50.0],
        "seeds": [0, 1],
        "fixtures": [
            {
                "seed": 61,
                "extent": 10.0,
                "terrain": {"profile": "flat"},
                "markers": {"random_clusters": 1},
                "defects": [{"kind": "remove_polygons", "region": [[1.5, 1.5], [3.5, 3.5]]}],
            }
        ],
    }
    cfg_path = tmp_path / "bench.json"
    cfg_path.write_text(json.dumps(bench_cfg))
    out = tmp_path / "bench-out"
    assert cli_main(["bench", "--bench-config", str(cfg_path), "--out", str(out)]) == EX_OK
    assert (out / "results.csv").exists()
    assert "bfs@50" in capsys.readouterr().out
