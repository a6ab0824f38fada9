import hashlib
import json
import os

import numpy as np
import pytest

from lidarnav.cli import EXIT_CONFIG, EXIT_IO, EXIT_NO_PATH, EXIT_OK, main


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def corridor_map(tmp_path):
    """Corridor scanned densely inside plus a few outside poses: the outer
    free region is reachable only through walls, giving plan a no-path case."""
    inside = [(x, y) for x in range(-16, 17, 4) for y in (-1.5, 0.0, 1.5)]
    outside = [(-10, 8), (10, 8), (0, 10)]
    poses = tmp_path / "poses.csv"
    poses.write_text("".join(f"{x},{y}\n" for x, y in inside + outside))
    out = tmp_path / "mapout"
    code = run("map", "--template", "corridor", "--seed", 5, "--poses", poses,
               "--resolution", "0.1", "--out", out)
    assert code == EXIT_OK
    return out


class TestMap:
    def test_deterministic_pgm_bytes(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run("map", "--template", "farmland", "--seed", 3, "--n-poses", 4,
                   "--resolution", "0.2", "--out", out_a) == EXIT_OK
        assert run("map", "--template", "farmland", "--seed", 3, "--n-poses", 4,
                   "--resolution", "0.2", "--out", out_b) == EXIT_OK
        assert (out_a / "map.pgm").read_bytes() == (out_b / "map.pgm").read_bytes()

    def test_manifest_checksums_match_files(self, tmp_path):
        out = tmp_path / "m"
        assert run("map", "--template", "empty", "--seed", 1, "--n-poses", 2,
                   "--resolution", "0.5", "--out", out) == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["artifacts"], "manifest must list artifacts"
        for artifact in manifest["artifacts"]:
            path = tmp_path / "m" / os.path.basename(artifact["path"])
            assert sha256(path) == artifact["sha256"]
            assert path.stat().st_size == artifact["bytes"]

    def test_empty_world_map_has_no_occupied_cells(self, tmp_path):
        out = tmp_path / "empty"
        assert run("map", "--template", "empty", "--seed", 1, "--n-poses", 1,
                   "--resolution", "0.5", "--out", out) == EXIT_OK
        from lidarnav.mapping import load_pgm

        grid = load_pgm(out / "map.pgm", resolution=0.5)
        assert (grid.classes() <= 0).all()
        assert (grid.classes() == -1).any()  # free space around the pose

    def test_unwritable_output_exits_2(self):
        assert run("map", "--template", "empty", "--seed", 1,
                   "--out", "/proc/definitely/not/writable") == EXIT_IO

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        target = tmp_path / "envout"
        monkeypatch.setenv("RELAX_NAV_OUT", str(target))
        assert run("map", "--template", "empty", "--seed", 1, "--n-poses", 2,
                   "--resolution", "0.5") == EXIT_OK
        assert (target / "map.pgm").exists()


class TestPlan:
    def test_plan_inside_corridor(self, corridor_map, tmp_path):
        out = tmp_path / "plan"
        code = run("plan", "--grid", corridor_map / "map.pgm", "--start", "60,200",
                   "--target", "340,200", "--seed", 9, "--out", out)
        assert code == EXIT_OK
        lines = (out / "path.csv").read_text().strip().splitlines()
        assert lines[0] == "index,px_x,px_y,world_x,world_y"
        first = lines[1].split(",")
        # grid transform: pixel (60, 200) is world (-14, 0)
        assert float(first[3]) == pytest.approx(-14.0)
        assert float(first[4]) == pytest.approx(0.0)
        assert (out / "tree.json").exists()

    def test_walled_off_target_exits_3_with_tree_dump(self, corridor_map, tmp_path):
        out = tmp_path / "blocked"
        # start inside the corridor, target in the scanned free region beyond the wall
        code = run("plan", "--grid", corridor_map / "map.pgm", "--start", "60,200",
                   "--target", "200,290", "--seed", 9, "--iterations", "400", "--out", out)
        assert code == EXIT_NO_PATH
        assert (out / "tree.json").exists()
        assert not (out / "path.csv").exists()

    def test_occupied_target_is_config_error(self, corridor_map, tmp_path):
        code = run("plan", "--grid", corridor_map / "map.pgm", "--start", "60,200",
                   "--target", "2,2", "--seed", 9, "--out", tmp_path / "bad")
        assert code == EXIT_CONFIG

    def test_missing_grid_is_config_error(self, tmp_path):
        code = run("plan", "--grid", tmp_path / "nope.pgm", "--start", "0,0",
                   "--target", "1,1", "--out", tmp_path / "o")
        assert code == EXIT_CONFIG

    def test_rerun_reproduces_artifacts(self, corridor_map, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert run("plan", "--grid", corridor_map / "map.pgm", "--start", "60,200",
                       "--target", "340,200", "--seed", 9, "--out", out) == EXIT_OK
            outs.append(out)
        assert (outs[0] / "path.csv").read_bytes() == (outs[1] / "path.csv").read_bytes()
        assert (outs[0] / "tree.json").read_bytes() == (outs[1] / "tree.json").read_bytes()


class TestTrainEval:
    def test_train_smoke_and_eval(self, tmp_path):
        train_out = tmp_path / "train"
        assert run("train", "--episodes", 2, "--seed", 11, "--out", train_out) == EXIT_OK
        curve = (train_out / "learning_curve.csv").read_text().strip().splitlines()
        assert len(curve) == 3
        ckpt = train_out / "policy.ckpt.npz"
        assert ckpt.exists()
        manifest = json.loads((train_out / "manifest.json").read_text())
        listed = {os.path.basename(a["path"]) for a in manifest["artifacts"]}
        assert {"policy.ckpt.npz", "learning_curve.csv"} <= listed

        eval_out = tmp_path / "eval"
        assert run("eval", "--checkpoint", ckpt, "--episodes", 2, "--seed", 12,
                   "--out", eval_out) == EXIT_OK
        summary = (eval_out / "eval_summary.csv").read_text().strip().splitlines()
        assert len(summary) == 3
        assert (eval_out / "trace_000.csv").exists()

    def test_eval_missing_checkpoint_exits_1(self, tmp_path):
        assert run("eval", "--checkpoint", tmp_path / "missing.npz",
                   "--episodes", 1, "--out", tmp_path / "e") == EXIT_CONFIG

    def test_eval_parallel_jobs_match_serial(self, tmp_path):
        train_out = tmp_path / "train"
        assert run("train", "--episodes", 2, "--seed", 11, "--out", train_out) == EXIT_OK
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        for out, jobs in ((serial, 1), (parallel, 2)):
            assert run("eval", "--checkpoint", train_out / "policy.ckpt.npz",
                       "--episodes", 4, "--seed", 12, "--jobs", jobs, "--out", out) == EXIT_OK
        assert (serial / "eval_summary.csv").read_bytes() == \
            (parallel / "eval_summary.csv").read_bytes()

    def test_unknown_config_key_exits_1(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"learning_rat": 1e-3}))
        assert run("train", "--config", cfg, "--episodes", 1,
                   "--out", tmp_path / "t") == EXIT_CONFIG

    def test_config_overrides_apply(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_eps": 1, "n_step": 5}))
        out = tmp_path / "t"
        assert run("train", "--config", cfg, "--seed", 2, "--out", out) == EXIT_OK
        curve = (out / "learning_curve.csv").read_text().strip().splitlines()
        assert len(curve) == 2


class TestReplay:
    def test_replay_renders_overlay(self, tmp_path):
        train_out = tmp_path / "train"
        assert run("train", "--episodes", 2, "--seed", 11, "--out", train_out) == EXIT_OK
        eval_out = tmp_path / "eval"
        assert run("eval", "--checkpoint", train_out / "policy.ckpt.npz",
                   "--episodes", 1, "--seed", 12, "--out", eval_out) == EXIT_OK
        scen = tmp_path / "scenario.json"
        from lidarnav.world import save_scenario, spawn_scenario
        from lidarnav.seeding import derive_seed

        save_scenario(spawn_scenario(derive_seed(12, "eval-scenario:0"), "farmland"), scen)
        out = tmp_path / "replay"
        assert run("replay", "--trace", eval_out / "trace_000.csv",
                   "--scenario", scen, "--out", out) == EXIT_OK
        ppm = (out / "replay.ppm").read_bytes()
        assert ppm.startswith(b"P6\n")
        # red path pixels present
        assert b"\xdc\x1e\x1e" in ppm

    def test_missing_trace_exits_1(self, tmp_path):
        assert run("replay", "--trace", tmp_path / "no.csv",
                   "--scenario", tmp_path / "no.json", "--out", tmp_path / "r") == EXIT_CONFIG
