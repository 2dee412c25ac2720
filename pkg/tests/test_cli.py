import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from wlopt import cli, config as cfgmod, transform
from wlopt.trajectory import Trajectory

# compact scenario: coarse grid and softer penalties keep the runtime small
SMALL_SCENARIO = {
    "grid": {"delta_hat": 0.02},
    "cost": {
        "s_diag": [0, 0, 0, 0, 100.0, 100.0, 100.0, 0, 0, 0, 0],
        "q_diag": [0, 0, 0, 0, 100.0, 100.0, 0, 0, 0, 0, 0],
    },
    "training": {
        "batch_size": 120,
        # tighter box than the full scenario: the coarse grid takes larger
        # per-step kicks, so edge samples need more guard margin
        "domain_lo": [0.45, 0.15, -0.45, -0.2, -0.3, -0.6, -0.15, -0.3, -0.5, 0.0, -0.6],
        "domain_hi": [0.80, 0.80, -0.30, 0.2, 1.1, 0.8, 0.15, 0.3, 0.5, 0.3, 0.6],
    },
    "sweep": {"num_candidates": 9},
    "engine_fit": {
        "train_short_duration": 40.0,
        "train_long_duration": 15.0,
        "validation_duration": 10.0,
        "epochs": 400,
    },
}


def write_config(tmp_path, extra=None) -> Path:
    cfg = dict(SMALL_SCENARIO)
    if extra:
        cfg = {**cfg, **extra}
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def run(args):
    return cli.main([str(a) for a in args])


def read_bytes(path):
    return Path(path).read_bytes()


class TestFitEngineCommand:
    def test_outputs_and_mae(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        assert run(["--config", cfg, "--out", out, "--seed", 1, "fit-engine"]) == 0
        assert (out / "engine_weights.json").exists()
        report = (out / "engine_fit_report.csv").read_text().splitlines()
        assert report[0] == "split,quantity,mae"
        rows = {(r.split(",")[0], r.split(",")[1]): float(r.split(",")[2]) for r in report[1:]}
        assert rows[("training", "torque")] < 2e-2

    def test_seed_determinism(self, tmp_path):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run(["--config", cfg, "--out", out1, "--seed", 1, "fit-engine"]) == 0
        assert run(["--config", cfg, "--out", out2, "--seed", 1, "fit-engine"]) == 0
        assert read_bytes(out1 / "engine_weights.json") == read_bytes(out2 / "engine_weights.json")
        assert read_bytes(out1 / "engine_fit_report.csv") == read_bytes(out2 / "engine_fit_report.csv")

    def test_missing_params_file_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"plant_params": str(tmp_path / "missing_params.json")})
        assert run(["--config", cfg, "--out", tmp_path / "o", "fit-engine"]) == 2
        assert "missing_params.json" in capsys.readouterr().err


@pytest.fixture(scope="module")
def demo_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    assert run(["--out", out, "open-loop-slc"]) == 0
    return out


class TestOpenLoopSlc:
    def test_phase_velocity_invariants(self, demo_out):
        summary = json.loads((demo_out / "slc_summary.json").read_text())
        phases = summary["phases"]
        assert [p["mode"] for p in phases] == ["backward", "stop", "forward", "stop"]
        assert phases[0]["v_max"] <= 0.0
        assert phases[2]["v_min"] >= 0.0
        for p in phases:
            if p["mode"] == "stop":
                assert abs(p["v_end"]) < 0.02

    def test_heading_change(self, demo_out):
        summary = json.loads((demo_out / "slc_summary.json").read_text())
        assert summary["heading_change_deg"] > 30.0

    def test_stop_phases_have_zero_traction(self, demo_out):
        traj = Trajectory.from_csv(demo_out / "slc_trajectory.csv")
        from wlopt import plant

        params = plant.WLParams()
        stop_rows = traj.modes == 0
        v_phys = traj.states[:-1][stop_rows, plant.IX_V] * params.xs[plant.IX_V]
        omega = traj.states[:-1][stop_rows, plant.IX_OMEGA_E]
        for w, v in zip(omega[::100], v_phys[::100]):
            assert plant.traction_force(w, v, plant.Mode.stop(), params) == 0.0

    def test_final_speed_at_rest(self, demo_out):
        summary = json.loads((demo_out / "slc_summary.json").read_text())
        assert abs(summary["final_speed"]) < 0.02

    def test_guard_abort_keeps_partial_csv(self, tmp_path, capsys):
        # wide-open fuel revs the engine past its guard; the partial
        # trajectory up to the abort must still be written
        demo = {
            "demo": {
                "dt": 0.001,
                "t_boundaries": [0.0, 4.0],
                "modes": ["stop"],
                "x0": [0.5, 0.35, -0.5, 0, 0, 0, 0, 0, 0, 0, 0],
                "control_segments": [{"t": [0.0, 4.0], "u": [0.0, 0.0, 5.0, 0.0]}],
            }
        }
        cfg = tmp_path / "abort.yaml"
        cfg.write_text(yaml.safe_dump(demo))
        out = tmp_path / "o"
        assert run(["--config", cfg, "--out", out, "open-loop-slc"]) == 1
        traj = Trajectory.from_csv(out / "slc_trajectory.csv")
        assert 0 < traj.n_steps < 4000
        assert "partial" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_scenario(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg = write_config(tmp)
    out = tmp / "out"
    assert run(["--config", cfg, "--out", out, "--seed", 3, "train"]) == 0
    return cfg, out


class TestTrainCommand:
    def test_network_and_history(self, trained_scenario):
        cfg, out = trained_scenario
        assert (out / "network.costatenet.json").exists()
        hist = (out / "weight_history.csv").read_text().splitlines()
        assert hist[0] == "k_hat,frobenius_norm,rms_residual"
        assert len(hist) - 1 == 100  # N' = 2 / 0.02

    def test_empty_domain_rejected(self, tmp_path, capsys):
        bad = dict(SMALL_SCENARIO)
        bad["training"] = dict(bad["training"])
        bad["training"]["domain_lo"] = [0.5] * 11
        bad["training"]["domain_hi"] = [0.4] * 11
        cfg = tmp_path / "bad.yaml"
        cfg.write_text(yaml.safe_dump(bad))
        assert run(["--config", cfg, "--out", tmp_path / "o", "train"]) == 2
        assert "domain" in capsys.readouterr().err


class TestOptimizeCommand:
    def test_report_and_curve(self, trained_scenario):
        cfg, out = trained_scenario
        assert run(["--config", cfg, "--out", out, "--seed", 3, "optimize"]) == 0
        report = json.loads((out / "optimize_report.json").read_text())
        sched = cfgmod.build_schedule(cfgmod.load_config(cfg))
        assert sched.t0 < report["t1_star"] < sched.tf
        curve = np.genfromtxt(out / "cost_curve.csv", delimiter=",", skip_header=1)
        assert report["j_star"] <= curve[0, 1] and report["j_star"] <= curve[-1, 1]
        assert np.all(np.isfinite(curve[:, 1]))

    def test_trajectory_cost_roundtrip(self, trained_scenario):
        cfg_path, out = trained_scenario
        run(["--config", cfg_path, "--out", out, "--seed", 3, "optimize"])
        report = json.loads((out / "optimize_report.json").read_text())
        traj = Trajectory.from_csv(out / "closed_loop_trajectory.csv")
        cfg = cfgmod.load_config(cfg_path)
        problem = cfgmod.build_problem(cfg)
        sched = problem.schedule_for(report["t1_star"])
        recomputed = transform.total_cost(traj, sched, problem.grid, problem.cost)
        assert abs(recomputed - report["total_cost"]) < 1e-9

    def test_determinism(self, trained_scenario, tmp_path):
        cfg, out = trained_scenario
        out2 = tmp_path / "second"
        out2.mkdir()
        import shutil

        shutil.copy(out / "network.costatenet.json", out2 / "network.costatenet.json")
        assert run(["--config", cfg, "--out", out, "--seed", 3, "optimize"]) == 0
        first = read_bytes(out / "optimize_report.json")
        curve1 = read_bytes(out / "cost_curve.csv")
        assert run(["--config", cfg, "--out", out2, "--seed", 3, "optimize"]) == 0
        assert read_bytes(out2 / "optimize_report.json") == first
        assert read_bytes(out2 / "cost_curve.csv") == curve1

    def test_unreadable_network_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "o"
        out.mkdir()
        (out / "network.costatenet.json").write_text("{not json")
        assert run(["--config", cfg, "--out", out, "optimize"]) == 2

    def test_missing_network_exit_2(self, tmp_path):
        cfg = write_config(tmp_path)
        assert run(["--config", cfg, "--out", tmp_path / "empty", "optimize"]) == 2


class TestSimulateCommand:
    def test_simulate_at_fixed_t1(self, trained_scenario):
        cfg, out = trained_scenario
        assert run(["--config", cfg, "--out", out, "simulate", "--t1", 1.2]) == 0
        traj = Trajectory.from_csv(out / "simulate_trajectory.csv")
        assert traj.n_steps == 100


class TestPlantParamsFile:
    def test_custom_params_file_used(self, tmp_path):
        from wlopt import plant

        params_path = tmp_path / "params.json"
        plant.WLParams().to_file(params_path)
        cfg = write_config(tmp_path, {"plant_params": str(params_path)})
        out = tmp_path / "o"
        assert run(["--config", cfg, "--out", out, "open-loop-slc"]) == 0
        assert (out / "slc_summary.json").exists()


class TestConfigHandling:
    def test_print_config(self, capsys):
        assert run(["--print-config"]) == 0
        out = capsys.readouterr().out
        assert "delta_hat" in out and "domain_lo" in out

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("no_such_key: 1\n")
        assert run(["--config", cfg, "--print-config"]) == 2
        assert "no_such_key" in capsys.readouterr().err

    def test_missing_config_exit_2(self, tmp_path):
        assert run(["--config", tmp_path / "absent.yaml", "fit-engine"]) == 2

    def test_no_command_prints_help(self, capsys):
        assert run([]) == 2
