import json
import subprocess
import sys

import numpy as np
import pytest

from rkhspe.cli import main
from rkhspe.experiment import circle_config, write_points_csv
from rkhspe.manifold_geom import Trajectory


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def circle_files(tmp_path):
    t = np.arange(0.0, 5.0, 1e-3)
    Trajectory(t, np.column_stack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)])).to_csv(tmp_path / "traj.csv")
    th = 2 * np.pi * np.arange(5) / 5
    write_points_csv(tmp_path / "centers.csv", np.column_stack([np.cos(th), np.sin(th)]))
    return str(tmp_path / "traj.csv"), str(tmp_path / "centers.csv")


class TestBounds:
    def test_constants(self, tmp_path, capsys):
        p = write_json(tmp_path / "p.json", {"n": 4, "norm_B": 1, "lambda_A": 2, "lambda_bar": 9,
                                             "norm_A": 3, "vn_sup": 0.5, "gamma1": 0.5,
                                             "delta1": 1, "L": 2, "eta": 0.1})
        assert main(["bounds", "--params", p]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["c_hat"] == pytest.approx(3.0) and out["c_check"] == pytest.approx(32.0)
        assert out["lipschitz_bound"] == pytest.approx(6.4)

    def test_input_errors(self, tmp_path):
        assert main(["bounds", "--params", str(tmp_path / "none.json")]) == 1
        p = write_json(tmp_path / "p.json", {"n": 4})
        assert main(["bounds", "--params", p]) == 1
        p = write_json(tmp_path / "q.json", {"n": 4, "norm_B": 1, "lambda_A": 0, "lambda_bar": 9,
                                             "norm_A": 3, "vn_sup": 0.5})
        assert main(["bounds", "--params", p]) == 1


class TestPeCheck:
    def test_loop_certificate(self, circle_files, capsys):
        traj, centers = circle_files
        code = main(["pe-check", "--trajectory", traj, "--centers", centers, "--model", "loop",
                     "--length-scale", "1.0"])
        assert code == 0
        cert = json.loads(capsys.readouterr().out)
        assert cert["verdict"] is True and cert["config"]["window_len"] == pytest.approx(2.0, rel=1e-2)

    def test_fixed_epsilon_above_cap(self, circle_files):
        traj, centers = circle_files
        assert main(["pe-check", "--trajectory", traj, "--centers", centers, "--model", "ambient",
                     "--length-scale", "1.0", "--epsilon", "5"]) == 1

    def test_analysis_failure_exit_code(self, tmp_path, circle_files):
        traj, _ = circle_files
        write_points_csv(tmp_path / "two.csv", np.array([[1.0, 0.0], [0.0, 1.0]]))
        # epsilon just under the cap lets perturbed centers nearly coincide
        assert main(["pe-check", "--trajectory", traj, "--centers", str(tmp_path / "two.csv"),
                     "--model", "ambient", "--length-scale", "3.0", "--epsilon", "0.7"]) == 2

    def test_bad_epsilon_token(self, circle_files):
        traj, centers = circle_files
        with pytest.raises(SystemExit) as exc:
            main(["pe-check", "--trajectory", traj, "--centers", centers, "--model", "loop",
                  "--epsilon", "wide"])
        assert exc.value.code == 1


class TestSimulateAndGrid:
    def test_simulate_then_grid_error(self, tmp_path, capsys):
        cfg = circle_config(integration={"t_end_s": 2.0, "cycle_periods": 4},
                            grid={"resolution": [5, 4]}, output_dir=str(tmp_path / "run"))
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        assert main(["simulate", "--config", str(path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["manifest"]["status"] == "ok"
        coeffs = tmp_path / "run" / "coefficients.csv"
        # finite_dim grid errors need alpha_star in the config
        assert main(["grid-error", "--config", str(path), "--coeffs", str(coeffs)]) == 1
        capsys.readouterr()
        piezo = tmp_path / "piezo.json"
        piezo.write_text(json.dumps({"grid": {"bounds": [[-1, 1], [-1, 1]], "resolution": [3, 3]},
                                     "kernel": {"length_scale": 1.0}}))
        assert main(["grid-error", "--config", str(piezo), "--coeffs", str(coeffs)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "x1,x2,error" and len(lines) == 10

    def test_missing_config(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 1


class TestParser:
    def test_unknown_verb_and_flag(self):
        for argv in (["frobnicate"], ["bounds", "--params", "x", "--extra"], ["bounds"]):
            with pytest.raises(SystemExit) as exc:
                main(argv)
            assert exc.value.code == 1

    @pytest.mark.parametrize("verb", ["simulate", "pe-check", "grid-error", "bounds"])
    def test_help_per_verb(self, verb, capsys):
        with pytest.raises(SystemExit) as exc:
            main([verb, "--help"])
        assert exc.value.code == 0
        assert verb in capsys.readouterr().out

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "rkhspe", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "pe-check" in res.stdout
