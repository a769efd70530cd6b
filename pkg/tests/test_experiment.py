import json

import numpy as np
import pytest

from rkhspe.errors import InputError
from rkhspe.experiment import (OUTPUT_DIR_ENV, ExperimentConfig, auto_grid_bounds,
                               build_circle_plant, build_piezo_plant, circle_config,
                               integrate_plant, nominal_period, read_points_csv, run_experiment,
                               write_points_csv)

# f at scaled displacement 0.05, i.e. physical 1 mm (30-digit reference)
PIEZO_F_AT_005 = 1.31148999486916367e-4
PIEZO_OMEGA = 18.3992716299051169        # sqrt(K_hat / M)


def short_circle(**kw):
    return circle_config(integration={"t_end_s": 2.0, "cycle_periods": 4}, **kw)


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = circle_config()
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
        p = tmp_path / "cfg.json"
        p.write_text(cfg.to_json())
        assert ExperimentConfig.from_json(p) == cfg

    def test_defaults_are_published_piezo_setup(self):
        cfg = ExperimentConfig()
        assert cfg.plant.modal_mass_kg == 0.9745 and cfg.plant.scaling_s == 0.02
        assert cfg.kernel.length_scale == 0.005 and cfg.centers.count == 50
        assert cfg.estimator.gamma == 0.001 and cfg.estimator.alpha0 == 0.001
        assert cfg.integration.t_end_s == 150.0 and cfg.plant.x0 == [0.05, 0.0]

    @pytest.mark.parametrize("data", [{"bogus": 1}, {"plant": {"mass": 1.0}}, {"kind": "other"},
                                      {"plant": {"kind": "pendulum"}},
                                      {"grid": {"resolution": [1, 5]}},
                                      {"centers": {"count": 0}}, {"centers": {"source": "file"}},
                                      {"pe": {"model": "torus"}}, {"plant": {"x0": [np.nan, 0]}},
                                      {"plant": []}])
    def test_invalid(self, data):
        with pytest.raises(InputError):
            ExperimentConfig.from_dict(data)

    def test_file_errors(self, tmp_path):
        with pytest.raises(InputError):
            ExperimentConfig.from_json(tmp_path / "nope.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(InputError):
            ExperimentConfig.from_json(bad)


class TestPlants:
    def test_piezo_model(self):
        cfg = ExperimentConfig()
        plant = build_piezo_plant(cfg)
        assert plant.f_true(np.array([0.05, 0.0])) == pytest.approx(PIEZO_F_AT_005, rel=1e-12)
        w = np.abs(np.linalg.eigvals(plant.A).imag)
        assert np.allclose(w, PIEZO_OMEGA, rtol=1e-12)
        assert nominal_period(cfg) == pytest.approx(2 * np.pi / PIEZO_OMEGA)
        assert np.array_equal(plant.f_true(np.array([[0.05, 1.0], [0.0, 0.0]])),
                              [plant.f_true(np.array([0.05, 1.0])), 0.0])

    def test_piezo_rejects_bad_mass(self):
        cfg = ExperimentConfig.from_dict({"plant": {"modal_mass_kg": 0.0}})
        with pytest.raises(InputError):
            build_piezo_plant(cfg)

    def test_circle_limit_cycle(self):
        cfg = circle_config(plant={"radius": 1.5, "x0": [0.3, 0.0]})
        tr = integrate_plant(build_circle_plant(cfg), [0.3, 0.0], 6.0, 1e-3)
        r = np.linalg.norm(tr.after(4.0).states, axis=1)
        assert np.allclose(r, 1.5, atol=1e-6)


class TestHelpers:
    def test_grid_bounds(self):
        states = np.array([[0.0, -1.0], [2.0, 1.0]])
        assert auto_grid_bounds(states, 0.25) == [[-0.25, 2.25], [-1.25, 1.25]]

    def test_points_csv(self, tmp_path):
        pts = np.array([[0.1, 0.2], [0.3, 0.4]])
        write_points_csv(tmp_path / "p.csv", pts, [1.0, 2.0])
        back, vals = read_points_csv(tmp_path / "p.csv", value_column=True)
        assert np.array_equal(back, pts) and np.array_equal(vals, [1.0, 2.0])
        with pytest.raises(InputError):
            read_points_csv(tmp_path / "missing.csv")


class TestPipeline:
    def test_bundle_and_manifest(self, tmp_path):
        b = run_experiment(short_circle(), tmp_path)
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["status"] == "ok" and man["seed"] == 0
        for name, entry in man["files"].items():
            assert (tmp_path / entry["file"]).is_file(), name
            assert len(entry["sha256"]) == 64
        assert {"trajectory", "limit_cycle", "certificate", "sim_series", "error_grid",
                "bounds", "config", "centers", "coefficients"} <= set(man["files"])
        assert man["period_s"] == pytest.approx(1.0, rel=2e-2)
        echo = json.loads((tmp_path / "config.json").read_text())
        assert ExperimentConfig.from_dict(echo) == short_circle()
        bounds = json.loads((tmp_path / "bounds.json").read_text())
        assert bounds["c_hat"] > 0 and "coverage_eta" in bounds
        grid_lines = (tmp_path / "error_grid.csv").read_text().splitlines()
        assert len(grid_lines) == 1 + 101 * 101

    def test_explicit_alpha_star(self, tmp_path):
        b = run_experiment(short_circle(alpha_star=[0.0, 0.1, 0.0, -0.1, 0.05]), tmp_path)
        assert np.array_equal(b.extras["alpha_star"], [0.0, 0.1, 0.0, -0.1, 0.05])
        assert b.sim.reference_kind == "exact"

    def test_output_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
        b = run_experiment(short_circle(), tmp_path / "ignored")
        assert b.output_dir == tmp_path / "env"
        assert (tmp_path / "env" / "manifest.json").is_file()

    def test_failed_stage_leaves_partial_manifest(self, tmp_path):
        centers = tmp_path / "c.csv"
        write_points_csv(centers, np.array([[1.0, 0.0], [1.0, 0.0]]))
        cfg = short_circle(centers={"source": "file", "file": str(centers)})
        with pytest.raises(InputError, match="centers"):
            run_experiment(cfg, tmp_path / "out")
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert man["status"] == "failed" and man["failed_stage"] == "centers"


def short_piezo(**kw):
    base = {"integration": {"t_end_s": 0.5, "cycle_periods": 6, "record_every": 50},
            "grid": {"resolution": [11, 11]}}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


class TestPiezoPipeline:
    def test_seed_only_changes_validation_record(self, tmp_path):
        a = run_experiment(short_piezo(seed=0), tmp_path / "a")
        b = run_experiment(short_piezo(seed=5), tmp_path / "b")
        for name in ("trajectory", "limit_cycle", "centers", "sim_series", "sim_alpha", "error_grid"):
            assert a.path(name).read_bytes() == b.path(name).read_bytes(), name
        ca, cb = a.certificate.to_dict(), b.certificate.to_dict()
        assert ca["mc_validation"] != cb["mc_validation"]
        for c in (ca, cb):
            del c["mc_validation"]
            del c["config"]["seed"]
        assert ca == cb

    def test_single_center(self, tmp_path):
        b = run_experiment(short_piezo(centers={"count": 1}), tmp_path)
        cert = b.certificate
        loop = b.extras["loop"]
        assert cert.epsilon_cap == pytest.approx(0.999 * loop.snap_tolerance)
        assert cert.theta == pytest.approx(np.sqrt(0.5))
        assert len(cert.per_center_min_dwell) == 1 and cert.verdict

    def test_linear_oscillator(self):
        cfg = ExperimentConfig.from_dict({"plant": {"K_N1_N_per_m3": 0.0, "K_N2_N_per_m5": 0.0}})
        plant = build_piezo_plant(cfg)
        assert plant.f_true(np.array([0.05, 0.01])) == 0.0
