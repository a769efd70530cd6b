"""Experiment configuration and end-to-end pipelines.

Two plants are built in:

``piezo``
    undamped nonlinear piezoelectric oscillator in scaled coordinates
    ``(x1 / s, x2)``; unknown function ``f(x) = -(K_N1/M) x1^3 - (K_N2/M) x1^5``.
``circle``
    synthetic oscillator ``x' = A x + h(x) + B f(x)`` with Hurwitz
    ``A = [[-mu, -omega], [omega, -mu]]`` and known radial drift
    ``h(x) = mu (2 - |x|^2 / r^2) x``; for ``f = 0`` its limit cycle is the
    circle of radius ``r`` traversed at angular rate ``omega``.

A pipeline run writes an output bundle (CSV + JSON files) and a manifest with
a SHA-256 hash of every file.
"""
from __future__ import annotations

import hashlib
import json
import os
import platform
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy

from . import __version__
from .adaptive_estimator import (DEAD_ZONE, EstimatorConfig, PlantModel, SimResult,
                                 integrate_plant, is_hurwitz, pointwise_error_grid, simulate)
from .errors import InputError, RkhsPeError
from .kernel_core import (CenterSet, KernelSpec, RkhsFunction, complementary_values, gram,
                          project, sup_norm_estimate)
from .manifold_geom import (ManifoldModel, Trajectory, _read_numeric_rows, _write_rows,
                            detect_period, extract_limit_cycle, fill_distance)
from .pe_analysis import (PeCertificate, PeConfig, check_sufficient_condition,
                          lipschitz_bound, lipschitz_estimate, ultimate_bounds)

OUTPUT_DIR_ENV = "RKHSPE_OUTPUT_DIR"


# -- configuration -----------------------------------------------------------

def _from_dict(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise InputError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InputError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise InputError(f"{where}: {exc}") from exc


@dataclass
class PlantParams:
    kind: str = "piezo"
    modal_mass_kg: float = 0.9745
    modal_stiffness_N_per_m: float = 329.9006
    K_N1_N_per_m3: float = -1.2901e5
    K_N2_N_per_m5: float = 1.2053e9
    scaling_s: float = 0.02
    radius: float = 1.0
    omega_rad_per_s: float = 2 * np.pi
    mu_per_s: float = 2.0
    x0: list = field(default_factory=lambda: [0.05, 0.0])

    def __post_init__(self):
        if self.kind not in ("piezo", "circle"):
            raise InputError(f"unknown plant kind {self.kind!r}")
        vals = [self.modal_mass_kg, self.modal_stiffness_N_per_m, self.K_N1_N_per_m3,
                self.K_N2_N_per_m5, self.scaling_s, self.radius, self.omega_rad_per_s,
                self.mu_per_s] + list(self.x0)
        if not all(np.isfinite(float(v)) for v in vals):
            raise InputError("plant parameters must be finite")


@dataclass
class KernelParams:
    family: str = "sobolev_matern_3_2"
    length_scale: float = 0.005


@dataclass
class CentersParams:
    source: str = "auto"            # "auto" (equispaced on the limit cycle) or "file"
    count: int = 50
    file: Optional[str] = None

    def __post_init__(self):
        if self.source not in ("auto", "file"):
            raise InputError(f"centers.source must be 'auto' or 'file', got {self.source!r}")
        if self.source == "file" and not self.file:
            raise InputError("centers.source = 'file' needs centers.file")
        if int(self.count) < 1:
            raise InputError("centers.count must be >= 1")


@dataclass
class EstimatorParams:
    gamma: float = 0.001
    mode: str = "gradient"
    Q: Optional[list] = None
    P: Optional[list] = None
    phi: Union[str, float] = "auto"  # dead-zone width: "auto" = |B| sup|v_n| / lambda_A
    phi_margin: float = 1.0
    lambda_A: Optional[float] = 1.0
    use_measured_drift: bool = True
    alpha0: Union[float, list] = 0.001
    x_hat0: Optional[list] = None


@dataclass
class IntegrationParams:
    dt_s: Optional[float] = None          # default: period / 2000
    t_end_s: float = 150.0
    transient_time_s: float = 0.0
    cycle_periods: int = 12               # plant-only run used for cycle extraction
    record_every: int = 20
    resample_n: int = 1024


@dataclass
class PeParams:
    model: str = "loop"                   # "loop" or "ambient"
    window_len_s: Optional[float] = None  # default: 2 periods
    start_time_s: Optional[float] = None  # default: transient time
    epsilon: Union[str, float] = "auto"
    dwell_floor_s: Optional[float] = None
    eig_safety: float = 0.5
    n_mc: int = 64
    pe1: Optional[dict] = None            # user-supplied {gamma1, delta1}

    def __post_init__(self):
        if self.model not in ("loop", "ambient"):
            raise InputError(f"pe.model must be 'loop' or 'ambient', got {self.model!r}")


@dataclass
class GridParams:
    bounds: Optional[list] = None         # default: inflated trajectory bounding box
    resolution: list = field(default_factory=lambda: [101, 101])
    inflate: float = 0.25                 # relative growth of each box side

    def __post_init__(self):
        if any(int(r) < 2 for r in self.resolution):
            raise InputError("grid resolution must be >= 2 per axis")


@dataclass
class ExperimentConfig:
    kind: str = "piezo"                   # "piezo" or "finite_dim"
    plant: PlantParams = field(default_factory=PlantParams)
    kernel: KernelParams = field(default_factory=KernelParams)
    centers: CentersParams = field(default_factory=CentersParams)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    integration: IntegrationParams = field(default_factory=IntegrationParams)
    pe: PeParams = field(default_factory=PeParams)
    grid: GridParams = field(default_factory=GridParams)
    alpha_star: Optional[list] = None
    alpha_star_scale: float = 0.1
    seed: int = 0
    output_dir: str = "output"

    _sections = {"plant": PlantParams, "kernel": KernelParams, "centers": CentersParams,
                 "estimator": EstimatorParams, "integration": IntegrationParams,
                 "pe": PeParams, "grid": GridParams}

    def __post_init__(self):
        if self.kind not in ("piezo", "finite_dim"):
            raise InputError(f"unknown experiment kind {self.kind!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise InputError("configuration must be a JSON object")
        data = dict(data)
        for name, sub in cls._sections.items():
            data[name] = _from_dict(sub, data.get(name), name)
        return _from_dict(cls, data, "config")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# -- plants ------------------------------------------------------------------

def build_piezo_plant(cfg: ExperimentConfig) -> PlantModel:
    """Piezo oscillator in scaled coordinates ``(x1 / s, x2)``.

    ``A`` is marginally stable (undamped), so the Hurwitz check only warns.
    """
    p = cfg.plant
    M, K, s = p.modal_mass_kg, p.modal_stiffness_N_per_m, p.scaling_s
    if not M > 0:
        raise InputError(f"modal mass must be positive, got {M}")
    if not s > 0:
        raise InputError(f"scaling factor must be positive, got {s}")
    c1, c2 = p.K_N1_N_per_m3 / M, p.K_N2_N_per_m5 / M

    def f(x):
        x1 = s * np.asarray(x, dtype=float)[..., 0]
        return -c1 * x1 ** 3 - c2 * x1 ** 5

    A = np.array([[0.0, 1.0 / s], [-K * s / M, 0.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return PlantModel(A, np.array([0.0, 1.0]), f, state_scaling=s, strict=False)


def build_circle_plant(cfg: ExperimentConfig, f_true=None) -> PlantModel:
    p = cfg.plant
    r, w, mu = p.radius, p.omega_rad_per_s, p.mu_per_s
    if not (r > 0 and w > 0 and mu > 0):
        raise InputError("circle plant needs radius, omega and mu positive")
    A = np.array([[-mu, -w], [w, -mu]])

    def h(x):
        x = np.asarray(x, dtype=float)
        return mu * (2.0 - (x @ x) / r ** 2) * x

    if f_true is None:
        def f_true(x):
            return np.zeros(np.asarray(x).shape[:-1]) if np.ndim(x) > 1 else 0.0
    return PlantModel(A, np.array([0.0, 1.0]), f_true, known_drift=h)


def build_plant(cfg: ExperimentConfig, f_true=None) -> PlantModel:
    if cfg.plant.kind == "piezo":
        plant = build_piezo_plant(cfg)
        if f_true is not None:
            plant = PlantModel(plant.A, plant.B, f_true, plant.state_scaling, strict=False)
        return plant
    return build_circle_plant(cfg, f_true)


def nominal_period(cfg: ExperimentConfig) -> float:
    """Linearized period guess, used only for step size and horizon defaults."""
    p = cfg.plant
    if p.kind == "piezo":
        return 2 * np.pi / np.sqrt(p.modal_stiffness_N_per_m / p.modal_mass_kg)
    return 2 * np.pi / p.omega_rad_per_s


def read_points_csv(path, value_column: bool = False):
    """Read points (and optionally a trailing value column) from CSV."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    data = np.array(_read_numeric_rows(path), dtype=float)
    if value_column:
        if data.shape[1] < 2:
            raise InputError(f"{path}: expected coordinates followed by a value column")
        return data[:, :-1], data[:, -1]
    return data, None


def write_points_csv(path, points, values=None):
    points = np.atleast_2d(points)
    header = [f"x{j + 1}" for j in range(points.shape[1])]
    data = points
    if values is not None:
        header.append("value")
        data = np.column_stack([points, values])
    _write_rows(path, header, data)


def auto_grid_bounds(states: np.ndarray, inflate: float) -> list:
    lo, hi = states.min(axis=0), states.max(axis=0)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * (1.0 + inflate)
    return np.column_stack([mid - half, mid + half]).tolist()


# -- pipeline ----------------------------------------------------------------

@dataclass
class OutputBundle:
    output_dir: Path
    files: dict                       # logical name -> filename
    manifest: dict
    certificate: Optional[PeCertificate] = None
    sim: Optional[SimResult] = None
    bounds: Optional[dict] = None
    extras: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.output_dir / self.files[name]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    """Stage bookkeeping: writes files, and a partial manifest if a stage fails."""

    def __init__(self, cfg: ExperimentConfig, output_dir):
        self.cfg = cfg
        out = os.environ.get(OUTPUT_DIR_ENV) or output_dir or cfg.output_dir
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = {}
        self.stage = None

    def file(self, name: str, filename: str) -> Path:
        self.files[name] = filename
        return self.dir / filename

    def manifest(self, status: str, extra=None) -> dict:
        entries = {name: {"file": fn, "sha256": _sha256(self.dir / fn)}
                   for name, fn in sorted(self.files.items())}
        man = {"status": status, "kind": self.cfg.kind, "seed": self.cfg.seed,
               "files": entries,
               "versions": {"rkhspe": __version__, "numpy": np.__version__,
                            "scipy": scipy.__version__, "python": platform.python_version()}}
        if extra:
            man.update(extra)
        (self.dir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return man

    def run_stage(self, name, fn, *args, **kw):
        self.stage = name
        try:
            return fn(*args, **kw)
        except RkhsPeError as exc:
            self.manifest("failed", {"failed_stage": name, "error": str(exc)})
            raise type(exc)(f"stage '{name}' failed: {exc}") from exc


def _alpha_init(value, n: int) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    if a.size != n:
        raise InputError(f"alpha0 has {a.size} entries for {n} centers")
    return a.ravel()


def _estimator_config(cfg: ExperimentConfig, phi: float) -> EstimatorConfig:
    e = cfg.estimator
    return EstimatorConfig(gamma=e.gamma, Q=e.Q, mode=e.mode, phi=phi, lambda_A=e.lambda_A,
                           use_measured_drift=e.use_measured_drift, P=e.P)


def run_experiment(cfg: ExperimentConfig, output_dir=None, alpha_star=None) -> OutputBundle:
    """Full pipeline: plant-only run, limit cycle, centers, PE certificate,
    adaptive simulation, error grid, bounds, manifest."""
    run = _Run(cfg, output_dir)
    kernel = run.run_stage("config", lambda: KernelSpec(cfg.kernel.length_scale, cfg.kernel.family))
    t_nom = nominal_period(cfg)
    dt = cfg.integration.dt_s or t_nom / 2000.0
    transient = cfg.integration.transient_time_s
    x0 = np.asarray(cfg.plant.x0, dtype=float)

    # 1. plant alone, limit cycle and centers (with the plant's own nonlinearity)
    nominal = run.run_stage("plant", build_plant, cfg)
    horizon = transient + cfg.integration.cycle_periods * t_nom
    traj = run.run_stage("plant", integrate_plant, nominal, x0, horizon, dt)
    period = run.run_stage("limit_cycle", detect_period, traj, transient)
    loop = run.run_stage("limit_cycle", extract_limit_cycle, traj, transient,
                         cfg.integration.resample_n, period)
    if cfg.centers.source == "file":
        pts, _ = run.run_stage("centers", read_points_csv, cfg.centers.file)
        centers = run.run_stage("centers", lambda: CenterSet(pts).validate_distinct())
    else:
        centers = run.run_stage("centers", lambda: CenterSet(loop.equispaced(int(cfg.centers.count))))

    # 2. unknown function (finite-dimensional case replaces it by a kernel expansion)
    if cfg.kind == "finite_dim":
        if alpha_star is None:
            alpha_star = cfg.alpha_star
        if alpha_star is None:
            rng = np.random.default_rng(cfg.seed)
            alpha_star = cfg.alpha_star_scale * rng.standard_normal(centers.n)
        alpha_star = run.run_stage("config", _alpha_init, alpha_star, centers.n)
        f_true = RkhsFunction(centers, alpha_star, kernel)
        plant = run.run_stage("plant", build_plant, cfg, f_true)
        traj = run.run_stage("plant", integrate_plant, plant, x0, horizon, dt)
    else:
        plant, alpha_star = nominal, None

    post = traj.after(transient)
    model = loop if cfg.pe.model == "loop" else ManifoldModel.ambient()
    run_traj = run.file("trajectory", "trajectory.csv")
    traj.to_csv(run_traj)
    loop.to_csv(run.file("limit_cycle", "limit_cycle.csv"))
    write_points_csv(run.file("centers", "centers.csv"), centers.points)

    # 3. PE certificate
    pe_cfg = run.run_stage("pe_check", PeConfig,
                           window_len=cfg.pe.window_len_s or 2.0 * period.t_p,
                           start_time=cfg.pe.start_time_s if cfg.pe.start_time_s is not None else transient,
                           epsilon=cfg.pe.epsilon, dwell_floor=cfg.pe.dwell_floor_s,
                           eig_safety=cfg.pe.eig_safety, n_mc=cfg.pe.n_mc, seed=cfg.seed)
    cert = run.run_stage("pe_check", check_sufficient_condition, traj, centers, kernel, model, pe_cfg)
    run.file("certificate", "certificate.json").write_text(cert.to_json() + "\n")

    # 4. residual v_n = f - P f along the orbit, dead-zone width
    S = gram(kernel, centers)
    proj = project(np.asarray(plant.f_true(centers.points), dtype=float), S)
    vn = complementary_values(plant.f_true, proj, post.states)
    vn_sup = sup_norm_estimate(vn)
    norm_B = float(np.linalg.norm(plant.B))
    phi = 0.0
    if cfg.estimator.mode == DEAD_ZONE:
        if cfg.estimator.phi == "auto":
            if not cfg.estimator.lambda_A:
                raise InputError("automatic phi needs lambda_A")
            phi = cfg.estimator.phi_margin * norm_B * vn_sup / cfg.estimator.lambda_A
        else:
            phi = float(cfg.estimator.phi)

    # 5. adaptive simulation
    est = run.run_stage("simulate", _estimator_config, cfg, phi)
    x_hat0 = np.asarray(cfg.estimator.x_hat0 if cfg.estimator.x_hat0 is not None else x0, dtype=float)
    alpha0 = run.run_stage("simulate", _alpha_init, cfg.estimator.alpha0, centers.n)
    sim = run.run_stage("simulate", simulate, plant, est, kernel, centers, x0, x_hat0, alpha0,
                        cfg.integration.t_end_s, dt, alpha_star=alpha_star,
                        record_every=cfg.integration.record_every)
    sim.series_csv(run.file("sim_series", "sim_series.csv"))
    sim.alpha_csv(run.file("sim_alpha", "sim_alpha.csv"))
    write_points_csv(run.file("coefficients", "coefficients.csv"), centers.points,
                     sim.alpha_hat[-1])

    # 6. error grid
    bounds = cfg.grid.bounds or auto_grid_bounds(post.states, cfg.grid.inflate)
    f_hat = RkhsFunction(centers, sim.alpha_hat[-1], kernel)
    grid = run.run_stage("grid", pointwise_error_grid, plant.f_true, f_hat,
                         {"bounds": bounds, "resolution": cfg.grid.resolution})
    grid.to_csv(run.file("error_grid", "error_grid.csv"))

    # 7. bounds
    report = run.run_stage("bounds", _bounds, cfg, plant, est, S, centers, model, loop,
                           post, vn, vn_sup, norm_B)
    if report is not None:
        run.file("bounds", "bounds.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    run.file("config", "config.json").write_text(cfg.to_json() + "\n")
    man = run.manifest("ok", {"period_s": period.t_p, "period_confidence": period.confidence,
                              "dt_s": dt, "verdict": cert.verdict})
    return OutputBundle(run.dir, dict(run.files), man, cert, sim, report,
                        extras={"period": period, "loop": loop, "centers": centers,
                                "trajectory": traj, "grid": grid, "plant": plant,
                                "kernel": kernel, "vn_sup": vn_sup, "alpha_star": alpha_star})


def _bounds(cfg, plant, est, S, centers, model, loop, post, vn, vn_sup, norm_B):
    lam_A = est.lambda_A
    if lam_A is None:
        A_err = plant.A
        if not is_hurwitz(A_err):
            return None
        lam_A = float(-np.max(np.linalg.eigvals(A_err).real))
    norm_A = float(np.linalg.norm(plant.A, 2))
    rep = ultimate_bounds(centers.n, norm_B, lam_A, float(S.max_eig), norm_A, vn_sup, cfg.pe.pe1)
    out = rep.to_dict()
    # Lipschitz constant of v_n along the cycle and coverage radius of the centers,
    # both sampled on the extracted loop vertices
    verts = loop.loop_points
    proj = project(np.asarray(plant.f_true(centers.points), dtype=float), S)
    vn_loop = complementary_values(plant.f_true, proj, verts)
    L = lipschitz_estimate(vn_loop, loop.cumulative_arclength[:len(verts)], loop.total_length)
    eta = fill_distance(model, centers, verts) if model.is_loop else \
        fill_distance(model, centers, post.states)
    out["lipschitz_L"] = L
    out["coverage_eta"] = eta
    if rep.c_check is not None:
        out["lipschitz_bound"] = lipschitz_bound(rep.c_check, L, eta)
    return out


def run_piezo_experiment(cfg: ExperimentConfig, output_dir=None) -> OutputBundle:
    if cfg.kind != "piezo":
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "kind": "piezo"})
    return run_experiment(cfg, output_dir)


def run_finite_dim_experiment(cfg: ExperimentConfig, alpha_star=None, output_dir=None) -> OutputBundle:
    if cfg.kind != "finite_dim":
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "kind": "finite_dim"})
    return run_experiment(cfg, output_dir, alpha_star=alpha_star)


def piezo_config(**overrides) -> ExperimentConfig:
    """Published parameters for the piezo oscillator run."""
    return ExperimentConfig.from_dict(overrides)


def circle_config(**overrides) -> ExperimentConfig:
    """Synthetic finite-dimensional setup: 5 centers on the unit circle."""
    base = {
        "kind": "finite_dim",
        "plant": {"kind": "circle", "radius": 1.0, "omega_rad_per_s": 2 * np.pi,
                  "mu_per_s": 2.0, "x0": [1.0, 0.0]},
        "kernel": {"length_scale": 1.0},
        "centers": {"source": "auto", "count": 5},
        "estimator": {"gamma": 0.002, "mode": "gradient", "lambda_A": None,
                      "use_measured_drift": False, "alpha0": 0.0, "x_hat0": None},
        "integration": {"t_end_s": 40.0, "cycle_periods": 6, "record_every": 10},
        "pe": {"model": "ambient"},
    }
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = {**base[k], **v}
        else:
            base[k] = v
    return ExperimentConfig.from_dict(base)
