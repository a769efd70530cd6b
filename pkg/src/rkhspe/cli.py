"""Command line interface.

Verbs::

    simulate   --config FILE [--output-dir DIR]
    pe-check   --trajectory FILE --centers FILE [--epsilon auto|VALUE] --model ambient|loop
    grid-error --config FILE --coeffs FILE [--output FILE]
    bounds     --params FILE

Exit status: 0 on success, 1 for input errors, 2 for numeric or analysis failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import AnalysisError, InputError, NumericError, RkhsPeError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _epsilon(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}")


def _load_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_simulate(args) -> int:
    from .experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig.from_json(args.config)
    bundle = run_experiment(cfg, args.output_dir)
    _emit({"output_dir": str(bundle.output_dir), "manifest": bundle.manifest})
    return EXIT_OK


def cmd_pe_check(args) -> int:
    from .experiment import read_points_csv
    from .kernel_core import CenterSet, KernelSpec
    from .manifold_geom import ManifoldModel, Trajectory, detect_period, extract_limit_cycle
    from .pe_analysis import PeConfig, check_sufficient_condition

    traj = Trajectory.from_csv(args.trajectory)
    pts, _ = read_points_csv(args.centers)
    centers = CenterSet(pts).validate_distinct()
    if pts.shape[1] != traj.dim:
        raise InputError(f"centers are {pts.shape[1]}-dimensional, trajectory is {traj.dim}-dimensional")
    window = args.window_len
    if args.model == "loop" or window is None:
        period = detect_period(traj, args.transient)
        window = window or 2.0 * period.t_p
    model = (extract_limit_cycle(traj, args.transient, period=period) if args.model == "loop"
             else ManifoldModel.ambient())
    cfg = PeConfig(window_len=window,
                   start_time=args.start_time if args.start_time is not None else args.transient,
                   epsilon=args.epsilon, dwell_floor=args.dwell_floor, seed=args.seed)
    cert = check_sufficient_condition(traj, centers, KernelSpec(args.length_scale), model, cfg)
    print(cert.to_json())
    return EXIT_OK


def cmd_grid_error(args) -> int:
    from .adaptive_estimator import pointwise_error_grid
    from .experiment import (ExperimentConfig, auto_grid_bounds, build_plant, integrate_plant,
                             nominal_period, read_points_csv)
    from .kernel_core import CenterSet, KernelSpec, RkhsFunction

    cfg = ExperimentConfig.from_json(args.config)
    pts, coeffs = read_points_csv(args.coeffs, value_column=True)
    kernel = KernelSpec(cfg.kernel.length_scale, cfg.kernel.family)
    f_hat = RkhsFunction(CenterSet(pts), coeffs, kernel)
    if cfg.kind == "finite_dim":
        if cfg.alpha_star is None:
            raise InputError("grid-error on a finite_dim config needs alpha_star")
        plant = build_plant(cfg, RkhsFunction(CenterSet(pts), np.asarray(cfg.alpha_star), kernel))
    else:
        plant = build_plant(cfg)
    bounds = cfg.grid.bounds
    if bounds is None:
        t_nom = nominal_period(cfg)
        dt = cfg.integration.dt_s or t_nom / 2000.0
        horizon = cfg.integration.transient_time_s + cfg.integration.cycle_periods * t_nom
        traj = integrate_plant(plant, cfg.plant.x0, horizon, dt)
        bounds = auto_grid_bounds(traj.after(cfg.integration.transient_time_s).states,
                                  cfg.grid.inflate)
    grid = pointwise_error_grid(plant.f_true, f_hat,
                                {"bounds": bounds, "resolution": cfg.grid.resolution})
    out = args.output or "-"
    if out == "-":
        grid.to_csv(sys.stdout)
    else:
        grid.to_csv(out)
        _emit({"output": out, "max_error": float(np.max(grid.values)),
               "p95_error": float(np.percentile(grid.values, 95))})
    return EXIT_OK


def cmd_bounds(args) -> int:
    from .pe_analysis import lipschitz_bound, ultimate_bounds

    p = _load_json(args.params)
    required = ("n", "norm_B", "lambda_A", "lambda_bar", "norm_A", "vn_sup")
    missing = [k for k in required if k not in p]
    if missing:
        raise InputError(f"bounds parameters missing {missing}")
    try:
        vals = {k: float(p[k]) for k in required}
    except (TypeError, ValueError) as exc:
        raise InputError(f"bounds parameters must be numbers: {exc}") from exc
    pe1 = p.get("pe1")
    if pe1 is None and "gamma1" in p and "delta1" in p:
        pe1 = {"gamma1": p["gamma1"], "delta1": p["delta1"]}
    rep = ultimate_bounds(int(vals.pop("n")), pe1=pe1, **vals)
    out = rep.to_dict()
    if rep.c_check is not None and "L" in p and "eta" in p:
        out["lipschitz_bound"] = lipschitz_bound(rep.c_check, float(p["L"]), float(p["eta"]))
    _emit(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rkhspe", description="Adaptive kernel estimation along limit cycles.")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="run an experiment from a JSON config")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--output-dir", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pe-check", help="certify persistence of excitation for a trajectory")
    p.add_argument("--trajectory", required=True, help="CSV with columns t, x1..xd")
    p.add_argument("--centers", required=True, help="CSV with columns x1..xd")
    p.add_argument("--epsilon", type=_epsilon, default="auto", help="ball radius or 'auto'")
    p.add_argument("--model", required=True, choices=("ambient", "loop"),
                   help="distance model: Euclidean or arclength along the extracted loop")
    p.add_argument("--length-scale", type=float, default=0.005, help="kernel length scale")
    p.add_argument("--window-len", type=float, help="window length in seconds (default 2 periods)")
    p.add_argument("--start-time", type=float, help="first window start (default: transient)")
    p.add_argument("--transient", type=float, default=0.0, help="transient time to discard")
    p.add_argument("--dwell-floor", type=float, help="minimum dwell time (default 4 dt)")
    p.add_argument("--seed", type=int, default=0, help="Monte-Carlo seed")
    p.set_defaults(func=cmd_pe_check)

    p = sub.add_parser("grid-error", help="pointwise |f - f_hat| on a lattice")
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--coeffs", required=True, help="CSV with columns x1..xd, value")
    p.add_argument("--output", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_grid_error)

    p = sub.add_parser("bounds", help="ultimate bound constants from a parameter file")
    p.add_argument("--params", required=True, help="JSON with n, norm_B, lambda_A, lambda_bar, "
                                                   "norm_A, vn_sup and optional gamma1, delta1, L, eta")
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, AnalysisError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RkhsPeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except np.linalg.LinAlgError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
