"""Plant / estimator / learning-law simulation.

Plant::

    x' = A x + h(x) + B f(x)

with ``h`` an optional known drift (zero by default). Estimator::

    xh' = A xh + h(x) + B fh(x)                          (standard)
    xh' = A x + h(x) + lambda_A (x - xh) + B fh(x)       (measured drift)

with ``fh = sum_i alpha_i R(x_i, .)``, and learning law::

    alpha' = S^-1 Gamma^-1 R(x_c, x) B^T P xt            (gradient)
    alpha' = S^-1 Gamma^-1 R(x_c, x) B^T xt_D            (dead zone)

where ``xt = x - xh`` and ``xt_D = xt - phi * sat(xt / phi)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import get_lapack_funcs

from .errors import InputError, NumericError
from .kernel_core import CenterSet, GramMatrix, KernelSpec, RkhsFunction, gram
from .manifold_geom import Trajectory, _write_rows

GRADIENT = "gradient"
DEAD_ZONE = "dead_zone"
BLOWUP_NORM = 1e12
KINK_SUBSTEPS = 64          # dead-zone steps that cross the zone boundary


def is_hurwitz(A) -> bool:
    return bool(np.all(np.linalg.eigvals(np.asarray(A, dtype=float)).real < 0))


@dataclass(eq=False)
class PlantModel:
    """``x' = A x + h(x) + B f_true(x)``.

    ``f_true`` maps a (d,) state to a float and an (m, d) array to m values.
    ``state_scaling`` records the coordinate scaling already folded into
    ``A`` and ``f_true``. A non-Hurwitz ``A`` raises unless ``strict`` is off,
    in which case it only warns.
    """

    A: np.ndarray
    B: np.ndarray
    f_true: Callable
    state_scaling: float = 1.0
    known_drift: Optional[Callable] = None
    strict: bool = True

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).ravel()
        d = self.A.shape[0]
        if self.A.shape != (d, d) or self.B.shape != (d,):
            raise InputError(f"A must be d x d and B length d (got {self.A.shape}, {self.B.shape})")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise InputError("A and B must be finite")
        if not self.state_scaling > 0:
            raise InputError("state_scaling must be positive")
        if not is_hurwitz(self.A):
            msg = "plant matrix A is not Hurwitz"
            if self.strict:
                raise InputError(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    def drift(self, x):
        out = self.A @ x + self.B * self.f_true(x)
        if self.known_drift is not None:
            out = out + self.known_drift(x)
        return out


@dataclass
class EstimatorConfig:
    gamma: float
    Q: Optional[np.ndarray] = None          # identity when omitted
    mode: str = GRADIENT
    phi: float = 0.0
    lambda_A: Optional[float] = None
    use_measured_drift: bool = False
    P: Optional[np.ndarray] = None          # overrides the Lyapunov solve

    def __post_init__(self):
        if not self.gamma > 0:
            raise InputError("gamma must be positive")
        if self.mode not in (GRADIENT, DEAD_ZONE):
            raise InputError(f"unknown estimator mode {self.mode!r}")
        if self.Q is not None:
            Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
            if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() <= 0:
                raise InputError("Q must be symmetric positive definite")
            self.Q = Q
        if self.mode == DEAD_ZONE:
            if self.phi < 0:
                raise InputError("phi must be nonnegative")
            if self.lambda_A is None or not self.lambda_A > 0:
                raise InputError("dead-zone mode needs lambda_A > 0")
        if self.use_measured_drift and (self.lambda_A is None or not self.lambda_A > 0):
            raise InputError("the measured-drift estimator needs lambda_A > 0")
        if self.P is not None:
            self.P = np.atleast_2d(np.asarray(self.P, dtype=float))

    def to_dict(self):
        return {"gamma": self.gamma, "mode": self.mode, "phi": self.phi,
                "lambda_A": self.lambda_A, "use_measured_drift": self.use_measured_drift,
                "Q": None if self.Q is None else self.Q.tolist(),
                "P": None if self.P is None else self.P.tolist()}


def solve_lyapunov(A, Q) -> np.ndarray:
    """Solve ``A^T P + P A = -Q`` through the Kronecker-vectorized linear system."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d) or Q.shape != (d, d):
        raise InputError("A and Q must be square and of equal size")
    if d > 10:
        raise InputError("vectorized Lyapunov solve is limited to d <= 10")
    if not is_hurwitz(A):
        raise NumericError("A is not Hurwitz: Lyapunov operator singular or P indefinite")
    eye = np.eye(d)
    # column-major vec: vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P
    L = np.kron(eye, A.T) + np.kron(A.T, eye)
    rhs = -Q.reshape(-1, order="F")
    try:
        vecP = np.linalg.solve(L, rhs)
        # one step of iterative refinement
        vecP += np.linalg.solve(L, rhs - L @ vecP)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular Lyapunov operator: {exc}") from exc
    P = vecP.reshape(d, d, order="F")
    return 0.5 * (P + P.T)


def lyapunov_residual(A, P, Q) -> float:
    A, P, Q = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, P, Q))
    return float(np.linalg.norm(A.T @ P + P @ A + Q, "fro"))


def saturation(x, phi: float) -> np.ndarray:
    """Coordinatewise ``x_i / phi`` clipped to ``[-1, 1]``.

    Large negative coordinates saturate at -1 (odd convention), so that
    ``phi * saturation(x, phi)`` always opposes ``x``.
    """
    if not phi > 0:
        raise InputError("saturation needs phi > 0")
    return np.clip(np.asarray(x, dtype=float) / phi, -1.0, 1.0)


def dead_zone_error(x_tilde, phi: float) -> np.ndarray:
    """``x - phi * saturation(x, phi)``; exactly zero where ``|x_i| <= phi``."""
    x = np.asarray(x_tilde, dtype=float)
    if phi < 0:
        raise InputError("phi must be nonnegative")
    if phi == 0:
        return x.copy()
    return np.where(np.abs(x) <= phi, 0.0, x - phi * np.sign(x))


@dataclass
class SimState:
    t: float
    x: np.ndarray
    x_hat: np.ndarray
    alpha_hat: np.ndarray

    def pack(self) -> np.ndarray:
        return np.concatenate([self.x, self.x_hat, self.alpha_hat])

    @classmethod
    def unpack(cls, t, z, d) -> "SimState":
        return cls(t, z[:d].copy(), z[d:2 * d].copy(), z[2 * d:].copy())


class CoupledSystem:
    """Right-hand side of the (2d + n)-dimensional plant/estimator/law system."""

    def __init__(self, plant: PlantModel, est: EstimatorConfig, kernel: KernelSpec,
                 centers: CenterSet, S: Optional[GramMatrix] = None,
                 P: Optional[np.ndarray] = None):
        if not isinstance(centers, CenterSet):
            centers = CenterSet(centers)
        if centers.ambient_dim != plant.d:
            raise InputError("center dimension does not match the plant state")
        self.plant, self.est, self.kernel, self.centers = plant, est, kernel, centers
        self.S = S if S is not None else gram(kernel, centers)
        self.P = resolve_P(plant, est) if P is None else np.atleast_2d(np.asarray(P, dtype=float))
        self.d, self.n = plant.d, centers.n
        self._C = centers.points
        c, lower = self.S.factor
        self._potrs = get_lapack_funcs("potrs", (c,))
        self._c, self._lower = c, lower
        self._BtP = plant.B @ self.P
        self._scale = np.sqrt(3.0) / kernel.length_scale

    def solve_S(self, v):
        sol, info = self._potrs(self._c, v, lower=self._lower)
        if info != 0:
            raise NumericError("Gram solve failed")
        return sol

    def sections(self, x):
        u = self._scale * np.sqrt(((self._C - x) ** 2).sum(axis=1))
        return (1.0 + u) * np.exp(-u)

    def learning_signal(self, x_tilde) -> float:
        """Scalar ``B^T P xt`` (gradient) or ``B^T xt_D`` (dead zone)."""
        if self.est.mode == GRADIENT:
            return float(self._BtP @ x_tilde)
        return float(self.plant.B @ dead_zone_error(x_tilde, self.est.phi))

    def __call__(self, z):
        d = self.d
        plant, est = self.plant, self.est
        x, xh, a = z[:d], z[d:2 * d], z[2 * d:]
        k = self.sections(x)
        fhat = k @ a
        xt = x - xh
        out = np.empty_like(z)
        fx = plant.f_true(x)
        hx = plant.known_drift(x) if plant.known_drift is not None else 0.0
        Ax = plant.A @ x
        out[:d] = Ax + hx + plant.B * fx
        if est.use_measured_drift:
            out[d:2 * d] = Ax + hx + est.lambda_A * xt + plant.B * fhat
        else:
            out[d:2 * d] = plant.A @ xh + hx + plant.B * fhat
        signal = self.learning_signal(xt)
        if signal == 0.0:
            out[2 * d:] = 0.0
        else:
            out[2 * d:] = self.solve_S(k) * (signal / est.gamma)
        return out


def error_matrix(plant: PlantModel, est: EstimatorConfig) -> np.ndarray:
    """Matrix governing the state-error dynamics."""
    if est.use_measured_drift:
        return -est.lambda_A * np.eye(plant.d)
    return plant.A


def resolve_P(plant: PlantModel, est: EstimatorConfig) -> np.ndarray:
    """Weight matrix of the learning law.

    An explicit ``est.P`` wins. The dead-zone law has no ``P`` (identity).
    Otherwise ``P`` solves the Lyapunov equation of the error matrix; if that
    matrix is not Hurwitz the identity is used with a warning.
    """
    if est.P is not None:
        return est.P
    d = plant.d
    if est.mode == DEAD_ZONE:
        return np.eye(d)
    Q = est.Q if est.Q is not None else np.eye(d)
    try:
        return solve_lyapunov(error_matrix(plant, est), Q)
    except NumericError:
        warnings.warn("error dynamics not Hurwitz; using P = I", RuntimeWarning, stacklevel=2)
        return np.eye(d)


def coupled_rhs(state: SimState, plant: PlantModel, est: EstimatorConfig, kernel: KernelSpec,
                centers: CenterSet, S: GramMatrix, P) -> SimState:
    """Time derivative of a :class:`SimState` (convenience wrapper around
    :class:`CoupledSystem`)."""
    system = CoupledSystem(plant, est, kernel, centers, S=S, P=P)
    dz = system(state.pack())
    if not np.all(np.isfinite(dz)):
        raise NumericError(f"non-finite derivative at t = {state.t}")
    return SimState.unpack(state.t, dz, plant.d)


@dataclass(eq=False)
class SimResult:
    times: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    alpha_hat: np.ndarray
    state_error_norm: np.ndarray
    coeff_error_norm: np.ndarray
    lyapunov_V: np.ndarray
    reference_alpha: np.ndarray
    reference_kind: str                     # "exact" or "projection"
    config_echo: dict = field(default_factory=dict)

    def state(self, k: int) -> SimState:
        return SimState(float(self.times[k]), self.x[k], self.x_hat[k], self.alpha_hat[k])

    def final_estimate(self, kernel: KernelSpec, centers: CenterSet) -> RkhsFunction:
        return RkhsFunction(centers, self.alpha_hat[-1], kernel)

    def series_csv(self, path):
        d = self.x.shape[1]
        header = (["t"] + [f"x{j + 1}" for j in range(d)] + [f"xhat{j + 1}" for j in range(d)]
                  + ["state_error_norm", "coeff_error_norm", "V"])
        _write_rows(path, header, np.column_stack(
            [self.times, self.x, self.x_hat, self.state_error_norm,
             self.coeff_error_norm, self.lyapunov_V]))

    def alpha_csv(self, path):
        n = self.alpha_hat.shape[1]
        _write_rows(path, ["t"] + [f"alpha{i + 1}" for i in range(n)],
                    np.column_stack([self.times, self.alpha_hat]))


def _rk4_step(system, z, h, h2):
    k1 = system(z)
    k2 = system(z + h2 * k1)
    k3 = system(z + h2 * k2)
    k4 = system(z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_plant(plant: PlantModel, x0, t_end: float, dt: float) -> Trajectory:
    """Fixed-step RK4 integration of the plant alone (same stepping as :func:`simulate`)."""
    if not dt > 0 or not t_end >= dt:
        raise InputError("need dt > 0 and t_end >= dt")
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != plant.d or not np.all(np.isfinite(x)):
        raise InputError("initial state must be finite and match the plant dimension")
    steps = int(round(t_end / dt))
    h = t_end / steps
    X = np.empty((steps + 1, plant.d))
    X[0] = x
    for i in range(1, steps + 1):
        x = _rk4_step(plant.drift, x, h, 0.5 * h)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_NORM:
            raise NumericError(f"plant integration blew up at t = {i * h:.6g}")
        X[i] = x
    return Trajectory(h * np.arange(steps + 1), X)


def _crosses_dead_zone(z0, z1, d, phi) -> bool:
    a = np.abs(z0[:d] - z0[d:2 * d]) > phi
    b = np.abs(z1[:d] - z1[d:2 * d]) > phi
    return bool(np.any(a != b))


def simulate(plant: PlantModel, est: EstimatorConfig, kernel: KernelSpec, centers,
             x0, x_hat0, alpha0, t_end: float, dt: float,
             alpha_star=None, record_every: int = 1, P=None) -> SimResult:
    """Classical fixed-step RK4 integration of the coupled system.

    Every ``record_every``-th step is recorded, plus the final one. In
    dead-zone mode a step whose endpoints lie on different sides of the zone
    boundary is recomputed with ``KINK_SUBSTEPS`` substeps, since the law is
    not smooth there.

    ``alpha_star`` is the exact coefficient vector when the unknown function
    lies in the center span; otherwise the projection coefficients
    ``S^-1 f(x_c)`` are used as reference (``reference_kind = "projection"``).
    The Lyapunov series is ``V = xt_D^T W xt_D + Gamma at^T S at`` with
    ``at = alpha_ref - alpha_hat`` and ``W = P`` (gradient) or ``I`` (dead zone).
    """
    if not isinstance(centers, CenterSet):
        centers = CenterSet(centers)
    if not dt > 0 or not t_end >= dt:
        raise InputError("need dt > 0 and t_end >= dt")
    if record_every < 1:
        raise InputError("record_every must be >= 1")
    d, n = plant.d, centers.n
    x0, x_hat0, alpha0 = (np.asarray(v, dtype=float).ravel() for v in (x0, x_hat0, alpha0))
    if x0.size != d or x_hat0.size != d or alpha0.size != n:
        raise InputError("initial state dimensions do not match plant/centers")
    z = np.concatenate([x0, x_hat0, alpha0])
    if not np.all(np.isfinite(z)):
        raise InputError("initial state must be finite")

    system = CoupledSystem(plant, est, kernel, centers, P=P)
    S = system.S
    if alpha_star is None:
        ref = S.solve(np.asarray(plant.f_true(centers.points), dtype=float))
        ref_kind = "projection"
    else:
        ref = np.asarray(alpha_star, dtype=float).ravel()
        ref_kind = "exact"

    steps = int(round(t_end / dt))
    n_rec = steps // record_every + 1 + (steps % record_every != 0)
    Z = np.empty((n_rec, z.size))
    T = np.empty(n_rec)
    Z[0], T[0] = z, 0.0
    # nudge the step so the run ends exactly at t_end
    h = t_end / steps
    h2 = 0.5 * h
    rec = 1
    dead_zone = est.mode == DEAD_ZONE
    for i in range(1, steps + 1):
        z_new = _rk4_step(system, z, h, h2)
        if dead_zone and _crosses_dead_zone(z, z_new, d, est.phi):
            # the law switches inside this step: resolve the kink with substeps
            hs = h / KINK_SUBSTEPS
            z_new = z
            for _ in range(KINK_SUBSTEPS):
                z_new = _rk4_step(system, z_new, hs, 0.5 * hs)
        z = z_new
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > BLOWUP_NORM:
            raise NumericError(f"integration blew up at t = {i * h:.6g}")
        if i % record_every == 0 or i == steps:
            Z[rec], T[rec] = z, i * h
            rec += 1
    Z, T = Z[:rec], T[:rec]

    X, XH, AL = Z[:, :d], Z[:, d:2 * d], Z[:, 2 * d:]
    xt = X - XH
    if est.mode == DEAD_ZONE:
        xd = dead_zone_error(xt, est.phi)
        W = np.eye(d)
    else:
        xd = xt
        W = system.P
    at = ref[None, :] - AL
    V = (np.einsum("ki,ij,kj->k", xd, W, xd)
         + est.gamma * np.einsum("ki,ij,kj->k", at, S.entries, at))
    echo = {"estimator": est.to_dict(), "kernel": kernel.to_dict(), "dt": h, "t_end": t_end,
            "record_every": record_every, "P": system.P.tolist(), "reference_kind": ref_kind}
    return SimResult(T, X, XH, AL, np.linalg.norm(xt, axis=1), np.linalg.norm(at, axis=1),
                     V, ref, ref_kind, echo)


@dataclass(eq=False)
class GridField:
    points: np.ndarray        # (m, d), row-major lattice order
    values: np.ndarray        # (m,)
    shape: tuple

    def to_csv(self, path):
        header = [f"x{j + 1}" for j in range(self.points.shape[1])] + ["error"]
        _write_rows(path, header, np.column_stack([self.points, self.values]))


def lattice(bounds, resolution) -> tuple:
    """Row-major lattice points for per-axis ``bounds`` and ``resolution``."""
    bounds = np.asarray(bounds, dtype=float)
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (bounds.shape[0],))
    if np.any(res < 1) or np.any(bounds[:, 1] < bounds[:, 0]):
        raise InputError("invalid grid bounds or resolution")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh]), tuple(int(r) for r in res)


def pointwise_error_grid(f_true: Callable, f_hat: RkhsFunction, grid) -> GridField:
    """``|f_true(p) - f_hat(p)|`` on a lattice ``grid = {"bounds": ..., "resolution": ...}``."""
    pts, shape = lattice(grid["bounds"], grid["resolution"])
    err = np.abs(np.asarray(f_true(pts), dtype=float).ravel() - np.atleast_1d(f_hat(pts)))
    return GridField(pts, err, shape)
