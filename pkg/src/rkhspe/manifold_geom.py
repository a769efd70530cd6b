"""Trajectories, manifold distance models, limit-cycle extraction and fill distance.

Two distance models are supported. ``ambient_euclidean`` treats the state
space itself as the manifold. ``polyline_loop`` represents a closed
one-dimensional orbit by an arclength-parametrized closed polyline; points
are snapped to the loop and their distance is the shorter of the two arcs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import AnalysisError, DomainError, InputError

AMBIENT = "ambient_euclidean"
POLYLINE = "polyline_loop"

STEP_RATIO_LIMIT = 1.01
MIN_PERIOD_CONFIDENCE = 0.5
DEFAULT_RESAMPLE_N = 1024


@dataclass(eq=False)
class Trajectory:
    """Time-stamped ambient states; ``states[k]`` is the state at ``times[k]``."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        self.states = states
        if self.times.size < 2:
            raise InputError("trajectory needs at least two samples")
        if states.shape[0] != self.times.size:
            raise InputError(f"{self.times.size} times but {states.shape[0]} states")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(states))):
            raise InputError("trajectory contains non-finite values")
        if np.any(np.diff(self.times) <= 0):
            raise InputError("trajectory times must be strictly increasing")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> float:
        return float(np.mean(np.diff(self.times)))

    @property
    def span(self):
        return float(self.times[0]), float(self.times[-1])

    def step_ratio(self) -> float:
        steps = np.diff(self.times)
        return float(steps.max() / steps.min())

    def require_uniform(self):
        if self.step_ratio() > STEP_RATIO_LIMIT:
            raise InputError(
                f"trajectory step is not near-uniform (max/min = {self.step_ratio():.4f})")
        return self

    def after(self, t0: float) -> "Trajectory":
        mask = self.times >= t0
        if mask.sum() < 2:
            raise InputError(f"no trajectory samples after t = {t0}")
        return Trajectory(self.times[mask], self.states[mask])

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the state at time ``t``."""
        return np.array([np.interp(t, self.times, self.states[:, j]) for j in range(self.dim)])

    def to_csv(self, path):
        write_trajectory_csv(path, self)

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        return read_trajectory_csv(path)


def read_trajectory_csv(path) -> Trajectory:
    """Read rows ``t, x_1, ..., x_d``; a non-numeric first row is taken as a header."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"trajectory file not found: {path}")
    rows = _read_numeric_rows(path)
    data = np.array(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] < 2:
        raise InputError(f"{path}: expected columns t, x1, ..., xd")
    return Trajectory(data[:, 0], data[:, 1:])


def write_trajectory_csv(path, traj: Trajectory):
    header = ["t"] + [f"x{j + 1}" for j in range(traj.dim)]
    _write_rows(path, header, np.column_stack([traj.times, traj.states]))


def _read_numeric_rows(path: Path):
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if i == 0 and not rows:
                    continue
                raise InputError(f"{path}: non-numeric value on line {i + 1}")
    if not rows:
        raise InputError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"{path}: ragged rows")
    return rows


def _write_rows(path, header, data):
    """Write CSV to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_csv(path, header, data)
        return
    with open(path, "w", newline="") as fh:
        _write_csv(fh, header, data)


def _write_csv(fh, header, data):
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(header)
    for row in np.atleast_2d(data):
        w.writerow([repr(float(v)) for v in row])


@dataclass(eq=False)
class ManifoldModel:
    kind: str = AMBIENT
    loop_points: Optional[np.ndarray] = None
    cumulative_arclength: Optional[np.ndarray] = None
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (AMBIENT, POLYLINE):
            raise InputError(f"unknown manifold kind {self.kind!r}")
        if self.kind == AMBIENT:
            return
        pts = np.asarray(self.loop_points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 3:
            raise InputError("polyline loop needs at least 3 points")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        # drop an explicit closing point that duplicates the first one
        if np.linalg.norm(pts[-1] - pts[0]) <= 1e-9 * max(seg.sum(), 1e-300):
            pts = pts[:-1]
        closing = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closing, axis=0), axis=1)
        if np.any(seg <= 0):
            raise InputError("polyline loop has repeated consecutive points")
        self.loop_points = pts
        self.cumulative_arclength = np.concatenate([[0.0], np.cumsum(seg)])
        self._tree = cKDTree(pts)

    @classmethod
    def ambient(cls) -> "ManifoldModel":
        return cls(AMBIENT)

    @classmethod
    def polyline(cls, points) -> "ManifoldModel":
        return cls(POLYLINE, np.asarray(points, dtype=float))

    @property
    def is_loop(self) -> bool:
        return self.kind == POLYLINE

    @property
    def total_length(self) -> float:
        if not self.is_loop:
            return np.inf
        return float(self.cumulative_arclength[-1])

    @property
    def max_segment(self) -> float:
        return float(np.max(np.diff(self.cumulative_arclength)))

    @property
    def snap_tolerance(self) -> float:
        return 2.0 * self.max_segment if self.is_loop else np.inf

    # -- polyline machinery -------------------------------------------------
    def snap(self, points):
        """Project points onto the loop.

        Returns ``(s, off)``: arclength parameter in ``[0, L)`` and Euclidean
        distance from each point to the loop.
        """
        if not self.is_loop:
            raise InputError("snap is only defined for polyline loops")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        m = self.loop_points.shape[0]
        if pts.shape[1] != self.loop_points.shape[1]:
            raise InputError("point dimension does not match the loop")
        k = min(4, m)
        _, idx = self._tree.query(pts, k=k)
        idx = np.atleast_2d(idx).reshape(pts.shape[0], k)
        best_d = np.full(pts.shape[0], np.inf)
        best_s = np.zeros(pts.shape[0])
        cum = self.cumulative_arclength
        for col in range(k):
            j = idx[:, col]
            for start in (j, (j - 1) % m):
                a = self.loop_points[start]
                b = self.loop_points[(start + 1) % m]
                ab = b - a
                seglen2 = np.einsum("ij,ij->i", ab, ab)
                u = np.clip(np.einsum("ij,ij->i", pts - a, ab) / seglen2, 0.0, 1.0)
                proj = a + u[:, None] * ab
                d = np.linalg.norm(pts - proj, axis=1)
                s = cum[start] + u * np.sqrt(seglen2)
                better = d < best_d
                best_d[better] = d[better]
                best_s[better] = s[better]
        return np.mod(best_s, self.total_length), best_d

    def arclength_params(self, points, strict=True):
        """Arclength parameters; off-loop points raise (strict) or map to NaN."""
        s, off = self.snap(points)
        bad = off > self.snap_tolerance
        if np.any(bad):
            if strict:
                raise DomainError(
                    f"point at distance {off[bad].max():.3e} from the loop exceeds the snap "
                    f"tolerance {self.snap_tolerance:.3e}")
            s = s.copy()
            s[bad] = np.nan
        return s

    def point_at(self, s) -> np.ndarray:
        """Loop points at arclength parameters ``s`` (taken modulo the length)."""
        s = np.mod(np.atleast_1d(np.asarray(s, dtype=float)), self.total_length)
        closing = np.vstack([self.loop_points, self.loop_points[:1]])
        return np.column_stack([np.interp(s, self.cumulative_arclength, closing[:, j])
                                for j in range(closing.shape[1])])

    def equispaced(self, count: int, offset: float = 0.0) -> np.ndarray:
        """``count`` points equispaced in arclength, starting at ``offset``."""
        if count < 1:
            raise InputError("count must be >= 1")
        return self.point_at(offset + self.total_length * np.arange(count) / count)

    def arc_distance(self, s1, s2):
        arc = np.abs(np.asarray(s1) - np.asarray(s2))
        return np.minimum(arc, self.total_length - arc)

    def distance_to_loop(self, points) -> np.ndarray:
        """Euclidean distance from points to the loop (no snap limit)."""
        return self.snap(points)[1]

    # -- distances ---------------------------------------------------------
    def pairwise(self, P, Q, strict=True) -> np.ndarray:
        """Distance matrix ``D[i, j] = d_M(P[i], Q[j])``.

        With ``strict=False`` pairs involving an off-manifold point get
        ``inf`` instead of raising.
        """
        P = np.atleast_2d(np.asarray(P, dtype=float))
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if P.shape[1] != Q.shape[1]:
            raise InputError("dimension mismatch")
        if not self.is_loop:
            diff = P[:, None, :] - Q[None, :, :]
            return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        sp = self.arclength_params(P, strict)
        sq = self.arclength_params(Q, strict)
        D = self.arc_distance(sp[:, None], sq[None, :])
        return np.where(np.isnan(D), np.inf, D)

    def to_csv(self, path):
        if not self.is_loop:
            raise InputError("only polyline loops can be exported")
        header = [f"x{j + 1}" for j in range(self.loop_points.shape[1])]
        _write_rows(path, header, self.loop_points)

    @classmethod
    def from_csv(cls, path) -> "ManifoldModel":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"loop file not found: {path}")
        return cls.polyline(np.array(_read_numeric_rows(path)))


def distance(model: ManifoldModel, x, y) -> float:
    """Manifold distance between two points."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise InputError("dimension mismatch")
    return float(model.pairwise(x[None], y[None])[0, 0])


@dataclass(frozen=True)
class PeriodEstimate:
    t_p: float
    confidence: float


def _normalized_autocorrelation(x: np.ndarray, max_lag: int) -> np.ndarray:
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    raw = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    sq = np.concatenate([[0.0], np.cumsum(x * x)])
    lags = np.arange(max_lag + 1)
    head = sq[n - lags]           # sum_{i < n-k} x_i^2
    tail = sq[n] - sq[lags]       # sum_{i >= k} x_i^2
    with np.errstate(invalid="ignore", divide="ignore"):
        r = raw / np.sqrt(head * tail)
    return np.nan_to_num(r)


def detect_period(traj: Trajectory, transient_time: float = 0.0) -> PeriodEstimate:
    """Period from the autocorrelation of the first state coordinate.

    The normalized autocorrelation is searched over lags up to a third of the
    post-transient span, past its first zero crossing; the earliest peak within
    10% of the best one is refined by parabolic interpolation.
    """
    seg = traj.after(transient_time).require_uniform()
    x = seg.states[:, 0] - seg.states[:, 0].mean()
    if np.max(np.abs(x)) <= 1e-12 * max(1.0, np.max(np.abs(seg.states[:, 0]))):
        raise AnalysisError("first state coordinate is constant: no period")
    max_lag = x.size // 3
    if max_lag < 4:
        raise AnalysisError("post-transient segment too short for period detection")
    r = _normalized_autocorrelation(x, max_lag)
    negative = np.nonzero(r[1:] < 0)[0]
    if negative.size == 0:
        raise AnalysisError("autocorrelation never crosses zero: no period")
    start = negative[0] + 1
    inner = np.arange(max(start, 1), max_lag)
    peaks = inner[(r[inner] >= r[inner - 1]) & (r[inner] >= r[inner + 1])]
    if peaks.size == 0:
        raise AnalysisError("no autocorrelation peak: no period")
    best = r[peaks].max()
    k = int(peaks[np.nonzero(r[peaks] >= 0.9 * best)[0][0]])
    denom = r[k - 1] - 2 * r[k] + r[k + 1]
    offset = 0.5 * (r[k - 1] - r[k + 1]) / denom if denom < 0 else 0.0
    height = r[k] - 0.25 * (r[k - 1] - r[k + 1]) * offset
    confidence = float(np.clip(height, 0.0, 1.0))
    if confidence < MIN_PERIOD_CONFIDENCE:
        raise AnalysisError(f"autocorrelation peak {confidence:.3f} below {MIN_PERIOD_CONFIDENCE}")
    return PeriodEstimate(t_p=float((k + offset) * seg.dt), confidence=confidence)


def extract_limit_cycle(traj: Trajectory, transient_time: float = 0.0,
                        resample_n: int = DEFAULT_RESAMPLE_N,
                        period: Optional[PeriodEstimate] = None) -> ManifoldModel:
    """Closed polyline through one detected period of the post-transient orbit,
    resampled to ``resample_n`` points uniform in arclength."""
    if resample_n < 3:
        raise InputError("resample_n must be >= 3")
    period = period or detect_period(traj, transient_time)
    seg = traj.after(transient_time)
    t0 = seg.times[0]
    t1 = t0 + period.t_p
    if t1 > seg.times[-1]:
        raise AnalysisError("trajectory shorter than one detected period")
    inside = seg.times < t1
    pts = np.vstack([seg.states[inside], seg.state_at(t1)[None, :]])
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], steps > 0])
    pts = pts[keep]
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    length = cum[-1]
    if length <= 0:
        raise AnalysisError("degenerate orbit: zero arclength")
    gap = np.linalg.norm(pts[-1] - pts[0])
    if gap > 0.01 * length:
        raise AnalysisError(f"orbit does not close: gap {gap:.3e} vs length {length:.3e}")
    # close exactly: the final point is the first point, so the last segment
    # absorbs the small period-estimate gap
    pts[-1] = pts[0]
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    s = cum[-1] * np.arange(resample_n) / resample_n
    loop = np.column_stack([np.interp(s, cum, pts[:, j]) for j in range(pts.shape[1])])
    return ManifoldModel.polyline(loop)


def fill_distance(model: ManifoldModel, centers, probe_points) -> float:
    """``max_probe min_center d_M(center, probe)``."""
    C = np.atleast_2d(np.asarray(getattr(centers, "points", centers), dtype=float))
    if C.size == 0:
        raise InputError("fill distance needs at least one center")
    probes = np.atleast_2d(np.asarray(probe_points, dtype=float))
    if probes.size == 0:
        raise InputError("fill distance needs probe points")
    best = np.full(probes.shape[0], np.inf)
    for start in range(0, probes.shape[0], 4096):
        block = probes[start:start + 4096]
        best[start:start + 4096] = model.pairwise(block, C).min(axis=1)
    return float(best.max())


def excursion_report(model: ManifoldModel, traj: Trajectory) -> dict:
    """How many trajectory samples lie beyond the snap tolerance of the loop."""
    if not model.is_loop:
        return {"off_manifold_samples": 0, "max_offset": 0.0}
    off = model.distance_to_loop(traj.states)
    return {"off_manifold_samples": int(np.sum(off > model.snap_tolerance)),
            "max_offset": float(off.max())}
