"""Kernels, Gram matrices and finite kernel expansions.

A function in the span of the kernel sections at the centers
``x_1, ..., x_n`` is stored by its coefficient vector ``alpha``::

    g(x) = sum_i alpha_i R(x_i, x)

and its native-space norm is ``sqrt(alpha^T S alpha)`` with ``S`` the Gram
matrix of the centers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import InputError, NumericError

SQRT3 = np.sqrt(3.0)

KERNEL_FAMILIES = ("sobolev_matern_3_2",)

# Gram conditioning: jitter factors tried in order when the matrix is
# numerically singular relative to its largest eigenvalue.
JITTER_STEPS = (1e-10, 1e-8)
COND_THRESHOLD = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus length scale ``l`` (ambient coordinate units)."""

    length_scale: float
    family: str = "sobolev_matern_3_2"

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise InputError(f"unknown kernel family {self.family!r}")
        if not np.isfinite(self.length_scale) or self.length_scale <= 0:
            raise InputError(f"length_scale must be positive, got {self.length_scale}")

    def profile(self, r):
        """Kernel value as a function of the distance ``r >= 0``."""
        u = SQRT3 * np.asarray(r, dtype=float) / self.length_scale
        return (1.0 + u) * np.exp(-u)

    def matrix(self, X, Y):
        """``K[i, j] = R(X[i], Y[j])`` for point arrays of shape (m, d), (k, d)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[1] != Y.shape[1]:
            raise InputError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        diff = X[:, None, :] - Y[None, :, :]
        return self.profile(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))

    def to_dict(self):
        return {"family": self.family, "length_scale": self.length_scale}


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Evaluate ``R(x, y) = (1 + sqrt(3) r / l) exp(-sqrt(3) r / l)``, ``r = |x - y|``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise InputError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(spec.profile(np.linalg.norm(x - y)))


@dataclass(frozen=True, eq=False)
class CenterSet:
    """Ordered kernel centers, one ambient point per row."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InputError("center set must be a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise InputError("center coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def min_separation(self) -> float:
        """Smallest pairwise Euclidean distance (inf for a single center)."""
        if self.n < 2:
            return np.inf
        diff = self.points[:, None, :] - self.points[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return float(d[np.triu_indices(self.n, 1)].min())

    def validate_distinct(self):
        if self.min_separation() <= 0:
            raise InputError("kernel centers must be pairwise distinct")
        return self


@dataclass(eq=False)
class GramMatrix:
    """Kernel matrix between two center sets.

    ``entries`` always holds raw kernel values. In the square symmetric case
    the matrix is checked for conditioning; ``jitter`` records the diagonal
    shift applied before factorization, and ``min_eig`` / ``max_eig`` are the
    eigenvalues of the shifted (effective) matrix.
    """

    entries: np.ndarray
    kernel: KernelSpec
    rows: CenterSet
    cols: CenterSet
    symmetric: bool
    min_eig: Optional[float] = None
    max_eig: Optional[float] = None
    raw_min_eig: Optional[float] = None
    jitter: float = 0.0
    _factor: Optional[tuple] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def effective(self) -> np.ndarray:
        if self.jitter == 0.0:
            return self.entries
        return self.entries + self.jitter * np.eye(self.n)

    @property
    def factor(self):
        if not self.symmetric:
            raise InputError("only square symmetric Gram matrices can be factored")
        if self._factor is None:
            try:
                self._factor = cho_factor(self.effective, lower=True, check_finite=False)
            except LinAlgError as exc:
                raise NumericError(f"Gram matrix is not positive definite: {exc}") from exc
        return self._factor

    def solve(self, rhs) -> np.ndarray:
        """Solve ``S a = rhs`` with the Cholesky factor (never an explicit inverse)."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise InputError(f"right-hand side has length {rhs.shape[0]}, expected {self.n}")
        return cho_solve(self.factor, rhs, check_finite=False)


def _condition(entries: np.ndarray):
    eig = np.linalg.eigvalsh(entries)
    raw_min, raw_max = float(eig[0]), float(eig[-1])
    jitter = 0.0
    lo, hi = raw_min, raw_max
    if lo <= COND_THRESHOLD * hi:
        scale = np.trace(entries) / entries.shape[0]
        for delta in JITTER_STEPS:
            jitter = delta * scale
            eig = np.linalg.eigvalsh(entries + jitter * np.eye(entries.shape[0]))
            lo, hi = float(eig[0]), float(eig[-1])
            if lo > COND_THRESHOLD * hi:
                break
        else:
            raise NumericError(f"Gram matrix singular after jitter (min eig {lo:.3e})")
    return raw_min, lo, hi, jitter


def gram(spec: KernelSpec, rows: CenterSet, cols: Optional[CenterSet] = None) -> GramMatrix:
    """Build ``S[i, j] = R(cols[j], rows[i])``.

    With ``cols`` omitted (or identical to ``rows``) the result is the square
    symmetric Gram matrix of ``rows``; it is exactly symmetrized, eigen-solved
    and, if numerically singular, conditioned with a small diagonal jitter.
    """
    if not isinstance(rows, CenterSet):
        rows = CenterSet(rows)
    square = cols is None or cols is rows
    if cols is None:
        cols = rows
    elif not isinstance(cols, CenterSet):
        cols = CenterSet(cols)
    entries = spec.matrix(rows.points, cols.points)
    if not np.all(np.isfinite(entries)):
        raise NumericError("non-finite kernel value in Gram matrix")
    if not square:
        return GramMatrix(entries, spec, rows, cols, symmetric=False)
    entries = 0.5 * (entries + entries.T)
    raw_min, lo, hi, jitter = _condition(entries)
    return GramMatrix(entries, spec, rows, cols, symmetric=True,
                      min_eig=lo, max_eig=hi, raw_min_eig=raw_min, jitter=jitter)


@dataclass(eq=False)
class RkhsFunction:
    """Finite kernel expansion ``g(x) = sum_i alpha_i R(x_i, x)``."""

    centers: CenterSet
    coefficients: np.ndarray
    kernel: KernelSpec

    def __post_init__(self):
        if not isinstance(self.centers, CenterSet):
            self.centers = CenterSet(self.centers)
        self.coefficients = np.asarray(self.coefficients, dtype=float).ravel()
        if self.coefficients.shape[0] != self.centers.n:
            raise InputError(
                f"{self.coefficients.shape[0]} coefficients for {self.centers.n} centers")

    def sections(self, x) -> np.ndarray:
        """Kernel sections ``R(x_c, x)``: shape (n,) for one point, (m, n) for many."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.kernel.matrix(x[None, :], self.centers.points)[0]
        return self.kernel.matrix(x, self.centers.points)

    def __call__(self, x):
        vals = self.sections(x) @ self.coefficients
        return float(vals) if np.ndim(vals) == 0 else vals

    def with_coefficients(self, alpha) -> "RkhsFunction":
        return RkhsFunction(self.centers, alpha, self.kernel)


def rkhs_norm(f: RkhsFunction, S: GramMatrix) -> float:
    """Native-space norm ``sqrt(alpha^T S alpha)``."""
    if not S.symmetric or S.n != f.centers.n:
        raise InputError("Gram matrix must be the square Gram matrix of the function's centers")
    a = f.coefficients
    q = float(a @ S.entries @ a)
    tol = 1e-12 * max(S.max_eig, 1.0) * float(a @ a)
    if q < -tol:
        raise NumericError(f"negative quadratic form {q:.3e}: Gram matrix not SPD")
    return float(np.sqrt(max(q, 0.0)))


def project(f_values_at_centers, S: GramMatrix) -> RkhsFunction:
    """Interpolant in the center span matching the given values at the centers."""
    values = np.asarray(f_values_at_centers, dtype=float).ravel()
    if not S.symmetric:
        raise InputError("projection needs the square Gram matrix of the centers")
    alpha = S.solve(values)
    if not np.all(np.isfinite(alpha)):
        raise NumericError("projection produced non-finite coefficients")
    return RkhsFunction(S.rows, alpha, S.kernel)


def complementary_values(f: Callable, proj: RkhsFunction, points) -> np.ndarray:
    """Residual ``v_n(p) = f(p) - (P f)(p)`` at each query point.

    ``f`` must accept an (m, d) array and return m values.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.asarray(f(pts), dtype=float).ravel() - np.atleast_1d(proj(pts))


def sup_norm_estimate(values) -> float:
    """Sampled uniform norm: ``max |v|``."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise InputError("sup_norm_estimate needs at least one value")
    return float(np.max(np.abs(v)))
