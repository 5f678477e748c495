"""Shared numerical kernels: uniform grids, RK4, trapezoid, dense eigensolves.

Everything here is deterministic: the same inputs produce bit-identical
outputs.  The eigensolver delegates to LAPACK (``scipy.linalg.eig``) and
then enforces an explicit residual contract on every returned pair.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

GRID_TOL = 1e-9
EIG_RESIDUAL_TOL = 1e-10


class NonFiniteError(FloatingPointError):
    """A state became non-finite during time integration."""

    def __init__(self, step: int, t: float):
        super().__init__(f"non-finite state at step {step} (t = {t!r})")
        self.step = step
        self.t = t


class EigenSolverError(RuntimeError):
    """Eigensolver failed or violated the residual contract.

    ``partial`` carries whatever was computed (eigenvalues, residuals).
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid ``t_min, t_min + dt, ..., t_max``."""

    t_min: float
    t_max: float
    dt: float

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt!r}")
        if self.t_max < self.t_min:
            raise ValueError("t_max < t_min")
        ratio = (self.t_max - self.t_min) / self.dt
        if abs(ratio - round(ratio)) > GRID_TOL * max(1.0, abs(ratio)):
            raise ValueError(
                f"(t_max - t_min)/dt = {ratio!r} is not an integer within {GRID_TOL}"
            )

    @property
    def n_steps(self) -> int:
        return int(round((self.t_max - self.t_min) / self.dt))

    def times(self) -> np.ndarray:
        return self.t_min + self.dt * np.arange(self.n_steps + 1)

    def halved(self) -> "GridSpec":
        return GridSpec(self.t_min, self.t_max, self.dt / 2)

    @classmethod
    def centered(cls, center: float, half_width: float, dt: float) -> "GridSpec":
        """Symmetric grid ``center ± half_width`` with an even step count.

        ``dt`` is shrunk (never enlarged) so the step count is an even
        integer; the center is then itself a grid point.
        """
        n = 2 * max(1, math.ceil(half_width / dt - 1e-12))
        return cls(center - half_width, center + half_width, 2.0 * half_width / n)


def rk4(rhs: Callable[[float, np.ndarray], np.ndarray], y0, grid: GridSpec,
        post_step: Optional[Callable[[int, float, np.ndarray], np.ndarray]] = None,
        check_every: int = 1) -> np.ndarray:
    """Classical four-stage Runge-Kutta on a uniform grid.

    Returns the trajectory sampled at every grid point, shape
    ``(n_steps + 1,) + y0.shape``.  Stage times are always computed as
    ``t_k + dt/2`` and ``t_k + dt`` with ``t_k = t_min + k dt`` so callers
    may tabulate coefficients on the half-step grid.

    ``post_step(k, t, y)`` (optional) may replace the state after step
    ``k`` (landing at time ``t``); it is used for subspace projections.
    """
    y = np.array(y0, dtype=float if np.isrealobj(y0) else complex, copy=True)
    n = grid.n_steps
    dt = grid.dt
    h2 = 0.5 * dt
    out = np.empty((n + 1,) + y.shape, dtype=y.dtype)
    out[0] = y
    if not np.all(np.isfinite(y)):
        raise NonFiniteError(0, grid.t_min)
    for k in range(n):
        t = grid.t_min + k * dt
        k1 = rhs(t, y)
        k2 = rhs(t + h2, y + h2 * k1)
        k3 = rhs(t + h2, y + h2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t_next = grid.t_min + (k + 1) * dt
        if post_step is not None:
            y = post_step(k + 1, t_next, y)
        if (k + 1) % check_every == 0 and not np.all(np.isfinite(y)):
            raise NonFiniteError(k + 1, t_next)
        out[k + 1] = y
    if not np.all(np.isfinite(y)):
        raise NonFiniteError(n, grid.t_max)
    return out


def trapezoid(samples, dt: float, axis: int = 0) -> np.ndarray:
    """Composite trapezoid rule on uniformly spaced samples."""
    s = np.asarray(samples)
    if s.shape[axis] < 2:
        raise ValueError("trapezoid needs at least two samples")
    return np.trapezoid(s, dx=dt, axis=axis) if hasattr(np, "trapezoid") else np.trapz(s, dx=dt, axis=axis)


def cumulative_trapezoid(samples, dt: float) -> np.ndarray:
    """Running trapezoid integral, starting at 0 on the first sample."""
    s = np.asarray(samples)
    out = np.zeros_like(s, dtype=np.result_type(s, float))
    out[1:] = np.cumsum(0.5 * dt * (s[1:] + s[:-1]), axis=0)
    return out


@dataclass(frozen=True)
class EigResult:
    values: np.ndarray
    vectors: Optional[np.ndarray]
    residuals: np.ndarray
    matrix_norm: float


def dense_eig(matrix, vectors: bool = False, tol: float = EIG_RESIDUAL_TOL):
    """Eigenvalues (optionally eigenvectors) of a dense real square matrix.

    Every pair is checked against ``|M v - lam v| <= tol |M|`` (2-norms,
    unit eigenvectors).  A violation raises :class:`EigenSolverError`
    carrying the partial :class:`EigResult`.  Returns the eigenvalue
    array, or an :class:`EigResult` when ``vectors=True``.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.shape[0] == 0:
        empty = np.zeros(0, dtype=complex)
        return EigResult(empty, np.zeros((0, 0), complex), np.zeros(0), 0.0) if vectors else empty
    try:
        lam, vec = scipy.linalg.eig(m, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EigenSolverError(f"eigensolver did not converge: {exc}") from exc
    norm = float(np.linalg.norm(m, 2))
    vec = vec / np.linalg.norm(vec, axis=0, keepdims=True)
    res = np.linalg.norm(m @ vec - vec * lam[None, :], axis=0)
    bad = res > tol * max(norm, np.finfo(float).tiny)
    if norm > 0 and np.any(bad):
        # LAPACK balances before the QR sweep; with couplings many orders of
        # magnitude apart the back-transformed vectors can be useless even
        # though the eigenvalues are accurate.  Recover them by inverse
        # iteration at the computed eigenvalue.
        for k in np.flatnonzero(bad):
            vec[:, k] = _inverse_iteration(m, lam[k], norm)
        res = np.linalg.norm(m @ vec - vec * lam[None, :], axis=0)
        bad = res > tol * max(norm, np.finfo(float).tiny)
    result = EigResult(lam, vec, res, norm)
    if norm > 0 and np.any(bad):
        raise EigenSolverError(
            f"{int(bad.sum())} eigenpair(s) violate the residual contract "
            f"(max {res.max():.3e} > {tol:.1e} * |M| = {tol * norm:.3e})",
            partial=result,
        )
    return result if vectors else lam


def _inverse_iteration(m: np.ndarray, lam: complex, norm: float, steps: int = 3) -> np.ndarray:
    """Unit eigenvector estimate for ``lam`` (deterministic start vector)."""
    n = m.shape[0]
    shift = lam + 1e-13 * norm * (1 + 1j)
    lu = scipy.linalg.lu_factor(m - shift * np.eye(n), check_finite=False)
    x = np.random.default_rng(12345).standard_normal(n) + 0j
    for _ in range(steps):
        x = scipy.linalg.lu_solve(lu, x, check_finite=False)
        x /= np.linalg.norm(x)
    return x


def biquadratic_roots(a, b) -> np.ndarray:
    """Roots of ``lam^4 + a lam^2 + b = 0``.

    Solves the quadratic in ``s = lam^2`` with the cancellation-free
    pairing ``s1 = -(a + sign(a) sqrt(a^2 - 4b))/2``, ``s2 = b/s1``, then
    returns ``[+sqrt(s1), -sqrt(s1), +sqrt(s2), -sqrt(s2)]``.
    """
    a = complex(a)
    b = complex(b)
    disc = cmath.sqrt(a * a - 4 * b)
    # choose the sign that avoids cancellation
    if (a.conjugate() * disc).real >= 0:
        q = -0.5 * (a + disc)
    else:
        q = -0.5 * (a - disc)
    if q == 0:
        s1, s2 = 0j, -a
    else:
        s1 = q
        s2 = b / q
    r1, r2 = cmath.sqrt(s1), cmath.sqrt(s2)
    return np.array([r1, -r1, r2, -r2], dtype=complex)


def companion_biquadratic(a: float, b: float) -> np.ndarray:
    """Companion matrix of ``lam^4 + a lam^2 + b``."""
    c = np.zeros((4, 4))
    c[1:, :-1] = np.eye(3)
    c[:, -1] = [-b, 0.0, -a, 0.0]
    return c


def richardson(coarse: float, fine: float, order: int = 4) -> tuple[float, float]:
    """Richardson extrapolation of two values from steps ``h`` and ``h/2``.

    Returns ``(extrapolated, error_estimate)`` where the error estimate is
    the size of the correction ``|fine - coarse| / (2^order - 1)``.
    """
    corr = (fine - coarse) / (2 ** order - 1)
    return fine + corr, abs(corr)


def match_multisets(a, b) -> float:
    """Largest distance of an optimal one-to-one matching of two point sets."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, dtype=complex).ravel()
    b = np.asarray(b, dtype=complex).ravel()
    if a.size != b.size:
        raise ValueError("multisets differ in size")
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())
