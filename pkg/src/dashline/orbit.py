"""Closed-form heteroclinic orbits of the ε = 0 block ``1..4`` (plus ``omega_p``).

With ``tau = kappa Γ t + tau0`` the family is

    omega_p = Γ tanh(tau)
    r       = sqrt(A2 / (A2 - A1)) Γ sech(tau),        rho = sqrt(-A1/A2) r
    theta   = beta ln cosh(tau) + theta0,               beta = -A2/(2 kappa)
    vartheta = c_branch - theta
    (omega_1, omega_4) = r (cos theta, sin theta)
    (omega_2, omega_3) = rho (cos vartheta, sin vartheta)

and the passively driven neighbours ``omega_0``, ``omega_5`` are

    omega_0 = K sech(tau) (sin theta - cos theta / beta)
    omega_5 = K sech(tau) (cos theta + sin theta / beta),  K = alpha beta / (1 + beta^2)

with ``alpha = -A1 Γ / kappa sqrt(A2/(A2 - A1))``.  The rate ``kappa``
takes both signs; ``c_branch`` depends on the sign.

Block arrays returned by this module use the column order
``[omega_0, omega_1, ..., omega_5, omega_p]`` (see ``BLOCK_COLUMNS``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .coefficients import CoefficientTable, default_table, model_coefficient, pair_coefficient

BLOCK_COLUMNS = ("0", "1", "2", "3", "4", "5", "p")
LOG2 = math.log(2.0)


def lncosh(tau):
    """``ln cosh(tau)`` without overflow: ``|tau| + log1p(e^{-2|tau|}) - ln 2``."""
    a = np.abs(tau)
    return a + np.log1p(np.exp(-2.0 * a)) - LOG2


def sech(tau):
    a = np.abs(tau)
    e = np.exp(-a)
    return 2.0 * e / (1.0 + e * e)


@dataclass(frozen=True)
class OrbitConstants:
    """Coefficient-derived constants of the orbit family."""

    A0: float
    A1: float
    A2: float
    A5: float
    A12: float
    kappa_abs: float
    kappa_sq: Fraction
    amp_r: float          # sqrt(A2 / (A2 - A1))
    rho_ratio: float      # sqrt(-A1 / A2)
    phase_shift: float    # arcsin(1/2 sqrt(A2 / -A1))


@lru_cache(maxsize=32)
def _constants_cached(table: CoefficientTable) -> OrbitConstants:
    a = {n: model_coefficient(table, n) for n in range(0, 6)}
    if not (a[3] == a[2] and a[4] == a[1]):
        raise ValueError("closed-form orbit needs the mirror-symmetric block A3 = A2, A4 = A1")
    A1, A2 = a[1], a[2]
    if not (A1 < 0 < A2):
        raise ValueError("closed-form orbit needs A1 < 0 < A2")
    k2 = -A1 * A2 - A2 * A2 / 4          # κ² = -A1 A2 (1 + A2/(4 A1))
    if k2 <= 0:
        raise ValueError("kappa^2 <= 0: the block is not hyperbolic")
    s = 0.5 * math.sqrt(float(A2 / -A1))
    if s > 1:
        raise ValueError("phase constraint has no real solution")
    return OrbitConstants(
        A0=float(a[0]), A1=float(A1), A2=float(A2), A5=float(a[5]),
        A12=float(pair_coefficient(table, 1, 2)),
        kappa_abs=math.sqrt(float(k2)), kappa_sq=k2,
        amp_r=math.sqrt(float(A2 / (A2 - A1))), rho_ratio=math.sqrt(float(-A1 / A2)),
        phase_shift=math.asin(s),
    )


def orbit_constants(table: CoefficientTable | None = None) -> OrbitConstants:
    return _constants_cached(table or _default_table())


@lru_cache(maxsize=1)
def _default_table() -> CoefficientTable:
    return default_table(-20, 25)


@dataclass(frozen=True)
class OrbitParams:
    gamma: float = 1.0
    theta0: float = 0.0
    tau0: float = 0.0
    kappa_branch: int = 1
    table: CoefficientTable = field(default_factory=_default_table, compare=False, repr=False)

    def __post_init__(self):
        if self.kappa_branch not in (1, -1):
            raise ValueError("kappa_branch must be +1 or -1")
        if self.gamma == 0:
            raise ValueError("gamma must be nonzero for a heteroclinic orbit")

    @property
    def constants(self) -> OrbitConstants:
        return orbit_constants(self.table)

    @property
    def kappa(self) -> float:
        return self.kappa_branch * self.constants.kappa_abs

    @property
    def rate(self) -> float:
        """``d tau/dt = kappa Γ``."""
        return self.kappa * self.gamma

    @property
    def beta(self) -> float:
        return -self.constants.A2 / (2.0 * self.kappa)

    @property
    def alpha(self) -> float:
        c = self.constants
        return -c.A1 * self.gamma / self.kappa * c.amp_r

    @property
    def phase_sum(self) -> float:
        """The constant ``theta + vartheta`` of the branch."""
        c = self.constants
        return -c.phase_shift if self.kappa > 0 else math.pi + c.phase_shift

    @property
    def center_time(self) -> float:
        """Time of ``tau = 0`` (the turning point of the perversion)."""
        return -self.tau0 / self.rate

    def tau(self, t):
        return self.rate * np.asarray(t, dtype=float) + self.tau0

    def time_of_tau(self, tau):
        return (np.asarray(tau, dtype=float) - self.tau0) / self.rate

    def endpoints(self) -> dict:
        """``omega_p`` at ``t = -inf`` and ``t = +inf`` (all ``omega_n`` vanish)."""
        s = math.copysign(1.0, self.rate)
        return {"t=-inf": -s * self.gamma, "t=+inf": s * self.gamma}


@dataclass(frozen=True)
class OrbitPoint:
    t: np.ndarray
    tau: np.ndarray
    omega_p: np.ndarray
    omega_1: np.ndarray
    omega_2: np.ndarray
    omega_3: np.ndarray
    omega_4: np.ndarray
    omega_0: np.ndarray
    omega_5: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    vartheta: np.ndarray

    def block(self) -> np.ndarray:
        """Stacked ``[omega_0..omega_5, omega_p]`` along the last axis."""
        return np.stack([self.omega_0, self.omega_1, self.omega_2, self.omega_3,
                         self.omega_4, self.omega_5, self.omega_p], axis=-1)

    def inner(self) -> np.ndarray:
        """Stacked ``[omega_1, ..., omega_4]``."""
        return np.stack([self.omega_1, self.omega_2, self.omega_3, self.omega_4], axis=-1)


def orbit_point(params: OrbitParams, t) -> OrbitPoint:
    """Evaluate the orbit (scalar or array ``t``)."""
    c = params.constants
    t = np.asarray(t, dtype=float)
    tau = params.tau(t)
    sh = sech(tau)
    g = params.gamma
    beta = params.beta
    theta = beta * lncosh(tau) + params.theta0
    vartheta = params.phase_sum - theta
    r = c.amp_r * g * sh
    rho = c.rho_ratio * r
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    k = params.alpha * beta / (1.0 + beta * beta) * sh
    return OrbitPoint(
        t=t, tau=tau, omega_p=g * np.tanh(tau),
        omega_1=r * cos_t, omega_2=rho * np.cos(vartheta),
        omega_3=rho * np.sin(vartheta), omega_4=r * sin_t,
        omega_0=k * (sin_t - cos_t / beta), omega_5=k * (cos_t + sin_t / beta),
        r=r, rho=rho, theta=theta, vartheta=vartheta,
    )


def orbit_block(params: OrbitParams, t) -> np.ndarray:
    return orbit_point(params, t).block()


def orbit_time_derivative(params: OrbitParams, t) -> np.ndarray:
    """Analytic ``d/dt`` of the block array (closed-form differentiation)."""
    pt = orbit_point(params, t)
    th = np.tanh(pt.tau)
    b = params.beta
    rate = params.rate
    sh = sech(pt.tau)
    return rate * np.stack([
        th * (-pt.omega_0 + b * pt.omega_5),
        th * (-pt.omega_1 - b * pt.omega_4),
        th * (-pt.omega_2 + b * pt.omega_3),
        th * (-pt.omega_3 - b * pt.omega_2),
        th * (-pt.omega_4 + b * pt.omega_1),
        th * (-pt.omega_5 - b * pt.omega_0),
        params.gamma * sh * sh,
    ], axis=-1)


def orbit_tangents(params: OrbitParams, t) -> np.ndarray:
    """Family tangents ``d/dtau0`` and ``d/dtheta0`` of the block array.

    Returns shape ``t.shape + (2, 7)``.  Both are exact solutions of the
    variational equation along the orbit.
    """
    pt = orbit_point(params, t)
    d_tau0 = orbit_time_derivative(params, t) / params.rate
    zero = np.zeros_like(pt.omega_p)
    d_theta0 = np.stack([pt.omega_5, -pt.omega_4, pt.omega_3, -pt.omega_2,
                         pt.omega_1, -pt.omega_0, zero], axis=-1)
    return np.stack([d_tau0, d_theta0], axis=-2)


def orbit_invariants(point: OrbitPoint, table: CoefficientTable | None = None):
    """``(I, U, J, V)`` of the block state in ``point``."""
    c = orbit_constants(table)
    w1, w2, w3, w4, wp = point.omega_1, point.omega_2, point.omega_3, point.omega_4, point.omega_p
    cross_term = w1 * w3 + w2 * w4
    sq = w1 * w1 + w2 * w2 + w3 * w3 + w4 * w4
    i = 2.0 * c.A12 * cross_term + c.A2 * wp * wp
    u = c.A1 * (w1 * w1 + w4 * w4) + c.A2 * (w2 * w2 + w3 * w3)
    j = wp * wp + sq
    v = c.A2 * sq - 2.0 * c.A12 * cross_term
    return i, u, j, v


def block_rhs(params: OrbitParams, block) -> np.ndarray:
    """ε = 0 model right-hand side on the block ``[omega_0..omega_5, omega_p]``."""
    from .model import rhs_array

    cfg = _block_config(params.table)
    return rhs_array(cfg, np.asarray(block, dtype=float), 0.0)


@lru_cache(maxsize=8)
def _block_config(table: CoefficientTable):
    from .model import ModelConfig

    return ModelConfig(table, 0.0, (0, 5))


def orbit_residual(params: OrbitParams, t_grid) -> float:
    """Max-norm of (analytic derivative - block right-hand side) over ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float)
    blk = orbit_block(params, t_grid)
    return float(np.max(np.abs(orbit_time_derivative(params, t_grid) - block_rhs(params, blk))))
