"""The nonlinear dashed-line model on a finite window.

State layout used by the array kernels: a flat vector
``y = [omega_{n_min}, ..., omega_{n_max}, omega_p]``.  Modes outside the
window are treated as zero (hard cutoff).

Per mode the right-hand side is

    d/dt omega_n = e_{n-1} A_{n-1} omega_p omega_{n-1} - e_{n+1} A_{n+1} omega_p omega_{n+1}
    d/dt omega_p = - sum_n e_n e_{n-1} A_{n-1,n} omega_{n-1} omega_n

with gates ``e_n = eps`` on ``n = 0 mod 5`` and 1 elsewhere.  No term
carries two gates, so the field splits exactly as ``f + eps g``.

The module also has a generic Galerkin truncation of 2D Euler in kinetic
form on an arbitrary mode set closed under ``k -> -k``
(:func:`box_euler_rhs`), used as a background reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from .coefficients import (CoefficientTable, ModeIndex, as_mode, default_table,
                           interaction_coefficient, line_arrays)
from .numerics import GridSpec, NonFiniteError, rk4


@dataclass
class ModelState:
    """Amplitudes ``omega_n`` for ``n`` in ``window`` plus ``omega_p``."""

    window: Tuple[int, int]
    omega: np.ndarray
    omega_p: float

    def __post_init__(self):
        self.window = (int(self.window[0]), int(self.window[1]))
        self.omega = np.asarray(self.omega, dtype=float)
        if self.omega.shape != (self.window[1] - self.window[0] + 1,):
            raise ValueError("omega length does not match the window")
        self.omega_p = float(self.omega_p)
        if not (np.all(np.isfinite(self.omega)) and np.isfinite(self.omega_p)):
            raise ValueError("state amplitudes must be finite")

    @classmethod
    def zeros(cls, window, omega_p: float = 0.0) -> "ModelState":
        return cls(window, np.zeros(window[1] - window[0] + 1), omega_p)

    @classmethod
    def from_mapping(cls, window, amplitudes: Dict[int, float], omega_p: float) -> "ModelState":
        s = cls.zeros(window, omega_p)
        for n, v in amplitudes.items():
            s.omega[s.index(n)] = v
        return s

    @classmethod
    def from_vector(cls, window, y) -> "ModelState":
        y = np.asarray(y, dtype=float)
        return cls(window, y[:-1].copy(), float(y[-1]))

    def index(self, n: int) -> int:
        if not self.window[0] <= n <= self.window[1]:
            raise KeyError(f"mode {n} outside window {self.window}")
        return n - self.window[0]

    def amplitude(self, n: int) -> float:
        return float(self.omega[self.index(n)]) if self.window[0] <= n <= self.window[1] else 0.0

    def as_vector(self) -> np.ndarray:
        return np.append(self.omega, self.omega_p)

    @property
    def modes(self) -> range:
        return range(self.window[0], self.window[1] + 1)


@dataclass(frozen=True)
class _Coeffs:
    """Float coefficient arrays for the array kernels.

    ``lo[i]`` multiplies ``omega_p omega_{n-1}`` in row ``n``, ``hi[i]``
    multiplies ``omega_p omega_{n+1}``; ``pair[i]`` multiplies
    ``omega_{n-1} omega_n`` for the ``i``-th adjacent in-window pair.
    """

    lo: np.ndarray
    hi: np.ndarray
    pair: np.ndarray


@dataclass(frozen=True)
class ModelConfig:
    table: CoefficientTable
    eps: float
    window: Tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "window", (int(self.window[0]), int(self.window[1])))
        if self.window[1] < self.window[0]:
            raise ValueError("empty window")
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps!r}")

    @classmethod
    def default(cls, eps: float = 0.0, window=(-10, 15)) -> "ModelConfig":
        return cls(default_table(min(window[0], -10), max(window[1], 15)), eps, window)

    @property
    def size(self) -> int:
        return self.window[1] - self.window[0] + 1

    @cached_property
    def _line(self):
        return line_arrays(self.table, *self.window)

    @cached_property
    def gated(self) -> np.ndarray:
        """Boolean mask of dashed positions ``n = 0 mod 5`` in the window."""
        return np.arange(self.window[0], self.window[1] + 1) % 5 == 0

    @cached_property
    def split_coeffs(self) -> Tuple[_Coeffs, _Coeffs]:
        """Coefficient arrays of the ungated part ``f`` and the gated part ``g``."""
        a, pair, _ = self._line
        g = self.gated.astype(float)
        # row n: lo uses A_{n-1} gated by n-1, hi uses A_{n+1} gated by n+1
        lo_a = np.concatenate([[0.0], a[:-1]])
        hi_a = np.concatenate([a[1:], [0.0]])
        lo_g = np.concatenate([[0.0], g[:-1]])
        hi_g = np.concatenate([g[1:], [0.0]])
        pair_g = np.maximum(g[:-1], g[1:])   # exactly one member gated, never two
        f = _Coeffs(lo_a * (1 - lo_g), hi_a * (1 - hi_g), pair * (1 - pair_g))
        gg = _Coeffs(lo_a * lo_g, hi_a * hi_g, pair * pair_g)
        return f, gg

    @cached_property
    def inverse_norm2(self) -> np.ndarray:
        return 1.0 / self._line[2]

    @property
    def p_norm2(self) -> int:
        return self.table.config.p.norm2

    def gates(self, eps=None) -> np.ndarray:
        eps = self.eps if eps is None else eps
        return np.where(self.gated, eps, 1.0)


def _terms(c: _Coeffs, y):
    """Raw products ``(T_lo, T_hi, T_pair)`` for states ``y[..., K+1]``."""
    w = y[..., :-1]
    wp = y[..., -1:]
    lo = np.zeros_like(w)
    hi = np.zeros_like(w)
    lo[..., 1:] = c.lo[1:] * (wp * w[..., :-1])
    hi[..., :-1] = c.hi[:-1] * (wp * w[..., 1:])
    pr = c.pair * (w[..., :-1] * w[..., 1:])
    return lo, hi, pr


def rhs_array(config: ModelConfig, y, eps=None):
    """Vectorized right-hand side on flat states ``y[..., K+1]``.

    Accepts leading batch axes and complex input (``eps`` may be complex
    too), which the generic Taylor oracle exploits.
    """
    eps = config.eps if eps is None else eps
    y = np.asarray(y)
    f, g = config.split_coeffs
    lo_f, hi_f, pr_f = _terms(f, y)
    lo_g, hi_g, pr_g = _terms(g, y)
    out = np.empty(np.broadcast_shapes(y.shape), dtype=np.result_type(y, eps, float))
    # one gated operand per row: e*T_lo - T_hi or T_lo - e*T_hi
    out[..., :-1] = (lo_f + eps * lo_g) - (hi_f + eps * hi_g)
    out[..., -1] = -(np.sum(pr_f, axis=-1) + eps * np.sum(pr_g, axis=-1))
    return out


def fast_rhs(config: ModelConfig, eps=None):
    """Lean single-state kernel ``rhs(t, y)`` with gates folded into the coefficients.

    Agrees with :func:`rhs_array` to rounding; used by the integrators.
    """
    eps = config.eps if eps is None else eps
    f, g = config.split_coeffs
    lo = (f.lo + eps * g.lo)[1:]
    hi = (f.hi + eps * g.hi)[:-1]
    pair = f.pair + eps * g.pair

    def rhs(_t, y):
        w = y[:-1]
        out = np.empty_like(y)
        d = out[:-1]
        d[0] = 0.0
        np.multiply(lo, w[:-1], out=d[1:])
        d[:-1] -= hi * w[1:]
        d *= y[-1]
        out[-1] = -np.dot(pair, w[:-1] * w[1:])
        return out

    return rhs


def split_array(config: ModelConfig, y):
    """``(f(y), g(y))`` on flat states."""
    y = np.asarray(y)
    parts = []
    for c in config.split_coeffs:
        lo, hi, pr = _terms(c, y)
        out = np.empty(y.shape, dtype=np.result_type(y, float))
        out[..., :-1] = lo - hi
        out[..., -1] = -np.sum(pr, axis=-1)
        parts.append(out)
    return tuple(parts)


def _check(state: ModelState, config: ModelConfig):
    if state.window != config.window:
        raise ValueError(f"state window {state.window} != config window {config.window}")


def dashed_rhs(state: ModelState, config: ModelConfig) -> ModelState:
    """Time derivative of ``state`` (returned in ModelState form)."""
    _check(state, config)
    return ModelState.from_vector(config.window, rhs_array(config, state.as_vector()))


def rhs_split(state: ModelState, config: ModelConfig) -> Tuple[ModelState, ModelState]:
    """Exact split ``dashed_rhs = f + eps g`` (f ungated terms, g gated terms)."""
    _check(state, config)
    f, g = split_array(config, state.as_vector())
    return ModelState.from_vector(config.window, f), ModelState.from_vector(config.window, g)


def jacobian_array(config: ModelConfig, y, eps=None) -> np.ndarray:
    """Dense Jacobian of the quadratic field at the flat state ``y``.

    Because the field is quadratic, the central difference with unit step
    is exact: ``J e_i = (F(y + e_i) - F(y - e_i)) / 2``.
    """
    y = np.asarray(y, dtype=float)
    eye = np.eye(y.size)
    return 0.5 * (rhs_array(config, y + eye, eps) - rhs_array(config, y - eye, eps)).T


def conserved_array(config: ModelConfig, y, eps=None):
    """``(H~, J~2)`` for flat states ``y[..., K+1]``."""
    e = config.gates(eps)
    w = y[..., :-1]
    wp = y[..., -1]
    h = 0.5 * (np.sum(e * config.inverse_norm2 * w * w, axis=-1) + wp * wp / config.p_norm2)
    j2 = wp * wp + np.sum(e * w * w, axis=-1)
    return h, j2


def conserved_gradients(config: ModelConfig, y, eps=None):
    """Gradients of ``(H~, J~2)`` on flat states."""
    e = config.gates(eps)
    y = np.asarray(y, dtype=float)
    gh = np.empty_like(y)
    gj = np.empty_like(y)
    gh[..., :-1] = e * config.inverse_norm2 * y[..., :-1]
    gh[..., -1] = y[..., -1] / config.p_norm2
    gj[..., :-1] = 2 * e * y[..., :-1]
    gj[..., -1] = 2 * y[..., -1]
    return gh, gj


def conserved_quantities(state: ModelState, config: ModelConfig) -> Tuple[float, float]:
    """Energy ``H~`` and enstrophy ``J~2`` of a state."""
    _check(state, config)
    h, j2 = conserved_array(config, state.as_vector())
    return float(h), float(j2)


def fixed_point(config: ModelConfig, gamma: float) -> ModelState:
    """The fixed point ``omega_p = Γ``, all ``omega_n = 0``."""
    return ModelState.zeros(config.window, gamma)


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray = field(repr=False)   # (n_samples, K+1) flat states
    window: Tuple[int, int]
    energy: np.ndarray = field(repr=False)
    enstrophy: np.ndarray = field(repr=False)

    @property
    def omega_p(self) -> np.ndarray:
        return self.states[:, -1]

    def mode(self, n: int) -> np.ndarray:
        return self.states[:, n - self.window[0]]

    def state(self, i: int) -> ModelState:
        return ModelState.from_vector(self.window, self.states[i])

    def relative_drift(self) -> Tuple[float, float]:
        """Max relative deviation of ``(H~, J~2)`` from their initial values."""
        def rel(q):
            scale = max(abs(q[0]), np.finfo(float).tiny)
            return float(np.max(np.abs(q - q[0])) / scale)
        return rel(self.energy), rel(self.enstrophy)

    def boundary_amplitudes(self) -> Tuple[float, float]:
        """Max ``|omega|`` reached by the two window-edge modes."""
        return float(np.max(np.abs(self.states[:, 0]))), float(np.max(np.abs(self.states[:, -2])))


def integrate(state0: ModelState, config: ModelConfig, dt: float, steps: int,
              t0: float = 0.0, record_every: int = 1) -> Trajectory:
    """Fixed-step RK4 trajectory with per-sample invariants.

    Raises :class:`NonFiniteError` (with the step index) if the state blows up.
    """
    _check(state0, config)
    if not dt > 0:
        raise ValueError("dt must be positive")
    steps = int(steps)
    if steps < 0:
        raise ValueError("steps must be non-negative")
    record_every = max(1, int(record_every))
    grid = GridSpec(t0, t0 + steps * dt, dt)
    rhs = fast_rhs(config)

    if record_every == 1:
        ys = rk4(rhs, state0.as_vector(), grid)
        ts = grid.times()
    else:
        ys, ts = _integrate_strided(rhs, state0.as_vector(), grid, record_every)
    h, j2 = conserved_array(config, ys)
    return Trajectory(ts, ys, config.window, h, j2)


def _integrate_strided(rhs, y0, grid: GridSpec, every: int):
    y = np.array(y0, dtype=float)
    dt = grid.dt
    keep_y, keep_t = [y.copy()], [grid.t_min]
    for k in range(grid.n_steps):
        t = grid.t_min + k * dt
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteError(k + 1, t + dt)
        if (k + 1) % every == 0 or k + 1 == grid.n_steps:
            keep_y.append(y.copy())
            keep_t.append(grid.t_min + (k + 1) * dt)
    return np.array(keep_y), np.array(keep_t)


# ---------------------------------------------------------------------------
# generic kinetic-form Galerkin truncation

def box_modes(radius: int) -> list:
    """Symmetric square box ``|k1|, |k2| <= radius`` without the zero mode."""
    return [ModeIndex(a, b) for a in range(-radius, radius + 1)
            for b in range(-radius, radius + 1) if (a, b) != (0, 0)]


class KineticTruncation:
    """Triad table of ``d/dt omega_k = sum_{p+q=k} A(p,q) omega_p omega_q``.

    ``modes`` must be closed under ``k -> -k``; sums run over ordered
    pairs ``(p, q)`` with both members in the set.
    """

    def __init__(self, modes: Iterable):
        self.modes = [as_mode(m) for m in modes]
        self.index = {m: i for i, m in enumerate(self.modes)}
        if len(self.index) != len(self.modes):
            raise ValueError("duplicate modes")
        for m in self.modes:
            if m.is_zero():
                raise ValueError("the zero mode cannot be part of the truncation")
            if -m not in self.index:
                raise ValueError(f"mode set is not closed under k -> -k (missing {-m})")
        ik, ip, iq, coef = [], [], [], []
        for k, i in self.index.items():
            for p, j in self.index.items():
                q = k - p
                l = self.index.get(q)
                if l is None:
                    continue
                a = interaction_coefficient(p, q)
                if a:
                    ik.append(i); ip.append(j); iq.append(l); coef.append(float(a))
        self._ik = np.array(ik, dtype=int)
        self._ip = np.array(ip, dtype=int)
        self._iq = np.array(iq, dtype=int)
        self._coef = np.array(coef)
        self.inverse_norm2 = np.array([1.0 / m.norm2 for m in self.modes])

    def rhs(self, amplitudes):
        w = np.asarray(amplitudes)
        out = np.zeros(w.shape, dtype=np.result_type(w, float))
        np.add.at(out, self._ik, self._coef * w[self._ip] * w[self._iq])
        return out

    def mirror_index(self) -> np.ndarray:
        return np.array([self.index[-m] for m in self.modes])

    def energy(self, amplitudes) -> float:
        w = np.asarray(amplitudes)
        return float(0.5 * np.sum(self.inverse_norm2 * np.abs(w) ** 2))

    def enstrophy(self, amplitudes) -> float:
        w = np.asarray(amplitudes)
        return float(np.sum(np.abs(w) ** 2))


def box_euler_rhs(modes: Sequence, amplitudes) -> np.ndarray:
    """Kinetic-form 2D Euler right-hand side on a symmetric mode set."""
    return KineticTruncation(modes).rhs(amplitudes)
