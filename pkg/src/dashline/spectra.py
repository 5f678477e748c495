"""Linearized and homotopy spectra of the dashed-line model.

The linearization at the fixed point ``omega_p = Γ`` couples only nearest
neighbours on the class line.  The homotopy operator gates the couplings
through every fifth mode with ``eps``: at ``eps=0`` the line splits into
independent 4-mode blocks ``5j+1..5j+4``, at ``eps=1`` it is the full
tridiagonal operator.

Two coefficient conventions are available for the operator:

``"model"``  doubled coefficients ``A_n`` (the ones the nonlinear model uses)
``"raw"``    undoubled kinetic coefficients ``A_n / 2``

The raw operator is exactly half of the model operator, so its
eigenvalues are halved as well.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np

from .coefficients import (CoefficientTable, ModeIndex, WaveConfig, cross,
                           epsilon_factor, model_coefficient)
from .numerics import biquadratic_roots, dense_eig, match_multisets

# Reference eigenvalue of the full-line (eps = 1) operator in λ̃ = 2λ/|Γ| units.
ENDPOINT_EIGENVALUE = complex(0.24822302478255, 0.35172076526520)
BAND_TOL = 1e-6
CONVENTIONS = ("model", "raw")


@dataclass(frozen=True)
class DiskTestResult:
    intersects: bool
    witnesses: List[ModeIndex]
    positions: List[int] = field(default_factory=list)


def class_disk_intersects(config: WaveConfig, n_range: Sequence[int]) -> DiskTestResult:
    """Scan ``khat + n p`` for modes inside the closed disk of radius ``|p|``."""
    witnesses, positions = [], []
    r2 = config.p.norm2
    for n in n_range:
        k = config.mode(n)
        if not k.is_zero() and k.norm2 <= r2:
            witnesses.append(k)
            positions.append(n)
    return DiskTestResult(bool(witnesses), witnesses, positions)


@dataclass(frozen=True)
class LinearOperator:
    config: WaveConfig
    eps: float
    n_min: int
    n_max: int
    entries: np.ndarray = field(repr=False)
    gamma: float = 1.0
    convention: str = "model"

    @property
    def size(self) -> int:
        return self.n_max - self.n_min + 1


def _convention_scale(convention: str) -> Fraction:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    return Fraction(1) if convention == "model" else Fraction(1, 2)


def build_homotopy_operator(table: CoefficientTable, gamma: float, eps: float,
                            window: Tuple[int, int], convention: str = "model") -> LinearOperator:
    """Tridiagonal homotopy operator on ``window = (n_min, n_max)``.

    Entry ``(n, n-1) = eps_{n-1} A_{n-1} Γ`` and ``(n, n+1) = -eps_{n+1} A_{n+1} Γ``;
    neighbours outside the window are dropped (hard cutoff).
    """
    lo, hi = int(window[0]), int(window[1])
    if hi < lo:
        raise ValueError("empty window")
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps!r}")
    scale = float(_convention_scale(convention))
    ns = np.arange(lo, hi + 1)
    a = np.array([float(model_coefficient(table, int(n))) for n in ns]) * scale
    gate = np.array([epsilon_factor(int(n), eps) for n in ns], dtype=float)
    m = np.zeros((ns.size, ns.size))
    idx = np.arange(ns.size - 1)
    m[idx + 1, idx] = gate[:-1] * a[:-1] * gamma      # (n, n-1)
    m[idx, idx + 1] = -gate[1:] * a[1:] * gamma       # (n, n+1)
    return LinearOperator(table.config, float(eps), lo, hi, m, float(gamma), convention)


def dense_eigenvalues(op: LinearOperator) -> np.ndarray:
    """All eigenvalues of the operator matrix (residual-checked)."""
    return dense_eig(op.entries)


def four_mode_quadruple(gamma: float) -> np.ndarray:
    """``±(Γ/(2√10)) √(1 ± i√35)``, the ε=0 eigenvalues of the block ``1..4``."""
    base = np.sqrt(1 + 1j * math.sqrt(35)) * gamma / (2 * math.sqrt(10))
    return np.array([base, -base, base.conjugate(), -base.conjugate()])


def chopped_block_coefficients(table: CoefficientTable, j: int) -> Tuple[Fraction, Fraction]:
    """Exact ``(b, c)`` of the 4-mode block ``5j+1..5j+4``.

    Its characteristic polynomial is ``lam^4 - b Γ^2 lam^2 + c Γ^4``.
    """
    a = [model_coefficient(table, 5 * j + i) for i in range(1, 5)]
    b = -(a[0] * a[1] + a[1] * a[2] + a[2] * a[3])
    c = a[0] * a[1] * a[2] * a[3]
    return b, c


def chopped_block_spectrum(table: CoefficientTable, j: int, gamma: float) -> np.ndarray:
    """Eigenvalues of the isolated block ``5j+1..5j+4`` from the closed formula.

    For ``j != 0`` all four are on the imaginary axis,
    ``±i (Γ/√2) √|b ± √(b²-4c)|``, and the sign constraints
    ``b < 0 < c``, ``0 < b²-4c < b²`` are verified.  ``j = 0`` is allowed
    (it yields the hyperbolic quadruple) but triggers a warning.
    """
    b, c = chopped_block_coefficients(table, j)
    disc = b * b - 4 * c
    if j == 0:
        warnings.warn("j = 0 is the hyperbolic block; returning the quadruple", stacklevel=2)
    elif not (b < 0 < c and 0 < disc < b * b):
        raise ArithmeticError(
            f"block j={j}: expected b<0<c and 0<b^2-4c<b^2, got b={b}, c={c}"
        )
    g2 = gamma * gamma
    return biquadratic_roots(-float(b) * g2, float(c) * g2 * g2)


def chopped_block_limit(gamma: float) -> np.ndarray:
    """``j → ±∞`` limit ``±i (Γ/2) √((3 ± √5)/2)``."""
    lo = 0.5 * gamma * math.sqrt((3 - math.sqrt(5)) / 2)
    hi = 0.5 * gamma * math.sqrt((3 + math.sqrt(5)) / 2)
    return np.array([1j * lo, -1j * lo, 1j * hi, -1j * hi])


def symmetry_defect(values) -> float:
    """Max matching distance of the spectrum to its images under λ→-λ and λ→λ̄."""
    v = np.asarray(values, dtype=complex)
    return max(match_multisets(v, -v), match_multisets(v, v.conj()))


def band_class(value: complex, gamma: float) -> str:
    return "imaginary-axis band" if abs(value.real) < BAND_TOL * abs(gamma) else "hyperbolic"


@dataclass
class SpectrumSweep:
    eps_grid: List[float]
    spectra: List[np.ndarray]
    window: Tuple[int, int]
    gamma: float
    convention: str = "model"

    def band_classes(self, i: int) -> List[str]:
        return [band_class(v, self.gamma) for v in self.spectra[i]]

    def rows(self):
        """Flat ``(eps, re, im, band_class)`` rows in deterministic order."""
        for eps, spec in zip(self.eps_grid, self.spectra):
            for v in spec:
                yield eps, float(v.real), float(v.imag), band_class(v, self.gamma)

    def max_symmetry_defect(self) -> float:
        return max(symmetry_defect(s) for s in self.spectra) if self.spectra else 0.0


def worker_count(requested: int | None = None) -> int:
    """Worker cap: explicit request, else ``DASHLINE_THREADS``, else 1."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("DASHLINE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"DASHLINE_THREADS must be an integer, got {env!r}") from None
    return 1


class SweepError(RuntimeError):
    def __init__(self, eps: float, cause: Exception):
        super().__init__(f"eigensolve failed at eps={eps!r}: {cause}")
        self.eps = eps
        self.cause = cause


def homotopy_sweep(table: CoefficientTable, window: Tuple[int, int], gamma: float,
                   eps_grid: Sequence[float], convention: str = "model",
                   workers: int | None = None) -> SpectrumSweep:
    """Eigenvalues of the homotopy operator for every ε in ``eps_grid``.

    Grid points are independent; with ``workers > 1`` they run on a thread
    pool (LAPACK releases the GIL).  Results are assembled in grid order
    regardless of completion order.
    """
    eps_grid = [float(e) for e in eps_grid]
    for e in eps_grid:
        if not 0.0 <= e <= 1.0:
            raise ValueError(f"eps grid must lie in [0, 1], got {e!r}")

    def one(eps):
        try:
            return dense_eigenvalues(build_homotopy_operator(table, gamma, eps, window, convention))
        except Exception as exc:  # tag with the offending eps
            raise SweepError(eps, exc) from exc

    n = worker_count(workers)
    if n == 1 or len(eps_grid) < 2:
        spectra = [one(e) for e in eps_grid]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            spectra = list(pool.map(one, eps_grid))
    return SpectrumSweep(eps_grid, spectra, (int(window[0]), int(window[1])), float(gamma), convention)


def nearest_eigenvalue(values, target: complex) -> complex:
    v = np.asarray(values, dtype=complex)
    return complex(v[np.argmin(np.abs(v - target))])


def endpoint_target(gamma: float, convention: str = "model") -> complex:
    """Where the reference λ̃ lands in λ units for the given convention.

    λ̃ = 2λ/|Γ| refers to the undoubled operator, so the raw operator has
    the eigenvalue ``(|Γ|/2) λ̃`` and the doubled model operator ``|Γ| λ̃``.
    """
    factor = 0.5 if convention == "raw" else 1.0
    _convention_scale(convention)
    return factor * abs(gamma) * ENDPOINT_EIGENVALUE


@dataclass
class ConvergenceRow:
    window: Tuple[int, int]
    n_modes: int
    eigenvalue: complex
    error: float


def endpoint_convergence_study(table: CoefficientTable, gamma: float, half_widths: Sequence[int],
                               convention: str = "raw", target: complex | None = None,
                               workers: int | None = None) -> List[ConvergenceRow]:
    """ε = 1 eigenvalue nearest the target on windows ``[-W, W+5]``."""
    target = endpoint_target(gamma, convention) if target is None else target
    windows = [(-int(w), int(w) + 5) for w in half_widths]

    def one(win):
        vals = dense_eigenvalues(build_homotopy_operator(table, gamma, 1.0, win, convention))
        lam = nearest_eigenvalue(vals, target)
        return ConvergenceRow(win, win[1] - win[0] + 1, lam, abs(lam - target))

    n = worker_count(workers)
    if n == 1:
        return [one(w) for w in windows]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(one, windows))


def continuum_halfband(config: WaveConfig, gamma: float) -> float:
    """Soft diagnostic ``2|b|``, ``b = -½ |Γ| |p|^-2 det(p, khat)``."""
    b = -0.5 * abs(gamma) * cross(config.p, config.khat) / config.p.norm2
    return abs(2.0 * b)
