"""Exact-rational mode algebra for the dashed-line truncation.

Modes are integer wave vectors ``k = (k1, k2)``.  The model only ever
touches the modes on one class line ``khat + n p`` plus the mode ``p``
itself, so coefficient tables are indexed by the integer position ``n``.

Coefficients are kept as :class:`fractions.Fraction` and are converted
to floating point only where dynamics or eigensolves need them.

The dashed-line model uses *doubled* coefficients: ``A_n = 2 A(p, khat+np)``
and ``A_{m,n} = 2 A(khat+mp, khat+np)``.  The factor two comes from the
real cosine representation, where the triads ``(p, q)`` and ``(q, p)``
(and their mirror images) contribute identically.  The undoubled values
are available through :func:`raw_coefficient`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Tuple

import numpy as np


class ModeDomainError(ValueError):
    """Raised when the zero mode would have to take part in the dynamics."""


@dataclass(frozen=True, order=True)
class ModeIndex:
    """Integer wave vector ``(k1, k2)``."""

    k1: int
    k2: int

    def __post_init__(self):
        if int(self.k1) != self.k1 or int(self.k2) != self.k2:
            raise TypeError(f"mode components must be integers, got {self.k1!r}, {self.k2!r}")
        object.__setattr__(self, "k1", int(self.k1))
        object.__setattr__(self, "k2", int(self.k2))

    def __add__(self, other: "ModeIndex") -> "ModeIndex":
        return ModeIndex(self.k1 + other.k1, self.k2 + other.k2)

    def __sub__(self, other: "ModeIndex") -> "ModeIndex":
        return ModeIndex(self.k1 - other.k1, self.k2 - other.k2)

    def __neg__(self) -> "ModeIndex":
        return ModeIndex(-self.k1, -self.k2)

    def scaled(self, n: int) -> "ModeIndex":
        return ModeIndex(n * self.k1, n * self.k2)

    @property
    def norm2(self) -> int:
        """Squared Euclidean length ``|k|^2`` (an exact integer)."""
        return self.k1 * self.k1 + self.k2 * self.k2

    def is_zero(self) -> bool:
        return self.k1 == 0 and self.k2 == 0

    def __str__(self) -> str:
        return f"({self.k1},{self.k2})"


def as_mode(value) -> ModeIndex:
    """Coerce a ModeIndex, a 2-sequence or a ``"a,b"`` string to ModeIndex."""
    if isinstance(value, ModeIndex):
        return value
    if isinstance(value, str):
        parts = value.replace("(", "").replace(")", "").split(",")
        if len(parts) != 2:
            raise ValueError(f"cannot parse mode {value!r}; expected 'k1,k2'")
        return ModeIndex(int(parts[0]), int(parts[1]))
    k1, k2 = value
    return ModeIndex(int(k1), int(k2))


def cross(p: ModeIndex, q: ModeIndex) -> int:
    """Planar determinant ``p1 q2 - p2 q1``."""
    return p.k1 * q.k2 - p.k2 * q.k1


def interaction_coefficient(p, q) -> Fraction:
    """Kinetic-form interaction coefficient of 2D Euler.

    ``A(p, q) = 1/2 (|q|^-2 - |p|^-2) (p1 q2 - p2 q1)`` as an exact rational.
    """
    p, q = as_mode(p), as_mode(q)
    if p.is_zero() or q.is_zero():
        raise ModeDomainError("the zero mode does not take part in the dynamics")
    return Fraction(1, 2) * (Fraction(1, q.norm2) - Fraction(1, p.norm2)) * cross(p, q)


def epsilon_factor(n: int, eps):
    """Homotopy gate: ``eps`` on dashed positions ``n = 0 mod 5``, else 1."""
    return eps if n % 5 == 0 else 1.0


@dataclass(frozen=True)
class WaveConfig:
    """Fixed-point datum: class label ``khat``, base mode ``p`` and amplitude Γ."""

    khat: ModeIndex = ModeIndex(-3, -2)
    p: ModeIndex = ModeIndex(1, 1)
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "khat", as_mode(self.khat))
        object.__setattr__(self, "p", as_mode(self.p))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.p.is_zero():
            raise ModeDomainError("p must be a nonzero mode")
        if cross(self.khat, self.p) == 0 and self._integer_multiple():
            raise ModeDomainError(
                f"khat={self.khat} is an integer multiple of p={self.p}; the class degenerates"
            )

    def _integer_multiple(self) -> bool:
        p, k = self.p, self.khat
        if p.k1 != 0:
            if k.k1 % p.k1:
                return False
            m = k.k1 // p.k1
        else:
            if k.k2 % p.k2:
                return False
            m = k.k2 // p.k2
        return p.scaled(m) == k

    def mode(self, n: int) -> ModeIndex:
        """The class mode ``khat + n p``."""
        return self.khat + self.p.scaled(n)


def _line_mode(config: WaveConfig, n: int) -> ModeIndex:
    k = config.mode(n)
    if k.is_zero():
        raise ModeDomainError(f"khat + {n} p is the zero mode")
    return k


@dataclass(frozen=True)
class CoefficientTable:
    """Doubled model coefficients ``A_n`` and adjacent pairs ``A_{n-1,n}``.

    ``a`` covers ``n_min..n_max``; ``a_pair`` covers the adjacent pairs
    ``(n-1, n)`` with both members in range.  Other values are available
    on demand through :func:`model_coefficient` / :func:`pair_coefficient`.
    """

    config: WaveConfig
    n_min: int
    n_max: int
    a: Dict[int, Fraction] = field(compare=False, repr=False)
    a_pair: Dict[Tuple[int, int], Fraction] = field(compare=False, repr=False)

    @classmethod
    def build(cls, config: WaveConfig | None = None, n_min: int = -10, n_max: int = 15):
        config = config or WaveConfig()
        if n_max < n_min:
            raise ValueError("empty coefficient range")
        a = {n: 2 * interaction_coefficient(config.p, _line_mode(config, n))
             for n in range(n_min, n_max + 1)}
        pairs = {}
        for n in range(n_min + 1, n_max + 1):
            pairs[(n - 1, n)] = 2 * interaction_coefficient(_line_mode(config, n - 1),
                                                            _line_mode(config, n))
        return cls(config, n_min, n_max, a, pairs)

    def covers(self, lo: int, hi: int) -> bool:
        return self.n_min <= lo and hi <= self.n_max

    def a_float(self, n: int) -> float:
        return float(model_coefficient(self, n))

    def pair_float(self, m: int, n: int) -> float:
        return float(pair_coefficient(self, m, n))

    def line_norm2(self, n: int) -> int:
        """``|khat + n p|^2`` as an exact integer."""
        return _line_mode(self.config, n).norm2


def model_coefficient(table: CoefficientTable, n: int) -> Fraction:
    """``A_n = 2 A(p, khat + n p)`` (doubled convention)."""
    if n in table.a:
        return table.a[n]
    return 2 * interaction_coefficient(table.config.p, _line_mode(table.config, n))


def raw_coefficient(table: CoefficientTable, n: int) -> Fraction:
    """Undoubled kinetic coefficient ``A(p, khat + n p)``."""
    return model_coefficient(table, n) / 2


def pair_coefficient(table: CoefficientTable, m: int, n: int) -> Fraction:
    """``A_{m,n} = 2 A(khat + m p, khat + n p)``."""
    if (m, n) in table.a_pair:
        return table.a_pair[(m, n)]
    return 2 * interaction_coefficient(_line_mode(table.config, m), _line_mode(table.config, n))


def default_table(n_min: int = -10, n_max: int = 15) -> CoefficientTable:
    return CoefficientTable.build(WaveConfig(), n_min, n_max)


def line_arrays(table: CoefficientTable, lo: int, hi: int):
    """Float arrays ``(A_n for n in lo..hi, A_{n-1,n} for n in lo+1..hi, |k_n|^2)``."""
    ns = range(lo, hi + 1)
    a = np.array([float(model_coefficient(table, n)) for n in ns])
    pair = np.array([float(pair_coefficient(table, n - 1, n)) for n in range(lo + 1, hi + 1)])
    norm2 = np.array([float(table.line_norm2(n)) for n in ns])
    return a, pair, norm2
