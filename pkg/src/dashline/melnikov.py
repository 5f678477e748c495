"""Higher-order Melnikov functions along the closed-form heteroclinic orbit.

Pipeline for a parameter point ``(Γ, theta0, tau0, branch)``:

1. ``omega^(0)`` is the closed-form orbit (:mod:`dashline.orbit`).
2. ``omega^(1)`` solves ``w' = Df(omega^(0)) w + g(omega^(0))`` on modes
   ``-5..10`` and ``p``: the inner system for ``1..4, p``, the scalar
   equations for ``0`` and ``5``, the outer blocks ``-1..-4`` / ``6..9``
   (in the time domain, ``w' = omega_p (C w + D)``) and the edge modes
   ``-5``, ``10``.
3. ``omega^(2)`` solves the same homogeneous system on ``-10..15`` with
   the forcing ``h^(2)``.
4. ``M^(n)_Y = ∫ <grad Y(omega^(0)), h^(n)> dt`` by the trapezoid rule on
   the RK4 grid, for ``Y = U, V``.

Two numerical devices keep the values independent of the truncation
interval ``[t_min, t_max]``:

* **Section gauge.**  The forcing decays at ``t -> -inf`` at exactly the
  rate of the unstable eigenvalues of the starting fixed point, so zero
  data at a finite ``t_min`` leaves a component along the family tangents
  ``d omega^(0)/d tau0`` and ``d omega^(0)/d theta0`` whose size grows
  with ``|t_min|``.  Both tangents are exact homogeneous solutions that
  vanish at ``-inf``, i.e. the boundary condition does not pin them.  The
  gauge removes them by requiring ``omega^(n)(t*)`` to be orthogonal to
  both tangents at the turning time ``t*`` (``tau = 0``).
* **Tail stabilization.**  Past ``|tau| > tau_stab`` on the outgoing side
  the RK4 state is projected off the unstable eigenspace of the limiting
  linear operator, where rounding errors would otherwise grow like
  ``e^{|tau|}``.

Both can be switched off (``gauge=False``, ``stabilize_tau=None``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .coefficients import CoefficientTable, model_coefficient, pair_coefficient
from .model import ModelConfig, jacobian_array, rhs_array
from .numerics import GridSpec, dense_eig, richardson, rk4, trapezoid, cumulative_trapezoid
from .orbit import OrbitParams, orbit_block, orbit_point, orbit_tangents, sech

ENVELOPE_TOL = 1e-13
DEFAULT_TAU_MAX = 32.0
DEFAULT_TAU_STAB = 15.0
ZERO_THRESHOLD = 1e-9

ORDER1_WINDOW = (-5, 10)
ORDER2_WINDOW = (-10, 15)


# ---------------------------------------------------------------------------
# layouts and coefficients

@dataclass(frozen=True)
class ModeLayout:
    """Flat layout ``[omega_lo, ..., omega_hi, omega_p]`` (same as the model)."""

    lo: int
    hi: int

    @property
    def size(self) -> int:
        return self.hi - self.lo + 2

    @property
    def p(self) -> int:
        return self.size - 1

    def index(self, n) -> int:
        if n == "p":
            return self.p
        if not self.lo <= n <= self.hi:
            raise KeyError(f"mode {n} outside layout {self.lo}..{self.hi}")
        return n - self.lo

    def labels(self) -> list:
        return list(range(self.lo, self.hi + 1)) + ["p"]

    def embed_block(self, block) -> np.ndarray:
        """Place ``[omega_0..omega_5, omega_p]`` arrays into this layout."""
        block = np.asarray(block)
        out = np.zeros(block.shape[:-1] + (self.size,), dtype=block.dtype)
        out[..., self.index(0):self.index(5) + 1] = block[..., :6]
        out[..., self.p] = block[..., 6]
        return out


class _Coef:
    """Float view of ``A_n`` / ``A_{m,n}`` with call syntax ``A(n)``, ``P(m, n)``."""

    def __init__(self, table: CoefficientTable):
        self.table = table
        self._a: Dict[int, float] = {}
        self._p: Dict[Tuple[int, int], float] = {}

    def A(self, n: int) -> float:
        if n not in self._a:
            self._a[n] = float(model_coefficient(self.table, n))
        return self._a[n]

    def P(self, m: int, n: int) -> float:
        if (m, n) not in self._p:
            self._p[(m, n)] = float(pair_coefficient(self.table, m, n))
        return self._p[(m, n)]


def _order0_gate(n: int) -> bool:
    return n % 5 != 0


def outer_matrix_C(table: CoefficientTable) -> np.ndarray:
    """Matrix ``C`` of the block ``(omega_-1, ..., omega_-4)``."""
    c = _Coef(table)
    A = c.A
    return np.array([
        [0.0, A(-2), 0.0, 0.0],
        [-A(-1), 0.0, A(-3), 0.0],
        [0.0, -A(-2), 0.0, A(-4)],
        [0.0, 0.0, -A(-3), 0.0],
    ])


def outer_matrix_E(table: CoefficientTable) -> np.ndarray:
    """Matrix ``E`` of the block ``(omega_6, ..., omega_9)``."""
    c = _Coef(table)
    A = c.A
    return np.array([
        [0.0, -A(7), 0.0, 0.0],
        [A(6), 0.0, -A(8), 0.0],
        [0.0, A(7), 0.0, -A(9)],
        [0.0, 0.0, A(8), 0.0],
    ])


def outer_matrix_exact(table: CoefficientTable, side: str):
    """Exact-rational ``C`` (side ``"-"``) or ``E`` (side ``"+"``) as nested lists."""
    A = lambda n: model_coefficient(table, n)
    z = 0 * A(1)
    if side == "-":
        return [[z, A(-2), z, z], [-A(-1), z, A(-3), z], [z, -A(-2), z, A(-4)], [z, z, -A(-3), z]]
    if side == "+":
        return [[z, -A(7), z, z], [A(6), z, -A(8), z], [z, A(7), z, -A(9)], [z, z, A(8), z]]
    raise ValueError("side must be '-' or '+'")


def outer_characteristic(table: CoefficientTable):
    """Exact ``(a, b)`` of ``lam^4 + a lam^2 + b`` for the matrix ``C``."""
    A = lambda n: model_coefficient(table, n)
    a = A(-1) * A(-2) + A(-2) * A(-3) + A(-3) * A(-4)
    b = A(-1) * A(-2) * A(-3) * A(-4)
    return a, b


def _jacobian_parts_printed(table: CoefficientTable, layout: ModeLayout) -> np.ndarray:
    """Linear part ``Df(omega^(0))`` split as ``op*J_p + sum_k o_k*J_k``.

    Returns an array ``(5, K, K)`` for the coefficients
    ``(omega_p, omega_1, ..., omega_4)`` of the orbit.  Rows ``-4..9`` and
    ``p`` follow the printed inner/outer systems; rows beyond that follow
    the same nearest-neighbour rule (only present in the order-2 layout).
    """
    c = _Coef(table)
    A, P = c.A, c.P
    K = layout.size
    J = np.zeros((5, K, K))
    ix = layout.index
    have = lambda n: layout.lo <= n <= layout.hi
    OP, O1, O2, O3, O4 = range(5)
    pcol = layout.p

    # inner system (modes 1..4 and p)
    J[OP, ix(1), ix(2)] = -A(2)
    J[O2, ix(1), pcol] = -A(2)
    J[OP, ix(2), ix(1)] = A(1)
    J[OP, ix(2), ix(3)] = -A(3)
    J[O1, ix(2), pcol] = A(1)
    J[O3, ix(2), pcol] = -A(3)
    J[OP, ix(3), ix(2)] = A(2)
    J[OP, ix(3), ix(4)] = -A(4)
    J[O2, ix(3), pcol] = A(2)
    J[O4, ix(3), pcol] = -A(4)
    J[OP, ix(4), ix(3)] = A(3)
    J[O3, ix(4), pcol] = A(3)
    J[O2, pcol, ix(1)] = -P(1, 2)
    J[O1, pcol, ix(2)] = -P(1, 2)
    J[O3, pcol, ix(2)] = -P(2, 3)
    J[O2, pcol, ix(3)] = -P(2, 3)
    J[O4, pcol, ix(3)] = -P(3, 4)
    J[O3, pcol, ix(4)] = -P(3, 4)
    # scalar equations of modes 0 and 5
    J[OP, ix(0), ix(-1)] = A(-1)
    J[OP, ix(0), ix(1)] = -A(1)
    J[O1, ix(0), pcol] = -A(1)
    J[OP, ix(5), ix(4)] = A(4)
    J[OP, ix(5), ix(6)] = -A(6)
    J[O4, ix(5), pcol] = A(4)
    # outer blocks, time-domain form  w' = omega_p C w
    neg = [ix(-1), ix(-2), ix(-3), ix(-4)]
    pos = [ix(6), ix(7), ix(8), ix(9)]
    J[OP][np.ix_(neg, neg)] = outer_matrix_C(table)
    J[OP][np.ix_(pos, pos)] = outer_matrix_E(table)
    # remaining rows: nearest-neighbour couplings with ungated coefficients
    for n in range(layout.lo, layout.hi + 1):
        if -4 <= n <= 9:
            continue
        if have(n - 1) and _order0_gate(n - 1):
            J[OP, ix(n), ix(n - 1)] = A(n - 1)
        if have(n + 1) and _order0_gate(n + 1):
            J[OP, ix(n), ix(n + 1)] = -A(n + 1)
    return J


def _jacobian_parts_generic(table: CoefficientTable, layout: ModeLayout) -> np.ndarray:
    """Same split as the printed parts, from the model's ε=0 Jacobian.

    The Jacobian is linear in the expansion point, so the parts are the
    Jacobians at unit states.  Returns ``(7, K, K)`` for the components
    ``(omega_p, omega_1..omega_4, omega_0, omega_5)``; the last two must
    vanish identically (they enter only through gated terms).
    """
    cfg = ModelConfig(table, 0.0, (layout.lo, layout.hi))
    parts = []
    for label in ("p", 1, 2, 3, 4, 0, 5):
        e = np.zeros(layout.size)
        e[layout.index(label)] = 1.0
        parts.append(jacobian_array(cfg, e, 0.0))
    return np.array(parts)


# ---------------------------------------------------------------------------
# gradients of the invariants

def grad_UV(state, table: CoefficientTable | None = None):
    """Gradients of ``U`` and ``V`` w.r.t. ``(omega_1, ..., omega_4)``.

    ``state[..., 4]`` holds ``omega_1..omega_4``.  All other directions
    (``omega_p`` and every other mode) have zero gradient.
    """
    from .orbit import orbit_constants

    c = orbit_constants(table)
    x = np.asarray(state, dtype=float)
    coef_u = np.array([c.A1, c.A2, c.A2, c.A1])
    gu = 2.0 * coef_u * x
    swap = x[..., [2, 3, 0, 1]]
    gv = 2.0 * c.A2 * x - 2.0 * c.A12 * swap
    return gu, gv


# ---------------------------------------------------------------------------
# printed forcings

def forcing_h1(table: CoefficientTable, o, layout: ModeLayout = ModeLayout(*ORDER1_WINDOW)):
    """``h^(1) = g(omega^(0))`` on ``layout`` from the printed B, D, F vectors.

    ``o[..., 7]`` is the orbit block ``[omega_0..omega_5, omega_p]``.
    """
    c = _Coef(table)
    A, P = c.A, c.P
    o = np.asarray(o, dtype=float)
    o0, o1, o2, o3, o4, o5, op = (o[..., i] for i in range(7))
    h = np.zeros(o.shape[:-1] + (layout.size,))
    ix = layout.index
    h[..., ix(1)] = A(0) * op * o0
    h[..., ix(4)] = -A(5) * op * o5          # printed with A0 = A5
    h[..., layout.p] = -P(4, 5) * o4 * o5 - P(0, 1) * o0 * o1
    h[..., ix(-1)] = op * (-A(0) * o0)        # omega_p * D
    h[..., ix(6)] = op * (A(5) * o5)          # omega_p * F
    return h


def forcing_h2(table: CoefficientTable, o, w, layout1: ModeLayout = ModeLayout(*ORDER1_WINDOW),
               layout2: ModeLayout = ModeLayout(*ORDER2_WINDOW)):
    """Second-order forcing ``h^(2)`` from orbit samples and ``omega^(1)`` samples.

    ``o[..., 7]`` is the orbit block, ``w[..., K1]`` the first variation on
    ``layout1``.  Returns ``h[..., K2]`` on ``layout2``.  Components
    ``1..4``, ``p``, ``0``, ``5``, ``-1..-4`` and ``6..9`` are the printed
    expressions; ``-6, -5, 10, 11`` follow the same rules (they feed only
    modes outside the first variation's reach); all others vanish.
    """
    c = _Coef(table)
    A, P = c.A, c.P
    o = np.asarray(o, dtype=float)
    w = np.asarray(w, dtype=float)
    o0, o1, o4, o5, op = o[..., 0], o[..., 1], o[..., 4], o[..., 5], o[..., 6]
    W = lambda n: w[..., layout1.index(n)]
    wp = W("p")
    h = np.zeros(w.shape[:-1] + (layout2.size,))
    ix = layout2.index

    h[..., ix(1)] = -A(2) * wp * W(2) + A(0) * (op * W(0) + wp * o0)
    h[..., ix(2)] = A(1) * wp * W(1) - A(3) * wp * W(3)
    h[..., ix(3)] = A(2) * wp * W(2) - A(4) * wp * W(4)
    h[..., ix(4)] = A(3) * wp * W(3) - A(5) * (op * W(5) + wp * o5)
    h[..., layout2.p] = -(
        P(-4, -3) * W(-4) * W(-3) + P(-3, -2) * W(-3) * W(-2) + P(-2, -1) * W(-2) * W(-1)
        + P(-1, 0) * W(-1) * o0 + P(0, 1) * (o0 * W(1) + W(0) * o1)
        + P(1, 2) * W(1) * W(2) + P(2, 3) * W(2) * W(3) + P(3, 4) * W(3) * W(4)
        + P(4, 5) * (o4 * W(5) + W(4) * o5) + P(5, 6) * o5 * W(6)
        + P(6, 7) * W(6) * W(7) + P(7, 8) * W(7) * W(8) + P(8, 9) * W(8) * W(9)
    )
    h[..., ix(0)] = A(-1) * wp * W(-1) - A(1) * wp * W(1)
    h[..., ix(5)] = A(4) * wp * W(4) - A(6) * wp * W(6)
    h[..., ix(-1)] = A(-2) * wp * W(-2) - A(0) * (op * W(0) + wp * o0)
    h[..., ix(-2)] = A(-3) * wp * W(-3) - A(-1) * wp * W(-1)
    h[..., ix(-3)] = A(-4) * wp * W(-4) - A(-2) * wp * W(-2)
    h[..., ix(-4)] = A(-5) * op * W(-5) - A(-3) * wp * W(-3)
    h[..., ix(6)] = A(5) * (op * W(5) + wp * o5) - A(7) * wp * W(7)
    h[..., ix(7)] = A(6) * wp * W(6) - A(8) * wp * W(8)
    h[..., ix(8)] = A(7) * wp * W(7) - A(9) * wp * W(9)
    h[..., ix(9)] = A(8) * wp * W(8) - A(10) * op * W(10)
    # edge modes, same construction
    h[..., ix(-5)] = -A(-4) * wp * W(-4)
    h[..., ix(-6)] = -A(-5) * op * W(-5)
    h[..., ix(10)] = A(9) * wp * W(9)
    h[..., ix(11)] = A(10) * op * W(10)
    return h


def forcing_h3(table: CoefficientTable, o, w1, w2, layout1: ModeLayout = ModeLayout(*ORDER1_WINDOW),
               layout2: ModeLayout = ModeLayout(*ORDER2_WINDOW)) -> np.ndarray:
    """Third-order forcing components ``h^(3)_1..h^(3)_4`` (shape ``[..., 4]``)."""
    c = _Coef(table)
    A = c.A
    o = np.asarray(o, dtype=float)
    o0, o5, op = o[..., 0], o[..., 5], o[..., 6]
    X = lambda n: w1[..., layout1.index(n)]
    Y = lambda n: w2[..., layout2.index(n)]
    xp, yp = X("p"), Y("p")
    h1 = A(0) * op * Y(0) - A(2) * xp * Y(2) + (A(0) * o0 - A(2) * X(2)) * yp + A(0) * X(0) * xp
    h2 = A(1) * xp * Y(1) - A(3) * xp * Y(3) + (A(1) * X(1) - A(3) * X(3)) * yp
    h3 = A(2) * xp * Y(2) - A(4) * xp * Y(4) + (A(2) * X(2) - A(4) * X(4)) * yp
    h4 = A(3) * xp * Y(3) - A(5) * op * Y(5) + (A(3) * X(3) - A(5) * o5) * yp - A(5) * X(5) * xp
    return np.stack([h1, h2, h3, h4], axis=-1)


class QuadraticForm:
    """Exact coefficient table of a homogeneous quadratic map ``z -> h``.

    Built by polarization of a Python implementation ``fn``:
    ``C_ab = fn(e_a + e_b) - fn(e_a) - fn(e_b)`` (``a < b``) and
    ``C_aa = fn(e_a)``.  Each printed forcing term is a single product of
    a coefficient with two entries, so the extraction is exact; evaluating
    the table is much cheaper than re-running ``fn`` at every RK4 stage.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int):
        eye = np.eye(dim)
        single = fn(eye)                                   # (dim, K)
        a_idx, b_idx = np.triu_indices(dim, 1)
        both = fn(eye[a_idx] + eye[b_idx]) - single[a_idx] - single[b_idx]
        a_all = np.concatenate([np.arange(dim), a_idx])
        b_all = np.concatenate([np.arange(dim), b_idx])
        coef = np.concatenate([single, both], axis=0)       # (npairs, K)
        keep = np.any(coef != 0.0, axis=1)
        self.a = a_all[keep]
        self.b = b_all[keep]
        self.coef = np.ascontiguousarray(coef[keep].T)      # (K, nnz)
        self.dim = dim

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z)
        return (z[..., self.a] * z[..., self.b]) @ self.coef.T


def compiled_h2(table: CoefficientTable, layout1: ModeLayout = ModeLayout(*ORDER1_WINDOW),
                layout2: ModeLayout = ModeLayout(*ORDER2_WINDOW)) -> QuadraticForm:
    """:func:`forcing_h2` as a quadratic form in ``z = [orbit block (7), omega^(1) (K1)]``."""
    def fn(z):
        return forcing_h2(table, z[..., :7], z[..., 7:], layout1, layout2)

    return QuadraticForm(fn, 7 + layout1.size)


# ---------------------------------------------------------------------------
# generic Taylor oracle

def taylor_forcing(table: CoefficientTable, layout: ModeLayout, series: Sequence[np.ndarray],
                   order: int) -> np.ndarray:
    """ε^order coefficient of ``F(sum_j eps^j omega^(j), eps)``.

    ``series = [omega^(0), ..., omega^(order-1)]`` on ``layout`` (leading
    batch axes allowed).  Because the model is quadratic the composite is
    a polynomial in ε of degree ``2 order - 1``; the coefficient is read
    off exactly with a discrete Fourier transform over roots of unity.
    This is independent of every hand-derived forcing formula.
    """
    if len(series) != order:
        raise ValueError("need omega^(0..order-1)")
    cfg = ModelConfig(table, 0.0, (layout.lo, layout.hi))
    m = 2 * order + 2
    z = np.exp(2j * np.pi * np.arange(m) / m)
    acc = 0.0
    for zk in z:
        y = sum(s * zk ** j for j, s in enumerate(series))
        acc = acc + rhs_array(cfg, np.asarray(y, dtype=complex), zk) * zk ** (-order)
    return (acc / m).real


# ---------------------------------------------------------------------------
# solutions and reports

@dataclass
class VariationalSolution:
    order: int
    grid: GridSpec
    layout: ModeLayout
    values: np.ndarray = field(repr=False)             # (n_t, K), gauge applied
    gauge: np.ndarray = field(default_factory=lambda: np.zeros(2))
    support: Tuple[int, int] = (0, -1)     # observed nonzero line-mode range

    @property
    def t(self) -> np.ndarray:
        return self.grid.times()

    @property
    def fields(self) -> Dict[object, np.ndarray]:
        return {lab: self.values[:, i] for i, lab in enumerate(self.layout.labels())}

    def mode(self, n) -> np.ndarray:
        return self.values[:, self.layout.index(n)]

    def block(self, modes: Sequence[int]) -> np.ndarray:
        return self.values[:, [self.layout.index(n) for n in modes]]


def orbit_grid(params: OrbitParams, dt: float, tau_max: float = DEFAULT_TAU_MAX) -> GridSpec:
    """Uniform grid covering ``tau in [-tau_max, tau_max]``, centered at ``t*``.

    ``dt`` is shrunk slightly if needed so that the turning time is a grid
    point and the step count is even.
    """
    half = tau_max / abs(params.rate)
    return GridSpec.centered(params.center_time, half, dt)


def forcing_envelope(params: OrbitParams, tau) -> np.ndarray:
    """Upper bound of the first-order forcing ``|g(omega^(0))|`` at ``tau``.

    ``omega_0`` and ``omega_5`` have amplitude ``|K| sqrt(1 + beta^-2) sech``
    with ``K = alpha beta / (1 + beta^2)``, and ``|omega_p| <= |Γ|``; the
    ``omega_p`` component is quadratic in them and smaller still.
    """
    c = params.constants
    b = params.beta
    k = abs(params.alpha * b / (1.0 + b * b)) * math.sqrt(1.0 + 1.0 / (b * b))
    amp = max(abs(c.A0), abs(c.A5)) * abs(params.gamma) * k
    return amp * sech(np.asarray(tau, dtype=float))


def envelope(params: OrbitParams, grid: GridSpec) -> float:
    """Forcing envelope at the grid ends (max of the two)."""
    return float(max(forcing_envelope(params, params.tau(grid.t_min)),
                     forcing_envelope(params, params.tau(grid.t_max))))


class _HalfStepTable:
    """Orbit quantities tabulated on the half-step grid of an RK4 run."""

    def __init__(self, params: OrbitParams, grid: GridSpec):
        self.grid = grid
        self.h = grid.dt / 2
        t_half = grid.t_min + self.h * np.arange(2 * grid.n_steps + 1)
        self.t = t_half
        self.block = orbit_block(params, t_half)
        # coefficients multiplying the Jacobian parts: omega_p, omega_1..4
        self.coef = self.block[:, [6, 1, 2, 3, 4]]
        self.tangents = orbit_tangents(params, t_half)

    def index(self, t: float) -> int:
        x = (t - self.grid.t_min) / self.h
        j = int(round(x))
        if abs(x - j) > 1e-6:
            raise ValueError("time not on the half-step grid")
        return j


def _unstable_projector(J: np.ndarray, tol: float) -> np.ndarray:
    """Real spectral projector onto eigen-directions with ``Re lam > tol``."""
    lam, vl, vr = scipy.linalg.eig(J, left=True, right=True)
    P = np.zeros(J.shape, dtype=complex)
    for k in np.flatnonzero(lam.real > tol):
        r = vr[:, k]
        l = vl[:, k].conj()
        P += np.outer(r, l) / (l @ r)
    P = P.real
    # the unstable directions live on the inner modes; drop rounding-level
    # entries so that modes outside them are never touched
    P[np.abs(P) < 1e-13 * max(np.abs(P).max(), 1e-300)] = 0.0
    return P


class _Engine:
    """Shared machinery for one parameter point on one grid."""

    def __init__(self, params: OrbitParams, grid: GridSpec, route: str = "printed",
                 gauge: bool = True, stabilize_tau: Optional[float] = DEFAULT_TAU_STAB,
                 layouts: Optional[Tuple[ModeLayout, ModeLayout]] = None):
        if route not in ("printed", "generic"):
            raise ValueError("route must be 'printed' or 'generic'")
        self.params = params
        self.table = params.table
        self.grid = grid
        self.route = route
        self.gauge = gauge
        self.stabilize_tau = stabilize_tau
        self.half = _HalfStepTable(params, grid)
        self.L1, self.L2 = layouts or (ModeLayout(*ORDER1_WINDOW), ModeLayout(*ORDER2_WINDOW))
        if not (self.L1.lo <= ORDER1_WINDOW[0] and self.L1.hi >= ORDER1_WINDOW[1]
                and self.L2.lo <= ORDER2_WINDOW[0] and self.L2.hi >= ORDER2_WINDOW[1]):
            raise ValueError("layouts must contain the variational supports")
        self._parts: Dict[ModeLayout, np.ndarray] = {}
        self._proj: Dict[ModeLayout, np.ndarray] = {}
        self._h2_form: Optional[QuadraticForm] = None
        n = grid.n_steps
        if n % 2:
            raise ValueError("grid must have an even number of steps (turning time on grid)")
        self.center = n // 2
        if abs(grid.times()[self.center] - params.center_time) > 1e-9 * max(1.0, abs(grid.t_max)):
            raise ValueError("grid is not centered on the turning time; use orbit_grid()")

    # Jacobian -------------------------------------------------------------
    def parts(self, layout: ModeLayout) -> np.ndarray:
        if layout not in self._parts:
            if self.route == "printed":
                P = _jacobian_parts_printed(self.table, layout)
            else:
                P = _jacobian_parts_generic(self.table, layout)[:5]
            self._parts[layout] = P.reshape(5 * layout.size, layout.size)
        return self._parts[layout]

    def matvec(self, layout: ModeLayout, j: int, y: np.ndarray) -> np.ndarray:
        return self.half.coef[j] @ (self.parts(layout) @ y).reshape(5, layout.size)

    def projector(self, layout: ModeLayout) -> np.ndarray:
        if layout not in self._proj:
            op_inf = self.params.endpoints()["t=+inf"]
            K = layout.size
            Jinf = op_inf * self.parts(layout).reshape(5, K, K)[0]
            self._proj[layout] = _unstable_projector(Jinf, 1e-8 * abs(self.params.gamma))
        return self._proj[layout]

    def post_step(self, blocks: Sequence[Tuple[slice, ModeLayout]]):
        if self.stabilize_tau is None:
            return None
        t_star = self.params.center_time
        rate = abs(self.params.rate)
        tau_c = self.stabilize_tau
        projs = [(s, self.projector(lay)) for s, lay in blocks]

        def hook(_k, t, y):
            if t > t_star and rate * (t - t_star) > tau_c:
                y = y.copy()
                for s, P in projs:
                    y[s] -= P @ y[s]
            return y

        return hook

    # forcings -------------------------------------------------------------
    def h1_table(self) -> np.ndarray:
        if self.route == "printed":
            return forcing_h1(self.table, self.half.block, self.L1)
        o = self.L1.embed_block(self.half.block)
        return taylor_forcing(self.table, self.L1, [o], 1)

    def h2(self, o, w1) -> np.ndarray:
        if self.route == "printed":
            return forcing_h2(self.table, o, w1, self.L1, self.L2)
        w1_2 = _relayout(w1, self.L1, self.L2)
        return taylor_forcing(self.table, self.L2, [self.L2.embed_block(o), w1_2], 2)

    def h2_stage(self, o, w1) -> np.ndarray:
        """Single-time forcing used inside the RK4 stages."""
        if self.route == "printed":
            if self._h2_form is None:
                self._h2_form = compiled_h2(self.table, self.L1, self.L2)
            return self._h2_form(np.concatenate([o, w1]))
        w1_2 = _relayout(w1, self.L1, self.L2)
        return taylor_forcing(self.table, self.L2, [self.L2.embed_block(o), w1_2], 2)

    def h3_inner(self, o, w1, w2) -> np.ndarray:
        if self.route == "printed":
            return forcing_h3(self.table, o, w1, w2, self.L1, self.L2)
        w1_2 = _relayout(w1, self.L1, self.L2)
        full = taylor_forcing(self.table, self.L2, [self.L2.embed_block(o), w1_2, w2], 3)
        return full[..., [self.L2.index(n) for n in (1, 2, 3, 4)]]

    # gauge ----------------------------------------------------------------
    def tangents_on_grid(self, layout: ModeLayout) -> np.ndarray:
        """``(n_t, 2, K)`` family tangents at the grid points."""
        return layout.embed_block(self.half.tangents[::2])

    def apply_gauge(self, values: np.ndarray, layout: ModeLayout) -> Tuple[np.ndarray, np.ndarray]:
        if not self.gauge:
            return values, np.zeros(2)
        phi = self.tangents_on_grid(layout)
        pc = phi[self.center]                      # (2, K)
        coef = np.linalg.solve(pc @ pc.T, pc @ values[self.center])
        return values - np.einsum("i,tik->tk", coef, phi), coef

    # solves ---------------------------------------------------------------
    def solve1(self) -> VariationalSolution:
        L1 = self.L1
        h1 = self.h1_table()

        def rhs(t, y):
            j = self.half.index(t)
            return self.matvec(L1, j, y) + h1[j]

        raw = rk4(rhs, np.zeros(L1.size), self.grid,
                  post_step=self.post_step([(slice(0, L1.size), L1)]))
        vals, coef = self.apply_gauge(raw, L1)
        return VariationalSolution(1, self.grid, L1, vals, coef, _observed_support(vals, L1))

    def solve2(self, sol1: VariationalSolution) -> VariationalSolution:
        L1, L2 = self.L1, self.L2
        K1 = L1.size
        h1 = self.h1_table()
        phi_half = L1.embed_block(self.half.tangents)       # (2n+1, 2, K1)
        shift = np.einsum("i,tik->tk", sol1.gauge, phi_half)
        blk = self.half.block

        def rhs(t, z):
            j = self.half.index(t)
            y1, y2 = z[:K1], z[K1:]
            d1 = self.matvec(L1, j, y1) + h1[j]
            w1 = y1 - shift[j]
            d2 = self.matvec(L2, j, y2) + self.h2_stage(blk[j], w1)
            return np.concatenate([d1, d2])

        hook = self.post_step([(slice(0, K1), L1), (slice(K1, K1 + L2.size), L2)])
        raw = rk4(rhs, np.zeros(K1 + L2.size), self.grid, post_step=hook)
        vals, coef = self.apply_gauge(raw[:, K1:], L2)
        return VariationalSolution(2, self.grid, L2, vals, coef, _observed_support(vals, L2))


def _observed_support(values: np.ndarray, layout: ModeLayout) -> Tuple[int, int]:
    """Smallest and largest line mode with a nonzero sample (exact test)."""
    nz = np.flatnonzero(np.any(values[:, :layout.size - 1] != 0.0, axis=0))
    if nz.size == 0:
        return (0, -1)
    return (layout.lo + int(nz[0]), layout.lo + int(nz[-1]))


def _relayout(w, src: ModeLayout, dst: ModeLayout) -> np.ndarray:
    w = np.asarray(w)
    out = np.zeros(w.shape[:-1] + (dst.size,), dtype=w.dtype)
    out[..., dst.index(src.lo):dst.index(src.hi) + 1] = w[..., :src.size - 1]
    out[..., dst.p] = w[..., src.p]
    return out


def solve_variation1(params: OrbitParams, grid: GridSpec, route: str = "printed",
                     gauge: bool = True, stabilize_tau: Optional[float] = DEFAULT_TAU_STAB,
                     window: Optional[Tuple[int, int]] = None) -> VariationalSolution:
    """First variation ``omega^(1)`` on modes ``-5..10`` and ``p``.

    A wider ``window`` may be requested (e.g. with ``route="generic"``) to
    confirm that every mode outside ``-5..10`` stays exactly zero.
    """
    L1 = ModeLayout(*(window or ORDER1_WINDOW))
    L2 = ModeLayout(min(L1.lo, ORDER2_WINDOW[0]), max(L1.hi, ORDER2_WINDOW[1]))
    return _Engine(params, grid, route, gauge, stabilize_tau, (L1, L2)).solve1()


def solve_variation2(params: OrbitParams, grid: GridSpec, variation1: VariationalSolution,
                     route: str = "printed", gauge: bool = True,
                     stabilize_tau: Optional[float] = DEFAULT_TAU_STAB,
                     window: Optional[Tuple[int, int]] = None) -> VariationalSolution:
    """Second variation ``omega^(2)`` on modes ``-10..15`` and ``p``.

    ``variation1`` supplies the gauge of the first variation; the first
    variation itself is re-integrated alongside so that the forcing is
    available at the RK4 stage times.
    """
    if variation1.grid != grid:
        raise ValueError("variation1 must live on the same grid")
    L1 = variation1.layout
    L2 = ModeLayout(*(window or ORDER2_WINDOW))
    return _Engine(params, grid, route, gauge, stabilize_tau, (L1, L2)).solve2(variation1)


# ---------------------------------------------------------------------------
# integrands and reports

def _integrands(params: OrbitParams, o: np.ndarray, h_inner: np.ndarray):
    gu, gv = grad_UV(o[..., 1:5], params.table)
    return np.sum(gu * h_inner, axis=-1), np.sum(gv * h_inner, axis=-1)


def first_order_integrands(params: OrbitParams, t) -> Tuple[np.ndarray, np.ndarray]:
    o = orbit_block(params, t)
    h = forcing_h1(params.table, o)
    L1 = ModeLayout(*ORDER1_WINDOW)
    inner = h[..., [L1.index(n) for n in (1, 2, 3, 4)]]
    return _integrands(params, o, inner)


@dataclass
class LevelResult:
    dt: float
    n_steps: int
    M_U: float
    M_V: float
    L1_U: float
    L1_V: float
    tau_max: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class MelnikovReport:
    order: int
    params: dict
    M_U: float
    M_V: float
    L1_U: float
    L1_V: float
    grid: dict
    refinement: List[LevelResult]
    profile_t: np.ndarray = field(repr=False)
    profile_tau: np.ndarray = field(repr=False)
    integrand_U: np.ndarray = field(repr=False)
    integrand_V: np.ndarray = field(repr=False)
    partial_U: np.ndarray = field(repr=False)
    partial_V: np.ndarray = field(repr=False)
    oddness_U: float = float("nan")
    oddness_V: float = float("nan")
    richardson_U: Optional[Tuple[float, float]] = None
    richardson_V: Optional[Tuple[float, float]] = None
    t_extension: List[LevelResult] = field(default_factory=list)
    lower_orders: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    envelope: float = float("nan")
    envelope_ok: bool = True
    options: dict = field(default_factory=dict)

    @property
    def scale_U(self) -> float:
        return self.L1_U

    @property
    def scale_V(self) -> float:
        return self.L1_V

    def relative(self) -> Tuple[float, float]:
        """``|M| / L1`` for U and V."""
        rel = lambda m, s: abs(m) / s if s > 0 else abs(m)
        return rel(self.M_U, self.L1_U), rel(self.M_V, self.L1_V)

    def is_zero(self, threshold: float = ZERO_THRESHOLD) -> bool:
        ru, rv = self.relative()
        return ru <= threshold and rv <= threshold

    def t_doubling_change(self) -> Optional[Tuple[float, float]]:
        """``|M(2T) - M(T)|`` relative to the L1 scale, or None if not computed."""
        if len(self.t_extension) < 2:
            return None
        a, b = self.t_extension[0], self.t_extension[-1]
        return (abs(b.M_U - a.M_U) / max(a.L1_U, 1e-300), abs(b.M_V - a.M_V) / max(a.L1_V, 1e-300))

    def signed_distance(self, eps: float) -> Tuple[float, float]:
        """Truncated series ``d_Y = sum_n eps^n M^(n)_Y`` through this order."""
        vals = dict(self.lower_orders)
        vals[self.order] = (self.M_U, self.M_V)
        du = sum(eps ** n * v[0] for n, v in vals.items())
        dv = sum(eps ** n * v[1] for n, v in vals.items())
        return du, dv

    def to_dict(self, include_profile: bool = True) -> dict:
        d = {
            "order": self.order,
            "params": self.params,
            "values": {"M_U": self.M_U, "M_V": self.M_V},
            "scale": {"L1_U": self.L1_U, "L1_V": self.L1_V},
            "relative": dict(zip(("U", "V"), self.relative())),
            "grid": self.grid,
            "envelope": {"forcing_at_ends": self.envelope, "threshold": ENVELOPE_TOL,
                         "ok": self.envelope_ok},
            "refinement": [lv.as_dict() for lv in self.refinement],
            "richardson": None if self.richardson_U is None else {
                "M_U": self.richardson_U[0], "err_U": self.richardson_U[1],
                "M_V": self.richardson_V[0], "err_V": self.richardson_V[1]},
            "t_extension": [lv.as_dict() for lv in self.t_extension],
            "lower_orders": {str(k): {"M_U": v[0], "M_V": v[1]} for k, v in self.lower_orders.items()},
            "oddness": {"U": self.oddness_U, "V": self.oddness_V},
            "options": self.options,
        }
        if include_profile:
            d["profile"] = {
                "t": self.profile_t.tolist(), "tau": self.profile_tau.tolist(),
                "integrand_U": self.integrand_U.tolist(), "integrand_V": self.integrand_V.tolist(),
                "partial_U": self.partial_U.tolist(), "partial_V": self.partial_V.tolist(),
            }
        return d

    def profile_rows(self):
        for row in zip(self.profile_t, self.profile_tau, self.integrand_U, self.integrand_V,
                       self.partial_U, self.partial_V):
            yield tuple(float(x) for x in row)


def _oddness(values: np.ndarray, scale: float) -> float:
    """``max |I(tau) + I(-tau)| / scale`` on a grid symmetric about tau = 0."""
    return float(np.max(np.abs(values + values[::-1])) / scale) if scale > 0 else 0.0


def _params_dict(params: OrbitParams) -> dict:
    return {"gamma": params.gamma, "theta0": params.theta0, "tau0": params.tau0,
            "branch": "+" if params.kappa_branch > 0 else "-", "kappa": params.kappa}


def _level_integrands(order: int, params: OrbitParams, grid: GridSpec, route: str, gauge: bool,
                      stabilize_tau) -> Tuple[np.ndarray, np.ndarray]:
    t = grid.times()
    if order == 1:
        return first_order_integrands(params, t)
    eng = _Engine(params, grid, route, gauge, stabilize_tau)
    o = orbit_block(params, t)
    sol1 = eng.solve1()
    if order == 2:
        h2 = eng.h2(o, sol1.values)
        inner = h2[..., [eng.L2.index(n) for n in (1, 2, 3, 4)]]
        return _integrands(params, o, inner)
    sol2 = eng.solve2(sol1)
    h3 = eng.h3_inner(o, sol1.values, sol2.values)
    return _integrands(params, o, h3)


def _level(order, params, grid, tau_max, route, gauge, stabilize_tau):
    iu, iv = _level_integrands(order, params, grid, route, gauge, stabilize_tau)
    res = LevelResult(grid.dt, grid.n_steps, float(trapezoid(iu, grid.dt)), float(trapezoid(iv, grid.dt)),
                      float(trapezoid(np.abs(iu), grid.dt)), float(trapezoid(np.abs(iv), grid.dt)),
                      tau_max)
    return res, iu, iv


DEFAULT_DT = {1: 0.02, 2: 0.02, 3: 0.01}


def melnikov(order: int, params: OrbitParams, dt: Optional[float] = None, tau_max: float = DEFAULT_TAU_MAX,
             refine: int = 3, t_extension: Optional[bool] = None, route: str = "printed",
             gauge: bool = True, stabilize_tau: Optional[float] = DEFAULT_TAU_STAB,
             lower_orders: bool = True) -> MelnikovReport:
    """Melnikov functions of the given order with a step-refinement history.

    The refinement runs ``refine`` halvings that end at the requested
    ``dt``: levels ``dt 2^refine, ..., 2 dt, dt``.  The reported values are
    those of the finest level.  ``t_extension`` (default: on for order 3)
    repeats the finest level with ``2 tau_max``.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    dt = DEFAULT_DT[order] if dt is None else float(dt)
    refine = max(0, int(refine))
    if t_extension is None:
        t_extension = order == 3
    levels = []
    finest = None
    for k in range(refine, -1, -1):
        g = orbit_grid(params, dt * 2 ** k, tau_max)
        res, iu, iv = _level(order, params, g, tau_max, route, gauge, stabilize_tau)
        levels.append(res)
        finest = (g, iu, iv)
    g, iu, iv = finest
    last = levels[-1]
    env = envelope(params, g)
    rep = MelnikovReport(
        order=order, params=_params_dict(params), M_U=last.M_U, M_V=last.M_V,
        L1_U=last.L1_U, L1_V=last.L1_V,
        grid={"t_min": g.t_min, "t_max": g.t_max, "dt": g.dt, "n_steps": g.n_steps,
              "tau_max": tau_max, "t_center": params.center_time},
        refinement=levels, profile_t=g.times(), profile_tau=params.tau(g.times()),
        integrand_U=iu, integrand_V=iv,
        partial_U=cumulative_trapezoid(iu, g.dt), partial_V=cumulative_trapezoid(iv, g.dt),
        oddness_U=_oddness(iu, last.L1_U), oddness_V=_oddness(iv, last.L1_V),
        envelope=env, envelope_ok=env <= ENVELOPE_TOL,
        options={"route": route, "gauge": "section" if gauge else "none",
                 "stabilize_tau": stabilize_tau, "refine": refine, "dt_requested": dt},
    )
    if len(levels) >= 2:
        rep.richardson_U = _richardson_chain([lv.M_U for lv in levels])
        rep.richardson_V = _richardson_chain([lv.M_V for lv in levels])
    if t_extension:
        g2 = orbit_grid(params, g.dt, 2 * tau_max)
        res2, _, _ = _level(order, params, g2, 2 * tau_max, route, gauge, stabilize_tau)
        rep.t_extension = [last, res2]
    if lower_orders and order > 1:
        for n in range(1, order):
            sub = melnikov(n, params, dt=dt, tau_max=tau_max, refine=0, t_extension=False,
                           route=route, gauge=gauge, stabilize_tau=stabilize_tau, lower_orders=False)
            rep.lower_orders[n] = (sub.M_U, sub.M_V)
    if not rep.envelope_ok:
        warnings.warn(f"forcing envelope {env:.2e} at the grid ends exceeds {ENVELOPE_TOL:.0e}; "
                      "increase tau_max", RuntimeWarning, stacklevel=2)
    return rep


def _richardson_chain(values: Sequence[float]) -> Tuple[float, float]:
    """Extrapolate the last two levels; error bar also covers the previous pair."""
    best, err = richardson(values[-2], values[-1], 4)
    if len(values) >= 3:
        prev, _ = richardson(values[-3], values[-2], 4)
        err = max(err, abs(best - prev))
    return best, err


def melnikov_first(params: OrbitParams, dt: float = 0.02, tau_max: float = DEFAULT_TAU_MAX,
                   refine: int = 0, **kw) -> MelnikovReport:
    """First-order Melnikov functions by the trapezoid rule on the closed form."""
    return melnikov(1, params, dt=dt, tau_max=tau_max, refine=refine, **kw)


def melnikov_second(params: OrbitParams, dt: float = 0.02, tau_max: float = DEFAULT_TAU_MAX,
                    refine: int = 3, **kw) -> MelnikovReport:
    """Second-order Melnikov functions (first variation integrated by RK4)."""
    return melnikov(2, params, dt=dt, tau_max=tau_max, refine=refine, **kw)


def melnikov_third(params: OrbitParams, dt: float = 0.01, tau_max: float = DEFAULT_TAU_MAX,
                   refine: int = 3, **kw) -> MelnikovReport:
    """Third-order Melnikov functions with dt-refinement and T-doubling diagnostics."""
    return melnikov(3, params, dt=dt, tau_max=tau_max, refine=refine, **kw)


# ---------------------------------------------------------------------------
# integral representation of the outer blocks

class CrosscheckError(RuntimeError):
    pass


def _simpson_cumulative(f_nodes: np.ndarray, f_mid: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative Simpson integral using interval midpoints (O(dt^4))."""
    inc = dt / 6.0 * (f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:])
    out = np.zeros_like(f_nodes)
    out[1:] = np.cumsum(inc, axis=0)
    return out


def outer_block_representation(params: OrbitParams, grid: GridSpec, side: str,
                               forcing_scale: float = 1.0) -> np.ndarray:
    """``w^-`` (side ``"-"``) or ``w^+`` (side ``"+"``) via the eigen-representation.

    In the time domain ``w' = omega_p (M w + d(t))`` with ``M = C`` or ``E = -C``.
    With ``M = v diag(lam) v^-1`` and ``zeta' = omega_p``,

        w(t) = v e^{lam zeta(t)} ∫_{t_min}^t e^{-lam zeta(s)} v^-1 d(s) omega_p(s) ds.

    ``lam`` is purely imaginary, so all exponentials are unimodular.
    """
    table = params.table
    M = outer_matrix_C(table) if side == "-" else outer_matrix_E(table)
    res = dense_eig(M, vectors=True)
    lam, v = res.values, res.vectors
    resid = np.linalg.norm(M @ v - v * lam[None, :], axis=0)
    if np.any(resid > 1e-10 * np.linalg.norm(M, 2)):
        raise CrosscheckError("eigendecomposition residual exceeds 1e-10 |M|")
    vinv = np.linalg.inv(v)
    kappa = params.kappa

    def pieces(t):
        pt = orbit_point(params, t)
        zeta = _lncosh(pt.tau) / kappa
        d = np.zeros(np.shape(t) + (4,))
        if side == "-":
            d[..., 0] = -float(model_coefficient(table, 0)) * pt.omega_0
        else:
            d[..., 0] = float(model_coefficient(table, 5)) * pt.omega_5
        d *= forcing_scale
        integrand = np.exp(-np.multiply.outer(zeta, lam)) * ((d @ vinv.T) * pt.omega_p[..., None])
        return zeta, integrand

    t = grid.times()
    zeta, f_nodes = pieces(t)
    _, f_mid = pieces(t[:-1] + grid.dt / 2)
    cum = _simpson_cumulative(f_nodes, f_mid, grid.dt)
    u = np.exp(np.multiply.outer(zeta, lam)) * cum
    return (u @ v.T).real


def _lncosh(tau):
    from .orbit import lncosh

    return lncosh(tau)


def outer_block_crosscheck(params: OrbitParams, grid: GridSpec, variation1: VariationalSolution):
    """Max deviation between the ODE outer blocks and their integral representation.

    Returns ``(deviation, max|w|)`` over both blocks.
    """
    dev, scale = 0.0, 0.0
    for side, modes in (("-", (-1, -2, -3, -4)), ("+", (6, 7, 8, 9))):
        rep = outer_block_representation(params, grid, side)
        ode = variation1.block(modes)
        dev = max(dev, float(np.max(np.abs(rep - ode))))
        scale = max(scale, float(np.max(np.abs(ode))))
    return dev, scale
