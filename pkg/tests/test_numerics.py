import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dashline.numerics import (EigenSolverError, GridSpec, NonFiniteError, biquadratic_roots,
                               companion_biquadratic, cumulative_trapezoid, dense_eig,
                               match_multisets, richardson, rk4, trapezoid)


def test_grid_integer_steps():
    g = GridSpec(0.0, 1.0, 0.1)
    assert g.n_steps == 10
    assert g.times()[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0, 0.3)
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0, 0.0)


def test_centered_grid():
    g = GridSpec.centered(2.5, 10.0, 0.03)
    assert g.n_steps % 2 == 0
    assert g.dt <= 0.03
    assert g.times()[g.n_steps // 2] == pytest.approx(2.5, abs=1e-12)


def test_rk4_exponential_order():
    errs = []
    for dt in (0.1, 0.05, 0.025):
        y = rk4(lambda t, y: -y, np.array([1.0]), GridSpec(0.0, 1.0, dt))
        errs.append(abs(y[-1, 0] - math.exp(-1)))
    for a, b in zip(errs, errs[1:]):
        assert 14 < a / b < 18


def test_rk4_constant_exact():
    y = rk4(lambda t, y: np.zeros_like(y), np.array([1.25, -3.0]), GridSpec(0.0, 5.0, 0.5))
    assert np.all(y == np.array([1.25, -3.0]))


def test_rk4_harmonic_energy_drift_fourth_order():
    def osc(t, y):
        return np.array([y[1], -y[0]])

    drifts = []
    for dt in (0.2, 0.1):
        y = rk4(osc, np.array([1.0, 0.0]), GridSpec(0.0, 2 * math.pi, 2 * math.pi / round(2 * math.pi / dt)))
        e = 0.5 * (y[:, 0] ** 2 + y[:, 1] ** 2)
        drifts.append(abs(e[-1] - 0.5))
    assert 20 < drifts[0] / drifts[1] < 40          # energy error of RK4 is O(dt^5) per period


def test_rk4_stage_times_on_half_grid():
    seen = []

    def rhs(t, y):
        seen.append(t)
        return y

    g = GridSpec(1.0, 2.0, 0.25)
    rk4(rhs, np.array([1.0]), g)
    half = (np.array(seen) - 1.0) / 0.125
    assert np.allclose(half, np.round(half), atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rk4_nonfinite_reports_step():
    with pytest.raises(NonFiniteError) as exc:
        rk4(lambda t, y: y * y, np.array([1.0]), GridSpec(0.0, 2.0, 0.1))
    assert exc.value.step > 0


def test_rk4_post_step_projection():
    g = GridSpec(0.0, 1.0, 0.1)
    y = rk4(lambda t, y: np.array([1.0, 1.0]), np.zeros(2), g,
            post_step=lambda k, t, y: np.array([y[0], 0.0]))
    assert np.all(y[:, 1] == 0.0)
    assert y[-1, 0] == pytest.approx(1.0)


def test_rk4_deterministic():
    f = lambda t, y: np.array([y[1], -np.sin(y[0])])
    g = GridSpec(0.0, 10.0, 0.01)
    a = rk4(f, np.array([1.0, 0.0]), g)
    b = rk4(f, np.array([1.0, 0.0]), g)
    assert np.array_equal(a, b)


def test_trapezoid_constant_and_sin():
    assert trapezoid(np.ones(11), 0.1) == pytest.approx(1.0, abs=1e-15)
    errs = []
    for n in (16, 32, 64):
        x = np.linspace(0, math.pi, n + 1)
        errs.append(abs(trapezoid(np.sin(x), math.pi / n) - 2.0))
    assert 3.9 < errs[0] / errs[1] < 4.1
    assert 3.9 < errs[1] / errs[2] < 4.1


def test_trapezoid_odd_cancels():
    x = np.linspace(-3, 3, 601)
    assert abs(trapezoid(x ** 3 * np.exp(-x * x), 0.01)) < 1e-15


def test_trapezoid_needs_two_samples():
    with pytest.raises(ValueError):
        trapezoid(np.ones(1), 0.1)


def test_cumulative_trapezoid_matches_total():
    s = np.cos(np.linspace(0, 2, 201))
    c = cumulative_trapezoid(s, 0.01)
    assert c[0] == 0.0
    assert c[-1] == pytest.approx(trapezoid(s, 0.01), abs=1e-15)


def test_dense_eig_diag():
    vals = np.sort(dense_eig(np.diag([1.0, 2.0, 3.0])).real)
    assert np.allclose(vals, [1, 2, 3], atol=1e-14)


def test_dense_eig_residual_contract_and_vectors():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(12, 12))
    res = dense_eig(m, vectors=True)
    assert np.all(res.residuals <= 1e-10 * res.matrix_norm)
    assert np.allclose(np.linalg.norm(res.vectors, axis=0), 1.0)


def test_dense_eig_violation_reported():
    m = np.random.default_rng(0).normal(size=(8, 8))
    with pytest.raises(EigenSolverError) as exc:
        dense_eig(m, tol=1e-30)                      # unattainable contract
    assert exc.value.partial is not None


def test_dense_eig_rejects_bad_input():
    with pytest.raises(ValueError):
        dense_eig(np.ones((2, 3)))
    with pytest.raises(ValueError):
        dense_eig(np.array([[np.nan]]))


def test_dense_eig_similarity_invariance():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(10, 10))
    q, _ = np.linalg.qr(rng.normal(size=(10, 10)))
    assert match_multisets(dense_eig(m), dense_eig(q @ m @ q.T)) < 1e-10


def test_biquadratic_trivial():
    r = biquadratic_roots(0.0, -1.0)
    assert match_multisets(r, [1, -1, 1j, -1j]) < 1e-15


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_biquadratic_matches_companion(a, b):
    r = biquadratic_roots(a, b)
    poly = r ** 4 + a * r ** 2 + b
    assert np.max(np.abs(poly)) < 1e-10 * max(1.0, abs(a) ** 2, abs(b))
    if abs(b) > 1e-3 and abs(a * a - 4 * b) > 1e-3:
        comp = np.linalg.eigvals(companion_biquadratic(a, b))
        assert match_multisets(r, comp) < 1e-8


@given(st.floats(0.01, 5), st.floats(0.01, 5))
def test_biquadratic_complex_case_is_quadruple(x, y):
    # a^2 - 4b < 0 whenever b > a^2 / 4
    a = x
    b = a * a / 4 + y
    r = biquadratic_roots(a, b)
    assert match_multisets(r, -r) < 1e-12
    assert match_multisets(r, r.conj()) < 1e-12


def test_richardson_removes_fourth_order_term():
    exact = 1.0
    f = lambda h: exact + 3.0 * h ** 4
    value, err = richardson(f(0.1), f(0.05))
    assert abs(value - exact) < 1e-15
    assert err == pytest.approx(abs(f(0.05) - f(0.1)) / 15)


def test_match_multisets():
    assert match_multisets([1, 2, 3], [3, 1, 2]) == 0.0
    with pytest.raises(ValueError):
        match_multisets([1], [1, 2])
