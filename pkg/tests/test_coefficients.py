from fractions import Fraction

import pytest
from hypothesis import assume, given, strategies as st

from dashline.coefficients import (CoefficientTable, ModeDomainError, ModeIndex, WaveConfig, as_mode,
                                   default_table, epsilon_factor, interaction_coefficient,
                                   line_arrays, model_coefficient, pair_coefficient,
                                   raw_coefficient)

F = Fraction

QUOTED = {1: F(-3, 10), 2: F(1, 2), 3: F(1, 2), 4: F(-3, 10), 0: F(-11, 26), 5: F(-11, 26),
          -1: F(-23, 50), -2: F(-39, 82), -3: F(-59, 122), -4: F(-83, 170)}

small = st.integers(min_value=-6, max_value=6)
modes = st.tuples(small, small).filter(lambda k: k != (0, 0)).map(as_mode)


def float_coefficient(p, q):
    """Independent floating-point evaluation of A(p, q)."""
    p1, p2 = p
    q1, q2 = q
    return 0.5 * (1.0 / (q1 * q1 + q2 * q2) - 1.0 / (p1 * p1 + p2 * p2)) * (p1 * q2 - p2 * q1)


@pytest.fixture(scope="module")
def table():
    return default_table()


@pytest.mark.parametrize("n,value", sorted(QUOTED.items()))
def test_quoted_model_coefficients(table, n, value):
    assert model_coefficient(table, n) == value
    assert isinstance(model_coefficient(table, n), Fraction)


def test_quoted_pair_coefficients(table):
    assert pair_coefficient(table, 1, 2) == F(-4, 5)
    assert pair_coefficient(table, 2, 3) == 0
    assert pair_coefficient(table, 3, 4) == F(4, 5)
    # argument order is irrelevant
    assert pair_coefficient(table, 2, 1) == F(-4, 5)


def test_doubling_relation(table):
    for n in range(-10, 16):
        assert model_coefficient(table, n) == 2 * raw_coefficient(table, n)


def test_against_float_oracle(table):
    cfg = table.config
    for n in range(-10, 16):
        k = cfg.mode(n)
        expected = 2 * float_coefficient((cfg.p.k1, cfg.p.k2), (k.k1, k.k2))
        assert float(model_coefficient(table, n)) == pytest.approx(expected, rel=1e-15, abs=1e-15)


def test_outside_table_is_computed(table):
    far = model_coefficient(table, 40)
    assert far == 2 * interaction_coefficient(table.config.p, table.config.mode(40))


def test_zero_mode_rejected():
    with pytest.raises(ModeDomainError):
        interaction_coefficient(ModeIndex(0, 0), ModeIndex(1, 2))
    with pytest.raises(ModeDomainError):
        interaction_coefficient(ModeIndex(1, 2), ModeIndex(0, 0))


def test_collinear_class_rejected():
    with pytest.raises(ValueError):
        WaveConfig(khat=ModeIndex(2, 2), p=ModeIndex(1, 1))


def test_gate():
    assert epsilon_factor(0, 0.3) == 0.3
    assert epsilon_factor(-5, 0.3) == 0.3
    assert epsilon_factor(10, 0.0) == 0.0
    assert epsilon_factor(1, 0.0) == 1
    assert epsilon_factor(-4, 0.7) == 1


def test_as_mode_forms():
    assert as_mode("-3,-2") == ModeIndex(-3, -2)
    assert as_mode((1, 1)) == ModeIndex(1, 1)
    assert as_mode(ModeIndex(4, 5)) == ModeIndex(4, 5)


def test_line_arrays_match_table():
    t = CoefficientTable.build(n_min=-12, n_max=17)
    a, pair, norm2 = line_arrays(t, -10, 15)
    assert a.shape == (26,)
    assert a[11] == float(model_coefficient(t, 1))
    assert pair.shape == (25,)
    assert pair[10] == float(pair_coefficient(t, 0, 1))   # pairs start at (lo, lo+1)
    assert norm2[13] == t.config.mode(3).norm2


def test_table_is_hashable_and_equal():
    assert hash(default_table()) == hash(default_table())
    assert default_table() == default_table()


@given(modes, modes)
def test_symmetry(p, q):
    assume(not (p + q).is_zero())
    assert interaction_coefficient(p, q) == interaction_coefficient(q, p)


@given(modes, modes)
def test_jacobi_identities(p, q):
    k = -(p + q)
    assume(not k.is_zero())
    a_pq = interaction_coefficient(p, q)
    a_qk = interaction_coefficient(q, k)
    a_kp = interaction_coefficient(k, p)
    assert a_pq + a_qk + a_kp == 0
    assert F(1, k.norm2) * a_pq + F(1, p.norm2) * a_qk + F(1, q.norm2) * a_kp == 0


@given(modes, modes)
def test_sign_flip(p, q):
    assert interaction_coefficient(-p, -q) == interaction_coefficient(p, q)
