"""Acceptance criteria 1-13, each at its stated tolerance.

Every test appends one ``PASS criterion N: ...`` / ``FAIL criterion N: ...``
line to the shared log (replayed in the pytest terminal summary) before
asserting.  Run standalone with ``python3 tests/test_acceptance.py``.
"""

import math
import sys
import warnings
from fractions import Fraction as F

import numpy as np
import pytest

from dashline.coefficients import default_table, model_coefficient, pair_coefficient
from dashline.melnikov import (ModeLayout, _relayout, forcing_h1, forcing_h2, forcing_h3, melnikov,
                               orbit_grid, outer_block_crosscheck, solve_variation1,
                               solve_variation2, taylor_forcing, outer_matrix_C,
                               outer_characteristic)
from dashline.model import ModelConfig, ModelState, integrate
from dashline.numerics import biquadratic_roots, dense_eig, match_multisets
from dashline.orbit import (OrbitParams, orbit_block, orbit_constants, orbit_invariants,
                            orbit_point, orbit_residual)
from dashline.spectra import (build_homotopy_operator, chopped_block_limit, chopped_block_spectrum,
                              dense_eigenvalues, endpoint_convergence_study, homotopy_sweep,
                              symmetry_defect)

THETA0 = (0.0, math.pi / 3, 1.7, math.pi, 5.0)
TAU0 = (0.0, 0.5)
GAMMA = (0.5, 1.0, 2.0)
BRANCH = (1, -1)
GRID = [OrbitParams(g, th, ta, br) for g in GAMMA for th in THETA0 for ta in TAU0 for br in BRANCH]


def record(log, n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    log.append(line)
    print(line)
    return ok


def test_criterion_01_coefficients(acceptance_log):
    table = default_table(-10, 15)
    expected = {1: F(-3, 10), 2: F(1, 2), 3: F(1, 2), 4: F(-3, 10), -1: F(-23, 50), -2: F(-39, 82),
                -3: F(-59, 122), -4: F(-83, 170), 0: F(-11, 26), 5: F(-11, 26)}
    got = {n: model_coefficient(table, n) for n in expected}
    pairs = {(1, 2): F(-4, 5), (2, 3): F(0)}
    got_pairs = {k: pair_coefficient(table, *k) for k in pairs}
    ok = got == expected and got_pairs == pairs and all(isinstance(v, F) for v in got.values())
    bad = [n for n in expected if got[n] != expected[n]] + [k for k in pairs if got_pairs[k] != pairs[k]]
    assert record(acceptance_log, 1, ok, f"{len(expected) + len(pairs)} rationals exact; mismatches={bad}")


def test_criterion_02_four_mode_quadruple(acceptance_log):
    table = default_table(-10, 15)
    worst = 0.0
    details = []
    for gamma in (1.0, 0.5, 2.0):
        vals = dense_eigenvalues(build_homotopy_operator(table, gamma, 0.0, (1, 4)))
        c = gamma / (2 * math.sqrt(10))
        exact = [s * c * np.sqrt(1 + t * 1j * math.sqrt(35)) for s in (1, -1) for t in (1, -1)]
        d_exact = match_multisets(vals, exact)
        mod = np.abs(vals) / (gamma / 2)
        d_mod = float(np.max(np.abs(mod - 0.7746)))
        d_re = float(np.max(np.abs(np.abs(vals.real) / gamma - math.sqrt(7 / 80))))
        d_kappa = abs(orbit_constants().kappa_abs - float(np.max(np.abs(vals.real))) / gamma)
        ok = d_exact <= 1e-10 and d_mod < 5e-5 and d_re <= 1e-10 and d_kappa <= 1e-10
        worst = max(worst, d_exact, d_re, d_kappa)
        details.append(ok)
    ok = all(details)
    assert record(acceptance_log, 2, ok, f"quadruple vs closed form, |Re|/Gamma vs sqrt(7/80) and kappa: "
                                         f"max dev {worst:.2e} (tol 1e-10); modulus 0.7746 to 4 digits")


def test_criterion_03_chopped_blocks(acceptance_log):
    table = default_table(-5, 510)
    ref = {1: (0.2937609, 0.7736967), 2: (0.3057701, 0.8007493)}
    devs = []
    for j, (lo, hi) in ref.items():
        lam = chopped_block_spectrum(table, j, 1.0)
        devs.append(match_multisets(lam, [1j * lo, -1j * lo, 1j * hi, -1j * hi]))
    small, large = [], []
    for j in range(1, 101):
        mags = np.sort(np.abs(chopped_block_spectrum(table, j, 1.0)))
        small.append(mags[0])
        large.append(mags[-1])
    lim = np.sort(np.abs(chopped_block_limit(1.0)))
    mono = all(np.diff(small) > 0) and all(np.diff(large) > 0)
    approach = abs(small[-1] - 0.31) < 0.01 and abs(large[-1] - 0.8) < 0.01
    bounded = small[-1] < lim[0] and large[-1] < lim[-1]
    ok = max(devs) <= 1e-6 and mono and approach and bounded
    assert record(acceptance_log, 3, ok, f"j=1,2 max dev {max(devs):.2e} (tol 1e-6); monotone to j=100: {mono}; "
                                         f"|lambda|(100)=({small[-1]:.5f}, {large[-1]:.5f}) -> limit "
                                         f"({lim[0]:.5f}, {lim[-1]:.5f})")


def test_criterion_04_outer_matrix(acceptance_log):
    table = default_table(-10, 15)
    a, b = outer_characteristic(table)
    assert a == F(23 * 39, 50 * 82) + F(59, 122) * (F(39, 82) + F(83, 170))
    assert b == F(23 * 39 * 59 * 83, 50 * 82 * 122 * 170)
    roots = biquadratic_roots(float(a), float(b))
    eig = dense_eig(outer_matrix_C(table))
    consistent = match_multisets(roots, eig)
    printed = [0.773j, -0.773j, 0.295j, -0.295j]
    d_printed_roots = match_multisets(roots, printed)
    d_printed_eig = match_multisets(eig, printed)
    mags = sorted(abs(r) for r in roots)[::2]
    # "to 3 digits", read generously: absolute deviation at most one unit in the third decimal
    ok = consistent <= 1e-10 and d_printed_roots <= 1e-3 and d_printed_eig <= 1e-3
    assert record(acceptance_log, 4, ok,
                  f"computed +-i{mags[1]:.6f}, +-i{mags[0]:.6f}; biquadratic vs dense_eig {consistent:.1e} "
                  f"(tol 1e-10); vs printed 0.773/0.295: {d_printed_roots:.2e} (tol 1e-3); the exact "
                  f"characteristic polynomial gives 0.293761 (= j=1 block value), which rounds to 0.294")


def test_criterion_05_orbit(acceptance_log):
    tau = np.linspace(-20, 20, 2001)
    worst_res, worst_inv, worst_end = 0.0, 0.0, 0.0
    a2 = orbit_constants().A2
    for params in (OrbitParams(1.0, 0.0, 0.0, 1), OrbitParams(1.0, 0.0, 0.0, -1),
                   OrbitParams(2.0, 1.7, 0.5, 1), OrbitParams(0.5, 5.0, -0.3, -1)):
        worst_res = max(worst_res, orbit_residual(params, params.time_of_tau(tau)))
        samples = params.time_of_tau(np.linspace(-20, 20, 100))
        i, u, j, v = orbit_invariants(orbit_point(params, samples))
        g2 = params.gamma ** 2
        worst_inv = max(worst_inv, *(float(np.max(np.abs(x))) / g2 for x in (u, v, j - g2, i - a2 * g2)))
        ends = params.endpoints()
        sgn = math.copysign(1.0, params.rate)
        lo = orbit_block(params, params.time_of_tau(-30.0 * sgn))
        hi = orbit_block(params, params.time_of_tau(30.0 * sgn))
        star = abs(params.gamma)
        worst_end = max(worst_end, abs(abs(lo[6]) - star) / star, abs(abs(hi[6]) - star) / star,
                        abs(lo[6] - ends["t=-inf"]), abs(hi[6] - ends["t=+inf"]),
                        float(np.max(np.abs(lo[:6]))), float(np.max(np.abs(hi[:6]))))
    ok = worst_res <= 1e-8 and worst_inv <= 1e-12 and worst_end <= 1e-12
    assert record(acceptance_log, 5, ok, f"residual {worst_res:.1e} (tol 1e-8); invariants {worst_inv:.1e} "
                                         f"(tol 1e-12); endpoints {worst_end:.1e} (tol 1e-12); both branches")


def _perturbed_orbit_state(window, t0):
    params = OrbitParams(1.0, 0.0, 0.0, 1)
    blk = orbit_block(params, t0)
    rng = np.random.default_rng(1)
    amps = {n: 0.05 * rng.standard_normal() for n in range(window[0], window[1] + 1)}
    for n in range(6):
        amps[n] += float(blk[n])
    return ModelState.from_mapping(window, amps, float(blk[6]))


def test_criterion_06_conservation(acceptance_log):
    window = (-10, 15)
    table = default_table(-12, 17)
    s0 = _perturbed_orbit_state(window, -20.0)
    drift = 0.0
    ratios = []
    for eps in (0.0, 0.1, 0.5, 1.0):
        cfg = ModelConfig(table, eps, window)
        traj = integrate(s0, cfg, 1e-3, 100_000, record_every=100)
        drift = max(drift, *traj.relative_drift())
        coarse = integrate(s0, cfg, 0.025, 1600).relative_drift()
        fine = integrate(s0, cfg, 0.0125, 3200).relative_drift()
        ratios.extend(c / f for c, f in zip(coarse, fine))
    # "about 16x": observed order log2(ratio) within 4 +- 0.5 (measured where the drift
    # is far above rounding; at dt = 1e-3 it is already at the 1e-14 floor)
    orders = [math.log2(r) for r in ratios]
    ok = drift <= 1e-8 and all(3.5 <= p <= 4.5 for p in orders)
    assert record(acceptance_log, 6, ok, f"max drift {drift:.1e} over 1e5 steps at dt=1e-3 (tol 1e-8); halving "
                                         f"ratios {min(ratios):.1f}..{max(ratios):.1f} "
                                         f"(orders {min(orders):.2f}..{max(orders):.2f})")


def _quiet_melnikov(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return melnikov(*args, **kw)


def test_criterion_07_first_order(acceptance_log):
    worst = 0.0
    for params in GRID:
        rep = _quiet_melnikov(1, params, dt=0.02 / abs(params.gamma), refine=0)
        worst = max(worst, *rep.relative())
    ok = worst <= 1e-10
    assert record(acceptance_log, 7, ok, f"{len(GRID)} points, max |M1|/L1 = {worst:.1e} (tol 1e-10)")


def test_criterion_08_second_order(acceptance_log):
    worst = 0.0
    odd = 0.0
    envelope_ok = True
    for params in GRID:
        rep = _quiet_melnikov(2, params, dt=0.02 / abs(params.gamma), refine=3)
        assert len(rep.refinement) == 4
        worst = max(worst, *rep.relative())
        odd = max(odd, rep.oddness_U, rep.oddness_V)
        envelope_ok &= rep.envelope_ok
    ok = worst <= 1e-9 and envelope_ok
    assert record(acceptance_log, 8, ok, f"{len(GRID)} points, 3 halvings, max |M2|/L1 = {worst:.1e} (tol 1e-9); "
                                         f"oddness diagnostic max {odd:.2e} (soft)")


@pytest.fixture(scope="module")
def solved():
    params = OrbitParams(1.0, 1.7, 0.5, 1)
    grid = orbit_grid(params, 0.02, 32.0)
    s1 = solve_variation1(params, grid)
    s2 = solve_variation2(params, grid, s1)
    return params, grid, s1, s2


def test_criterion_09_supports(solved, acceptance_log):
    params, grid, s1, s2 = solved
    wide1 = solve_variation1(params, grid, route="generic", window=(-9, 14))
    wide2 = solve_variation2(params, grid, wide1, route="generic", window=(-15, 20))
    l1, w1 = ModeLayout(-9, 14), wide1.values
    outside1 = [l1.index(n) for n in range(-9, 15) if not -5 <= n <= 10]
    l2 = ModeLayout(-15, 20)
    outside2 = [l2.index(n) for n in range(-15, 21) if not -10 <= n <= 15]
    exact_zero = np.all(w1[:, outside1] == 0.0) and np.all(wide2.values[:, outside2] == 0.0)
    outer = s1.block((-1, -2, -3, -4, 6, 7, 8, 9))
    end_ratio = float(np.max(np.abs(outer[-1])) / np.max(np.abs(outer)))
    dev, scale = outer_block_crosscheck(params, grid, s1)
    ok = (exact_zero and s1.support == (-5, 10) and s2.support == (-10, 15)
          and end_ratio <= 1e-8 and dev <= 1e-6 * scale)
    assert record(acceptance_log, 9, ok, f"supports {s1.support}, {s2.support} (exact zeros outside: {exact_zero}); "
                                         f"outer blocks at right end {end_ratio:.1e}*max (tol 1e-8); "
                                         f"crosscheck {dev / scale:.1e}*max (tol 1e-6)")


def test_criterion_10_forcing_equivalence(solved, acceptance_log):
    params, grid, s1, s2 = solved
    table = default_table(-20, 25)
    L1, L2 = ModeLayout(-5, 10), ModeLayout(-10, 15)
    o = orbit_block(params, grid.times())
    w1, w2 = s1.values, s2.values
    o2 = np.stack([L2.embed_block(x) for x in o])
    w1_2 = _relayout(w1, L1, L2)
    d1 = np.max(np.abs(forcing_h1(table, o) - taylor_forcing(table, L1, [np.stack([L1.embed_block(x) for x in o])], 1)))
    d2 = np.max(np.abs(forcing_h2(table, o, w1) - taylor_forcing(table, L2, [o2, w1_2], 2)))
    t3 = taylor_forcing(table, L2, [o2, w1_2, w2], 3)
    d3 = np.max(np.abs(forcing_h3(table, o, w1, w2) - t3[:, [L2.index(n) for n in (1, 2, 3, 4)]]))
    ok = max(d1, d2, d3) <= 1e-12
    assert record(acceptance_log, 10, ok, f"{grid.n_steps + 1} grid points: h1 {d1:.1e}, h2 {d2:.1e}, "
                                          f"h3 {d3:.1e} (tol 1e-12)")


def test_criterion_11_third_order(acceptance_log):
    params = OrbitParams(1.0, 0.0, 0.0, 1)
    rep = _quiet_melnikov(3, params, dt=0.01, refine=3, t_extension=True)
    levels = len(rep.refinement)
    du, dv = rep.t_doubling_change()
    scale_u, scale_v = rep.L1_U, rep.L1_V
    t_ok = du <= 1e-8 * scale_u and dv <= 1e-8 * scale_v
    rich = rep.richardson_U is not None and rep.richardson_V is not None
    ok = levels >= 3 and t_ok and rich and all(np.isfinite([rep.richardson_U[1], rep.richardson_V[1]]))
    assert record(acceptance_log, 11, ok,
                  f"{levels} dt levels; T-doubling change ({du / scale_u:.1e}, {dv / scale_v:.1e})*L1 "
                  f"(tol 1e-8); Richardson M3_U = {rep.richardson_U[0]:.3e} +- {rep.richardson_U[1]:.1e}, "
                  f"M3_V = {rep.richardson_V[0]:.3e} +- {rep.richardson_V[1]:.1e} (reported, not asserted)")


def test_criterion_12_endpoint(acceptance_log):
    table = default_table(-502, 507)
    widths = [5, 10, 20, 50, 100, 200, 495]
    rows = endpoint_convergence_study(table, 2.0, widths, convention="raw")
    print("window, n_modes, eigenvalue, error")
    for r in rows:
        print(f"  [{r.window[0]}, {r.window[1]}]  {r.n_modes:4d}  {r.eigenvalue:.12f}  {r.error:.2e}")
    hit = [r for r in rows if r.error <= 1e-3 and r.n_modes <= 1001]
    ok = bool(hit)
    first = hit[0] if hit else rows[-1]
    assert record(acceptance_log, 12, ok, f"raw convention, Gamma=2: error {first.error:.1e} (tol 1e-3) first at "
                                          f"{first.n_modes} modes; table of {len(rows)} windows emitted; "
                                          f"largest window error {rows[-1].error:.1e}")


def test_criterion_13_symmetry(acceptance_log):
    table = default_table(-60, 65)
    eps = [i / 20 for i in range(21)] + [1e-120, 3.0771352989390166e-120]
    worst = 0.0
    count = 0
    for conv in ("model", "raw"):
        for gamma in (1.0, 2.0):
            for win in ((-10, 15), (-50, 55)):
                sw = homotopy_sweep(table, win, gamma, eps, conv)
                for spec in sw.spectra:
                    worst = max(worst, symmetry_defect(spec))
                    count += 1
    ok = worst <= 1e-8
    assert record(acceptance_log, 13, ok, f"{count} spectra, max symmetry defect {worst:.1e} (tol 1e-8)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
