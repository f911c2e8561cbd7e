from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from magkg.grid import StateVector, gaussian, inner, make_grid, random_field
from magkg.operators import apply_H
from magkg.potentials import make_potential, random_potential
from magkg.resolvent import (ForbiddenSpectralParameter, LapSchedule, ResolventQuery,
                             apply_K_shift, asymptotics_slope, born_approximation_defect,
                             born_series_residual, born_splitting_check, fit_loglog,
                             free_resolvent_apply, free_resolvent_derivative, kg_resolvent,
                             kg_resolvent_blocks, lap_limit, r1_identity_residual, ray_point,
                             resolvent_derivative, solve_R, stone_surrogate, zero_mode_scan)

import oracle
from conftest import rel

TOL = 1e-10


@pytest.fixture(scope="module")
def grid16():
    return make_grid(16, 6.0)


@pytest.fixture(scope="module")
def pot16(grid16):
    return random_potential(grid16, np.random.default_rng(3), amplitude=0.1, v_amplitude=0.1,
                            width=3.0)


def _yukawa_radial(f_radial, r):
    """(-Delta + 1)^(-1) of a radial profile by the 1D Green's function."""
    if r == 0:
        return quad(lambda s: s * f_radial(s) * np.exp(-s), 0, np.inf, epsabs=1e-13)[0]
    g = lambda s: s * f_radial(s) * (np.exp(-abs(r - s)) - np.exp(-(r + s)))
    val = quad(g, 0, r, epsabs=1e-13)[0] + quad(g, r, np.inf, epsabs=1e-13)[0]
    return val / (2.0 * r)


def test_free_negative_omega_is_multiplier(grid8, free8, rng):
    f = random_field(grid8, rng)
    u = solve_R(free8, ResolventQuery(-5.0), f)
    ref = np.fft.ifftn(np.fft.fftn(f) / (grid8.k2 + 5.0))
    assert rel(u, ref) < 1e-13


def test_forbidden_omega(grid8, pot8, rng):
    f = random_field(grid8, rng)
    with pytest.raises(ForbiddenSpectralParameter):
        solve_R(pot8, ResolventQuery(2.0), f)
    with pytest.raises(ForbiddenSpectralParameter):
        free_resolvent_apply(grid8, 0.0, f)
    with pytest.raises(ValueError):
        ResolventQuery(-1.0, tol=0.0)


def test_resolvent_identity(pot16, grid16, rng):
    f = random_field(grid16, rng)
    w1, w2 = 1 + 0.5j, -2 + 1j
    R1 = lambda g: solve_R(pot16, ResolventQuery(w1, TOL), g)
    R2 = lambda g: solve_R(pot16, ResolventQuery(w2, TOL), g)
    lhs = R1(f) - R2(f)
    rhs = (w1 - w2) * R1(R2(f))
    assert rel(lhs, rhs) < 10 * TOL


def test_defining_equation_residual(pot16, grid16, rng):
    f = random_field(grid16, rng)
    w = 3 + 0.2j
    u = solve_R(pot16, ResolventQuery(w, TOL), f)
    assert rel(apply_H(pot16, u) - w * u, f) <= 10 * TOL


def test_dense_solve(grid8, pot8, rng):
    f = random_field(grid8, rng)
    w = 1 + 0.5j
    Hm = oracle.H(8, grid8.L, pot8.A, pot8.V)
    ref = np.linalg.solve(Hm - w * np.eye(Hm.shape[0]), f.ravel()).reshape(f.shape)
    u = solve_R(pot8, ResolventQuery(w, TOL), f)
    assert rel(u, ref) < 10 * TOL


def test_conjugation_symmetry(grid8, pot8, rng):
    f = random_field(grid8, rng)
    w = 0.7 + 0.3j
    scalar = replace(pot8, A=0 * pot8.A)
    a = solve_R(scalar, ResolventQuery(np.conj(w), 1e-12), np.conj(f))
    assert rel(a, np.conj(solve_R(scalar, ResolventQuery(w, 1e-12), f))) < 1e-10


def test_free_resolvent_against_yukawa_kernel():
    grid = make_grid(32, 8.0)
    f = gaussian(grid, 1.0)
    u = free_resolvent_apply(grid, -1.0, f).real
    i0 = grid.n // 2
    radii = grid.x_table[i0:i0 + 10]
    ref = np.array([_yukawa_radial(lambda s: np.exp(-s * s), r) for r in radii])
    got = u[i0, i0, i0:i0 + 10]
    assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-4


@pytest.mark.parametrize("w", [-1.0, 2 + 0.1j])
def test_free_resolvent_inverse(grid8, rng, w):
    f = random_field(grid8, rng)
    u = free_resolvent_apply(grid8, w, f)
    back = np.fft.ifftn((grid8.k2 - w) * np.fft.fftn(u))
    assert rel(back, f) < 1e-12


def test_free_derivative_exact(grid8, free8, rng):
    f = random_field(grid8, rng)
    w = -0.5 + 0.5j
    d = resolvent_derivative(free8, ResolventQuery(w), 1, f)
    ref = np.fft.ifftn(np.fft.fftn(f) / (grid8.k2 - w) ** 2)
    assert rel(d, ref) < 1e-13
    assert rel(free_resolvent_derivative(grid8, w, 1, f), ref) < 1e-13


@pytest.mark.parametrize("k", [1, 2])
def test_derivative_finite_difference_order(grid8, pot8, rng, k):
    f = random_field(grid8, rng)
    w = -1 + 0.5j
    exact = resolvent_derivative(pot8, ResolventQuery(w, 1e-13), k, f)
    deltas = np.array([0.2, 0.1, 0.05])
    errs = []
    for d in deltas:
        lo = resolvent_derivative(pot8, ResolventQuery(w - d, 1e-13), k - 1, f)
        hi = resolvent_derivative(pot8, ResolventQuery(w + d, 1e-13), k - 1, f)
        errs.append(rel((hi - lo) / (2 * d), exact))
    slope = fit_loglog(deltas, np.array(errs)).exponent
    assert abs(slope - 2.0) < 0.2


def test_r1_identity(grid8, pot8, rng):
    f = random_field(grid8, rng)
    assert r1_identity_residual(pot8, ResolventQuery(1 + 0.5j, TOL), f) < 10 * TOL


def test_kg_free_blocks(grid8, free8, rng):
    F = StateVector(random_field(grid8, rng), random_field(grid8, rng))
    w = 2j
    res = kg_resolvent(free8, ResolventQuery(w, TOL), F)
    R5 = lambda g: np.fft.ifftn(np.fft.fftn(g) / (grid8.k2 + 5.0))
    u = R5(w * F.psi + 1j * F.pi)
    assert rel(res.state.psi, u) < 1e-12
    assert rel(res.state.pi, -1j * F.psi - 1j * w * u) < 1e-12
    assert res.discrepancy < 1e-10


def test_kg_defining_equation(grid16, pot16, rng):
    F = StateVector(random_field(grid16, rng), random_field(grid16, rng))
    w = 0.5 + 0.5j
    res = kg_resolvent(pot16, ResolventQuery(w, TOL), F)
    back = apply_K_shift(pot16, w, res.state)
    assert rel(back.stacked(), F.stacked()) < 10 * TOL
    assert res.discrepancy < 10 * TOL


def test_kg_against_dense(grid8, pot8, rng):
    F = StateVector(random_field(grid8, rng), random_field(grid8, rng))
    w = 0.3 + 1.1j
    Km = oracle.K(8, grid8.L, pot8.A, pot8.V, pot8.m)
    ref = np.linalg.solve(Km - w * np.eye(Km.shape[0]), F.stacked())
    got = kg_resolvent_blocks(pot8, ResolventQuery(w, TOL), F).stacked()
    assert rel(got, ref) < 10 * TOL


def test_kg_on_continuum_rejected(pot8, grid8, rng):
    F = StateVector(random_field(grid8, rng), random_field(grid8, rng))
    with pytest.raises(ForbiddenSpectralParameter):
        kg_resolvent(pot8, ResolventQuery(1.5), F)


def test_born_series_without_V(grid8, pot8, rng):
    p = pot8.without_V()
    F = StateVector(random_field(grid8, rng), random_field(grid8, rng))
    rep = born_series_residual(p, ResolventQuery(2j, TOL), F)
    assert rep.series_residual < 1e-14 and rep.one_step_residual < 1e-14


def test_born_series_with_V(grid8, pot8, rng):
    F = StateVector(random_field(grid8, rng), random_field(grid8, rng))
    rep = born_series_residual(pot8, ResolventQuery(0.4 + 1j, TOL), F)
    assert rep.series_residual < 10 * TOL
    assert rep.one_step_residual < 10 * TOL


def test_born_approximation_is_second_order(grid8, pot8, rng):
    F = StateVector(random_field(grid8, rng), random_field(grid8, rng))
    lams = np.array([0.1, 0.05, 0.025])
    q = ResolventQuery(0.4 + 1j, 1e-13)
    defects = [born_approximation_defect(replace(pot8, V=lam * pot8.V), q, F) for lam in lams]
    assert abs(fit_loglog(lams, np.array(defects)).exponent - 2.0) < 0.2


def test_born_splitting(grid8, rng):
    p = make_potential("gaussian-bump", {"a": (0.05, 0.0, 0.0), "w": 2.0, "v0": 0.5}, grid8)
    f = random_field(grid8, rng)
    rep = born_splitting_check(p, ResolventQuery(-50.0, TOL), f)
    assert rep.residual < 10 * TOL and not rep.flagged
    rep0 = born_splitting_check(p.without_V(), ResolventQuery(-50.0, TOL), f)
    assert rep0.residual < 1e-14


def test_lap_free_conjugate_sides(grid8, free8):
    f = gaussian(grid8, 1.5)
    sched = LapSchedule(0.2, 0.5, 6)
    plus = lap_limit(free8, 4.0, "+", f, sched)
    minus = lap_limit(free8, 4.0, "-", f, sched)
    assert rel(minus.u_limit, np.conj(plus.u_limit)) < 1e-10
    assert not plus.failed
    assert np.all(np.abs(plus.ratios - 0.5) < 0.1)


def test_lap_positivity_and_stone(grid8, pot8):
    f = gaussian(grid8, 1.5)
    res = lap_limit(pot8, 4.0, "+", f, LapSchedule(0.2, 0.5, 8))
    assert inner(grid8, res.u_limit, f).imag >= -1e-8
    Hm = oracle.H(8, grid8.L, pot8.A, pot8.V)
    ref = stone_surrogate(Hm, 4.0, "+", f, eta=1e-3)
    assert rel(res.u_limit, ref) < 0.05


def test_lap_argument_checks(grid8, free8):
    f = gaussian(grid8, 1.5)
    with pytest.raises(ValueError):
        lap_limit(free8, 4.0, "up", f, LapSchedule())
    with pytest.raises(ValueError):
        lap_limit(free8, -1.0, "+", f, LapSchedule())
    with pytest.raises(ValueError):
        LapSchedule(ratio=1.5)


def test_zero_mode_identity_at_zero_coupling():
    scan = zero_mode_scan(make_grid(8, 6.0), [0.0, 1.0])
    assert scan.sigma_min[0] == 1.0
    assert 0 < scan.sigma_min[1] < 1.5


def test_ray_points():
    assert ray_point("negative", 4.0) == -4.0
    assert ray_point("parabola", 4.0, 1.0) == 4 + 2j
    with pytest.raises(ValueError):
        ray_point("sideways", 1.0)


def test_free_high_energy_slope_negative_axis():
    """Free resolvent norm H^0_sigma -> H^0_-sigma along omega = -|omega|."""
    grid = make_grid(32, 6.0)
    p = make_potential("zero", {}, grid)
    omegas = [ray_point("negative", r) for r in np.geomspace(10, 200, 6)]
    fit = asymptotics_slope(p, ("H", 0, 0, 0), omegas, sigma=1.0)
    assert abs(fit.exponent - (-0.5)) <= 0.15
