from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import expm

from magkg.evolution import (CutoffSpec, EvolutionPlan, HorizonError, SupercriticalPotential,
                             chi_filter, concentration_radius, discrete_spectrum, energy,
                             evolve_series, leapfrog_stability_limit, project_Pc, propagate_U,
                             propagate_U0, smooth_step, spectral_rep_check)
from magkg.grid import StateVector, energy_norm, gaussian, make_grid, random_field
from magkg.krylov import KrylovSpec
from magkg.potentials import make_potential, random_potential

import oracle
from conftest import rel

FULL = KrylovSpec(max_dim=1100, tol=1e-12)


def _state(grid, rng, band=None):
    return StateVector(random_field(grid, rng, kcut=band), random_field(grid, rng, kcut=band))


def _dense_K(p):
    return oracle.K(p.grid.n, p.grid.L, p.A, p.V, p.m)


@pytest.fixture(scope="module")
def small_pot():
    grid = make_grid(8, 4.0)
    return random_potential(grid, np.random.default_rng(9), amplitude=0.05, v_amplitude=0.05)


def test_smooth_step():
    x = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(smooth_step(x), [0, 0, 0.5, 1, 1])


def test_cutoff_validation():
    with pytest.raises(ValueError):
        CutoffSpec("wedge")
    with pytest.raises(ValueError):
        CutoffSpec("band", lo=2.0, hi=1.0, ramp=0.1)
    c = CutoffSpec("low", m=1.0)
    assert c(0.0) == 1.0 and c(1.6) == 0.0 and c.support() == (0.0, 1.5)


def test_U0_identity_at_zero(grid8, rng):
    p = make_potential("zero", {}, grid8)
    s = _state(grid8, rng)
    out = propagate_U0(p, 0.0, s)
    assert rel(out.stacked(), s.stacked()) == 0.0


def test_U0_plane_wave(grid8):
    p = make_potential("zero", {}, grid8)
    x, y, z = grid8.coords
    k = np.pi / grid8.L * np.array([1, 2, 0])
    psi = np.exp(1j * (k[0] * x + k[1] * y + k[2] * z)) * np.ones(grid8.shape)
    t = 1.3
    w = np.sqrt(k @ k + 1.0)
    out = propagate_U0(p, t, StateVector(psi, 0 * psi))
    assert rel(out.psi, np.cos(w * t) * psi) < 1e-12
    assert rel(out.pi, -w * np.sin(w * t) * psi) < 1e-12


def test_U0_group_law(grid8, rng):
    p = make_potential("gaussian-bump", {"a": (0.05, 0.05, 0.0), "w": 2.0}, grid8)
    s = _state(grid8, rng)
    a = propagate_U0(p, 0.7, propagate_U0(p, 0.5, s, FULL), FULL)
    b = propagate_U0(p, 1.2, s, FULL)
    assert rel(a.stacked(), b.stacked()) < 1e-9
    ref = expm(-1j * 1.2 * _dense_K(p)) @ s.stacked()
    assert rel(b.stacked(), ref) < 1e-9


def test_U0_rejects_V(pot8, grid8, rng):
    with pytest.raises(ValueError):
        propagate_U0(pot8, 1.0, _state(grid8, rng))


def test_U_without_V_matches_U0(grid8, rng):
    p = make_potential("gaussian-bump", {"a": (0.05, 0.0, 0.05), "w": 2.0}, grid8)
    s = _state(grid8, rng)
    a = propagate_U(p, 2.0, s, EvolutionPlan(dt=2.0, spec=FULL))
    b = propagate_U0(p, 2.0, s, FULL)
    assert rel(a.stacked(), b.stacked()) < 1e-9


def test_U_against_dense(small_pot, rng):
    grid = small_pot.grid
    s = _state(grid, rng)
    t = 1.5
    ref = expm(-1j * t * _dense_K(small_pot)) @ s.stacked()
    kr = propagate_U(small_pot, t, s, EvolutionPlan(dt=1.0, spec=FULL))
    assert rel(kr.stacked(), ref) < 1e-6
    dt = 0.5 * leapfrog_stability_limit(small_pot)
    # second-order integrator: use a step small enough for 1e-6 at t = 1.5
    lf = propagate_U(small_pot, t, _state(grid, np.random.default_rng(2), band=1.0),
                     EvolutionPlan("leapfrog", dt=min(dt, 2e-4)))
    ref_lf = expm(-1j * t * _dense_K(small_pot)) @ _state(grid, np.random.default_rng(2), band=1.0).stacked()
    assert rel(lf.stacked(), ref_lf) < 1e-6


def test_leapfrog_rejects_unstable_step(small_pot, rng):
    with pytest.raises(ValueError):
        propagate_U(small_pot, 1.0, _state(small_pot.grid, rng),
                    EvolutionPlan("leapfrog", dt=2 * leapfrog_stability_limit(small_pot)))


@pytest.fixture(scope="module")
def drift_setup():
    grid = make_grid(32, 16.0)
    p = make_potential("gaussian-bump", {"a": (0.05, 0.05, 0.05), "w": 2.0, "v0": 0.2}, grid)
    return p, StateVector(gaussian(grid, 3.0), 0 * gaussian(grid, 3.0))


def test_energy_drift_krylov(drift_setup):
    p, s = drift_setup
    e0 = energy(p, s)
    states = evolve_series(p, [5.0, 10.0, 15.0, 20.0], s, EvolutionPlan(dt=5.0))
    drift = max(abs(energy(p, st) - e0) / e0 for st in states)
    assert drift <= 1e-8


def test_energy_drift_leapfrog(drift_setup):
    p, s = drift_setup
    e0 = energy(p, s)
    dt = 0.5 * leapfrog_stability_limit(p)
    states = evolve_series(p, [5.0, 10.0, 15.0, 20.0], s, EvolutionPlan("leapfrog", dt=dt))
    drift = max(abs(energy(p, st) - e0) / e0 for st in states)
    assert drift <= 1e-4


def test_horizon(grid8, rng):
    p = make_potential("zero", {}, grid8)
    with pytest.raises(HorizonError):
        propagate_U(p, 3.0, _state(grid8, rng), EvolutionPlan(r0=2.0))
    g = make_grid(32, 10.0)
    s = StateVector(gaussian(g, 1.0), gaussian(g, 1.0))
    assert 1.0 < concentration_radius(g, s) < 3.0


def test_discrete_spectrum_free_is_empty(grid8):
    assert len(discrete_spectrum(make_potential("zero", {}, grid8))) == 0


def test_discrete_spectrum_well():
    grid = make_grid(16, 12.0)
    data = discrete_spectrum(make_potential("scaled-well", {"g": 3.0}, grid))
    assert len(data) >= 1
    assert np.all((data.values > -1.0) & (data.values < 0))
    assert np.all(data.residuals <= 1e-8)
    with pytest.raises(SupercriticalPotential):
        discrete_spectrum(make_potential("scaled-well", {"g": 10.0}, grid))


@pytest.fixture(scope="module")
def bound8():
    grid = make_grid(8, 6.0)
    return make_potential("scaled-well", {"g": 2.0, "w": 1.5}, grid)


def test_Pc_projector(bound8):
    grid = bound8.grid
    data = discrete_spectrum(bound8)
    assert len(data) >= 1
    rng = np.random.default_rng(4)
    s = _state(grid, rng)
    once = project_Pc(data, s, grid)
    twice = project_Pc(data, once, grid)
    assert rel(twice.stacked(), once.stacked()) < 1e-10
    free = make_potential("zero", {}, grid)
    same = project_Pc(discrete_spectrum(free), s, grid)
    assert rel(same.stacked(), s.stacked()) == 0.0


def test_Pc_commutes_with_U(bound8):
    grid = bound8.grid
    data = discrete_spectrum(bound8)
    s = _state(grid, np.random.default_rng(8))
    U = expm(-1j * 1.0 * _dense_K(bound8))
    a = project_Pc(data, StateVector.from_stacked(grid, U @ s.stacked()), grid)
    b = U @ project_Pc(data, s, grid).stacked()
    assert np.linalg.norm(a.stacked() - b) / np.linalg.norm(b) <= 1e-6


def _dense_chi(p, chi, X):
    lam, R = np.linalg.eig(_dense_K(p))
    c = np.linalg.solve(R, X.stacked())
    return R @ (chi(lam.real) * c)


def test_chi_filter_partition_and_identity(small_pot, rng):
    s = _state(small_pot.grid, rng)
    one = chi_filter(small_pot, CutoffSpec("one"), s, FULL)
    assert rel(one.stacked(), s.stacked()) < 1e-9
    chi = CutoffSpec("low", m=1.0)
    lo = chi_filter(small_pot, chi, s, FULL)
    hi = chi_filter(small_pot, replace(chi, complement=True), s, FULL)
    assert rel((lo + hi).stacked(), s.stacked()) < 1e-9


@pytest.mark.parametrize("chi", [CutoffSpec("low", m=1.0),
                                 CutoffSpec("band", lo=1.0, hi=3.0, ramp=0.5, odd=True)])
def test_chi_filter_against_dense(small_pot, rng, chi):
    s = _state(small_pot.grid, rng)
    got = chi_filter(small_pot, chi, s, FULL)
    assert rel(got.stacked(), _dense_chi(small_pot, chi, s)) < 1e-6


def test_spectral_rep_free_t0(grid8):
    p = make_potential("zero", {}, grid8)
    s = StateVector(gaussian(grid8, 1.5), 0 * gaussian(grid8, 1.5))
    res = spectral_rep_check(p, 0.0, s, CutoffSpec("band", lo=1.0, hi=3.0, ramp=0.5), nodes=128)
    assert res.rel_err < 5e-2
