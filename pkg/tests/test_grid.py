import numpy as np
import pytest
from scipy import integrate

from magkg.grid import (GridError, StateVector, energy_norm, fft, gaussian, gradient, ifft,
                        inner, l2_norm, make_grid, random_field, weighted_norm)


def _radial_norm(sigma, s_weight=False):
    # independent oracle: ||<x>^sigma e^{-|x|^2/2}||^2 = 4 pi int r^2 (1+r^2)^sigma e^{-r^2} dr
    val, _ = integrate.quad(lambda r: 4 * np.pi * r**2 * (1 + r * r) ** sigma * np.exp(-r * r), 0, np.inf)
    return np.sqrt(val)


def test_rejects_odd_n():
    with pytest.raises(GridError, match="grid.n"):
        make_grid(7, 4.0)


def test_rejects_bad_L():
    with pytest.raises(GridError, match="grid.L"):
        make_grid(8, -1.0)


def test_tables():
    g = make_grid(8, 4.0)
    assert g.h == 1.0
    assert g.x_table[0] == -4.0 and g.x_table[-1] == 3.0
    np.testing.assert_allclose(g.k_table[:5], np.pi / 4 * np.array([0, 1, 2, 3, -4]))


def test_transform_is_unitary(rng):
    g = make_grid(8, 3.0)
    f = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    assert np.isclose(np.linalg.norm(fft(f)), np.linalg.norm(f))
    np.testing.assert_allclose(ifft(fft(f)), f, atol=1e-13)


def test_gaussian_l2_norm_closed_form():
    # e^{-|x|^2/2} has L2 norm pi^{3/4}
    g = make_grid(32, 8.0)
    f = gaussian(g, np.sqrt(2.0))
    assert abs(l2_norm(g, f) - np.pi**0.75) < 1e-10
    assert abs(l2_norm(g, f) - _radial_norm(0)) < 1e-9


def test_weighted_norm_closed_form():
    # ||<x> e^{-|x|^2/2}||: 4 pi int r^2 (1 + r^2) e^{-r^2} = pi^{3/2} (1 + 3/2)
    g = make_grid(32, 8.0)
    f = gaussian(g, np.sqrt(2.0))
    expected = np.sqrt(2.5) * np.pi**0.75
    assert abs(weighted_norm(g, f, 0.0, 1.0) - expected) < 1e-9
    assert abs(expected - _radial_norm(1)) < 1e-9


def test_bessel_norm_matches_gradient():
    # ||<grad> f||^2 = ||f||^2 + ||grad f||^2
    g = make_grid(24, 8.0)
    f = gaussian(g, 1.5)
    gr = gradient(g, f)
    lhs = weighted_norm(g, f, 1.0, 0.0) ** 2
    rhs = l2_norm(g, f) ** 2 + sum(l2_norm(g, c) ** 2 for c in gr)
    assert abs(lhs - rhs) < 1e-10 * rhs


def test_weighted_norm_rejects_nonfinite():
    g = make_grid(8, 4.0)
    f = g.zeros()
    f[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        weighted_norm(g, f, 0.0, 1.0)


def test_weighted_norm_shape_error():
    g = make_grid(8, 4.0)
    with pytest.raises(GridError):
        weighted_norm(g, np.zeros((4, 4, 4)), 0.0, 0.0)


def test_sigma_monotone(rng):
    g = make_grid(8, 4.0)
    f = random_field(g, rng)
    vals = [weighted_norm(g, f, 0.0, s) for s in (-2, -1, 0, 1, 2)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_inner_product_antilinear(rng):
    g = make_grid(8, 4.0)
    f, h = random_field(g, rng), random_field(g, rng)
    assert np.isclose(inner(g, 2j * f, h), -2j * inner(g, f, h))
    assert np.isclose(inner(g, f, f).real, l2_norm(g, f) ** 2)


def test_state_vector_roundtrip(rng):
    g = make_grid(8, 4.0)
    s = StateVector(random_field(g, rng), random_field(g, rng))
    t = StateVector.from_stacked(g, s.stacked())
    np.testing.assert_array_equal(t.psi, s.psi)
    d = (s * 2.0 - s) - s
    assert np.abs(d.psi).max() == 0 and np.abs(d.pi).max() == 0
    assert np.isclose(energy_norm(g, s, 0.0) ** 2,
                      weighted_norm(g, s.psi, 1.0, 0.0) ** 2 + weighted_norm(g, s.pi, 0.0, 0.0) ** 2)


def test_random_field_band_limit(rng):
    g = make_grid(16, 4.0)
    f = random_field(g, rng, kcut=2.0)
    F = fft(f)
    assert np.abs(F[g.k2 > 4.0 + 1e-12]).max() < 1e-12
