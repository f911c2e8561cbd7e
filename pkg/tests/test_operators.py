import numpy as np
import pytest

from magkg.grid import StateVector, inner, make_grid, random_field
from magkg.krylov import IndefiniteOperatorError, KrylovNonConvergence, KrylovSpec
from magkg.operators import (OperatorHandle, OracleSizeError, apply_B, apply_B_inv, apply_H, apply_H0,
                             apply_K, apply_magnetic_laplacian, apply_W, dense_oracle, krylov_apply_fn,
                             krylov_apply_fns)
from magkg.potentials import PotentialSet, make_potential, random_potential

import oracle
from conftest import rel


@pytest.fixture(scope="module")
def p4():
    g = make_grid(4, 3.0)
    return random_potential(g, np.random.default_rng(3), amplitude=0.3, v_amplitude=0.2)


def test_plane_wave_eigenfunction():
    g = make_grid(8, 4.0)
    p = make_potential("zero", {}, g)
    x, y, z = g.coords
    k = np.pi / 4 * np.array([1, -2, 3])
    f = np.exp(1j * (k[0] * x + k[1] * y + k[2] * z))
    np.testing.assert_allclose(apply_H0(p, f), (k @ k) * f, atol=1e-12)
    np.testing.assert_allclose(apply_H(p, f), (k @ k) * f, atol=1e-12)


def test_H0_matches_independent_dft_matrix(p4, rng):
    g = p4.grid
    M = oracle.H0(g.n, g.L, p4.A)
    f = random_field(g, rng)
    assert rel(apply_H0(p4, f).ravel(), M @ f.ravel()) < 1e-10
    assert rel(dense_oracle(p4, "H0"), M) < 1e-12


def test_H_matches_independent_dft_matrix(p4, rng):
    g = p4.grid
    M = oracle.H(g.n, g.L, p4.A, p4.V)
    f = random_field(g, rng)
    assert rel(apply_H(p4, f).ravel(), M @ f.ravel()) < 1e-10


def test_V_only_gaussian(rng):
    g = make_grid(4, 3.0)
    V = rng.standard_normal(g.shape)
    p = PotentialSet(g, np.zeros((3,) + g.shape), V)
    f = np.exp(-g.r2 / 2).astype(complex)
    M = oracle.H(g.n, g.L, p.A, V)
    assert rel(apply_H(p, f).ravel(), M @ f.ravel()) < 1e-10


def test_symmetry_and_positivity(pot8, rng):
    g = pot8.grid
    for _ in range(5):
        f = random_field(g, rng, kcut=2.0)
        h = random_field(g, rng, kcut=2.0)
        a = inner(g, apply_H(pot8, f), h)
        b = inner(g, f, apply_H(pot8, h))
        assert abs(a - b) <= 1e-10 * abs(a)
        q = inner(g, apply_H0(pot8, f), f)
        assert q.real >= -1e-10 * inner(g, f, f).real


def test_gauge_positivity_factored_form(pot8, rng):
    from magkg.operators import covariant_derivatives
    g = pot8.grid
    for _ in range(100):
        f = random_field(g, rng)
        D = covariant_derivatives(pot8, f)
        lhs = inner(g, f, apply_H0(pot8, f)).real
        rhs = sum(inner(g, d, d).real for d in D)
        assert lhs >= 0 and abs(lhs - rhs) <= 1e-10 * rhs


def test_sign_convention_identity(pot8, rng):
    # -(grad - iA)^2 = (i grad + A)^2 on 100 random fields
    for _ in range(100):
        f = random_field(pot8.grid, rng)
        assert rel(-apply_magnetic_laplacian(pot8, f), apply_H0(pot8, f)) < 1e-10


def test_W_is_H_minus_laplacian(pot8, rng):
    f = random_field(pot8.grid, rng)
    free = make_potential("zero", {}, pot8.grid)
    assert rel(apply_W(pot8, f), apply_H(pot8, f) - apply_H(free, f)) < 1e-12


def test_K_block_structure(p4, rng):
    g = p4.grid
    f = random_field(g, rng)
    out = apply_K(p4, StateVector(f, np.zeros_like(f)))
    assert np.abs(out.psi).max() == 0
    assert rel(out.pi, -1j * (apply_H(p4, f) + p4.m**2 * f)) < 1e-14


def test_K_squared(p4, rng):
    g = p4.grid
    s = StateVector(random_field(g, rng), random_field(g, rng))
    K2 = apply_K(p4, apply_K(p4, s))
    M = lambda u: apply_H(p4, u) + p4.m**2 * u
    assert rel(K2.psi, M(s.psi)) < 1e-10 and rel(K2.pi, M(s.pi)) < 1e-10
    Kd = oracle.K(g.n, g.L, p4.A, p4.V, p4.m)
    assert rel(apply_K(p4, s).stacked(), Kd @ s.stacked()) < 1e-10


def test_K_free_spectrum():
    g = make_grid(4, 3.0)
    p = make_potential("zero", {}, g)
    ev = np.linalg.eigvals(dense_oracle(p, "K"))
    w = np.sqrt(g.k2.ravel() + 1.0)
    np.testing.assert_allclose(np.sort(ev.real), np.sort(np.concatenate([w, -w])), atol=1e-10)
    assert np.abs(ev.imag).max() < 1e-10


def test_K_spectrum_symmetric(p4):
    ev = np.sort(np.linalg.eigvals(dense_oracle(p4, "K")).real)
    np.testing.assert_allclose(ev, -ev[::-1], atol=1e-8)


def test_oracle_hermitian(pot8):
    for kind in ("H0", "H"):
        M = dense_oracle(pot8, kind)
        assert np.linalg.norm(M - M.conj().T) <= 1e-10 * np.linalg.norm(M)


def test_free_H0_diagonal_in_fourier():
    g = make_grid(4, 3.0)
    M = dense_oracle(make_potential("zero", {}, g), "H0")
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(M)), np.sort(g.k2.ravel()), atol=1e-12)


def test_oracle_size_limit():
    g = make_grid(14, 4.0)
    with pytest.raises(OracleSizeError):
        dense_oracle(make_potential("zero", {}, g), "H")


def test_krylov_sqrt_free_plane_wave():
    g = make_grid(8, 4.0)
    p = make_potential("zero", {}, g)
    x, y, z = g.coords
    k = np.pi / 4 * np.array([1, 0, 2])
    f = np.exp(1j * (k[0] * x + 0 * y + k[2] * z))
    out = apply_B(p, f, KrylovSpec(exact_diagonal=False))
    assert rel(out, np.sqrt(k @ k + 1) * f) < 1e-9


def test_krylov_cos_at_zero_is_identity(pot8, rng):
    f = random_field(pot8.grid, rng)
    out = krylov_apply_fn(OperatorHandle("B", pot8), "cos", f, KrylovSpec(), t=0.0)
    assert rel(out, f) < 1e-12


def test_krylov_sqrt_matches_dense(p4, rng):
    g = p4.grid
    spec = KrylovSpec(max_dim=64, tol=1e-11)
    M = oracle.H0(g.n, g.L, p4.A) + p4.m**2 * np.eye(g.size)
    f = random_field(g, rng)
    out = apply_B(p4, f, spec)
    ref = oracle.fn_hermitian(M, np.sqrt) @ f.ravel()
    assert rel(out.ravel(), ref) < 10 * spec.tol * 10
    inv = apply_B_inv(p4, f, spec)
    assert rel(inv.ravel(), oracle.fn_hermitian(M, lambda x: x**-0.5) @ f.ravel()) < 1e-9


def test_sqrt_twice_is_B_squared(pot8, rng):
    spec = KrylovSpec(max_dim=600, tol=1e-11)
    f = random_field(pot8.grid, rng, kcut=1.5)
    twice = apply_B(pot8, apply_B(pot8, f, spec), spec)
    from magkg.operators import apply_H_shifted
    assert rel(twice, apply_H_shifted(pot8, f, pot8.m**2, with_V=False)) < 10 * 1e-9


def test_krylov_multiple_functions(pot8, rng):
    f = random_field(pot8.grid, rng)
    M = dense_oracle(pot8, "M0")
    res = krylov_apply_fns(OperatorHandle("B", pot8), ["sqrt", "inv_sqrt"], f,
                           KrylovSpec(max_dim=600, tol=1e-11))
    assert rel(res.values[0].ravel(), oracle.fn_hermitian(M, np.sqrt) @ f.ravel()) < 1e-9
    assert rel(res.values[1].ravel(), oracle.fn_hermitian(M, lambda x: x**-0.5) @ f.ravel()) < 1e-9


def test_indefinite_operator_detected(grid8, rng):
    V = -50.0 * np.exp(-grid8.r2)
    p = PotentialSet(grid8, np.zeros((3,) + grid8.shape), V)
    f = random_field(grid8, rng)
    with pytest.raises(IndefiniteOperatorError, match="Ritz"):
        krylov_apply_fn(OperatorHandle("B_V", p), "sqrt", f, KrylovSpec(max_dim=200))


def test_nonconvergence_reported(pot8, rng):
    f = random_field(pot8.grid, rng)
    with pytest.raises(KrylovNonConvergence) as exc:
        krylov_apply_fn(OperatorHandle("B", pot8), "sqrt", f, KrylovSpec(max_dim=6, tol=1e-14))
    assert exc.value.increment > 0
