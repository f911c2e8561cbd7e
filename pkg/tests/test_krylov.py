import numpy as np
import pytest
from scipy.linalg import expm

from magkg.krylov import (IndefiniteOperatorError, KrylovNonConvergence, KrylovSpec, lanczos_functions,
                          scalar_function)

import oracle


@pytest.fixture(scope="module")
def spd():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((60, 60)) + 1j * rng.standard_normal((60, 60))
    M = X @ X.conj().T / 60 + 0.5 * np.eye(60)
    return M


def _run(M, f, names, t=0.0, spec=None):
    fns = [scalar_function(n, t) for n in names]
    return lanczos_functions(lambda v: M @ v, f, fns, spec or KrylovSpec(max_dim=60, tol=1e-12))


def test_spec_validation():
    with pytest.raises(ValueError):
        KrylovSpec(max_dim=1)
    with pytest.raises(ValueError):
        KrylovSpec(tol=0.0)


def test_unknown_function():
    with pytest.raises(ValueError):
        scalar_function("tanh")


@pytest.mark.parametrize("name,fn", [("sqrt", np.sqrt), ("inv_sqrt", lambda x: x**-0.5),
                                     ("inv", lambda x: 1 / x)])
def test_static_functions(spd, rng, name, fn):
    f = rng.standard_normal(60) + 0j
    res = _run(spd, f, [name])
    assert np.linalg.norm(res.values[0] - oracle.fn_hermitian(spd, fn) @ f) < 1e-9 * np.linalg.norm(f)


def test_wave_functions_against_expm(spd, rng):
    # the first-order system [[0, I], [-M, 0]] generates (cos, sinc, -sqrt sin) blocks
    t = 0.7
    N = spd.shape[0]
    G = np.block([[np.zeros((N, N)), np.eye(N)], [-spd, np.zeros((N, N))]])
    E = expm(t * G)
    f = rng.standard_normal(N) + 0j
    res = _run(spd, f, ["cos", "sinc", "sqrt_sin"], t)
    assert np.allclose(res.values[0], E[:N, :N] @ f, atol=1e-9)
    assert np.allclose(res.values[1], E[:N, N:] @ f, atol=1e-9)
    assert np.allclose(-res.values[2], E[N:, :N] @ f, atol=1e-9)


def test_cos_at_zero(spd, rng):
    f = rng.standard_normal(60) + 0j
    assert np.allclose(_run(spd, f, ["cos"], 0.0).values[0], f, atol=1e-12)


def test_zero_vector(spd):
    res = _run(spd, np.zeros(60, complex), ["sqrt"])
    assert res.dim == 0 and not np.any(res.values[0])


def test_ritz_bounds(spd, rng):
    res = _run(spd, rng.standard_normal(60) + 0j, ["sqrt"])
    ev = np.linalg.eigvalsh(spd)
    assert ev[0] - 1e-8 <= res.ritz_min and res.ritz_max <= ev[-1] + 1e-8


def test_indefinite(rng):
    M = np.diag(np.linspace(-1, 3, 40)).astype(complex)
    with pytest.raises(IndefiniteOperatorError) as exc:
        _run(M, rng.standard_normal(40) + 0j, ["sqrt"])
    assert exc.value.ritz < 0


def test_nonconvergence(spd, rng):
    with pytest.raises(KrylovNonConvergence):
        _run(spd, rng.standard_normal(60) + 0j, ["sqrt"], spec=KrylovSpec(max_dim=5, tol=1e-15))
