"""The compiled kernels and the numpy fallback must agree bit-for-bit in shape
and to rounding in value."""
import numpy as np
import pytest

from magkg import _kernels_py as py
from magkg import kernels


def _cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "numpy")


@pytest.mark.parametrize("batch", [(), (3,)])
def test_weighted_sqsum(rng, batch):
    v = _cplx(rng, *batch, 6, 6, 6)
    w = rng.random((6, 6, 6))
    assert np.isclose(kernels.weighted_sqsum(v, w), py.weighted_sqsum(v, w), rtol=1e-13)
    assert np.isclose(kernels.weighted_sqsum(v), np.sum(np.abs(v) ** 2), rtol=1e-13)


@pytest.mark.parametrize("batch", [(), (2,)])
def test_momentum(rng, batch):
    g, f = _cplx(rng, *batch, 4, 6, 8), _cplx(rng, *batch, 4, 6, 8)
    a = rng.standard_normal((4, 6, 8))
    np.testing.assert_allclose(kernels.momentum(g, a, f), g + a * f, rtol=1e-14)


@pytest.mark.parametrize("with_pot", [True, False])
def test_contract(rng, with_pot):
    base, f = _cplx(rng, 2, 6, 6, 6), _cplx(rng, 2, 6, 6, 6)
    u = _cplx(rng, 3, 2, 6, 6, 6)
    a = rng.standard_normal((3, 6, 6, 6))
    pot = rng.standard_normal((6, 6, 6)) if with_pot else None
    expect = base + sum(a[j] * u[j] for j in range(3)) + (pot * f if with_pot else 0)
    np.testing.assert_allclose(kernels.contract(base, u, a, pot, f), expect, rtol=1e-13, atol=1e-13)


def test_dilation(rng):
    f = _cplx(rng, 2, 5, 6, 7)
    grad = _cplx(rng, 3, 2, 5, 6, 7)
    x, y, z = rng.standard_normal(5), rng.standard_normal(6), rng.standard_normal(7)
    expect = py.dilation(grad, x, y, z, f)
    np.testing.assert_allclose(kernels.dilation(grad, x, y, z, f), expect, rtol=1e-13, atol=1e-13)


def test_pure_backend_selectable(tmp_path):
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "import magkg.kernels as k; print(k.BACKEND)"],
                         env={"MAGKG_PURE": "1", "PATH": "/usr/bin:/bin"}, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
