"""Hot pointwise kernels with a compiled core and a numpy fallback.

The Cython extension ``magkg._kernels_c`` is used when it imports and the
environment variable ``MAGKG_PURE`` is unset; otherwise the numpy versions
in ``magkg._kernels_py`` are used.  ``BACKEND`` names the active choice.

The compiled loops work on one spatial block at a time; leading batch
axes are iterated here so both backends accept the same shapes.
"""
from __future__ import annotations

import os

import numpy as np

from magkg import _kernels_py as _py

try:
    if os.environ.get("MAGKG_PURE"):
        raise ImportError("pure backend requested")
    from magkg import _kernels_c as _c
except ImportError:
    _c = None

BACKEND = "cython" if _c is not None else "numpy"


def _cplx(a):
    return np.ascontiguousarray(a, dtype=np.complex128)


def _flat(a):
    """Interleaved float64 view of a contiguous complex array."""
    return a.view(np.float64)


def _real(a, shape):
    return np.ascontiguousarray(np.broadcast_to(a, shape), dtype=np.float64)


def weighted_sqsum(v: np.ndarray, w: np.ndarray | None = None) -> float:
    """Sum of |w v|^2 over all entries; ``w`` is real and broadcasts to ``v``."""
    if _c is None or v.dtype != np.complex128:
        return _py.weighted_sqsum(v, w)
    vf = _cplx(v).reshape(-1)
    if w is None:
        return _c.weighted_sqsum(_flat(vf), None)
    spatial = v.shape[-3:]
    wf = _real(w, spatial).reshape(-1)
    blocks = vf.reshape(-1, wf.size)
    return float(sum(_c.weighted_sqsum(_flat(b), wf) for b in blocks))


def momentum(g: np.ndarray, a: np.ndarray, f: np.ndarray) -> np.ndarray:
    """g + a f with real pointwise ``a`` (one covariant derivative component)."""
    if _c is None:
        return _py.momentum(g, a, f)
    shape = np.broadcast_shapes(g.shape, f.shape)
    spatial = shape[-3:]
    af = _real(a, spatial).reshape(-1)
    gb = _cplx(np.broadcast_to(g, shape)).reshape(-1, af.size)
    fb = _cplx(np.broadcast_to(f, shape)).reshape(-1, af.size)
    out = np.empty((gb.shape[0], af.size), dtype=np.complex128)
    for i in range(gb.shape[0]):
        _c.momentum(_flat(gb[i]), af, _flat(fb[i]), _flat(out[i]))
    return out.reshape(shape)


def contract(base: np.ndarray, u: np.ndarray, a: np.ndarray,
             pot: np.ndarray | None, f: np.ndarray) -> np.ndarray:
    """base + sum_j a_j u_j + pot f, with ``u`` of shape (3, ...)."""
    if _c is None:
        return _py.contract(base, u, a, pot, f)
    shape = base.shape
    spatial = shape[-3:]
    N = int(np.prod(spatial))
    aj = [_real(a[j], spatial).reshape(-1) for j in range(3)]
    pf = None if pot is None else _real(pot, spatial).reshape(-1)
    bb = _cplx(base).reshape(-1, N)
    ub = [_cplx(np.broadcast_to(u[j], shape)).reshape(-1, N) for j in range(3)]
    fb = _cplx(np.broadcast_to(f, shape)).reshape(-1, N)
    out = np.empty_like(bb)
    for i in range(bb.shape[0]):
        _c.contract(_flat(bb[i]), _flat(ub[0][i]), _flat(ub[1][i]), _flat(ub[2][i]),
                    aj[0], aj[1], aj[2], pf, _flat(fb[i]), _flat(out[i]))
    return out.reshape(shape)


def dilation(grad: np.ndarray, x: np.ndarray, y: np.ndarray, z: np.ndarray,
             f: np.ndarray) -> np.ndarray:
    """2 (x . grad f) + 3 f from a precomputed gradient of shape (3, ...)."""
    if _c is None:
        return _py.dilation(grad, x, y, z, f)
    shape = f.shape
    n0, n1, n2 = shape[-3:]
    xs, ys, zs = (np.ascontiguousarray(t, dtype=np.float64) for t in (x, y, z))
    gb = [_cplx(grad[j]).reshape(-1, n0, n1, n2) for j in range(3)]
    fb = _cplx(f).reshape(-1, n0, n1, n2)
    out = np.empty_like(fb)
    for i in range(fb.shape[0]):
        _c.dilation(_flat(gb[0][i]), _flat(gb[1][i]), _flat(gb[2][i]), xs, ys, zs,
                    _flat(fb[i]), _flat(out[i]))
    return out.reshape(shape)
