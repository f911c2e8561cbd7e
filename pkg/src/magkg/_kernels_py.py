"""Pure-numpy versions of the pointwise kernels (the import fallback)."""
import numpy as np


def weighted_sqsum(v, w=None):
    if w is None:
        return float(np.vdot(v, v).real)
    return float(np.sum((w * w) * (v.real**2 + v.imag**2)))


def momentum(g, a, f):
    return g + a * f


def contract(base, u, a, pot, f):
    out = base + a[0] * u[0]
    out += a[1] * u[1]
    out += a[2] * u[2]
    if pot is not None:
        out += pot * f
    return out


def dilation(grad, x, y, z, f):
    out = x[:, None, None] * grad[0]
    out += y[None, :, None] * grad[1]
    out += z[None, None, :] * grad[2]
    out *= 2.0
    out += 3.0 * f
    return out
