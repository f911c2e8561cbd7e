"""Whole-space convolution with the Helmholtz/Yukawa/Newton kernel.

Fields on the box ``[-L, L)^3`` are treated as compactly supported
functions on R^3.  The kernel G_omega(x) = exp(i sqrt(omega)|x|)/(4 pi |x|)
(Im sqrt(omega) > 0) is truncated at radius R = sqrt(3) D, D = 2L, whose
Fourier transform is known in closed form.  The truncated kernel is
sampled on a 4n grid, restricted to separations in [-n, n)h and then
applied by zero-padded (domain-doubled) FFT convolution.  For band-limited
densities this reproduces the free-space convolution to spectral
accuracy, and omega = 0 (the Newtonian kernel 1/(4 pi |x|)) is regular.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.fft as sfft

from magkg.grid import SpectralGrid

AXES = (-3, -2, -1)


class TailTruncationError(ValueError):
    pass


def _sin_over_k(k: np.ndarray, R: float) -> np.ndarray:
    return R * np.sinc(k * R / np.pi)


def _sqrt_upper(omega: complex) -> complex:
    b = np.sqrt(complex(omega))
    return b if b.imag >= 0 else -b


def truncated_symbol(k: np.ndarray, omega: complex, R: float) -> np.ndarray:
    """Fourier transform of 1_{|x|<R} exp(i beta |x|) / (4 pi |x|), beta^2 = omega."""
    if omega == 0:
        out = np.empty_like(k)
        nz = k > 0
        out[nz] = 2.0 * (np.sin(0.5 * k[nz] * R) / k[nz]) ** 2
        out[~nz] = 0.5 * R**2
        return out.astype(complex)
    beta = _sqrt_upper(omega)
    e = np.exp(1j * beta * R)
    return (1.0 - e * (np.cos(k * R) - 1j * beta * _sin_over_k(k, R))) / (k**2 - omega)


def truncated_symbol_domega(k: np.ndarray, omega: complex, R: float) -> np.ndarray:
    """Derivative in omega of :func:`truncated_symbol` (omega != 0)."""
    if omega == 0:
        raise ValueError("the omega-derivative of the kernel is singular at omega = 0")
    beta = _sqrt_upper(omega)
    e = np.exp(1j * beta * R)
    s = _sin_over_k(k, R)
    c = np.cos(k * R)
    D = k**2 - omega
    N = 1.0 - e * (c - 1j * beta * s)
    dN = 1j * e * (s - R * c + 1j * beta * R * s)
    return dN / (2.0 * beta * D) + N / D**2


class FreeSpaceKernel:
    """Precomputed domain-doubled convolution with G_omega and its gradient.

    Parameters
    ----------
    grid : SpectralGrid
    omega : complex
        Spectral parameter off (0, inf); omega = 0 gives the Newton kernel.
    derivative : bool
        Use d/domega G_omega instead of G_omega.
    tail_tol : float
        Maximum fraction of the input's squared mass allowed within two
        points of the box faces.
    """

    def __init__(self, grid: SpectralGrid, omega: complex, derivative: bool = False,
                 tail_tol: float = 1e-6):
        omega = complex(omega)
        if omega.imag == 0 and omega.real > 0:
            raise ValueError(f"omega={omega} lies on the cut [0, inf)")
        self.grid = grid
        self.omega = omega if omega.imag else omega.real
        self.derivative = derivative
        self.tail_tol = tail_tol
        self.R = np.sqrt(3.0) * 2.0 * grid.L

    @cached_property
    def _big_wavevectors(self):
        n4 = 4 * self.grid.n
        k = 2.0 * np.pi * np.fft.fftfreq(n4, d=self.grid.h)
        return k[:, None, None], k[None, :, None], k[None, None, :]

    def _kernel_transform(self, symbol_factor=None) -> np.ndarray:
        kx, ky, kz = self._big_wavevectors
        kk = np.sqrt(kx**2 + ky**2 + kz**2)
        fn = truncated_symbol_domega if self.derivative else truncated_symbol
        G = fn(kk, self.omega, self.R)
        if symbol_factor is not None:
            G = G * symbol_factor
        kd = sfft.ifftn(G, workers=-1)
        n = self.grid.n
        idx = np.r_[0:n, 3 * n:4 * n]
        small = kd[np.ix_(idx, idx, idx)]
        return sfft.fftn(small, workers=-1)

    @cached_property
    def value_hat(self) -> np.ndarray:
        return self._kernel_transform()

    @cached_property
    def gradient_hat(self) -> list[np.ndarray]:
        return [self._kernel_transform(1j * k) for k in self._big_wavevectors]

    def check_tail(self, f: np.ndarray) -> None:
        layer = 2
        n = self.grid.n
        mask = np.ones(self.grid.shape, dtype=bool)
        mask[layer:n - layer, layer:n - layer, layer:n - layer] = False
        total = np.sum(np.abs(f) ** 2, axis=AXES)
        edge = np.sum(np.abs(f[..., mask]) ** 2, axis=-1)
        frac = np.max(np.where(total > 0, edge / np.where(total > 0, total, 1.0), 0.0))
        if frac > self.tail_tol:
            raise TailTruncationError(
                f"input carries a fraction {frac:.2e} of its mass at the box faces "
                f"(limit {self.tail_tol:.0e}); enlarge grid.L")

    def _convolve(self, f: np.ndarray, Khat: np.ndarray) -> np.ndarray:
        n = self.grid.n
        pad = np.zeros(f.shape[:-3] + (2 * n,) * 3, dtype=complex)
        pad[..., :n, :n, :n] = f
        out = sfft.ifftn(sfft.fftn(pad, axes=AXES, workers=-1) * Khat, axes=AXES, workers=-1)
        return out[..., :n, :n, :n]

    def apply(self, f: np.ndarray, check: bool = True) -> np.ndarray:
        """(G * f)(x) for x on the box."""
        if check:
            self.check_tail(f)
        return self._convolve(f, self.value_hat)

    def apply_gradient(self, f: np.ndarray, check: bool = True) -> np.ndarray:
        """grad (G * f), stacked on a new leading axis of length 3."""
        if check:
            self.check_tail(f)
        n = self.grid.n
        pad = np.zeros(f.shape[:-3] + (2 * n,) * 3, dtype=complex)
        pad[..., :n, :n, :n] = f
        F = sfft.fftn(pad, axes=AXES, workers=-1)
        return np.stack([sfft.ifftn(F * Kh, axes=AXES, workers=-1)[..., :n, :n, :n]
                         for Kh in self.gradient_hat])


def check_coefficient_tail(grid: SpectralGrid, coeff: np.ndarray, tail_tol: float = 1e-6) -> None:
    """Reject a localizing coefficient that is not negligible on the box faces.

    Operators of the form G * (coeff . u) only see the box through
    ``coeff``.  Its size on the planes x_j = -L (where the periodic box is
    cut open) relative to its maximum measures what the box truncation
    discards.
    """
    c = np.abs(coeff)
    top = c.max()
    if top == 0:
        return
    edge = max(c[0].max(), c[:, 0].max(), c[:, :, 0].max())
    if edge / top > tail_tol:
        raise TailTruncationError(
            f"potential is {edge / top:.2e} of its peak on the box faces "
            f"(limit {tail_tol:.0e}); enlarge grid.L")


def newton_potential(grid: SpectralGrid, f: np.ndarray) -> np.ndarray:
    """A_0 f = (1/(4 pi |x|)) * f, the whole-space inverse of -Delta."""
    return FreeSpaceKernel(grid, 0.0).apply(f)
