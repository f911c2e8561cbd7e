"""Periodic box discretization, unitary transforms and weighted norms.

Fields are plain complex ``numpy`` arrays of shape ``(..., n, n, n)``;
the last three axes are the spatial axes (row-major, ``x`` first).  Any
leading axes are treated as a batch, which is how the dense oracle and
the probe-based norm estimators apply operators to many fields at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from magkg import kernels

SPATIAL = (-3, -2, -1)


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralGrid:
    """Cubic periodic box ``[-L, L)^3`` with ``n`` points per axis."""

    n: int
    L: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 4 or self.n % 2:
            raise GridError(f"grid.n must be an even integer >= 4, got {self.n!r}")
        if not np.isfinite(self.L) or self.L <= 0:
            raise GridError(f"grid.L must be positive, got {self.L!r}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def size(self) -> int:
        return self.n**3

    @property
    def dV(self) -> float:
        return self.h**3

    @cached_property
    def x_table(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def k_table(self) -> np.ndarray:
        """Wavenumbers ``(pi/L) j`` in transform order (0, 1, ..., -n/2, ..., -1)."""
        return (np.pi / self.L) * np.fft.fftfreq(self.n, d=1.0 / self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays of shapes (n,1,1), (1,n,1), (1,1,n)."""
        x = self.x_table
        return x[:, None, None], x[None, :, None], x[None, None, :]

    @cached_property
    def wavevectors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = self.k_table
        return k[:, None, None], k[None, :, None], k[None, None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.wavevectors
        return kx**2 + ky**2 + kz**2

    @cached_property
    def r2(self) -> np.ndarray:
        x, y, z = self.coords
        return x**2 + y**2 + z**2

    @cached_property
    def japanese_x(self) -> np.ndarray:
        """The weight base <x> = (1 + |x|^2)^(1/2) on the box coordinates."""
        return np.sqrt(1.0 + self.r2)

    def weight(self, sigma: float) -> np.ndarray:
        if sigma == 0:
            return np.ones(self.shape)
        return self.japanese_x**sigma

    def bessel_symbol(self, s: float) -> np.ndarray:
        """Fourier symbol of <nabla>^s, i.e. (1 + |k|^2)^(s/2)."""
        if s == 0:
            return np.ones(self.shape)
        return (1.0 + self.k2) ** (0.5 * s)

    def zeros(self, *batch: int) -> np.ndarray:
        return np.zeros(batch + self.shape, dtype=complex)

    def check_field(self, f: np.ndarray, name: str = "field") -> None:
        if f.shape[-3:] != self.shape:
            raise GridError(
                f"{name} has spatial shape {f.shape[-3:]}, grid expects {self.shape}"
            )


def make_grid(n: int, L: float) -> SpectralGrid:
    return SpectralGrid(int(n) if float(n).is_integer() else n, float(L))


def fft(f: np.ndarray) -> np.ndarray:
    return sfft.fftn(f, axes=SPATIAL, norm="ortho", workers=-1)


def ifft(F: np.ndarray) -> np.ndarray:
    return sfft.ifftn(F, axes=SPATIAL, norm="ortho", workers=-1)


def apply_multiplier(f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    return ifft(symbol * fft(f))


def gradient(grid: SpectralGrid, f: np.ndarray) -> np.ndarray:
    """Spectral gradient, returned with a new leading axis of length 3."""
    F = fft(f)
    return np.stack([ifft(1j * k * F) for k in grid.wavevectors])


def inner(grid: SpectralGrid, f: np.ndarray, g: np.ndarray) -> complex:
    """Discrete L2 inner product <f, g> (antilinear in ``f``)."""
    return np.vdot(f, g) * grid.dV


def l2_norm(grid: SpectralGrid, f: np.ndarray) -> float:
    return float(np.sqrt(kernels.weighted_sqsum(f, None)) * grid.h**1.5)


@dataclass(frozen=True)
class WeightedNormSpec:
    s: float = 0.0
    sigma: float = 0.0


def _require_finite(f: np.ndarray) -> None:
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains non-finite values")


def weighted_norm(grid: SpectralGrid, f: np.ndarray, s: float = 0.0,
                  sigma: float = 0.0) -> float:
    """||<x>^sigma <nabla>^s f||_{L2} on the grid.

    The Bessel multiplier is applied first, then the pointwise weight,
    then the discrete L2 norm with volume factor h^3.
    """
    grid.check_field(f)
    _require_finite(f)
    g = f if s == 0 else apply_multiplier(f, grid.bessel_symbol(s))
    w = None if sigma == 0 else grid.weight(sigma)
    return float(np.sqrt(kernels.weighted_sqsum(g, w)) * grid.h**1.5)


@dataclass
class StateVector:
    """Klein-Gordon state (psi, pi) with pi the time derivative of psi."""

    psi: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        self.pi = np.asarray(self.pi, dtype=complex)
        if self.psi.shape != self.pi.shape:
            raise GridError("psi and pi live on different grids")

    def __add__(self, other: StateVector) -> StateVector:
        return StateVector(self.psi + other.psi, self.pi + other.pi)

    def __sub__(self, other: StateVector) -> StateVector:
        return StateVector(self.psi - other.psi, self.pi - other.pi)

    def __mul__(self, c) -> StateVector:
        return StateVector(c * self.psi, c * self.pi)

    __rmul__ = __mul__

    def __neg__(self) -> StateVector:
        return StateVector(-self.psi, -self.pi)

    def copy(self) -> StateVector:
        return StateVector(self.psi.copy(), self.pi.copy())

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.psi.ravel(), self.pi.ravel()])

    @classmethod
    def from_stacked(cls, grid: SpectralGrid, v: np.ndarray) -> StateVector:
        N = grid.size
        return cls(v[:N].reshape(grid.shape), v[N:].reshape(grid.shape))

    @classmethod
    def zeros(cls, grid: SpectralGrid) -> StateVector:
        return cls(grid.zeros(), grid.zeros())


def energy_norm(grid: SpectralGrid, state: StateVector, sigma: float) -> float:
    """Norm of the energy space H^1_sigma (+) H^0_sigma."""
    a = weighted_norm(grid, state.psi, 1.0, sigma)
    b = weighted_norm(grid, state.pi, 0.0, sigma)
    return float(np.hypot(a, b))


def gaussian(grid: SpectralGrid, width: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """exp(-|x - c|^2 / width^2) sampled on the grid."""
    x, y, z = grid.coords
    d2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    return np.exp(-d2 / width**2).astype(complex)


def random_field(grid: SpectralGrid, rng: np.random.Generator, *batch: int,
                 kcut: float | None = None, envelope: float | None = None) -> np.ndarray:
    """Seeded complex random field.

    ``kcut`` keeps only wavenumbers with |k| <= kcut (band-limited probes);
    ``envelope`` multiplies by a Gaussian exp(-|x|^2/envelope^2) so the
    field is concentrated away from the box boundary.
    """
    f = rng.standard_normal(batch + grid.shape) + 1j * rng.standard_normal(batch + grid.shape)
    if kcut is not None:
        f = ifft(fft(f) * (grid.k2 <= kcut**2))
    if envelope is not None:
        f = f * np.exp(-grid.r2 / envelope**2)
        if kcut is not None:
            f = ifft(fft(f) * (grid.k2 <= kcut**2))
    return f
