"""Potential families and the decay-bound admissibility check.

A :class:`PotentialSet` bundles the vector potential ``A`` (shape
``(3, n, n, n)``), the scalar potential ``V``, the mass ``m`` and the
claimed decay exponent ``beta``.  All fields are real.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from magkg.grid import GridError, SpectralGrid, fft, ifft


class PotentialError(ValueError):
    pass


WELL_RESOLUTION = 0.5  # scaled-well widths must satisfy w >= WELL_RESOLUTION * h


@dataclass(frozen=True, eq=False)
class PotentialSet:
    """Real vector potential ``A``, scalar potential ``V`` and mass ``m``."""

    grid: SpectralGrid
    A: np.ndarray
    V: np.ndarray
    m: float = 1.0
    beta: float = 3.5
    C_fit: float | None = None
    kind: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        A = np.asarray(self.A)
        V = np.asarray(self.V)
        for name, arr in (("A", A), ("V", V)):
            if np.iscomplexobj(arr):
                if np.any(arr.imag != 0):
                    raise PotentialError(f"potential.{name} must be real-valued")
                arr = arr.real
        A = np.ascontiguousarray(np.real(A), dtype=float)
        V = np.ascontiguousarray(np.real(V), dtype=float)
        if A.shape != (3,) + self.grid.shape:
            raise GridError(f"potential.A has shape {A.shape}, expected {(3,) + self.grid.shape}")
        if V.shape != self.grid.shape:
            raise GridError(f"potential.V has shape {V.shape}, expected {self.grid.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(V))):
            raise PotentialError("potential fields contain non-finite values")
        if not self.m > 0:
            raise PotentialError(f"potential.m must be positive, got {self.m!r}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "V", V)

    @property
    def has_A(self) -> bool:
        return bool(np.any(self.A))

    @property
    def has_V(self) -> bool:
        return bool(np.any(self.V))

    @property
    def is_free(self) -> bool:
        return not (self.has_A or self.has_V)

    def without_V(self) -> PotentialSet:
        return replace(self, V=np.zeros_like(self.V), C_fit=None)

    def scaled(self, lam: float) -> PotentialSet:
        return replace(self, A=lam * self.A, V=lam * self.V, C_fit=None)

    def with_mass(self, m: float) -> PotentialSet:
        return replace(self, m=float(m))


def _bump(grid: SpectralGrid, width: float, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    x, y, z = grid.coords
    d2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    return np.exp(-d2 / (2.0 * width**2))


def _check_width(grid: SpectralGrid, w: float, key: str, factor: float = 2.0) -> None:
    if not w > 0 or w < factor * grid.h:
        raise PotentialError(
            f"{key}={w!r} is below the resolution limit {factor:g}h={factor * grid.h:g}")


def make_potential(kind: str, params: dict | None, grid: SpectralGrid) -> PotentialSet:
    """Build one of the supported potential families on ``grid``.

    Parameters
    ----------
    kind : {"zero", "gaussian-bump", "scaled-well"}
    params : dict
        ``gaussian-bump``: ``a`` (3-vector), ``w``, ``c`` (center of A),
        ``v0`` and optionally ``wV`` (width of V, defaults to ``w``).
        ``scaled-well``: ``g`` and optionally ``w`` (default 1).
        Bump widths must be at least 2h; well widths at least h/2.
        Every family accepts ``m`` (default 1) and ``beta`` (default 3.5).
    """
    params = dict(params or {})
    m = float(params.get("m", 1.0))
    beta = float(params.get("beta", 3.5))
    A = np.zeros((3,) + grid.shape)
    V = np.zeros(grid.shape)
    if kind == "zero":
        return PotentialSet(grid, A, V, m, beta, 0.0, kind, params)
    if kind == "gaussian-bump":
        a = np.asarray(params.get("a", (0.0, 0.0, 0.0)), dtype=float)
        if a.shape != (3,):
            raise PotentialError("potential.a must have three components")
        w = float(params.get("w", 2.0))
        _check_width(grid, w, "potential.w")
        wV = float(params.get("wV", w))
        v0 = float(params.get("v0", 0.0))
        c = tuple(float(t) for t in params.get("c", (0.0, 0.0, 0.0)))
        prof = _bump(grid, w, c)
        A = a[:, None, None, None] * prof
        if v0 != 0.0:
            _check_width(grid, wV, "potential.wV")
            V = v0 * _bump(grid, wV)
    elif kind == "scaled-well":
        g = float(params.get("g", 1.0))
        w = float(params.get("w", 1.0))
        # the well is only multiplied pointwise (never differentiated), so a
        # coarser sampling than the bump family's 2h is accepted
        _check_width(grid, w, "potential.w", factor=WELL_RESOLUTION)
        V = -g * _bump(grid, w)
    else:
        raise PotentialError(f"unknown potential.kind {kind!r}")
    return PotentialSet(grid, A, V, m, beta, None, kind, params)


def random_potential(grid: SpectralGrid, rng: np.random.Generator, amplitude: float = 0.1,
                     v_amplitude: float = 0.1, m: float = 1.0, width: float | None = None,
                     kcut: float | None = None) -> PotentialSet:
    """Smooth random potential for oracle comparisons on small grids.

    The fields are band-limited real random fields, optionally enveloped
    by exp(-|x|^2 / width^2), scaled so ``max|A_j|`` = ``amplitude`` and
    ``max|V|`` = ``v_amplitude``.
    """
    if kcut is None:
        kcut = 0.5 * np.pi / grid.h

    def one():
        f = rng.standard_normal(grid.shape)
        f = ifft(fft(f) * (grid.k2 <= kcut**2)).real
        if width is not None:
            f = f * np.exp(-grid.r2 / width**2)
        return f / np.max(np.abs(f))

    A = np.stack([amplitude * one() for _ in range(3)])
    V = v_amplitude * one()
    return PotentialSet(grid, A, V, m, 3.5, None, "random", {})


def _spectral_derivative(grid: SpectralGrid, F: np.ndarray, alpha: tuple[int, int, int]) -> np.ndarray:
    """D^alpha of a real field given its transform; Nyquist dropped for odd orders."""
    sym = np.ones(grid.shape, dtype=complex)
    nyq = grid.n // 2
    for ax, (k, order) in enumerate(zip(grid.wavevectors, alpha)):
        if order == 0:
            continue
        kk = (1j * k) ** order
        if order % 2:
            kk = np.array(np.broadcast_to(kk, kk.shape))
            sl = tuple(slice(None) if i != ax else nyq for i in range(3))
            kk[sl] = 0.0
        sym = sym * kk
    return ifft(sym * F).real


def multi_indices(max_order: int):
    for total in range(max_order + 1):
        for a in itertools.product(range(total + 1), repeat=3):
            if sum(a) == total:
                yield a


def admissibility_integrand(p: PotentialSet, max_order: int = 4) -> np.ndarray:
    """|V| + |grad V| + sum_{|alpha| <= max_order, j} |D^alpha A_j| pointwise."""
    grid = p.grid
    total = np.abs(p.V).copy()
    if p.has_V:
        FV = fft(p.V.astype(complex))
        grad2 = sum(_spectral_derivative(grid, FV, a) ** 2
                    for a in ((1, 0, 0), (0, 1, 0), (0, 0, 1)))
        total += np.sqrt(grad2)
    for j in range(3):
        if not np.any(p.A[j]):
            continue
        FA = fft(p.A[j].astype(complex))
        for a in multi_indices(max_order):
            total += np.abs(_spectral_derivative(grid, FA, a))
    return total


@dataclass
class AdmissibilityReport:
    C_fit: float
    beta: float
    argmax: tuple[int, int, int]
    location: tuple[float, float, float]
    on_boundary: bool
    admissible: bool

    def as_dict(self) -> dict:
        return {"C_fit": self.C_fit, "beta": self.beta, "argmax": list(self.argmax),
                "location": list(self.location), "on_boundary": self.on_boundary,
                "admissible": self.admissible}


def check_admissible(p: PotentialSet, beta: float, boundary_layer: int = 2):
    """Fit the smallest constant C with integrand <= C <x>^(-beta) on the grid.

    Returns ``(C_fit, report)``.  The report flags a maximum that lies
    within ``boundary_layer`` points of the box faces, which signals an
    under-resolved tail rather than a genuine bound.
    """
    if np.iscomplexobj(p.A) or np.iscomplexobj(p.V):
        raise PotentialError("check_admissible requires real potentials")
    grid = p.grid
    weighted = grid.japanese_x**beta * admissibility_integrand(p)
    flat = int(np.argmax(weighted))
    C = float(weighted.flat[flat])
    idx = tuple(int(i) for i in np.unravel_index(flat, grid.shape))
    loc = tuple(float(grid.x_table[i]) for i in idx)
    edge = any(i < boundary_layer or i >= grid.n - boundary_layer for i in idx)
    on_boundary = bool(edge and C > 0)
    report = AdmissibilityReport(C, float(beta), idx, loc, on_boundary,
                                 bool(np.isfinite(C) and beta > 3))
    return C, report
