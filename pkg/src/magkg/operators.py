"""The magnetic Schrodinger operators H0, H, the square roots B, B_V and
the Klein-Gordon generator K, plus the dense small-grid oracle.

H0 is applied in the factored form sum_j D_j D_j with D_j = i d_j + A_j,
where d_j is the spectral derivative.  This equals
-Delta + 2iA.grad + i(div A) + |A|^2 in the continuum and keeps the
discrete operator exactly Hermitian and nonnegative on the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from magkg import kernels
from magkg.grid import GridError, SpectralGrid, StateVector, fft, ifft
from magkg.krylov import KrylovResult, KrylovSpec, lanczos_functions, scalar_function
from magkg.potentials import PotentialSet

DENSE_MAX_N = 12


def _check(p: PotentialSet, f: np.ndarray) -> None:
    if f.shape[-3:] != p.grid.shape:
        raise GridError(f"field has spatial shape {f.shape[-3:]}, "
                        f"potential lives on {p.grid.shape}")


def covariant_derivatives(p: PotentialSet, f: np.ndarray) -> np.ndarray:
    """D_j f = i d_j f + A_j f for j = 0, 1, 2, stacked on a new leading axis."""
    F = fft(f)
    out = []
    for j, k in enumerate(p.grid.wavevectors):
        g = ifft(-k * F)
        out.append(kernels.momentum(g, p.A[j], f) if p.has_A else g)
    return np.stack(out)


def _apply_quadratic(p: PotentialSet, f: np.ndarray, pot: np.ndarray | None) -> np.ndarray:
    _check(p, f)
    f = np.asarray(f, dtype=complex)
    if not p.has_A:
        out = ifft(p.grid.k2 * fft(f))
        return out if pot is None else out + pot * f
    D = covariant_derivatives(p, f)
    acc = sum(-k * fft(D[j]) for j, k in enumerate(p.grid.wavevectors))
    return kernels.contract(ifft(acc), D, p.A, pot, f)


def apply_H0(p: PotentialSet, f: np.ndarray) -> np.ndarray:
    """(i grad + A)^2 f = -Delta f + 2iA.grad f + i(div A) f + |A|^2 f."""
    return _apply_quadratic(p, f, None)


def apply_H(p: PotentialSet, f: np.ndarray) -> np.ndarray:
    """H f = H0 f + V f."""
    return _apply_quadratic(p, f, p.V if p.has_V else None)


def apply_H_shifted(p: PotentialSet, f: np.ndarray, shift: float,
                    with_V: bool = True) -> np.ndarray:
    """(H + shift) f, or (H0 + shift) f when ``with_V`` is false."""
    pot = p.V + shift if with_V else np.full(p.grid.shape, float(shift))
    return _apply_quadratic(p, f, pot)


def apply_W(p: PotentialSet, f: np.ndarray) -> np.ndarray:
    """W f = (H - (-Delta)) f = 2iA.grad f + i(div A) f + |A|^2 f + V f."""
    return apply_H(p, f) - ifft(p.grid.k2 * fft(f))


def apply_magnetic_laplacian(p: PotentialSet, f: np.ndarray) -> np.ndarray:
    """(grad - iA)^2 f computed directly from E_j = d_j - i A_j."""
    _check(p, f)
    F = fft(f)
    out = np.zeros(np.shape(f), dtype=complex)
    for j, k in enumerate(p.grid.wavevectors):
        e = ifft(1j * k * F) - 1j * p.A[j] * f
        out += ifft(1j * k * fft(e)) - 1j * p.A[j] * e
    return out


def apply_K(p: PotentialSet, state: StateVector) -> StateVector:
    """K (psi, pi) = (i pi, -i (H + m^2) psi)."""
    return StateVector(1j * state.pi, -1j * apply_H_shifted(p, state.psi, p.m**2))


def spectral_upper_bound(p: PotentialSet, with_V: bool = True) -> float:
    """Upper bound on the spectrum of H + m^2 (or H0 + m^2) from |D_j| <= kmax + max|A_j|."""
    kmax = np.pi / p.grid.h
    bound = sum((kmax + np.abs(p.A[j]).max()) ** 2 for j in range(3))
    vmax = max(p.V.max(), 0.0) if with_V else 0.0
    return float(bound + vmax + p.m**2)


@dataclass(frozen=True)
class OperatorHandle:
    """A named operator bound to a potential set.

    ``kind`` is one of ``H0``, ``H`` (Schrodinger operators), ``B`` and
    ``B_V`` (square roots of H0 + m^2 and H + m^2) or ``K``.  For Krylov
    functions the handle's *quadratic* operator ``M`` is what matters:
    H0 + m^2 for H0/B and H + m^2 for H/B_V/K.
    """

    kind: str
    potentials: PotentialSet
    spec: KrylovSpec = field(default_factory=KrylovSpec)

    def __post_init__(self):
        if self.kind not in ("H0", "H", "B", "B_V", "K"):
            raise ValueError(f"unknown operator kind {self.kind!r}")

    @property
    def grid(self) -> SpectralGrid:
        return self.potentials.grid

    @property
    def with_V(self) -> bool:
        return self.kind in ("H", "B_V", "K")

    @property
    def fourier_diagonal(self) -> bool:
        p = self.potentials
        return not p.has_A and not (self.with_V and p.has_V)

    def quadratic(self, f: np.ndarray) -> np.ndarray:
        """M f with M = H0 + m^2 or H + m^2."""
        return apply_H_shifted(self.potentials, f, self.potentials.m**2, self.with_V)

    def apply(self, f):
        p = self.potentials
        if self.kind == "H0":
            return apply_H0(p, f)
        if self.kind == "H":
            return apply_H(p, f)
        if self.kind == "K":
            return apply_K(p, f)
        return krylov_apply_fn(self, "sqrt", f, self.spec)

    __call__ = apply


def _as_handle(op, spec: KrylovSpec | None) -> OperatorHandle:
    if isinstance(op, OperatorHandle):
        return op
    if isinstance(op, PotentialSet):
        return OperatorHandle("B", op, spec or KrylovSpec())
    raise TypeError("expected an OperatorHandle or PotentialSet")


def krylov_apply_fns(op, fns, f: np.ndarray, spec: KrylovSpec | None = None,
                     t: float = 0.0) -> KrylovResult:
    """Several functions of the handle's quadratic operator M applied to ``f``.

    Each entry of ``fns`` is a name understood by
    :func:`magkg.krylov.scalar_function` (evaluated at time ``t``) or a
    vectorized callable of the eigenvalue of M.  When M is Fourier
    diagonal and ``spec.exact_diagonal`` is set, the exact symbol is used.
    """
    h = _as_handle(op, spec)
    spec = spec or h.spec
    funcs = [scalar_function(fn, t) if isinstance(fn, str) else fn for fn in fns]
    f = np.asarray(f, dtype=complex)
    _check(h.potentials, f)
    if spec.exact_diagonal and h.fourier_diagonal:
        lam = h.grid.k2 + h.potentials.m**2
        F = fft(f)
        vals = [ifft(np.asarray(fn(lam)) * F) for fn in funcs]
        return KrylovResult(vals, 0, 0.0, float(lam.min()), float(lam.max()))
    if f.ndim > 3:
        parts = [krylov_apply_fns(h, funcs, g, spec, t) for g in f.reshape((-1,) + h.grid.shape)]
        vals = [np.stack([pt.values[i] for pt in parts]).reshape(f.shape) for i in range(len(funcs))]
        return KrylovResult(vals, max(pt.dim for pt in parts), max(pt.increment for pt in parts),
                            min(pt.ritz_min for pt in parts), max(pt.ritz_max for pt in parts))
    return lanczos_functions(h.quadratic, f, funcs, spec)


def krylov_apply_fn(op, fn, f: np.ndarray, spec: KrylovSpec | None = None,
                    t: float = 0.0) -> np.ndarray:
    """fn(M) f for one function; see :func:`krylov_apply_fns`."""
    return krylov_apply_fns(op, [fn], f, spec, t).values[0]


def apply_B(p: PotentialSet, f: np.ndarray, spec: KrylovSpec | None = None,
            with_V: bool = False) -> np.ndarray:
    """B f = (H0 + m^2)^(1/2) f, or B_V f when ``with_V`` is set."""
    return krylov_apply_fn(OperatorHandle("B_V" if with_V else "B", p), "sqrt", f, spec)


def apply_B_inv(p: PotentialSet, f: np.ndarray, spec: KrylovSpec | None = None,
                with_V: bool = False) -> np.ndarray:
    return krylov_apply_fn(OperatorHandle("B_V" if with_V else "B", p), "inv_sqrt", f, spec)


# -- dense oracle -----------------------------------------------------------

class OracleSizeError(ValueError):
    pass


def _basis(grid: SpectralGrid) -> np.ndarray:
    return np.eye(grid.size, dtype=complex).reshape((grid.size,) + grid.shape)


def _materialize(apply, grid: SpectralGrid, chunk: int = 512) -> np.ndarray:
    N = grid.size
    M = np.empty((N, N), dtype=complex)
    for s in range(0, N, chunk):
        e = np.zeros((min(chunk, N - s), N), dtype=complex)
        e[np.arange(e.shape[0]), s + np.arange(e.shape[0])] = 1.0
        M[:, s:s + e.shape[0]] = apply(e.reshape((-1,) + grid.shape)).reshape(e.shape[0], N).T
    return M


def hermitian_function(M: np.ndarray, fn) -> np.ndarray:
    """fn(M) for a Hermitian matrix via eigendecomposition."""
    M = 0.5 * (M + M.conj().T)
    lam, U = np.linalg.eigh(M)
    return (U * fn(lam)) @ U.conj().T


def dense_oracle(p: PotentialSet, kind: str) -> np.ndarray:
    """Materialize an operator as an explicit matrix on grids with n <= 12.

    Supported kinds: ``H0``, ``H``, ``W``, ``Lap`` ((grad - iA)^2),
    ``M0``/``M`` (H0 + m^2, H + m^2), ``B``, ``B_V``, ``Binv``, ``K``.
    Matrices act on row-major flattened fields; ``K`` acts on the
    concatenation (psi, pi).
    """
    grid = p.grid
    if grid.n > DENSE_MAX_N:
        raise OracleSizeError(f"dense oracle needs n <= {DENSE_MAX_N}, got grid.n={grid.n}")
    m2 = p.m**2
    if kind == "H0":
        return _materialize(lambda e: apply_H0(p, e), grid)
    if kind == "H":
        return _materialize(lambda e: apply_H(p, e), grid)
    if kind == "W":
        return _materialize(lambda e: apply_W(p, e), grid)
    if kind == "Lap":
        return _materialize(lambda e: apply_magnetic_laplacian(p, e), grid)
    if kind in ("M0", "M"):
        M = dense_oracle(p, "H0" if kind == "M0" else "H")
        return M + m2 * np.eye(grid.size)
    if kind in ("B", "B_V", "Binv"):
        M = dense_oracle(p, "M" if kind == "B_V" else "M0")
        return hermitian_function(M, np.sqrt if kind != "Binv" else lambda x: 1 / np.sqrt(x))
    if kind == "K":
        N = grid.size
        Mv = dense_oracle(p, "M")
        K = np.zeros((2 * N, 2 * N), dtype=complex)
        K[:N, N:] = 1j * np.eye(N)
        K[N:, :N] = -1j * Mv
        return K
    raise ValueError(f"unknown oracle kind {kind!r}")
