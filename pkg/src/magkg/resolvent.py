"""Resolvents of H and K: shifted solves, whole-space Lippmann-Schwinger
solves, limiting absorption, the Klein-Gordon block resolvent, Born
identities, derivative identities, norm asymptotics and the zero-mode scan.

Two discretizations of R(omega) = (H - omega)^(-1) are provided.

* Periodic (:func:`solve_R`): GMRES on the box with the exact free
  inverse (|k|^2 - omega)^(-1) as right preconditioner.
* Whole space (:class:`WholeSpaceResolvent`): R = R_free (1 + W R_free)^(-1)
  with R_free the free-space convolution of :mod:`magkg.freespace`.  This
  is the right object near omega = 0, where the periodic box has a
  spurious zero mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from magkg.freespace import FreeSpaceKernel, check_coefficient_tail
from magkg.grid import SpectralGrid, StateVector, fft, ifft, weighted_norm
from magkg.linsolve import SolveError, SolveInfo, gmres_solve
from magkg.operators import apply_H, apply_H0, apply_H_shifted, apply_W
from magkg.potentials import PotentialSet


class ForbiddenSpectralParameter(ValueError):
    pass


class SlopeFitRejected(RuntimeError):
    def __init__(self, fit: "SlopeFit", threshold: float):
        super().__init__(f"slope fit rejected: r2={fit.r2:.4f} < {threshold} "
                         f"(exponent {fit.exponent:.3f} over {fit.window})")
        self.fit = fit


@dataclass(frozen=True)
class ResolventQuery:
    omega: complex
    tol: float = 1e-10
    max_iter: int = 2000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"resolvent.tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class LapSchedule:
    eps0: float = 0.2
    ratio: float = 0.5
    count: int = 6

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValueError(f"lap.eps0 must be positive, got {self.eps0}")
        if not 0 < self.ratio < 1:
            raise ValueError(f"lap.ratio must lie in (0, 1), got {self.ratio}")
        if self.count < 3:
            raise ValueError(f"lap.count must be >= 3, got {self.count}")

    @property
    def eps(self) -> np.ndarray:
        return self.eps0 * self.ratio ** np.arange(self.count)


@dataclass
class SlopeFit:
    exponent: float
    amplitude: float
    window: tuple[float, float]
    r2: float
    samples: int
    abscissa: np.ndarray = field(repr=False, default=None)
    values: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {"exponent": self.exponent, "amplitude": self.amplitude,
                "window": list(self.window), "r2": self.r2, "samples": self.samples}


def fit_loglog(x: np.ndarray, y: np.ndarray) -> SlopeFit:
    """Least-squares line through (log x, log y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(np.exp(icpt)), (float(x.min()), float(x.max())),
                    float(min(max(r2, 0.0), 1.0)), len(x), x, y)


# -- periodic solves ---------------------------------------------------------

def _check_omega(omega: complex, what: str = "omega") -> complex:
    omega = complex(omega)
    if omega.imag == 0 and omega.real >= 0:
        raise ForbiddenSpectralParameter(f"{what}={omega.real:g} lies on [0, inf)")
    return omega


def free_resolvent_apply(grid: SpectralGrid, omega: complex, f: np.ndarray) -> np.ndarray:
    """(-Delta - omega)^(-1) f as the exact periodic multiplier (|k|^2 - omega)^(-1)."""
    omega = _check_omega(omega)
    return ifft(fft(f) / (grid.k2 - omega))


def _loop_batch(grid, f, solve_one):
    if f.ndim == 3:
        return solve_one(f)
    flat = f.reshape((-1,) + grid.shape)
    return np.stack([solve_one(g) for g in flat]).reshape(f.shape)


def solve_R(p: PotentialSet, q: ResolventQuery, f: np.ndarray, with_V: bool = True,
            info: list | None = None, allow_real: bool = False) -> np.ndarray:
    """u = (H - omega)^(-1) f, or (H0 - omega)^(-1) f when ``with_V`` is false.

    ``allow_real`` permits real omega >= 0 (for example inside a spectral
    gap of the periodic operator); the solve still fails loudly if the
    shifted operator is singular.
    """
    omega = complex(q.omega) if allow_real else _check_omega(q.omega)
    grid = p.grid
    if not p.has_A and not (with_V and p.has_V):
        return ifft(fft(f) / (grid.k2 - omega))
    pre_sym = 1.0 / (grid.k2 - omega) if omega.imag or omega.real < 0 else \
        1.0 / (grid.k2 + 1.0)
    pot = (p.V if with_V else 0.0) - omega

    def one(g):
        u, si = gmres_solve(lambda x: apply_H_shifted(p, x, 0.0, with_V=False) + pot * x, g,
                            q.tol, q.max_iter, precond=lambda y: ifft(pre_sym * fft(y)))
        if info is not None:
            info.append(si)
        return u

    return _loop_batch(grid, np.asarray(f, dtype=complex), one)


def resolvent_derivative(p: PotentialSet, q: ResolventQuery, k: int, f: np.ndarray,
                         with_V: bool = True) -> np.ndarray:
    """R^(k)(omega) f = k! R(omega)^(k+1) f."""
    if k not in (0, 1, 2, 3):
        raise ValueError("resolvent derivative order must be in {0, 1, 2, 3}")
    u = np.asarray(f, dtype=complex)
    for _ in range(k + 1):
        u = solve_R(p, q, u, with_V)
    return math.factorial(k) * u


def free_resolvent_derivative(grid: SpectralGrid, omega: complex, k: int, f: np.ndarray):
    omega = _check_omega(omega)
    return math.factorial(k) * ifft(fft(f) / (grid.k2 - omega) ** (k + 1))


def r1_identity_residual(p: PotentialSet, q: ResolventQuery, f: np.ndarray) -> float:
    """Relative defect of R' = (1 - R W) R_free' (1 - W R) on the periodic grid."""
    lhs = resolvent_derivative(p, q, 1, f)
    g = f - apply_W(p, solve_R(p, q, f))
    g = free_resolvent_derivative(p.grid, q.omega, 1, g)
    rhs = g - solve_R(p, q, apply_W(p, g))
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))


# -- whole-space Lippmann-Schwinger resolvent ---------------------------------

def divergence(grid: SpectralGrid, A: np.ndarray) -> np.ndarray:
    return sum(ifft(1j * k * fft(A[j])).real for j, k in enumerate(grid.wavevectors))


class WholeSpaceResolvent:
    """R(omega) = R_free(omega) (1 + W R_free(omega))^(-1) on compactly supported data.

    W = 2iA.grad + i div A + |A|^2 + V, with the gradient of R_free g taken
    analytically through the kernel.  Outputs are the whole-space solution
    restricted to the box.
    """

    def __init__(self, p: PotentialSet, omega: complex, tol: float = 1e-10,
                 max_iter: int = 1000, tail_tol: float = 1e-6):
        self.p = p
        self.grid = p.grid
        self.omega = complex(omega)
        self.tol = tol
        self.max_iter = max_iter
        self.kernel = FreeSpaceKernel(p.grid, self.omega, tail_tol=tail_tol)
        self._dkernel = None
        self.diva = divergence(p.grid, p.A) if p.has_A else None
        self.scalar = p.V + (np.sum(p.A**2, axis=0) if p.has_A else 0.0)
        self.iterations: list[int] = []

    @property
    def dkernel(self) -> FreeSpaceKernel:
        if self._dkernel is None:
            self._dkernel = FreeSpaceKernel(self.grid, self.omega, derivative=True,
                                            tail_tol=self.kernel.tail_tol)
        return self._dkernel

    def _W_after(self, kern: FreeSpaceKernel, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(kern g, W kern g)."""
        u = kern.apply(g, check=False)
        out = self.scalar * u
        if self.p.has_A:
            grad = kern.apply_gradient(g, check=False)
            out = out + 1j * self.diva * u
            for j in range(3):
                out = out + 2j * self.p.A[j] * grad[j]
        return u, out

    def _solve_inner(self, f: np.ndarray) -> np.ndarray:
        def mv(g):
            return g + self._W_after(self.kernel, g)[1]
        g, info = gmres_solve(mv, f, self.tol, self.max_iter)
        self.iterations.append(info.iterations)
        return g

    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=complex)
        self.kernel.check_tail(f)

        def one(h):
            if not (self.p.has_A or self.p.has_V):
                return self.kernel.apply(h, check=False)
            return self.kernel.apply(self._solve_inner(h), check=False)
        return _loop_batch(self.grid, f, one)

    def apply_with_derivative(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(R f, R' f) with R' f = R_free' g - R_free (1 + W R_free)^(-1) W R_free' g."""
        f = np.asarray(f, dtype=complex)
        self.kernel.check_tail(f)
        free = not (self.p.has_A or self.p.has_V)
        g = f if free else self._solve_inner(f)
        u = self.kernel.apply(g, check=False)
        du, wdu = self._W_after(self.dkernel, g)
        if free:
            return u, du
        return u, du - self.kernel.apply(self._solve_inner(wdu), check=False)

    def derivative(self, f: np.ndarray) -> np.ndarray:
        return _loop_batch(self.grid, np.asarray(f, dtype=complex),
                           lambda h: self.apply_with_derivative(h)[1])

    def apply_W(self, u: np.ndarray, window: np.ndarray | None = None) -> np.ndarray:
        """W u with the gradient of ``window * u`` taken spectrally."""
        out = self.scalar * u
        if self.p.has_A:
            v = u if window is None else window * u
            F = fft(v)
            out = out + 1j * self.diva * u
            for j, k in enumerate(self.grid.wavevectors):
                out = out + 2j * self.p.A[j] * ifft(1j * k * F)
        return out


# -- limiting absorption ------------------------------------------------------

@dataclass
class LapResult:
    u_limit: np.ndarray
    eps: np.ndarray
    differences: np.ndarray
    ratios: np.ndarray
    order: float
    failed: bool
    solutions: list = field(repr=False, default_factory=list)

    def table(self) -> list[dict]:
        return [{"j": j, "eps": float(self.eps[j]), "d": float(d),
                 "ratio": float(self.ratios[j - 1]) if j > 0 else float("nan")}
                for j, d in enumerate(self.differences)]


class LapFailure(RuntimeError):
    def __init__(self, result: LapResult):
        super().__init__("limiting absorption sequence is not eventually decreasing: "
                         + ", ".join(f"{d:.3e}" for d in result.differences))
        self.result = result


def lap_limit(p: PotentialSet, omega: float, side: str, f: np.ndarray, sched: LapSchedule,
              sigma: float = 1.0, tol: float = 1e-11, whole_space: bool = False,
              raise_on_failure: bool = False, tail_window: int = 3) -> LapResult:
    """Boundary value R(omega +- i0) f from a geometric epsilon sequence.

    Solves at omega +- i eps_j, records d_j = |u_{j+1} - u_j|_{-sigma}
    and extrapolates with the observed ratio r = d_last / d_prev:
    u_lim = u_last + (u_last - u_prev) r / (1 - r).  The observed order
    log(r) / log(sched.ratio) is returned.  The sequence is flagged as a
    failure when any of the last ``tail_window`` ratios is >= 1.
    """
    if side not in ("+", "-"):
        raise ValueError("lap side must be '+' or '-'")
    if not omega > 0:
        raise ValueError(f"lap omega must be positive, got {omega}")
    s = 1.0 if side == "+" else -1.0
    us = []
    for eps in sched.eps:
        z = complex(omega, s * eps)
        if whole_space:
            us.append(WholeSpaceResolvent(p, z, tol=tol).apply(f))
        else:
            us.append(solve_R(p, ResolventQuery(z, tol), f))
    grid = p.grid
    d = np.array([weighted_norm(grid, us[j + 1] - us[j], 0.0, -sigma)
                  for j in range(len(us) - 1)])
    ratios = d[1:] / np.where(d[:-1] > 0, d[:-1], np.finfo(float).tiny)
    r = float(ratios[-1]) if len(ratios) else 0.0
    failed = bool(np.any(ratios[-tail_window:] >= 1.0))
    if 0 < r < 1 and not failed:
        u_lim = us[-1] + (us[-1] - us[-2]) * (r / (1.0 - r))
        order = float(np.log(r) / np.log(sched.ratio))
    else:
        u_lim = us[-1]
        order = float("nan")
    res = LapResult(u_lim, sched.eps, d, ratios, order, failed, us)
    if failed and raise_on_failure:
        raise LapFailure(res)
    return res


def stone_surrogate(H: np.ndarray, omega: float, side: str, f: np.ndarray,
                    eta: float) -> np.ndarray:
    """Dense boundary value PV 1/(H - omega) +- i pi delta(H - omega) applied to f.

    The principal value is regularized as (1 - exp(-x^2/eta^2))/x and the
    delta function as a Gaussian of width eta, with x = lambda - omega.
    """
    lam, U = np.linalg.eigh(0.5 * (H + H.conj().T))
    x = lam - omega
    with np.errstate(divide="ignore", invalid="ignore"):
        pv = np.where(np.abs(x) > 1e-300, -np.expm1(-(x / eta) ** 2) / x, 0.0)
    delta = np.exp(-(x / eta) ** 2) / (np.sqrt(np.pi) * eta)
    s = 1.0 if side == "+" else -1.0
    c = U.conj().T @ np.asarray(f).ravel()
    return (U @ ((pv + s * 1j * np.pi * delta) * c)).reshape(np.shape(f))


# -- Klein-Gordon block resolvent --------------------------------------------

def kg_resolvent_blocks(p: PotentialSet, q: ResolventQuery, F: StateVector,
                        with_V: bool = True) -> StateVector:
    """(K - omega)^(-1) F from the block formula with R evaluated at omega^2 - m^2.

    u = R (omega F1 + i F2),  v = -i F1 - i omega u.
    """
    w = complex(q.omega)
    z = w * w - p.m**2
    u = solve_R(p, ResolventQuery(z, q.tol, q.max_iter), w * F.psi + 1j * F.pi, with_V)
    return StateVector(u, -1j * F.psi - 1j * w * u)


def _free_kg_inverse(grid: SpectralGrid, m: float, omega: complex, X: StateVector) -> StateVector:
    lam = grid.k2 + m**2
    z = omega * omega
    F1, F2 = fft(X.psi), fft(X.pi)
    U = (omega * F1 + 1j * F2) / (lam - z)
    return StateVector(ifft(U), ifft(-1j * F1 - 1j * omega * U))


def apply_K_shift(p: PotentialSet, omega: complex, X: StateVector, with_V: bool = True) -> StateVector:
    """(K - omega) X."""
    M = apply_H_shifted(p, X.psi, p.m**2, with_V)
    return StateVector(1j * X.pi - omega * X.psi, -1j * M - omega * X.pi)


def kg_resolvent_coupled(p: PotentialSet, q: ResolventQuery, F: StateVector,
                         with_V: bool = True) -> StateVector:
    """(K - omega)^(-1) F as one first-order GMRES solve on (psi, pi).

    Right-preconditioned by the exact inverse of the A = V = 0 generator.
    """
    w = complex(q.omega)
    grid = p.grid
    shape = (2,) + grid.shape

    def mv(x):
        r = apply_K_shift(p, w, StateVector(x[0], x[1]), with_V)
        return np.stack([r.psi, r.pi])

    def pre(y):
        r = _free_kg_inverse(grid, p.m, w, StateVector(y[0], y[1]))
        return np.stack([r.psi, r.pi])

    b = np.stack([F.psi, F.pi]).reshape(shape)
    x, _ = gmres_solve(mv, b, q.tol, q.max_iter, precond=pre)
    return StateVector(x[0], x[1])


def state_norm(grid: SpectralGrid, X: StateVector, sigma: float = 0.0) -> float:
    from magkg.grid import energy_norm
    return energy_norm(grid, X, sigma)


@dataclass
class KGResolventResult:
    state: StateVector
    coupled: StateVector
    discrepancy: float


def kg_resolvent(p: PotentialSet, q: ResolventQuery, F: StateVector) -> KGResolventResult:
    """Block-formula resolvent plus the discrepancy against the coupled solve."""
    if complex(q.omega).imag == 0 and abs(complex(q.omega).real) >= p.m:
        raise ForbiddenSpectralParameter(f"omega={q.omega} lies on the continuous spectrum of K")
    a = kg_resolvent_blocks(p, q, F)
    b = kg_resolvent_coupled(p, q, F)
    g = p.grid
    disc = state_norm(g, a - b) / max(state_norm(g, a), np.finfo(float).tiny)
    return KGResolventResult(a, b, float(disc))


# -- Born identities -----------------------------------------------------------

def apply_born_perturbation(p: PotentialSet, X: StateVector) -> StateVector:
    """The matrix perturbation [[0, 0], [-iV, 0]] applied to (psi, pi)."""
    return StateVector(np.zeros_like(X.psi), -1j * p.V * X.psi)


@dataclass
class BornReport:
    series_residual: float
    one_step_residual: float

    def as_dict(self):
        return {"series_residual": self.series_residual, "one_step_residual": self.one_step_residual}


def born_series_residual(p: PotentialSet, q: ResolventQuery, F: StateVector,
                         sigma: float = 1.0) -> BornReport:
    """Residuals of R = R0 - R0 V R0 + R0 V R0 V R and of R = R0 - R0 V R.

    R, R0 are K-resolvents with and without V (same A); V stands for the
    matrix perturbation.  Residuals are relative, measured in F_{-sigma}.
    """
    g = p.grid
    R = lambda X: kg_resolvent_blocks(p, q, X, with_V=True)
    R0 = lambda X: kg_resolvent_blocks(p, q, X, with_V=False)
    Vm = lambda X: apply_born_perturbation(p, X)
    RF = R(F)
    R0F = R0(F)
    R0VR0F = R0(Vm(R0F))
    series = R0F - R0VR0F + R0(Vm(R0(Vm(RF))))
    one = R0F - R0(Vm(RF))
    scale = max(state_norm(g, RF, -sigma), np.finfo(float).tiny)
    return BornReport(float(state_norm(g, RF - series, -sigma) / scale),
                      float(state_norm(g, RF - one, -sigma) / scale))


def born_approximation_defect(p: PotentialSet, q: ResolventQuery, F: StateVector,
                              sigma: float = 1.0) -> float:
    """|R F - (R0 F - R0 V R0 F)|_{F_-sigma}: the first Born approximation error."""
    R0F = kg_resolvent_blocks(p, q, F, with_V=False)
    approx = R0F - kg_resolvent_blocks(p, q, apply_born_perturbation(p, R0F), with_V=False)
    return float(state_norm(p.grid, kg_resolvent_blocks(p, q, F) - approx, -sigma))


@dataclass
class SplittingReport:
    residual: float
    inner_iterations: int
    flagged: bool

    def as_dict(self):
        return {"residual": self.residual, "inner_iterations": self.inner_iterations,
                "flagged": self.flagged}


def born_splitting_check(p: PotentialSet, q: ResolventQuery, f: np.ndarray,
                         iteration_alarm: int = 50) -> SplittingReport:
    """Compare R0 (1 + V R0)^(-1) f with a direct solve of (H - omega) u = f.

    R0 is the resolvent of H0 (V = 0, same A).  The inner GMRES iteration
    count is reported; counts above ``iteration_alarm`` are flagged as a
    sign of near-singular 1 + V R0 (expected close to resonances).
    """
    R0 = lambda h: solve_R(p, q, h, with_V=False)
    g, info = gmres_solve(lambda h: h + p.V * R0(h), np.asarray(f, dtype=complex),
                          q.tol, q.max_iter)
    lhs = R0(g)
    rhs = solve_R(p, q, f)
    res = float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))
    return SplittingReport(res, info.iterations, info.iterations > iteration_alarm)


# -- operator norms and asymptotics ------------------------------------------

def estimate_operator_norm(apply: Callable, apply_adj: Callable, shape: tuple,
                           rng: np.random.Generator, probes: int = 8,
                           refinements: int = 4) -> float:
    """Largest singular value from random probes refined by block power iteration.

    The probe block is pushed through T*T ``refinements`` times with
    Rayleigh-Ritz orthonormalization; the estimate is the largest
    Rayleigh quotient |T x| / |x| over the final block.
    """
    X = rng.standard_normal((probes,) + shape) + 1j * rng.standard_normal((probes,) + shape)
    X = _orthonormalize(X)
    for _ in range(refinements):
        Y = np.stack([apply_adj(apply(x)) for x in X])
        X = _orthonormalize(Y)
    return float(max(np.linalg.norm(apply(x)) / np.linalg.norm(x) for x in X))


def _orthonormalize(X: np.ndarray) -> np.ndarray:
    flat = X.reshape(X.shape[0], -1).T
    Q, _ = np.linalg.qr(flat)
    return Q.T.reshape(X.shape)


TARGET_EXPONENTS = {
    "H": lambda k, l, s: -(1 - l + k) / 2,
    "AA": lambda l: -(1 - l) / 2,
    "AA1": lambda k, l: -(1 - l + k) / 2,
    "Zca": lambda k: 0.5 - k,
    "bRV": lambda k: -2.0,
    "expbM": lambda k: -2.0,
}


def expected_exponent(target: Sequence) -> float:
    name, *args = target
    return float(TARGET_EXPONENTS[name](*args))


def weight_sandwich(grid: SpectralGrid, sigma: float, s_in: float, s_out: float,
                    op: Callable, op_adj: Callable):
    """T = <x>^-sigma <grad>^s_out op <grad>^-s_in <x>^-sigma and its adjoint."""
    w = grid.weight(-sigma)
    b_in = grid.bessel_symbol(-s_in)
    b_out = grid.bessel_symbol(s_out)

    def T(x):
        return w * ifft(b_out * fft(op(ifft(b_in * fft(w * x)))))

    def Tadj(y):
        return w * ifft(b_in * fft(op_adj(ifft(b_out * fft(w * y)))))
    return T, Tadj


def ray_point(kind: str, r: float, c: float = 1.0) -> complex:
    """Sample points for |omega| -> infinity.

    ``negative``: omega = -r.  ``imag1``: omega = r + i.  ``parabola``:
    omega = r + i c sqrt(r), which keeps the distance to the spectrum
    comparable to the spectral scale |k| ~ sqrt(r).  ``imaginary``:
    omega = i r.
    """
    if kind == "negative":
        return complex(-r)
    if kind == "imag1":
        return complex(r, 1.0)
    if kind == "parabola":
        return complex(r, c * np.sqrt(r))
    if kind == "imaginary":
        return complex(0.0, r)
    raise ValueError(f"unknown ray {kind!r}")


def target_operator_norm(p: PotentialSet, target: Sequence, omega: complex, sigma: float,
                         rng: np.random.Generator, probes: int = 8, refinements: int = 4,
                         tol: float = 1e-8) -> float:
    """Weighted operator norm of the quantity named by ``target`` at ``omega``.

    ``("H", k, l, s)``: R^(k) from H^s_sigma to H^(s+l)_-sigma.
    ``("AA", l)``: R0 (V = 0) from H^1_sigma to H^(1+l)_-sigma.
    ``("AA1", k, l)``: R^(k) from H^1_sigma to H^(1+l)_-sigma.
    ``("bRV", k)``: V R0^(k)(omega^2 - m^2) V from H^1_-sigma to H^0_sigma
    (the only nonzero block of the matrix L^(k)).
    """
    grid = p.grid
    name, *args = target
    shape = grid.shape
    if name in ("H", "AA", "AA1"):
        if name == "H":
            k, l, s = args
            with_V = True
        elif name == "AA":
            (l,), k, s, with_V = args, 0, 1, False
        else:
            (k, l), s, with_V = args, 1, True
        q = ResolventQuery(omega, tol)
        qa = ResolventQuery(np.conj(omega), tol)
        op = lambda f: resolvent_derivative(p, q, k, f, with_V)
        opa = lambda f: resolvent_derivative(p, qa, k, f, with_V)
        T, Ta = weight_sandwich(grid, sigma, s, s + l, op, opa)
    elif name == "bRV":
        (k,) = args
        z = complex(omega) ** 2 - p.m**2
        q, qa = ResolventQuery(z, tol), ResolventQuery(np.conj(z), tol)
        wp, wm = grid.weight(sigma), grid.weight(sigma)
        b = grid.bessel_symbol(-1.0)

        def T(x):
            y = ifft(b * fft(wm * x))
            return wp * p.V * resolvent_derivative(p, q, k, p.V * y, with_V=False)

        def Ta(x):
            y = p.V * resolvent_derivative(p, qa, k, p.V * (wp * x), with_V=False)
            return wm * ifft(b * fft(y))
    else:
        raise ValueError(f"unsupported high-energy target {name!r}")
    return estimate_operator_norm(T, Ta, shape, rng, probes, refinements)


def asymptotics_slope(p: PotentialSet, target: Sequence, omega_samples: Sequence[complex],
                      sigma: float, probes: int = 8, refinements: int = 4,
                      rng: np.random.Generator | None = None, r2_min: float = 0.9,
                      tol: float = 1e-8) -> SlopeFit:
    """Fit log |T(omega)| against log |omega| for a high-energy target."""
    rng = rng if rng is not None else np.random.default_rng(0)
    norms = [target_operator_norm(p, target, w, sigma, rng, probes, refinements, tol)
             for w in omega_samples]
    fit = fit_loglog(np.abs(np.asarray(omega_samples)), np.asarray(norms))
    if fit.r2 < r2_min:
        raise SlopeFitRejected(fit, r2_min)
    return fit


def smooth_window(grid: SpectralGrid, r_in: float, r_out: float) -> np.ndarray:
    """Smooth radial cutoff equal to 1 for |x|_inf <= r_in and 0 beyond r_out."""
    from magkg.evolution import smooth_step
    x, y, z = grid.coords
    out = np.ones(grid.shape)
    for c in (x, y, z):
        out = out * smooth_step((r_out - np.abs(c)) / (r_out - r_in))
    return out


def low_energy_derivative_norm(p: PotentialSet, omega: float, sigma: float, k: int,
                               rng: np.random.Generator, probes: int = 8,
                               refinements: int = 4, window=(0.6, 0.9),
                               tol: float = 1e-10) -> float:
    """|chi R^(k)(omega) chi| from H^0_sigma to H^2_-sigma, whole space.

    chi is a smooth window supported inside the box (1 up to window[0] L,
    0 beyond window[1] L); it keeps the data compactly supported and the
    output restricted to the region where the box represents R^3.
    (1 - Delta) R' f is evaluated from the equation (H - omega) R' f = R f.
    """
    if k != 1:
        raise ValueError("low-energy norms are implemented for k = 1")
    if not omega < 0:
        raise ValueError("low-energy samples must lie on the negative axis")
    grid = p.grid
    chi = smooth_window(grid, window[0] * grid.L, window[1] * grid.L)
    wm = grid.weight(-sigma) * chi
    solver = WholeSpaceResolvent(p, omega, tol=tol)
    big = smooth_window(grid, 0.9 * grid.L, 0.97 * grid.L)

    def T(x):
        u, v = solver.apply_with_derivative(wm * x)
        h2 = v + u - solver.apply_W(v, window=big) + omega * v
        return wm * h2

    def Ta(y):
        g = wm * y
        # spectral (1 - Delta) is nonlocal on the grid; its faint tails are cut
        # so the whole-space solver sees compactly supported data
        g2 = chi * ifft((1.0 + grid.k2) * fft(g))
        return wm * solver.derivative(g2)
    return estimate_operator_norm(T, Ta, grid.shape, rng, probes, refinements)


def low_energy_slope(p: PotentialSet, omegas: Sequence[float], sigma: float = 3.0,
                     k: int = 1, probes: int = 8, refinements: int = 4,
                     rng: np.random.Generator | None = None, r2_min: float = 0.9) -> SlopeFit:
    rng = rng if rng is not None else np.random.default_rng(0)
    norms = [low_energy_derivative_norm(p, w, sigma, k, rng, probes, refinements) for w in omegas]
    fit = fit_loglog(np.abs(np.asarray(omegas)), np.asarray(norms))
    if fit.r2 < r2_min:
        raise SlopeFitRejected(fit, r2_min)
    return fit


# -- zero-mode scan -------------------------------------------------------------

class ZeroModeOperator:
    """T = <x>^-sigma (1 + A0 W) <x>^sigma on the box, with its exact adjoint.

    A0 is the whole-space Newton potential; W = 2iA.grad + i div A + |A|^2 + V
    with the spectral gradient, whose discrete adjoint is
    2i grad.(A .) - i div A + |A|^2 + V.
    """

    def __init__(self, p: PotentialSet, sigma: float = 0.51):
        self.p = p
        self.grid = p.grid
        self.sigma = sigma
        self.kernel = FreeSpaceKernel(p.grid, 0.0)
        check_coefficient_tail(p.grid, np.abs(p.V) + np.sum(np.abs(p.A), axis=0))
        self.wp = self.grid.weight(sigma)
        self.wm = self.grid.weight(-sigma)
        self.diva = divergence(p.grid, p.A) if p.has_A else None
        self.scalar = p.V + np.sum(p.A**2, axis=0)

    def _W(self, u):
        out = self.scalar * u
        if self.p.has_A:
            F = fft(u)
            out = out + 1j * self.diva * u
            for j, k in enumerate(self.grid.wavevectors):
                out = out + 2j * self.p.A[j] * ifft(1j * k * F)
        return out

    def _W_adj(self, u):
        out = self.scalar * u
        if self.p.has_A:
            out = out - 1j * self.diva * u
            for j, k in enumerate(self.grid.wavevectors):
                out = out + 2j * ifft(1j * k * fft(self.p.A[j] * u))
        return out

    def apply(self, x):
        return x + self.wm * self.kernel.apply(self._W(self.wp * x), check=False)

    def apply_adj(self, y):
        return y + self.wp * self._W_adj(self.kernel.apply(self.wm * y, check=False))

    def dense(self) -> np.ndarray:
        from magkg.operators import _materialize
        return _materialize(self.apply, self.grid)


def smallest_singular_value(T: ZeroModeOperator, tol: float = 1e-10, method: str = "auto",
                            seed: int = 0) -> float:
    """sigma_min(T) by dense SVD (n <= 12) or Lanczos on (T*T)^(-1)."""
    grid = T.grid
    if method == "auto":
        method = "dense" if grid.n <= 10 else "inverse"
    if method == "dense":
        return float(np.linalg.svd(T.dense(), compute_uv=False)[-1])
    N = grid.size
    shape = grid.shape

    def op(v):
        # (T* T)^-1 v = T^-1 (T*)^-1 v
        a, _ = gmres_solve(T.apply_adj, v.reshape(shape), tol)
        b, _ = gmres_solve(T.apply, a, tol)
        return b.ravel()

    A = spla.LinearOperator((N, N), matvec=op, dtype=complex)
    v0 = np.random.default_rng(seed).standard_normal(N).astype(complex)
    lam = spla.eigsh(A, k=1, which="LM", v0=v0, tol=1e-8, return_eigenvectors=False)
    return float(1.0 / np.sqrt(np.max(np.abs(lam))))


@dataclass
class ZeroModeScan:
    g: np.ndarray
    sigma_min: np.ndarray
    sigma: float
    method: str

    @property
    def argmin(self) -> float:
        return float(self.g[int(np.argmin(self.sigma_min))])

    def dips(self, threshold: float = 0.05) -> np.ndarray:
        return self.g[self.sigma_min < threshold]


def zero_mode_scan(grid: SpectralGrid, g_values: Sequence[float], sigma: float = 0.51,
                   family: str = "scaled-well", params: dict | None = None,
                   method: str = "auto", tol: float = 1e-10) -> ZeroModeScan:
    """sigma_min(1 + A0 W) on H^0_-sigma along a coupling scan.

    ``family`` is ``scaled-well`` (coupling ``g``) or ``gaussian-bump``
    (the bump amplitudes ``a`` and ``v0`` are multiplied by ``g``).
    """
    from magkg.potentials import make_potential
    params = dict(params or {})
    out = []
    for g in g_values:
        if family == "scaled-well":
            p = make_potential("scaled-well", {**params, "g": float(g)}, grid)
        else:
            base = make_potential(family, params, grid)
            p = base.scaled(float(g))
        if not (p.has_A or p.has_V):
            out.append(1.0)
            continue
        out.append(smallest_singular_value(ZeroModeOperator(p, sigma), tol, method))
    return ZeroModeScan(np.asarray(g_values, dtype=float), np.asarray(out), sigma,
                        method if method != "auto" else ("dense" if grid.n <= 10 else "inverse"))
