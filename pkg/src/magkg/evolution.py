"""Time evolution, bound-state removal, spectral cutoffs chi(K) and the
spectral-representation cross-check.

The Klein-Gordon state Psi = (psi, pi) evolves by i dPsi/dt = K Psi, i.e.
psi' = pi, pi' = -M psi with M = H + m^2.  With S = M^(1/2),

    U(t) Psi = (cos(St) psi + S^-1 sin(St) pi, -S sin(St) psi + cos(St) pi).
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from magkg.grid import SpectralGrid, StateVector, apply_multiplier, energy_norm, inner
from magkg.krylov import KrylovSpec
from magkg.operators import (OperatorHandle, apply_H, apply_H_shifted, dense_oracle,
                             krylov_apply_fns, spectral_upper_bound)
from magkg.potentials import PotentialSet


class HorizonError(ValueError):
    pass


class SupercriticalPotential(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


# -- smooth cutoffs --------------------------------------------------------------

def _b(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, b(x)/(b(x)+b(1-x)) between."""
    x = np.asarray(x, dtype=float)
    a, c = _b(x), _b(1.0 - x)
    return a / (a + c)


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth spectral cutoff chi(omega) on the real line.

    ``low``: 1 on |omega| <= m + delta, 0 on |omega| >= m + 2 delta (the
    low-energy cutoff around the thresholds; ``delta`` defaults to m/4).
    ``band``: 1 on lo + ramp <= |omega| <= hi - ramp and 0 outside (lo, hi).
    ``one``: chi = 1.  ``complement`` replaces chi by 1 - chi.  ``odd``
    multiplies a band by sign(omega).
    """

    kind: str = "low"
    m: float = 1.0
    delta: float | None = None
    lo: float = 0.0
    hi: float = 0.0
    ramp: float = 0.0
    complement: bool = False
    odd: bool = False

    def __post_init__(self):
        if self.kind not in ("low", "band", "one"):
            raise ValueError(f"unknown cutoff kind {self.kind!r}")
        if self.kind == "low" and self.width <= 0:
            raise ValueError("cutoff.delta must be positive")
        if self.kind == "band" and not (0 <= self.lo < self.hi and 0 < self.ramp <= 0.5 * (self.hi - self.lo)):
            raise ValueError("band cutoff needs 0 <= lo < hi and 0 < ramp <= (hi - lo)/2")

    @property
    def width(self) -> float:
        return self.delta if self.delta is not None else 0.25 * self.m

    def _base(self, w):
        a = np.abs(np.asarray(w, dtype=float))
        if self.kind == "one":
            return np.ones_like(a)
        if self.kind == "low":
            d = self.width
            return smooth_step((self.m + 2 * d - a) / d)
        up = smooth_step((a - self.lo) / self.ramp)
        down = smooth_step((self.hi - a) / self.ramp)
        return up * down

    def __call__(self, w):
        c = self._base(w)
        if self.odd:
            c = c * np.sign(w)
        return 1.0 - c if self.complement else c

    def even(self, x):
        return 0.5 * (self(x) + self(-np.asarray(x)))

    def odd_part(self, x):
        return 0.5 * (self(x) - self(-np.asarray(x)))

    def support(self) -> tuple[float, float]:
        """Interval of |omega| outside which chi vanishes (inf when unbounded)."""
        if self.complement or self.kind == "one":
            return (0.0, np.inf)
        if self.kind == "low":
            return (0.0, self.m + 2 * self.width)
        return (self.lo, self.hi)


# -- energy and propagators ------------------------------------------------------

def energy(p: PotentialSet, state: StateVector) -> float:
    """E = |(i grad + A) psi|^2 + m^2 |psi|^2 + <V psi, psi> + |pi|^2."""
    g = p.grid
    M = apply_H_shifted(p, state.psi, p.m**2)
    return float(inner(g, state.psi, M).real + inner(g, state.pi, state.pi).real)


def _propagate_exact(handle: OperatorHandle, t: float, state: StateVector,
                     spec: KrylovSpec) -> StateVector:
    a = krylov_apply_fns(handle, ["cos", "sqrt_sin"], state.psi, spec, t).values
    b = krylov_apply_fns(handle, ["cos", "sinc"], state.pi, spec, t).values
    return StateVector(a[0] + b[1], -a[1] + b[0])


def propagate_U0(p: PotentialSet, t: float, state: StateVector,
                 spec: KrylovSpec | None = None) -> StateVector:
    """Free-scalar-potential propagator with B = (H0 + m^2)^(1/2)."""
    if p.has_V:
        raise ValueError("propagate_U0 requires V = 0; use propagate_U")
    spec = spec or KrylovSpec()
    if t == 0:
        return state.copy()
    return _propagate_exact(OperatorHandle("B", p), t, state, spec)


@dataclass(frozen=True)
class EvolutionPlan:
    """How to evolve: ``krylov`` macro-steps of length <= dt, or ``leapfrog`` with step dt.

    ``r0`` is the concentration radius of the initial data; when given,
    the horizon rule L - r0 - t >= 0 is enforced for every requested time.
    """

    method: str = "krylov"
    dt: float = 2.0
    t_max: float = np.inf
    r0: float | None = None
    spec: KrylovSpec = field(default_factory=KrylovSpec)

    def __post_init__(self):
        if self.method not in ("krylov", "leapfrog"):
            raise ValueError(f"evolution.method must be 'krylov' or 'leapfrog', got {self.method!r}")
        if not self.dt > 0:
            raise ValueError(f"evolution.dt must be positive, got {self.dt}")


def leapfrog_stability_limit(p: PotentialSet) -> float:
    """2 / sqrt(lambda_max) with lambda_max bounding H + m^2."""
    return 2.0 / np.sqrt(spectral_upper_bound(p))


def concentration_radius(grid: SpectralGrid, state: StateVector, tail: float = 1e-3) -> float:
    """Smallest radius holding all but ``tail`` of |psi|^2 + |pi|^2."""
    dens = (np.abs(state.psi) ** 2 + np.abs(state.pi) ** 2).ravel()
    r = np.sqrt(grid.r2).ravel()
    order = np.argsort(r)
    cum = np.cumsum(dens[order])
    if cum[-1] == 0:
        return 0.0
    idx = int(np.searchsorted(cum, (1.0 - tail) * cum[-1]))
    return float(r[order][min(idx, r.size - 1)])


def check_horizon(grid: SpectralGrid, r0: float | None, t: float) -> None:
    if r0 is None:
        return
    if grid.L - r0 - abs(t) < 0:
        raise HorizonError(f"horizon exceeded: L - r0 - t = {grid.L - r0 - abs(t):.3g} < 0 "
                           f"(L={grid.L}, r0={r0:.3g}, t={t})")


def leapfrog(p: PotentialSet, t: float, state: StateVector, dt: float,
             callback: Callable | None = None) -> StateVector:
    """Velocity-Verlet integration of psi'' = -(H + m^2) psi up to time t."""
    steps = max(1, int(np.ceil(abs(t) / dt - 1e-12)))
    h = t / steps
    m2 = p.m**2
    psi = state.psi.copy()
    pi = state.pi.copy()
    acc = -apply_H_shifted(p, psi, m2)
    for i in range(steps):
        pi += 0.5 * h * acc
        psi += h * pi
        acc = -apply_H_shifted(p, psi, m2)
        pi += 0.5 * h * acc
        if callback is not None:
            callback((i + 1) * h, StateVector(psi, pi))
    return StateVector(psi, pi)


def propagate_U(p: PotentialSet, t: float, state: StateVector,
                plan: EvolutionPlan | None = None) -> StateVector:
    """U(t) state for i dPsi/dt = K Psi."""
    plan = plan or EvolutionPlan()
    check_horizon(p.grid, plan.r0, t)
    if abs(t) > plan.t_max:
        raise HorizonError(f"t={t} exceeds plan t_max={plan.t_max}")
    if t == 0:
        return state.copy()
    if plan.method == "leapfrog":
        limit = leapfrog_stability_limit(p)
        if plan.dt > limit:
            raise ValueError(f"evolution.dt={plan.dt} exceeds the leapfrog stability limit {limit:.4g}")
        return leapfrog(p, t, state, plan.dt)
    handle = OperatorHandle("K", p)
    if handle.fourier_diagonal and plan.spec.exact_diagonal:
        return _propagate_exact(handle, t, state, plan.spec)
    steps = max(1, int(np.ceil(abs(t) / plan.dt - 1e-12)))
    h = t / steps
    cur = state
    for _ in range(steps):
        cur = _propagate_exact(handle, h, cur, plan.spec)
    return cur


def evolve_series(p: PotentialSet, times, state: StateVector,
                  plan: EvolutionPlan | None = None) -> list[StateVector]:
    """States at increasing ``times``, advancing from one sample to the next."""
    plan = plan or EvolutionPlan()
    out = []
    cur, tc = state, 0.0
    for t in times:
        check_horizon(p.grid, plan.r0, t)
        cur = propagate_U(p, t - tc, cur, EvolutionPlan(plan.method, plan.dt, np.inf, None, plan.spec))
        tc = t
        out.append(cur)
    return out


# -- discrete spectrum and P_c ---------------------------------------------------

@dataclass
class DiscreteSpectrumData:
    """Eigenpairs of H in (-m^2, 0), fields normalized in the discrete L2 norm."""

    values: np.ndarray
    fields: np.ndarray
    m: float
    residuals: np.ndarray
    lambda_min: float

    @property
    def omegas(self) -> np.ndarray:
        return np.sqrt(self.m**2 + self.values)

    def __len__(self):
        return len(self.values)


def _apply_H_columns(p: PotentialSet, X: np.ndarray) -> np.ndarray:
    N = X.shape[0]
    return apply_H(p, X.T.reshape((-1,) + p.grid.shape)).reshape(X.shape[1], N).T


def discrete_spectrum(p: PotentialSet, residual_tol: float = 1e-8, k: int = 8,
                      dense_max_n: int = 12) -> DiscreteSpectrumData:
    """All eigenvalues of H below 0; rejects lambda_min(H) <= -m^2."""
    grid = p.grid
    m2 = p.m**2
    if not np.any(p.V < 0):
        # H0 = sum_j D_j D_j >= 0 exactly, so V >= 0 leaves no negative spectrum
        return DiscreteSpectrumData(np.zeros(0), np.zeros((0,) + grid.shape, complex),
                                    p.m, np.zeros(0), 0.0)
    if grid.n <= dense_max_n:
        Hm = dense_oracle(p, "H")
        lam, U = np.linalg.eigh(0.5 * (Hm + Hm.conj().T))
        vecs = U.T.reshape((-1,) + grid.shape)
    else:
        N = grid.size
        op = spla.LinearOperator((N, N), matvec=lambda v: apply_H(p, v.reshape(grid.shape)).ravel(),
                                 matmat=lambda X: _apply_H_columns(p, X), dtype=complex)
        # (1 - Delta)^(-1) preconditioning keeps LOBPCG iterations grid independent
        sym = 1.0 / (1.0 + grid.k2)
        prec = spla.LinearOperator((N, N), matvec=lambda v: apply_multiplier(
            v.reshape(grid.shape), sym).ravel(),
            matmat=lambda X: apply_multiplier(X.T.reshape((-1,) + grid.shape), sym)
            .reshape(X.shape[1], N).T, dtype=complex)
        rng = np.random.default_rng(0)
        kk = k
        while True:
            X0 = rng.standard_normal((N, kk)) + 0j
            with warnings.catch_warnings():
                # convergence is judged by the residual gate below, not by lobpcg's own tol
                warnings.simplefilter("ignore", UserWarning)
                lam, U = spla.lobpcg(op, X0, M=prec, largest=False, tol=1e-10, maxiter=500)
            order = np.argsort(lam)
            lam, U = lam[order], U[:, order]
            if lam[-1] >= 0 or kk >= 64:
                break
            kk *= 2
        vecs = U.T.reshape((-1,) + grid.shape)
    lam_min = float(lam[0])
    if lam_min <= -m2:
        raise SupercriticalPotential(
            f"supercritical potential: lambda_min(H) = {lam_min:.6g} <= -m^2 = {-m2:.6g}")
    keep = lam < 0
    vals = lam[keep]
    fields = vecs[keep] / np.sqrt(grid.dV)
    res = np.array([np.linalg.norm(apply_H(p, f) - v * f) / np.linalg.norm(f)
                    for v, f in zip(vals, fields)])
    if np.any(res > residual_tol):
        raise RuntimeError(f"bound-state residual {res.max():.2e} exceeds {residual_tol:.0e}")
    return DiscreteSpectrumData(vals, fields, p.m, res, lam_min)


def project_Pc(data: DiscreteSpectrumData, state: StateVector, grid: SpectralGrid) -> StateVector:
    """Remove the bound-state K-eigenvectors (phi, -+ i omega phi) in the energy inner product."""
    psi = state.psi.copy()
    pi = state.pi.copy()
    for phi, w in zip(data.fields, data.omegas):
        a = inner(grid, phi, state.psi)
        b = inner(grid, phi, state.pi)
        for s in (1.0, -1.0):
            c = (w * w * a + s * 1j * w * b) / (2 * w * w)
            psi -= c * phi
            pi -= c * (-s * 1j * w) * phi
    return StateVector(psi, pi)


# -- chi(K) --------------------------------------------------------------------------

def chi_filter(p: PotentialSet, chi: CutoffSpec, state: StateVector,
               spec: KrylovSpec | None = None) -> StateVector:
    """chi(K) state via chi(K) = chi_e(S) + K S^-1 chi_o(S), S = (H + m^2)^(1/2).

    On (psi, pi) this gives (chi_e psi + i g pi, chi_e pi - i h psi) with
    g(lam) = chi_o(sqrt lam)/sqrt lam and h(lam) = sqrt(lam) chi_o(sqrt lam).
    """
    spec = spec or KrylovSpec()
    handle = OperatorHandle("K", p)
    ce = lambda lam: chi.even(np.sqrt(lam))
    co = chi.odd_part
    g = lambda lam: co(np.sqrt(lam)) / np.sqrt(lam)
    h = lambda lam: np.sqrt(lam) * co(np.sqrt(lam))
    if chi.odd:
        a = krylov_apply_fns(handle, [ce, h], state.psi, spec).values
        b = krylov_apply_fns(handle, [ce, g], state.pi, spec).values
        return StateVector(a[0] + 1j * b[1], b[0] - 1j * a[1])
    a = krylov_apply_fns(handle, [ce], state.psi, spec).values
    b = krylov_apply_fns(handle, [ce], state.pi, spec).values
    return StateVector(a[0], b[0])


# -- spectral representation ------------------------------------------------------

def gauss_panels(a: float, b: float, nodes: int, per_panel: int = 8):
    """Composite Gauss-Legendre nodes and weights on [a, b]."""
    panels = max(1, nodes // per_panel)
    x, w = np.polynomial.legendre.leggauss(per_panel)
    edges = np.linspace(a, b, panels + 1)
    X, Wt = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        X.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        Wt.append(0.5 * (hi - lo) * w)
    return np.concatenate(X), np.concatenate(Wt)


@dataclass
class SpectralRepResult:
    lhs: StateVector
    rhs: StateVector
    rel_err: float
    eps: tuple
    nodes: int


def _kg_resolvent_fn(p: PotentialSet, tol: float):
    from magkg.resolvent import ResolventQuery, kg_resolvent_blocks
    return lambda w, F: kg_resolvent_blocks(p, ResolventQuery(w, tol), F)


def spectral_integral(p: PotentialSet, t: float, state: StateVector, chi: CutoffSpec,
                      eps: float, nodes: int, tol: float = 1e-10,
                      workers: int = 1, per_panel: int = 8) -> StateVector:
    """(1/2 pi i) int chi(w) e^{-iwt} [R_K(w + i eps) - R_K(w - i eps)] state dw over Gamma.

    Gamma is split into m < |w| < support end; ``nodes`` Gauss-Legendre
    points are used on each half-line.
    """
    lo, hi = chi.support()
    if not np.isfinite(hi):
        raise QuadratureError("spectral_rep_check needs a compactly supported cutoff")
    lo = max(lo, p.m)
    xs, ws = gauss_panels(lo, hi, nodes, per_panel)
    pts = np.concatenate([xs, -xs[::-1]])
    wts = np.concatenate([ws, ws[::-1]])
    Rk = _kg_resolvent_fn(p, tol)

    def node(i):
        w = pts[i]
        c = chi(w) * np.exp(-1j * w * t) * wts[i]
        if c == 0:
            return None
        d = Rk(w + 1j * eps, state) - Rk(w - 1j * eps, state)
        return d * (c / (2j * np.pi))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(node, range(len(pts))))
    else:
        parts = [node(i) for i in range(len(pts))]
    acc = StateVector.zeros(p.grid)
    for part in parts:
        if part is not None:
            acc = acc + part
    return acc


def default_eps(chi: CutoffSpec, m: float, nodes: int, factor: float = 3.2) -> float:
    """Smallest epsilon the node spacing resolves: factor * support length / nodes."""
    lo, hi = chi.support()
    return factor * (hi - max(lo, m)) / nodes


def spectral_rep_check(p: PotentialSet, t: float, state: StateVector, chi: CutoffSpec,
                       nodes: int = 128, sigma: float = 1.0, eps: float | None = None,
                       data: DiscreteSpectrumData | None = None, tol: float = 1e-10,
                       workers: int = 1, spec: KrylovSpec | None = None) -> SpectralRepResult:
    """Compare the spectral-representation integral with U(t) chi(K) P_c state.

    With ``eps`` given, the integral is evaluated at that single epsilon.
    Otherwise eps_min = :func:`default_eps` is used and the integral is
    evaluated at eps in {4, 2, 1} eps_min and Richardson-extrapolated to
    eps = 0 (removing the O(eps) and O(eps^2) smoothing bias).
    """
    data = data if data is not None else discrete_spectrum(p)
    pc = project_Pc(data, state, p.grid)
    if eps is not None:
        lhs = spectral_integral(p, t, pc, chi, eps, nodes, tol, workers)
        used = (eps,)
    else:
        e = default_eps(chi, p.m, nodes)
        I4, I2, I1 = (spectral_integral(p, t, pc, chi, c * e, nodes, tol, workers) for c in (4, 2, 1))
        # Richardson for a0 + a1 e + a2 e^2 sampled at e, 2e, 4e
        lhs = (8.0 * I1 - 6.0 * I2 + 1.0 * I4) * (1.0 / 3.0)
        used = (4 * e, 2 * e, e)
    filtered = chi_filter(p, chi, pc, spec)
    rhs = propagate_U(p, t, filtered, EvolutionPlan(spec=spec or KrylovSpec()))
    g = p.grid
    err = energy_norm(g, lhs - rhs, -sigma) / energy_norm(g, rhs, -sigma)
    return SpectralRepResult(lhs, rhs, float(err), used, nodes)


def duhamel_residual(p: PotentialSet, t: float, state: StateVector, nodes: int = 24,
                     spec: KrylovSpec | None = None) -> float:
    """Relative defect of U(t) = U0(t) - i int_0^t U(t - s) Vm U0(s) ds.

    U0 evolves without V (same A) and Vm = [[0, 0], [-iV, 0]].
    """
    from magkg.resolvent import apply_born_perturbation
    spec = spec or KrylovSpec()
    plan = EvolutionPlan(spec=spec)
    p0 = p.without_V()
    xs, ws = gauss_panels(0.0, t, nodes, min(nodes, 12))
    acc = StateVector.zeros(p.grid)
    for s, w in zip(xs, ws):
        y = apply_born_perturbation(p, propagate_U(p0, s, state, plan))
        acc = acc + propagate_U(p, t - s, y, plan) * w
    lhs = propagate_U(p, t, state, plan)
    rhs = propagate_U(p0, t, state, plan) - 1j * acc
    g = p.grid
    return float(energy_norm(g, lhs - rhs, 0.0) / energy_norm(g, lhs, 0.0))
