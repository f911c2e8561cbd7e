"""Dilation generator, commutator identities and Mourre bounds.

P0 = (i/2)(x.grad + grad.x) = (i/2)(2 x.grad + 3) is the dilation
generator on the box coordinates; the calibrated conjugate operator is
P = c P0 with c fitted so that i[B^2, P] = B^2 - m^2 at A = 0 (c = -1/2).
For A != 0 the remainder Q = i[B^2, P] - (B^2 - m^2) is the first-order
operator

    Q = -i sum_j a_j d_j - (i/2) div a - sum_j a_j A_j,   a_j = A_j + (x.grad) A_j.

The square root and the commutator with P_B = P B^-1 + B^-1 P are
handled through the Kato formula and its commutator variants, evaluated
by quadrature in the substitution omega = s^2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from magkg import kernels
from magkg.grid import SpectralGrid, fft, gradient, ifft
from magkg.operators import DENSE_MAX_N, OracleSizeError, _materialize, apply_H_shifted, dense_oracle
from magkg.potentials import PotentialSet


class BoundaryMassError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


class EmptyWindowError(ValueError):
    pass


# -- the dilation generator ---------------------------------------------------------

def interior_mass_fraction(grid: SpectralGrid, f: np.ndarray, margin: int = 5) -> float:
    r = np.sqrt(grid.r2)
    inside = r <= grid.L - margin * grid.h
    tot = np.sum(np.abs(f) ** 2)
    return float(np.sum(np.abs(f[..., inside]) ** 2) / tot) if tot > 0 else 1.0


def apply_P(grid: SpectralGrid, f: np.ndarray, c: float = 1.0, check: bool = True,
            tol: float = 1e-8) -> np.ndarray:
    """c (i/2)(x.grad f + div(x f)) = c (i/2)(2 x.grad f + 3 f).

    With ``check`` the field must keep all but ``tol`` of its mass inside
    |x| <= L - 5h, because x is the non-periodic coordinate table.
    """
    if check:
        frac = interior_mass_fraction(grid, f)
        if frac < 1.0 - tol:
            raise BoundaryMassError(
                f"field has a fraction {1 - frac:.2e} of its mass near the box boundary "
                f"(limit {tol:.0e})")
    return _apply_P_batch(grid, np.asarray(f, dtype=complex), c)


def _apply_P_batch(grid, f, c):
    x = grid.x_table
    return (0.5j * c) * kernels.dilation(gradient(grid, f), x, x, x, f)


def dense_P(grid: SpectralGrid, c: float = 1.0) -> np.ndarray:
    if grid.n > DENSE_MAX_N:
        raise OracleSizeError(f"dense oracle needs n <= {DENSE_MAX_N}")
    return _materialize(lambda e: _apply_P_batch(grid, e, c), grid)


def commutator_B2_P(p: PotentialSet, f: np.ndarray, c: float = 1.0) -> np.ndarray:
    """i[B^2, cP0] f with B^2 = H0 + m^2 (no boundary check on intermediates)."""
    grid = p.grid
    m2 = p.m**2
    Pf = _apply_P_batch(grid, f, c)
    return 1j * (apply_H_shifted(p, Pf, m2, with_V=False)
                 - _apply_P_batch(grid, apply_H_shifted(p, f, m2, with_V=False), c))


def packet(grid: SpectralGrid, k=(0.0, 0.0, 0.0), width: float = 1.0, center=(0.0, 0.0, 0.0)):
    """Windowed plane wave exp(i k.x) exp(-|x - c|^2 / (2 width^2))."""
    x, y, z = grid.coords
    d2 = (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2
    return np.exp(1j * (k[0] * x + k[1] * y + k[2] * z) - d2 / (2 * width**2))


def balanced_width(grid: SpectralGrid) -> float:
    """Packet width for which boundary mass and aliasing decay at equal rates."""
    return float(np.sqrt(grid.L * grid.h / np.pi))


@dataclass
class Calibration:
    c: float
    residual: float
    per_probe: np.ndarray


def calibrate_P(grid: SpectralGrid, m: float = 1.0, probes: list | None = None,
                max_residual: float = 1e-6) -> Calibration:
    """Least-squares scalar c with c i[B^2, P0] f = (B^2 - m^2) f at A = 0.

    The default probes are ten windowed plane waves of width sqrt(L h / pi),
    which balances boundary mass against aliasing, with wavevectors up to
    a sixth of the Nyquist wavenumber.
    """
    from magkg.potentials import make_potential
    p = make_potential("zero", {"m": m}, grid)
    if probes is None:
        rng = np.random.default_rng(12345)
        kmax = (np.pi / grid.h) / 6.0
        probes = [packet(grid, rng.uniform(-kmax, kmax, 3) * (i > 0), balanced_width(grid))
                  for i in range(10)]
    C = np.stack([commutator_B2_P(p, f, 1.0).ravel() for f in probes])
    T = np.stack([ifft(grid.k2 * fft(f)).ravel() for f in probes])
    c = float(np.real(np.vdot(C.ravel(), T.ravel()) / np.vdot(C.ravel(), C.ravel())))
    per = np.array([np.real(np.vdot(ci, ti) / np.vdot(ci, ci)) for ci, ti in zip(C, T)])
    res = float(np.linalg.norm(c * C - T) / np.linalg.norm(T))
    if res > max_residual:
        raise CalibrationError(f"no consistent scalar: best fit c={c:.6g} leaves residual {res:.2e}")
    return Calibration(c, res, per)


CALIBRATED_C = -0.5


# -- the remainder Q -------------------------------------------------------------------

def _a_field(p: PotentialSet) -> np.ndarray:
    """a_j = A_j + (x.grad) A_j."""
    grid = p.grid
    x, y, z = grid.coords
    out = np.empty_like(p.A)
    for j in range(3):
        g = gradient(grid, p.A[j]).real
        out[j] = p.A[j] + x * g[0] + y * g[1] + z * g[2]
    return out


def apply_Q_true(p: PotentialSet, f: np.ndarray) -> np.ndarray:
    """Q f = -i sum_j a_j d_j f - (i/2)(div a) f - (sum_j a_j A_j) f (calibrated P)."""
    grid = p.grid
    a = _a_field(p)
    div_a = sum(ifft(1j * k * fft(a[j])).real for j, k in enumerate(grid.wavevectors))
    F = fft(f)
    out = -(0.5j * div_a + np.sum(a * p.A, axis=0)) * f
    for j, k in enumerate(grid.wavevectors):
        out = out - 1j * a[j] * ifft(1j * k * F)
    return out


def apply_Q_printed(p: PotentialSet, f: np.ndarray, reading: str = "gradient") -> np.ndarray:
    """The remainder as printed with the literal P0.

    -A^2 + 2i div A - x.(grad A^2) + 2i x.grad(div A) + i sum_jk x_j (d_j A_k) d_k.
    ``reading`` selects how ``x.(grad A^2)`` is parsed: ``gradient`` takes
    x.grad(|A|^2); ``contraction`` takes sum_k (x.grad A_k) A_k.
    """
    grid = p.grid
    xs = grid.coords
    A2 = np.sum(p.A**2, axis=0)
    divA = sum(ifft(1j * k * fft(p.A[j])).real for j, k in enumerate(grid.wavevectors))
    gA = [gradient(grid, p.A[k]).real for k in range(3)]
    if reading == "gradient":
        gA2 = gradient(grid, A2).real
        xgA2 = sum(xs[i] * gA2[i] for i in range(3))
    elif reading == "contraction":
        xgA2 = sum(sum(xs[i] * gA[k][i] for i in range(3)) * p.A[k] for k in range(3))
    else:
        raise ValueError(f"unknown reading {reading!r}")
    gdiv = gradient(grid, divA).real
    xgdiv = sum(xs[i] * gdiv[i] for i in range(3))
    out = (-A2 + 2j * divA - xgA2 + 2j * xgdiv) * f
    F = fft(f)
    for k in range(3):
        coeff = sum(xs[j] * gA[k][j] for j in range(3))
        out = out + 1j * coeff * ifft(1j * grid.wavevectors[k] * F)
    return out


@dataclass
class CommutatorReport:
    identity: str
    residual: float
    calibration: float
    window: tuple | None = None
    min_eig: float | None = None
    rhs: float | None = None
    passed: bool | None = None
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"identity": self.identity, "residual": self.residual, "calibration": self.calibration,
             "window": list(self.window) if self.window else None, "min_eig": self.min_eig,
             "rhs": self.rhs, "passed": self.passed}
        d.update({k: v for k, v in self.details.items() if np.isscalar(v) or isinstance(v, dict)})
        return d


def fit_first_order(grid: SpectralGrid, probes: list, outputs: list) -> tuple[float, np.ndarray]:
    """Pointwise least-squares fit of outputs by c0 f + sum_j c_j d_j f.

    Returns the relative defect and the fitted coefficients (4, n, n, n).
    A small defect means the map is a first-order differential operator.
    """
    P = len(probes)
    cols = []
    for f in probes:
        g = gradient(grid, f)
        cols.append(np.stack([f, g[0], g[1], g[2]]))
    X = np.stack(cols)  # (P, 4, n, n, n)
    Y = np.stack(outputs)
    Xp = np.moveaxis(X.reshape(P, 4, -1), -1, 0)  # (N, P, 4)
    Yp = Y.reshape(P, -1).T[:, :, None]  # (N, P, 1)
    coef, *_ = _batched_lstsq(Xp, Yp)
    fitted = np.einsum("npk,nk->np", Xp, coef[:, :, 0])
    defect = np.linalg.norm(fitted - Yp[:, :, 0]) / np.linalg.norm(Yp)
    return float(defect), coef[:, :, 0].T.reshape((4,) + grid.shape)


def _batched_lstsq(X, Y):
    XH = np.conj(np.swapaxes(X, 1, 2))
    G = XH @ X
    rhs = XH @ Y
    G = G + 1e-14 * np.trace(G, axis1=1, axis2=2)[:, None, None].real.clip(min=1e-300) * np.eye(G.shape[-1])
    return (np.linalg.solve(G, rhs),)


def commutator_a1(p: PotentialSet, f: np.ndarray, c: float = CALIBRATED_C,
                  structural_probes: list | None = None) -> CommutatorReport:
    """Q_num f = i[B^2, cP0] f - (B^2 - m^2) f against the first-order remainder.

    ``residual`` is |Q_num f - Q f| / |B^2 f - m^2 f| (equal to |Q_num f|
    relative when A = 0).  The report carries the pointwise first-order
    structural defect over ``structural_probes`` and the term-by-term
    comparison with the printed remainder under both readings and the
    scale factors 1 and 1/c.
    """
    grid = p.grid
    apply_P(grid, f, c, check=True)
    m2 = p.m**2
    H0f = apply_H_shifted(p, f, 0.0, with_V=False)
    qnum = commutator_B2_P(p, f, c) - H0f
    qtrue = apply_Q_true(p, f)
    denom = max(np.linalg.norm(H0f), np.finfo(float).tiny)
    residual = float(np.linalg.norm(qnum - qtrue) / denom)
    details: dict = {"q_num_norm": float(np.linalg.norm(qnum) / denom)}
    printed = {}
    for reading in ("gradient", "contraction"):
        qp = apply_Q_printed(p, f, reading)
        qn = max(np.linalg.norm(qnum), np.finfo(float).tiny)
        printed[reading] = {"scale_1": float(np.linalg.norm(qnum - qp) / qn),
                            "scale_c": float(np.linalg.norm(qnum - c * qp) / qn)}
    details["printed_Q"] = printed
    if structural_probes:
        outs = [commutator_B2_P(p, g, c) - apply_H_shifted(p, g, 0.0, with_V=False)
                for g in structural_probes]
        defect, coef = fit_first_order(grid, structural_probes, outs)
        details["first_order_defect"] = defect
    return CommutatorReport("a1", residual, c, details=details)


# -- Kato square-root quadrature ------------------------------------------------------

def kato_nodes(lam_min: float, lam_max: float, nodes: int = 96, tail_tol: float = 1e-12):
    """Nodes s_q and weights for integrals over omega = s^2 in (0, inf).

    Composite Gauss-Legendre on log-spaced panels of s in [0, S] with S
    chosen so the neglected asymptotic remainder is below ``tail_tol``.
    Returns (s, w, S) with int_0^S g(s) ds ~ sum w g(s).
    """
    lo = np.sqrt(max(lam_min, 1e-12))
    S = max(1e3 * np.sqrt(lam_max), 1e4)
    per = 8
    panels = max(2, nodes // per)
    inner = np.concatenate([[0.0], np.geomspace(0.05 * lo, S, panels)])
    x, w = np.polynomial.legendre.leggauss(per)
    ss, ws = [], []
    for a, b in zip(inner[:-1], inner[1:]):
        ss.append(0.5 * (b - a) * x + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * w)
    return np.concatenate(ss), np.concatenate(ws), S


class QuadratureTailError(RuntimeError):
    pass


def kato_sqrt_weights(lam: np.ndarray, nodes: int = 96, tol: float = 1e-10) -> np.ndarray:
    """Quadrature of (1/pi) int_0^inf omega^(-1/2) lam/(lam + omega) d omega = sqrt(lam).

    With omega = s^2: (2/pi) int_0^inf lam/(lam + s^2) ds; the tail beyond
    S is lam/S - lam^2/(3 S^3) + ..., the first two terms are added.
    """
    s, w, S = kato_nodes(lam.min(), lam.max(), nodes)
    body = (2.0 / np.pi) * (w[None, :] * (lam[:, None] / (lam[:, None] + s[None, :] ** 2))).sum(1)
    tail = (2.0 / np.pi) * (lam / S - lam**2 / (3 * S**3))
    rem = (2.0 / np.pi) * np.max(lam**3) / (5 * S**5)
    if rem > tol:
        raise QuadratureTailError(f"quadrature tail remainder {rem:.2e} above {tol:.0e}")
    return body + tail


def kato_pair_weights(lam: np.ndarray, nodes: int = 96, tol: float = 1e-10) -> np.ndarray:
    """(1/pi) int_0^inf omega^(1/2) / ((lam_a + omega)(lam_b + omega)) d omega for all pairs.

    With omega = s^2 the integrand is 2 s^2 / ((lam_a + s^2)(lam_b + s^2));
    the tail beyond S is 2/S - 2(lam_a + lam_b)/(3 S^3) + ..., added in
    closed form.  The exact value is 1 / (sqrt(lam_a) + sqrt(lam_b)).
    """
    s, w, S = kato_nodes(lam.min(), lam.max(), nodes)
    s2 = s**2
    inv = 1.0 / (lam[:, None] + s2[None, :])  # (N, Q)
    Wm = (inv * (2.0 * w * s2)[None, :]) @ inv.T
    la, lb = lam[:, None], lam[None, :]
    tail = 2.0 / S - 2.0 * (la + lb) / (3 * S**3)
    rem = 2.0 * (np.max(lam) ** 2) * 3 / (5 * S**5)
    if rem > tol:
        raise QuadratureTailError(f"quadrature tail remainder {rem:.2e} above {tol:.0e}")
    return (Wm + tail) / np.pi


@dataclass
class DenseB:
    """Eigendecomposition of B^2 = H0 + m^2 on a small grid."""

    lam: np.ndarray
    U: np.ndarray

    @classmethod
    def build(cls, p: PotentialSet) -> "DenseB":
        M = dense_oracle(p, "M0")
        lam, U = np.linalg.eigh(0.5 * (M + M.conj().T))
        return cls(lam, U)

    @property
    def b(self) -> np.ndarray:
        return np.sqrt(self.lam)

    def fn(self, g) -> np.ndarray:
        return (self.U * g(self.lam)) @ self.U.conj().T

    def to_eig(self, X):
        return self.U.conj().T @ X @ self.U

    def from_eig(self, X):
        return self.U @ X @ self.U.conj().T


def sqr_residual(p: PotentialSet, f: np.ndarray, nodes: int = 96,
                 dense: DenseB | None = None) -> float:
    """|B_quad f - B f| / |B f| for the Kato square-root quadrature (dense)."""
    D = dense or DenseB.build(p)
    c = D.U.conj().T @ f.ravel()
    quad = D.U @ (kato_sqrt_weights(D.lam, nodes) * c)
    exact = D.U @ (D.b * c)
    return float(np.linalg.norm(quad - exact) / np.linalg.norm(exact))


def dense_commutator_model(p: PotentialSet, c: float = CALIBRATED_C, q: str = "true",
                           nodes: int = 96, dense: DenseB | None = None) -> dict:
    """Dense pieces of i[B, P_B] = (B^2 - m^2) B^-2 + J with J = J2 + J3.

    ``q = "true"`` uses the first-order remainder :func:`apply_Q_true`;
    ``q = "num"`` uses the matrix remainder i[B^2, cP0] - (B^2 - m^2).
    Returns eigenbasis matrices ``main`` (diagonal), ``J`` (quadrature),
    the direct matrix commutator ``direct`` (for ``q = "num"`` comparisons),
    and the :class:`DenseB` used.
    """
    grid = p.grid
    D = dense or DenseB.build(p)
    m2 = p.m**2
    b = D.b
    if q == "true":
        Qm = _materialize(lambda e: apply_Q_true(p, e), grid)
    elif q == "num":
        P = dense_P(grid, c)
        M = D.fn(lambda x: x)
        Qm = 1j * (M @ P - P @ M) - (M - m2 * np.eye(grid.size))
    else:
        raise ValueError("q must be 'true' or 'num'")
    Qe = D.to_eig(Qm)
    Wp = kato_pair_weights(D.lam, nodes)
    # J2 = int w^1/2 (M+w)^-1 Q B^-1 (M+w)^-1 ;  J3 = int w^1/2 (M+w)^-1 B^-1 Q (M+w)^-1
    J = Wp * (Qe / b[None, :] + Qe / b[:, None])
    main = np.diag((D.lam - m2) / D.lam)
    return {"main": main, "J": J, "Q": Qe, "dense": D}


def direct_commutator_PB(p: PotentialSet, c: float = CALIBRATED_C,
                         dense: DenseB | None = None) -> np.ndarray:
    """i[B, P_B] from dense matrices, P_B = P B^-1 + B^-1 P, in the B eigenbasis."""
    D = dense or DenseB.build(p)
    Pe = D.to_eig(dense_P(p.grid, c))
    b = D.b
    PB = Pe / b[None, :] + Pe / b[:, None]
    return 1j * (b[:, None] * PB - PB * b[None, :])


def commutator_k1(p: PotentialSet, f: np.ndarray | None = None, c: float = CALIBRATED_C,
                  nodes: int = 96) -> CommutatorReport:
    """Two-path check of J in i[B, P_B] = (B^2 - m^2)/B^2 + J (dense).

    Path 1: J = i[B, P_B] - (B^2 - m^2) B^-2 from dense matrix commutators.
    Path 2: J = J2 + J3 by Kato quadrature from the matrix remainder Q.
    ``residual`` is the relative difference, applied to ``f`` when given
    and in Frobenius norm otherwise.
    """
    D = DenseB.build(p)
    model = dense_commutator_model(p, c, "num", nodes, D)
    direct = direct_commutator_PB(p, c, D)
    J1 = direct - model["main"]
    J2 = model["J"]
    if f is not None:
        v = D.U.conj().T @ f.ravel()
        a, b_ = J1 @ v, J2 @ v
        scale = max(np.linalg.norm(direct @ v), np.finfo(float).tiny)
        res = float(np.linalg.norm(a - b_) / scale)
    else:
        scale = max(np.linalg.norm(direct), np.finfo(float).tiny)
        res = float(np.linalg.norm(J1 - J2) / scale)
    jn = float(np.linalg.norm(J1) / max(np.linalg.norm(direct), np.finfo(float).tiny))
    return CommutatorReport("k1", res, c, details={"J_norm": jn})


def sqr2_residual(p: PotentialSet, c: float = CALIBRATED_C, nodes: int = 96) -> float:
    """Relative defect of [B, P] = (1/pi) int omega^1/2 (B^2+omega)^-1 [B^2, P] (B^2+omega)^-1."""
    D = DenseB.build(p)
    Pe = D.to_eig(dense_P(p.grid, c))
    b = D.b
    lhs = b[:, None] * Pe - Pe * b[None, :]
    comm2 = D.lam[:, None] * Pe - Pe * D.lam[None, :]
    rhs = kato_pair_weights(D.lam, nodes) * comm2
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))


def mourre_bound(p: PotentialSet, lam: float | None = None, mu: float | None = None,
                 delta: float = 0.0, nu: float | None = None, theta: float | None = None,
                 c: float = CALIBRATED_C, nodes: int = 96, window_tol: float = 1e-9,
                 dense_max_n: int = 10, eig_tol: float = 1e-12) -> CommutatorReport:
    """Compressed Mourre bound on the dense grid.

    Local window (``lam``, ``mu``): the compression of
    (B^2 - m^2) B^-2 + J to {|b - lam| <= mu} must have smallest eigenvalue
    >= (lam^2 - m^2)/lam^2 - delta.  Full window (``nu``, ``theta``):
    the compression to {b >= m + nu} must be >= theta.

    J is the Kato-quadrature remainder built from the first-order Q.  The
    matrix commutator i[B, X] itself has zero diagonal in the eigenbasis of
    a finite-dimensional B, so its compressions are never positive; its
    window minimum is reported as ``matrix_min_eig`` for reference.
    ``passed`` allows ``eig_tol`` of rounding below the right-hand side.
    """
    if p.grid.n > dense_max_n:
        raise OracleSizeError(f"mourre_bound is dense-only (n <= {dense_max_n})")
    model = dense_commutator_model(p, c, "true", nodes)
    D = model["dense"]
    b = D.b
    C = model["main"] + model["J"]
    C = 0.5 * (C + C.conj().T)
    m = p.m
    if lam is not None:
        if mu is None:
            raise ValueError("local windows need mu")
        sel = np.abs(b - lam) <= mu + window_tol
        rhs = (lam**2 - m**2) / lam**2 - delta
        window = ("local", lam, mu)
    else:
        if nu is None or theta is None:
            raise ValueError("full windows need nu and theta")
        sel = b >= m + nu - window_tol
        rhs = theta
        window = ("full", nu)
    if not np.any(sel):
        raise EmptyWindowError(f"no eigenvalue of B in the window {window}; refine the grid")
    Cw = C[np.ix_(sel, sel)]
    min_eig = float(np.linalg.eigvalsh(Cw)[0])
    direct = direct_commutator_PB(p, c, D)
    dw = direct[np.ix_(sel, sel)]
    mat_min = float(np.linalg.eigvalsh(0.5 * (dw + dw.conj().T))[0])
    return CommutatorReport("ME1" if lam is not None else "ME", 0.0, c, window, min_eig,
                            float(rhs), bool(min_eig >= rhs - eig_tol),
                            {"window_size": int(sel.sum()), "matrix_min_eig": mat_min,
                             "b_window": [float(b[sel].min()), float(b[sel].max())]})


def _solve_shifted(p: PotentialSet, omega: float, f: np.ndarray, tol: float) -> np.ndarray:
    """(B^2 + omega)^-1 f by conjugate gradients (Fourier solve when A = 0)."""
    grid = p.grid
    shift = p.m**2 + omega
    if not p.has_A:
        return ifft(fft(f) / (grid.k2 + shift))
    from scipy.sparse.linalg import LinearOperator, cg
    N = grid.size
    op = LinearOperator((N, N), dtype=complex, matvec=lambda v: apply_H_shifted(
        p, v.reshape(grid.shape), shift, with_V=False).ravel())
    pre = LinearOperator((N, N), dtype=complex, matvec=lambda v: ifft(
        fft(v.reshape(grid.shape)) / (grid.k2 + shift)).ravel())
    x, info = cg(op, f.ravel(), rtol=tol, maxiter=2000, M=pre)
    if info != 0:
        raise RuntimeError(f"shifted solve did not converge (omega={omega:g})")
    return x.reshape(grid.shape)


def apply_J(p: PotentialSet, f: np.ndarray, spec=None, nodes: int = 96,
            tol: float = 1e-11) -> np.ndarray:
    """J f = (J2 + J3) f by Kato quadrature with the first-order remainder Q.

    Matrix-free: each node costs two shifted solves per term.
    """
    from magkg.operators import apply_B_inv
    if not p.has_A:
        return np.zeros_like(f, dtype=complex)
    grid = p.grid
    lam_max = float(grid.k2.max()) + p.m**2
    s, w, S = kato_nodes(p.m**2, lam_max, nodes)
    binv = lambda g: apply_B_inv(p, g, spec)
    out = np.zeros(grid.shape, dtype=complex)
    for sq, wq in zip(s, w):
        om = sq * sq
        r = _solve_shifted(p, om, f, tol)
        inner_ = apply_Q_true(p, binv(r)) + binv(apply_Q_true(p, r))
        out += (2.0 * wq * om) * _solve_shifted(p, om, inner_, tol)
    tail = (2.0 / S) * (apply_Q_true(p, binv(f)) + binv(apply_Q_true(p, f)))
    return (out + tail) / np.pi


def k1_residual(p: PotentialSet, f: np.ndarray, c: float = CALIBRATED_C, spec=None,
                nodes: int = 96) -> float:
    """|i[B, P_B] f - (B^2 - m^2) B^-2 f - J f| / |(B^2 - m^2) B^-2 f|, matrix-free.

    B and B^-1 come from Krylov functions of B^2 (exact Fourier symbols
    when A = 0), P is applied without the boundary check because B^-1 f
    carries exponential tails; the box must be large enough for them.
    """
    from magkg.operators import apply_B, apply_B_inv
    grid = p.grid
    B = lambda g: apply_B(p, g, spec)
    Binv = lambda g: apply_B_inv(p, g, spec)
    P = lambda g: _apply_P_batch(grid, g, c)
    Pf = P(f)
    PBf = P(Binv(f)) + Binv(Pf)
    Bf = B(f)
    lhs = 1j * (B(PBf) - Pf - Binv(P(Bf)))
    main = f - p.m**2 * Binv(Binv(f))
    rhs = main + apply_J(p, f, spec, nodes)
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(main))
