"""Symmetric Lanczos evaluation of functions of a Hermitian operator.

Given a Hermitian positive semidefinite map ``M`` and a vector ``f`` the
routines return ``fn(M) f`` from the Krylov space span{f, Mf, M^2 f, ...}
using ``|f| V_j fn(T_j) e_1`` with ``T_j`` the Lanczos tridiagonal matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla


class KrylovError(RuntimeError):
    pass


class IndefiniteOperatorError(KrylovError):
    def __init__(self, ritz: float):
        super().__init__(f"operator is indefinite: Ritz value {ritz:.6g} < 0")
        self.ritz = ritz


class KrylovNonConvergence(KrylovError):
    def __init__(self, increment: float, dim: int):
        super().__init__(f"Lanczos did not converge in {dim} steps "
                         f"(last relative increment {increment:.3e})")
        self.increment = increment
        self.dim = dim


@dataclass(frozen=True)
class KrylovSpec:
    max_dim: int = 400
    tol: float = 1e-10
    reorthogonalize: bool = True
    exact_diagonal: bool = True  # use the Fourier symbol when the operator is -Delta + m^2

    def __post_init__(self):
        if self.max_dim < 2:
            raise ValueError(f"krylov.max_dim must be >= 2, got {self.max_dim}")
        if not self.tol > 0:
            raise ValueError(f"krylov.tol must be positive, got {self.tol}")


ScalarFn = Callable[[np.ndarray], np.ndarray]


def _sinc_t(t):
    def fn(lam):
        s = np.sqrt(lam)
        out = np.empty_like(s)
        small = s * abs(t) < 1e-8
        out[small] = t
        out[~small] = np.sin(t * s[~small]) / s[~small]
        return out
    return fn


def scalar_function(name: str, t: float = 0.0) -> ScalarFn:
    """Scalar functions of lambda (the eigenvalue of M) by name."""
    table = {
        "sqrt": lambda lam: np.sqrt(lam),
        "inv_sqrt": lambda lam: 1.0 / np.sqrt(lam),
        "inv": lambda lam: 1.0 / lam,
        "cos": lambda lam: np.cos(t * np.sqrt(lam)),
        "sinc": _sinc_t(t),
        "sqrt_sin": lambda lam: np.sqrt(lam) * np.sin(t * np.sqrt(lam)),
        "identity": lambda lam: np.ones_like(lam),
    }
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown Krylov function {name!r}") from None


def _resolve(fn, t):
    return scalar_function(fn, t) if isinstance(fn, str) else fn


@dataclass
class KrylovResult:
    values: list[np.ndarray]
    dim: int
    increment: float
    ritz_min: float
    ritz_max: float


def lanczos_functions(matvec: Callable[[np.ndarray], np.ndarray], f: np.ndarray,
                      fns: Sequence[ScalarFn], spec: KrylovSpec,
                      check_every: int = 4, min_dim: int = 4) -> KrylovResult:
    """Evaluate several functions of one Hermitian operator on ``f``.

    All functions share one Krylov basis.  Convergence is declared when
    the coefficient vectors of every function change by at most
    ``spec.tol * |f|`` between two checks.
    """
    shape = f.shape
    v = np.asarray(f, dtype=complex).ravel()
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return KrylovResult([np.zeros(shape, dtype=complex) for _ in fns], 0, 0.0, 0.0, 0.0)
    cap = min(spec.max_dim, v.size)
    Q = np.empty((min(cap + 1, 32), v.size), dtype=complex)
    Q[0] = v / beta0
    alpha = np.zeros(cap)
    beta = np.zeros(cap)
    prev = None
    inc = np.inf
    j = 0
    ritz = (0.0, 0.0)

    def coeffs(d):
        if d == 1:
            theta = alpha[:1].copy()
            S = np.ones((1, 1))
        else:
            theta, S = sla.eigh_tridiagonal(alpha[:d], beta[:d - 1])
        if theta[0] < -spec.tol * max(1.0, abs(theta[-1])):
            raise IndefiniteOperatorError(float(theta[0]))
        return theta, [S @ (np.asarray(fn(theta), dtype=complex) * S[0]) for fn in fns]

    while True:
        w = matvec(Q[j].reshape(shape)).ravel()
        alpha[j] = np.vdot(Q[j], w).real
        w = w - alpha[j] * Q[j]
        if j > 0:
            w = w - beta[j - 1] * Q[j - 1]
        if spec.reorthogonalize:
            for _ in range(2):
                w -= Q[: j + 1].T @ (Q[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        d = j + 1
        breakdown = b <= 1e-14 * max(1.0, abs(alpha[j])) or d == v.size
        if d >= min_dim and (d % check_every == 0 or breakdown or d == cap):
            theta, cs = coeffs(d)
            ritz = (float(theta[0]), float(theta[-1]))
            if prev is not None:
                inc = max(np.linalg.norm(c - np.pad(pc, (0, d - pc.size)))
                          for c, pc in zip(cs, prev))
            if breakdown or (prev is not None and inc <= spec.tol):
                break
            prev = cs
            if d == cap:
                raise KrylovNonConvergence(float(inc), d)
        elif breakdown:
            theta, cs = coeffs(d)
            ritz = (float(theta[0]), float(theta[-1]))
            inc = 0.0
            break
        beta[j] = b
        if j + 1 == Q.shape[0]:
            grown = np.empty((min(cap + 1, 2 * Q.shape[0]), v.size), dtype=complex)
            grown[: j + 1] = Q[: j + 1]
            Q = grown
        Q[j + 1] = w / b
        j += 1
    values = [(beta0 * (c @ Q[:d])).reshape(shape) for c in cs]
    return KrylovResult(values, d, float(inc if np.isfinite(inc) else 0.0), *ritz)
