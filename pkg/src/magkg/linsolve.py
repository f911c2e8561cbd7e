"""GMRES wrapper with right preconditioning and a true-residual check."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla


class SolveError(RuntimeError):
    def __init__(self, msg: str, residual: float, iterations: int):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


@dataclass
class SolveInfo:
    iterations: int
    residual: float


def gmres_solve(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray, tol: float,
                max_iter: int = 500, precond: Callable | None = None,
                restart: int = 60, refinements: int = 3) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``A x = b`` to relative true residual ``tol``.

    ``matvec`` and ``precond`` act on arrays shaped like ``b``.  With a
    preconditioner P the right-preconditioned system A P y = b is solved,
    so the GMRES residual is the residual of the original system.  A few
    refinement sweeps on the true residual absorb GMRES round-off.
    """
    shape = b.shape
    bf = np.asarray(b, dtype=complex).ravel()
    bnorm = np.linalg.norm(bf)
    if bnorm == 0:
        return np.zeros(shape, dtype=complex), SolveInfo(0, 0.0)
    P = precond if precond is not None else (lambda v: v)

    def op(y):
        return matvec(P(y.reshape(shape))).ravel()

    A = spla.LinearOperator((bf.size, bf.size), matvec=op, dtype=complex)
    count = [0]

    def cb(_):
        count[0] += 1

    x = np.zeros(shape, dtype=complex)
    r = bf.copy()
    res = 1.0
    for _ in range(refinements + 1):
        rn = np.linalg.norm(r)
        y, _info = spla.gmres(A, r, rtol=0.5 * tol * bnorm / rn, atol=0.0,
                              restart=min(restart, bf.size), maxiter=max(1, max_iter // restart + 1),
                              callback=cb, callback_type="pr_norm")
        x = x + P(y.reshape(shape))
        r = bf - matvec(x).ravel()
        res = np.linalg.norm(r) / bnorm
        if res <= tol or count[0] >= max_iter:
            break
    if res > tol:
        raise SolveError(f"GMRES stopped at relative residual {res:.3e} after "
                         f"{count[0]} iterations (target {tol:.1e})", res, count[0])
    return x, SolveInfo(count[0], float(res))
