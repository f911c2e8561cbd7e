"""Compare the compiled (Cython) kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--n 32 64] [--repeat 5]

For each grid size the pointwise kernels and one full application of H
are timed with both backends, and the outputs are checked to agree.
"""
from __future__ import annotations

import argparse
import contextlib
import timeit

import numpy as np

from magkg import kernels
from magkg.grid import gradient, make_grid, random_field
from magkg.operators import apply_H
from magkg.potentials import random_potential


@contextlib.contextmanager
def backend(name: str):
    saved = kernels._c
    if name == "numpy":
        kernels._c = None
    try:
        yield
    finally:
        kernels._c = saved


def cases(n: int):
    grid = make_grid(n, 8.0)
    rng = np.random.default_rng(0)
    p = random_potential(grid, rng, amplitude=0.1, v_amplitude=0.1)
    f = random_field(grid, rng)
    u = np.stack([random_field(grid, rng) for _ in range(3)])
    grad = gradient(grid, f)
    w = grid.weight(-1.0)
    x = grid.x_table
    return {
        "weighted_sqsum": lambda: kernels.weighted_sqsum(f, w),
        "momentum": lambda: kernels.momentum(u[0], p.A[0], f),
        "contract": lambda: kernels.contract(f, u, p.A, p.V, f),
        "dilation": lambda: kernels.dilation(grad, x, x, x, f),
        "apply_H": lambda: apply_H(p, f),
    }


def run(sizes, repeat: int) -> None:
    if kernels._c is None:
        print("compiled backend unavailable; only the numpy fallback can be timed")
        return
    print(f"{'n':>4} {'kernel':<15} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8} {'max rel diff':>13}")
    for n in sizes:
        for name, fn in cases(n).items():
            times, outs = {}, {}
            for b in ("cython", "numpy"):
                with backend(b):
                    outs[b] = np.asarray(fn())
                    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
                    times[b] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
            diff = np.max(np.abs(outs["cython"] - outs["numpy"])) / max(np.max(np.abs(outs["numpy"])), 1e-300)
            print(f"{n:>4} {name:<15} {1e3 * times['cython']:>10.3f} {1e3 * times['numpy']:>10.3f} "
                  f"{times['numpy'] / times['cython']:>8.2f} {diff:>13.1e}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--n", type=int, nargs="+", default=[32, 64])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    run(args.n, args.repeat)


if __name__ == "__main__":
    main()
