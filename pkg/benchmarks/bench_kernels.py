"""Time the numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--n 100000] [--repeat 7]

Both paths are imported explicitly, so ``CHEMOBAND_NUMBA`` does not matter
here.  The first numba call (compilation) is excluded from the timings.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from chemoband import _kernels as k


def _cases(n, rng):
    h = 1.0 / n
    u = 1.0 + rng.random(n)
    lnv = np.log(1.0 + rng.random(n))
    lower = np.full(n, -1.0)
    upper = np.full(n, -1.0)
    diag = np.full(n, 4.0)
    rhs = rng.random(n)
    x = rng.standard_normal(n)
    noise = rng.standard_normal(n)
    table = np.sin(np.linspace(-5.0, 5.0, 1001))
    return {
        "thomas": ((lower, diag, upper, rhs), k.thomas_numpy, k.thomas_numba),
        "chemotaxis_div": ((u, lnv, h, True, True), k.chemotaxis_div_numpy, k.chemotaxis_div_numba),
        "laplacian": ((u, h, True, False), k.laplacian_numpy, k.laplacian_numba),
        "walk_step": ((x, noise, -5.0, 0.01, table, 0.5), k.walk_step_numpy, k.walk_step_numba),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=100_000)
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"backend selected at import: {k.backend()}; n = {args.n}")
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, (call_args, f_np, f_nb) in _cases(args.n, rng).items():
        ref = f_np(*call_args)
        got = f_nb(*call_args)  # compile outside the timed region
        diff = float(np.max(np.abs(ref - got)))
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=10, repeat=args.repeat)) / 10
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=10, repeat=args.repeat)) / 10
        print(f"{name:<16}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
