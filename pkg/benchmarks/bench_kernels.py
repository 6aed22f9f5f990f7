"""Numba vs numpy timings for the hot kernels.

Both variants are importable regardless of CMFLOW_DISABLE_NUMBA, so one
process times them side by side.  Compilation is excluded (one warm-up
call per kernel).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 4 8]
"""
import argparse
import time

import numpy as np

from cmflow import kernels as K
from cmflow import reduced as rd
from cmflow._accel import NUMBA_AVAILABLE


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def reduced_state(n, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-2, 2, n)) + 0.3 * np.arange(n)
    p = rng.standard_normal(n)
    H = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = 0.5 * (H + H.conj().T)
    np.fill_diagonal(H, 0.0)
    return np.concatenate([x, p, (1j * H).real.ravel(), (1j * H).imag.ravel()])


def bench_rhs(n, repeat, calls=2000):
    y = reduced_state(n)
    params = np.array([n, K.CM_HARMONIC], dtype=float)
    K.cml_rhs_nb(0.0, y, params)

    def run(f):
        return lambda: [f(0.0, y, params) for _ in range(calls)]
    return best_of(run(K.cml_rhs_nb), repeat) / calls, best_of(run(K.cml_rhs_np), repeat) / calls


def bench_dopri(n, repeat, t_end=2.0):
    y = reduced_state(n)
    params = np.array([n, K.CM_HARMONIC], dtype=float)
    t_out = np.linspace(0.0, t_end, 21)
    args = (y, t_out, 1e-10, n, params, 10_000_000, rd.GAP_FLOOR)
    K.dopri_cml_nb(*args)
    a = best_of(lambda: K.dopri_cml_nb(*args), repeat)
    b = best_of(lambda: K.dopri_cml_np(*args), max(1, repeat // 2))
    return a, b


def bench_ranks(n, repeat, count=1 << 14):
    codes = np.arange(count, dtype=np.int64) % (1 << ((n - 1) * (n - 2) // 2))
    K.sign_matrices_nb(codes[:2], n)
    a = best_of(lambda: K.sign_matrices_nb(codes, n), repeat)
    b = best_of(lambda: K.sign_matrices_np(codes, n), repeat)
    G = 0.5 * K.sign_matrices_np(codes, n) + 0.5 * np.eye(n)
    K.cholesky_rank_batch_nb(G[:2], 1e-9)
    c = best_of(lambda: K.cholesky_rank_batch_nb(G, 1e-9), repeat)
    d = best_of(lambda: K.cholesky_rank_batch_np(G, 1e-9), repeat)
    return (a, b), (c, d)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, nargs="+", default=[4, 8])
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba not importable: nothing to compare")
        return 1
    print(f"{'kernel':<28s}{'N':>4s}{'numba':>14s}{'numpy':>14s}{'speedup':>10s}")

    def row(name, n, a, b):
        print(f"{name:<28s}{n:>4d}{a * 1e6:>12.2f}us{b * 1e6:>12.2f}us{b / a:>9.1f}x")
    for n in args.n:
        row("cml_rhs (per call)", n, *bench_rhs(n, args.repeat))
    for n in args.n:
        row("dopri_cml (t=2, tol 1e-10)", n, *bench_dopri(n, args.repeat))
    for n in args.n:
        (a, b), (c, d) = bench_ranks(n, args.repeat)
        row("sign_matrices (16k)", n, a, b)
        row("cholesky_rank_batch (16k)", n, c, d)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
