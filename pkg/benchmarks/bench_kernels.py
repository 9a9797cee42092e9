"""Time the numba and numpy kernel backends on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 20] [--seed 0]

Also times ``mtl.validity_set`` end to end under each backend by toggling
``FCHPROBE_NUMBA``. Prints one line per kernel with the median time of each
backend and the speed-up.
"""
from __future__ import annotations

import argparse
import os
import random
import statistics
import time

import numpy as np

from fchprobe import _kernels as K
from fchprobe import mtl, selftest


def median_time(fn, repeat: int) -> float:
    fn()  # warm-up, includes numba compilation
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def bench_kernels(n: int, repeat: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    a = rng.random(n) < 0.7
    b = rng.random(n) < 0.2
    lo, hi = 3, 40
    cases = [
        ("F[3,40]", lambda: K.finally_np(a, lo, hi), lambda: K.finally_nb(a, lo, hi)),
        ("G[3,40]", lambda: K.globally_np(a, lo, hi), lambda: K.globally_nb(a, lo, hi)),
        ("N", lambda: K.next_np(a), lambda: K.next_nb(a)),
        ("U[3,40]", lambda: K.until_np(a, b, lo, hi), lambda: K.until_nb(a, b, lo, hi)),
    ]
    return [(name, median_time(np_fn, repeat), median_time(nb_fn, repeat)) for name, np_fn, nb_fn in cases]


def bench_validity(trials: int, seed: int) -> tuple:
    rng = random.Random(seed)
    work = []
    for _ in range(trials):
        h = selftest.random_history(rng, n_events=rng.randint(1, 8))
        work.append((h, mtl.sample_formula(rng, sorted(h.events), 3, mtl.DEFAULT_WEIGHTS, 30)))
    out = {}
    for flag in ("0", "1"):
        os.environ["FCHPROBE_NUMBA"] = flag
        mtl.validity_set(*work[0])  # warm-up
        start = time.perf_counter()
        for h, phi in work:
            mtl.validity_set(h, phi)
        out[flag] = time.perf_counter() - start
    return out["0"], out["1"]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=20000, help="array length")
    parser.add_argument("--repeat", type=int, default=20)
    parser.add_argument("--trials", type=int, default=500, help="formulas for the validity_set timing")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; pip install 'artifact[fast]'")
    print(f"{'kernel':<10}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name, t_np, t_nb in bench_kernels(args.n, args.repeat, args.seed):
        print(f"{name:<10}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")
    t_np, t_nb = bench_validity(args.trials, args.seed)
    print(f"{'validity':<10}{t_np * 1e3:>12.1f}{t_nb * 1e3:>12.1f}{t_np / t_nb:>9.1f}x  ({args.trials} formulas)")


if __name__ == "__main__":
    main()
