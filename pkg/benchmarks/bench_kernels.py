"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--pairs 64] [--repeat 5]

Prints one line per (kernel, backend) with the best wall time and the
speed-up of the compiled backend.
"""

import argparse
import time

import numpy as np

from saban.kernels import available_backends


def _timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=64)
    ap.add_argument("--nd", type=int, default=30)
    ap.add_argument("--nt", type=int, default=200)
    ap.add_argument("--glimpses", type=int, default=8)
    ap.add_argument("--rank", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    B, G, r = args.pairs, args.glimpses, args.rank
    d_off = np.arange(B + 1, dtype=np.int64) * args.nd
    t_off = np.arange(B + 1, dtype=np.int64) * args.nt
    D = np.abs(rng.standard_normal((d_off[-1], G * r)))
    T = np.abs(rng.standard_normal((t_off[-1], G * r)))
    ids = rng.integers(0, 441, size=5000)

    backends = available_backends()
    results = {}
    for name, mod in backends.items():
        f, A, a_off = mod.ban_forward(D, T, d_off, t_off, G, False)
        df = rng.standard_normal(f.shape)
        results[(name, "ban_forward")] = _timeit(lambda: mod.ban_forward(D, T, d_off, t_off, G, False), args.repeat)
        results[(name, "ban_backward")] = _timeit(
            lambda: mod.ban_backward(D, T, d_off, t_off, G, False, A, a_off, df), args.repeat)
        results[(name, "synth_rows")] = _timeit(lambda: mod.synth_rows(ids, 256, 7), args.repeat)

    for kernel in ("ban_forward", "ban_backward", "synth_rows"):
        for name in backends:
            line = f"{kernel:13s} {name:7s} {results[(name, kernel)] * 1e3:9.2f} ms"
            if name == "cython":
                line += f"   x{results[('python', kernel)] / results[(name, kernel)]:.1f}"
            print(line)


if __name__ == "__main__":
    main()
