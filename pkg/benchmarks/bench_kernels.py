"""Time the compiled and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from dart3 import kernels


def cases(rng):
    A = rng.normal(size=(256, 64))
    G = rng.normal(size=(1500, 64))
    dist = kernels.get_backend("python").pairwise_distances(A, G)
    q_pids = rng.integers(0, 100, size=256)
    g_pids = rng.integers(0, 100, size=1500)
    q_cams = rng.integers(0, 6, size=256)
    g_cams = rng.integers(0, 6, size=1500)
    X = rng.normal(size=(5000, 64))
    C = rng.normal(size=(6, 64))
    return {
        "pairwise_distances 256x1500x64": ("pairwise_distances", (A, G)),
        "ap_cmc 256x1500": ("ap_cmc", (dist, q_pids, q_cams, g_pids, g_cams)),
        "kmeans_assign 5000x6x64": ("kmeans_assign", (X, C)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    header = f"{'kernel':34s}" + "".join(f"{b + ' ms':>14s}" for b in backends)
    if "cython" in backends:
        header += f"{'speedup':>10s}"
    print(header)
    for label, (fn, inputs) in cases(rng).items():
        times = {}
        for b in backends:
            f = getattr(kernels.get_backend(b), fn)
            f(*inputs)  # warm-up
            times[b] = min(timeit.repeat(lambda: f(*inputs), number=1, repeat=args.repeat)) * 1e3
        line = f"{label:34s}" + "".join(f"{times[b]:14.2f}" for b in backends)
        if "cython" in times:
            line += f"{times['python'] / times['cython']:9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
