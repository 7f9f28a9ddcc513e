"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--n 200000] [--repeat 5]

Both paths are imported directly, so the NPCAL_DISABLE_NUMBA flag has no
effect here.  The first numba call (compilation) is excluded from timings.
"""

import argparse
import timeit

import numpy as np

from npcal import kernels


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=200_000, help="vector length for special functions")
    parser.add_argument("--queries", type=int, default=2000)
    parser.add_argument("--anchors", type=int, default=2000)
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    x = rng.uniform(1e-3, 50.0, args.n)
    queries = rng.standard_normal((args.queries, args.dim))
    anchors = rng.standard_normal((args.anchors, args.dim))

    cases = [
        ("lgamma", lambda: kernels.lgamma_nb(x), lambda: kernels.lgamma_np(x)),
        ("digamma", lambda: kernels.digamma_nb(x), lambda: kernels.digamma_np(x)),
        ("trigamma", lambda: kernels.trigamma_nb(x), lambda: kernels.trigamma_np(x)),
        (
            "knn",
            lambda: kernels.knn_indices_nb(queries, anchors, args.k),
            lambda: kernels.knn_indices_np(queries, anchors, args.k),
        ),
    ]
    print(f"{'kernel':<10}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}  max |diff|")
    for name, nb, npy in cases:
        a, b = nb(), npy()  # warm up and compare outputs
        diff = float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))
        t_nb = best_of(nb, args.repeat)
        t_np = best_of(npy, args.repeat)
        print(f"{name:<10}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>10.2f}  {diff:.1e}")


if __name__ == "__main__":
    main()
