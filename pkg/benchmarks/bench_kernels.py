"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]
"""
import argparse
import timeit

import numpy as np

from projbank import _kernels


def cases(scale, rng):
    n_q, n_g, n_words = int(200 * scale), int(2000 * scale), 2
    q = rng.integers(0, 2**63, (n_q, n_words), dtype=np.uint64)
    g = rng.integers(0, 2**63, (n_g, n_words), dtype=np.uint64)
    yield "hamming 200x2000x128b", lambda impl: _kernels.hamming_distances(q, g, impl=impl)

    n, m, p = 1600, 8, int(3600 * scale)
    x = rng.standard_normal((n, m))
    w = rng.standard_normal(m)
    ii, jj = rng.integers(0, n, p), rng.integers(0, n, p)
    lab = rng.choice(np.array([-1, 1], np.int8), p)
    yield "linear_hinge 3600 pairs", lambda impl: _kernels.linear_hinge(x, w, ii, jj, lab, impl=impl)

    gv = rng.standard_normal(n)
    yield "kernel_hinge 3600 pairs", lambda impl: _kernels.kernel_hinge(gv, ii, jj, lab, impl=impl)

    xs = rng.standard_normal((int(1000 * scale), 512))
    dims = rng.permutation(512)
    offsets = np.arange(0, 513, 8)
    weights = rng.standard_normal(512)
    yield "segment_dot 1000x512 -> 64", lambda impl: _kernels.segment_dot(xs, dims, offsets, weights, impl=impl)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    impls = _kernels.backends()
    if "cython" not in impls:
        print("compiled backend not built; only numpy timings shown")
    print(f"{'kernel':<28}" + "".join(f"{name:>12}" for name in impls) + f"{'speedup':>10}")
    for name, fn in cases(args.scale, np.random.default_rng(0)):
        times = {}
        for impl_name, impl in impls.items():
            fn(impl)
            times[impl_name] = min(timeit.repeat(lambda: fn(impl), number=3, repeat=args.repeat)) / 3
        row = f"{name:<28}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times.values())
        if "cython" in times:
            row += f"{times['numpy'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
