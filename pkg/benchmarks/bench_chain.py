"""Benchmark the compiled chain kernels against the NumPy fallback.

The forward-backward recursion is the hot loop of everything downstream
(agreement projections run it per dual sweep, CRF training per example per
optimizer iteration), so this is the comparison that decides whether the
extension pays its way.

Usage: python benchmarks/bench_chain.py [--repeats N]
"""

import argparse
import time

import numpy as np

from sar import _chain_numpy

try:
    from sar import _chain_fast
except ImportError:
    _chain_fast = None


def bench(fn, node, edge, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(node, edge)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    shapes = [(4, 3), (20, 5), (100, 10), (500, 20), (2000, 40)]
    kernels = [("forward_backward", "forward_backward"),
               ("viterbi", "viterbi_path")]

    print(f"{'kernel':<18} {'T':>5} {'K':>3} {'numpy':>12} {'compiled':>12} "
          f"{'speedup':>8}")
    for label, attr in kernels:
        for T, K in shapes:
            node = rng.normal(size=(T, K))
            edge = rng.normal(size=(T - 1, K, K))
            t_numpy = bench(getattr(_chain_numpy, attr), node, edge,
                            args.repeats)
            if _chain_fast is None:
                print(f"{label:<18} {T:>5} {K:>3} {t_numpy * 1e3:>10.3f}ms "
                      f"{'(no ext)':>12} {'':>8}")
                continue
            t_fast = bench(getattr(_chain_fast, attr), node, edge,
                           args.repeats)
            print(f"{label:<18} {T:>5} {K:>3} {t_numpy * 1e3:>10.3f}ms "
                  f"{t_fast * 1e3:>10.3f}ms {t_numpy / t_fast:>7.1f}x")

    if _chain_fast is not None:
        # numerical agreement spot check alongside the timing claim
        node = rng.normal(size=(50, 8))
        edge = rng.normal(size=(49, 8, 8))
        n1, e1, z1 = _chain_numpy.forward_backward(node, edge)
        n2, e2, z2 = _chain_fast.forward_backward(node, edge)
        worst = max(np.abs(n1 - n2).max(), np.abs(e1 - e2).max(), abs(z1 - z2))
        print(f"\nbackend agreement on (T=50, K=8): max deviation {worst:.2e}")


if __name__ == "__main__":
    main()
