#!/usr/bin/env python3
"""Benchmark the compiled resampling kernel against the pure-Python fallback.

Runs the same chains through both implementations, verifies the outputs are
bit-identical, and reports per-step timings and the speedup. The kernel is
the import-time default; the fallback is what you get without the extension
(or with MDBC_NO_KERNELS=1).
"""

import argparse
import time

import numpy as np

from mdbc import backend
from mdbc.models.gmm import GmmSpec
from mdbc.resample import chain_rng

CASES = [
    # (components, dim, steps) -- small chain, paper-profile chain, big model
    (2, 1, 3000),
    (8, 2, 3000),
    (24, 2, 1000),
    (24, 2, 3000),
]


def time_impl(fn, spec, theta0, uniforms, normals, cps, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(spec, theta0, uniforms, normals, 2000.0, 0.02, 1, 100.0, cps)
        best = min(best, time.perf_counter() - start)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3, help="timing repetitions per case")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not backend.HAVE_KERNELS:
        print("compiled kernel unavailable; only the fallback can be timed")
        return

    rng = np.random.default_rng(args.seed)
    header = f"{'case':>16} {'kernel':>12} {'fallback':>12} {'speedup':>8}  identical"
    print(header)
    print("-" * len(header))
    for n_comp, dim, n_steps in CASES:
        spec = GmmSpec(n_comp, dim)
        theta0 = 0.5 * rng.standard_normal(spec.n_params)
        uniforms = chain_rng(args.seed, 0, 0).random(n_steps)
        normals = chain_rng(args.seed, 0, 1).standard_normal((n_steps, dim))
        cps = np.array([n_steps], dtype=np.int64)

        t_fast, out_fast = time_impl(
            backend.gmm_chain, spec, theta0, uniforms, normals, cps, args.repeats
        )
        t_slow, out_slow = time_impl(
            backend.gmm_chain_fallback, spec, theta0, uniforms, normals, cps, args.repeats
        )
        same = (
            out_fast[0].tobytes() == out_slow[0].tobytes()
            and out_fast[1:] == out_slow[1:]
        )
        label = f"K={n_comp} p={dim} N={n_steps}"
        print(
            f"{label:>16} {t_fast * 1e3:>10.2f}ms {t_slow * 1e3:>10.2f}ms "
            f"{t_slow / t_fast:>7.1f}x  {same}"
        )
        if not same:
            raise SystemExit("backend outputs diverged; investigate before trusting timings")


if __name__ == "__main__":
    main()
