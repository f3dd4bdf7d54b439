#!/usr/bin/env python3
"""Randomized verification of the refined pointwise Hessian inequality."""

import argparse
import time

from plap_lab import matrix_inequality_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--p-range", type=float, nargs=2, default=[1.1, 6.0])
    args = ap.parse_args()

    start = time.perf_counter()
    result = matrix_inequality_sweep(samples=args.samples, seed=args.seed,
                                     n_values=tuple(args.n),
                                     p_range=tuple(args.p_range))
    elapsed = time.perf_counter() - start
    w = result.witness
    print(f"samples: {result.samples}  ({elapsed:.1f} s)")
    print(f"min gap (refined):   {result.min_gap:+.3e}")
    print(f"min gap (classical): {result.min_gap_loose:+.3e}")
    print(f"witness: n={w.n}, p={w.p:.4f}, gap={w.gap:+.3e}")
    print(f"  H = {w.hess.tolist()}")
    print(f"  g = {w.gvec.tolist()}")
    print("PASS" if result.min_gap >= -1e-12 else "FAIL")


if __name__ == "__main__":
    main()
