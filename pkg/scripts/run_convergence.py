#!/usr/bin/env python3
"""Mesh refinement study against the exact radial torsion profile."""

import argparse

from plap_lab import Disk, convergence_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--h", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    ap.add_argument("--radius", type=float, default=1.0)
    args = ap.parse_args()

    rows = convergence_study(Disk(args.radius), None, args.p, args.h)
    print(f"{'h':>8} {'Linf':>12} {'L2':>12} {'order(Linf)':>12} {'order(L2)':>10}")
    for r in rows:
        om = f"{r.order_max:.2f}" if r.order_max is not None else "-"
        ol = f"{r.order_l2:.2f}" if r.order_l2 is not None else "-"
        print(f"{r.h:8.3f} {r.err_max:12.3e} {r.err_l2:12.3e} {om:>12} {ol:>10}")


if __name__ == "__main__":
    main()
