"""Small-time scaling of E|int_0^t phi_1 dB^H|^2 against the exponent 2 alpha + 2H - 2."""

import argparse

import numpy as np

from fracsource.fintegral import KernelParams, WeightedFunction, second_moment_pair

PAIRS = [(0.8, 0.4), (0.9, 0.7), (1.0, 0.5), (0.6, 0.75), (0.95, 0.2)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lam", type=float, default=1.0)
    ap.add_argument("--points", type=int, default=8)
    ap.add_argument("--csv", help="write t, alpha, H, moment rows here")
    args = ap.parse_args()
    t = np.geomspace(0.0125, 0.2, args.points)
    rows = []
    print(f"{'alpha':>6} {'H':>5} {'slope':>8} {'expected':>9}")
    for alpha, H in PAIRS:
        p = KernelParams(H, 1.0)
        m = np.array([second_moment_pair(p, phi, phi) for phi in
                      (WeightedFunction.ml_kernel(alpha, args.lam, ti) for ti in t)])
        slope = np.polyfit(np.log(t), np.log(m), 1)[0]
        print(f"{alpha:6.2f} {H:5.2f} {slope:8.4f} {2 * alpha + 2 * H - 2:9.2f}")
        rows += [(ti, alpha, H, mi) for ti, mi in zip(t, m)]
    if args.csv:
        np.savetxt(args.csv, rows, delimiter=",", fmt="%.17g", header="t,alpha,H,moment",
                   comments="")


if __name__ == "__main__":
    main()
