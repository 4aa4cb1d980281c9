"""Decay of A_k and B_kk with the eigenvalue, for a sweep of (alpha, H)."""

import argparse

from fracsource.forward import Interval, SimConfig, TimeProfile, build_eigensystem
from fracsource.inverse import instability_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--K", type=int, default=16)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--epsilon", type=float, default=1e-3)
    args = ap.parse_args()
    eig = build_eigensystem(Interval(1.0), args.K)
    print(f"{'alpha':>6} {'H':>5} {'beta':>6} {'slope A*lam':>12} {'slope B*lam^b':>14} {'growth':>10}")
    for alpha, H in [(0.8, 0.6), (0.9, 0.75), (0.75, 0.5), (1.0, 0.5), (0.8, 0.3), (0.95, 0.2)]:
        cfg = SimConfig(alpha=alpha, hurst=H, K=args.K)
        p = instability_report(cfg, eig, TimeProfile(), args.gamma, epsilon=args.epsilon)
        print(f"{alpha:6.2f} {H:5.2f} {p.beta:6.3f} {p.slope_A:12.4f} {p.slope_B:14.4f} "
              f"{p.growth:10.3g}")


if __name__ == "__main__":
    main()
