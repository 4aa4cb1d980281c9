"""Quick self-checks run by ``fracsource selftest``.

Each check is a few seconds at most and returns ``(name, ok, detail)``. The
full property suites live in the test tree; these are the subset that needs
no test dependencies.
"""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np

from .fbm import TimeGrid, covariance_matrix, fbm_covariance, sample_fbm_circulant
from .fintegral import KernelParams, WeightedFunction, kernel_covariance, second_moment_pair
from .mlf import ml_eval, mittag_leffler


def _mp_ml(a, b, x, dps=60):
    with mp.workdps(dps):
        a, b, x = mp.mpf(a), mp.mpf(b), mp.mpf(x)
        s, k, term = mp.mpf(0), 0, mp.mpf(1)
        while True:
            term = x**k * mp.rgamma(a * k + b)
            s += term
            if k > 10 and abs(term) < mp.mpf(10) ** (-dps + 5) * max(1, abs(s)):
                return float(s)
            k += 1


def check_ml():
    worst = 0.0
    for a, b, x in [(0.5, 0.5, -1.0), (0.8, 0.3, -7.5), (0.3, 1.0, -20.0), (1.0, 0.8, -3.0)]:
        ref = _mp_ml(a, b, x)
        worst = max(worst, abs(ml_eval(a, b, x) - ref) / abs(ref))
    xs = -np.linspace(0.0, 30.0, 301)
    exp_err = float(np.max(np.abs(mittag_leffler(1.0, 1.0)(xs) - np.exp(xs)) / np.exp(xs)))
    ok = worst < 1e-10 and exp_err < 1e-12
    return "mittag-leffler", ok, f"max rel err {worst:.2e}, exp err {exp_err:.2e}"


def check_fbm(paths=4000):
    grid = TimeGrid(1.0, 16)
    worst = 0.0
    for H in (0.3, 0.7):
        x = sample_fbm_circulant(H, grid, paths, seed=7).data[:, 1:]
        emp = x.T @ x / paths
        worst = max(worst, float(np.max(np.abs(emp - covariance_matrix(H, grid)))))
    # sampling error of a second moment with unit variance is about sqrt(2/paths)
    ok = worst < 6.0 * math.sqrt(2.0 / paths)
    return "fbm covariance", ok, f"max abs deviation {worst:.3e} over {paths} paths"


def check_isometry():
    worst = 0.0
    for H in (0.3, 0.7):
        p = KernelParams(H, 1.0)
        one = WeightedFunction.constant(1.0, 1.0)
        worst = max(worst, abs(second_moment_pair(p, one, one) - 1.0))
        for t, s in [(1.0, 0.4), (0.7, 0.7)]:
            worst = max(worst, abs(kernel_covariance(p, t, s) - fbm_covariance(H, t, s)))
    p = KernelParams(0.5, 1.0)
    lam = 3.0
    psi = WeightedFunction.ml_kernel(1.0, lam, 1.0)
    exact = (1.0 - math.exp(-2.0 * lam)) / (2.0 * lam)
    worst = max(worst, abs(second_moment_pair(p, psi, psi) - exact))
    return "isometry", worst < 1e-8, f"max abs err {worst:.2e}"


CHECKS = (check_ml, check_fbm, check_isometry)


def run_all():
    return [c() for c in CHECKS]
