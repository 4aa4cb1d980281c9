"""Gamma and two-parameter Mittag-Leffler functions on the negative real axis.

The Mittag-Leffler function ``E_{a,b}(z) = sum_k z^k / Gamma(a k + b)`` is
evaluated by three routes, selected per argument by an error estimate:

* the power series in double precision (small ``|z|``),
* the algebraic asymptotic expansion ``-sum_k z^{-k} / Gamma(b - a k)``
  truncated at its smallest term (large ``|z|``),
* the power series in multiprecision arithmetic (the crossover gap).

For vectorised use the gap is covered by a piecewise Chebyshev table whose
nodes come from the multiprecision series; the scalar entry point
:func:`ml_eval` always goes to multiprecision in the gap.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np
from numpy.polynomial import chebyshev as cheb

__all__ = [
    "MLConvergenceError",
    "MLQuery",
    "MittagLeffler",
    "gamma_fn",
    "lgamma_pos",
    "mittag_leffler",
    "ml_eval",
    "ml_phi",
    "ml_phi_derivative",
    "rgamma",
]

EPS = np.finfo(float).eps

# Lanczos approximation, g = 7, n = 9 (Godfrey's coefficients).
_LANCZOS_G = 7.0
_LANCZOS_P = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class MLConvergenceError(ArithmeticError):
    """Raised when no evaluation route reaches the requested accuracy."""


# ---------------------------------------------------------------------------
# Gamma


def _lanczos_sum(x):
    # x is the shifted argument (z - 1)
    acc = np.full_like(x, _LANCZOS_P[0])
    for i in range(1, len(_LANCZOS_P)):
        acc = acc + _LANCZOS_P[i] / (x + i)
    return acc


def lgamma_pos(x):
    """``log Gamma(x)`` for ``x >= 0.5`` (array-valued)."""
    x = np.asarray(x, dtype=float)
    xs = x - 1.0
    t = xs + _LANCZOS_G + 0.5
    with np.errstate(invalid="ignore"):
        stirling = (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI + _stirling_series(np.maximum(x, 10.0))
    return np.where(x < 10.0,
                    _HALF_LOG_2PI + (xs + 0.5) * np.log(t) - t + np.log(_lanczos_sum(xs)),
                    stirling)


# Stirling correction coefficients B_2k / (2k (2k-1)), k = 1..8
_STIRLING = np.array([
    1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0,
    -691.0 / 360360.0, 1.0 / 156.0, -3617.0 / 122400.0,
])


def _stirling_series(x):
    inv = 1.0 / x
    inv2 = inv * inv
    acc = np.zeros_like(x)
    for c in _STIRLING[::-1]:
        acc = acc * inv2 + c
    return acc * inv


def _gamma_pos(x):
    out = np.empty_like(x)
    small = x < 10.0
    xs = x[small] - 1.0
    t = xs + _LANCZOS_G + 0.5
    out[small] = math.sqrt(2.0 * math.pi) * np.power(t, xs + 0.5) * np.exp(-t) * _lanczos_sum(xs)
    # Stirling for large x; the power is split so it cannot overflow early and
    # every factor stays within a few ulp
    xl = x[~small]
    half = np.power(xl, 0.5 * (xl - 0.5))
    out[~small] = (math.sqrt(2.0 * math.pi) * (half * np.exp(-xl)) * half
                   * np.exp(_stirling_series(xl)))
    return out


def _sinpi(x):
    # exact argument reduction to [-1, 1] keeps sin(pi x) accurate for large |x|
    r = x - 2.0 * np.round(0.5 * x)
    a = np.abs(r)
    out = np.where(a <= 0.25, np.sin(np.pi * a),
                   np.where(a <= 0.75, np.cos(np.pi * (a - 0.5)), np.sin(np.pi * (1.0 - a))))
    return np.sign(r) * out


def _is_pole(x):
    return (x <= 0) & (x == np.round(x))


def gamma_fn(x):
    """Gamma function via Lanczos with reflection for ``x < 1/2``.

    Raises ``ValueError`` at the poles ``0, -1, -2, ...``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(_is_pole(xa)):
        raise ValueError("Gamma has a pole at non-positive integers")
    out = np.empty_like(xa)
    big = xa >= 0.5
    out[big] = _gamma_pos(xa[big])
    small = ~big
    if np.any(small):
        xm = xa[small]
        out[small] = np.pi / (_sinpi(xm) * _gamma_pos(1.0 - xm))
    return out if out.ndim else float(out)


def rgamma(x):
    """Reciprocal Gamma ``1/Gamma(x)``; entire, zero at the poles of Gamma."""
    xa = np.asarray(x, dtype=float)
    out = np.empty_like(xa)
    big = xa >= 0.5
    xb = xa[big]
    with np.errstate(over="ignore"):
        out[big] = np.where(xb < 170.0, 1.0 / _gamma_pos(np.minimum(xb, 170.0)),
                            np.exp(-lgamma_pos(xb)))
        small = ~big
        if np.any(small):
            xm = xa[small]
            val = np.exp(lgamma_pos(1.0 - xm)) * _sinpi(xm) / np.pi
            out[small] = np.where(_is_pole(xm), 0.0, val)
    return out if out.ndim else float(out)


def _log_abs_rgamma(x):
    """(log|1/Gamma(x)|, sign) for a 1-d array; -inf at poles."""
    x = np.asarray(x, dtype=float)
    logv = np.empty_like(x)
    sign = np.ones_like(x)
    big = x >= 0.5
    logv[big] = -lgamma_pos(x[big])
    small = ~big
    xm = x[small]
    sp = _sinpi(xm)
    with np.errstate(divide="ignore"):
        logv[small] = lgamma_pos(1.0 - xm) + np.log(np.abs(sp)) - math.log(math.pi)
    sign[small] = np.sign(sp)
    pole = _is_pole(x)
    logv[pole] = -np.inf
    sign[pole] = 0.0
    return logv, sign


# ---------------------------------------------------------------------------
# Mittag-Leffler building blocks


def _check_params(alpha, beta):
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not math.isfinite(beta):
        raise ValueError("beta must be finite")


@functools.lru_cache(maxsize=256)
def _series_coefficients(alpha, beta, n=4096):
    kk = np.arange(0, n, dtype=float)
    logr, sgn = _log_abs_rgamma(alpha * kk + beta)
    return kk, logr, sgn


@functools.lru_cache(maxsize=256)
def _asymptotic_coefficients(alpha, beta, kmax):
    kk = np.arange(1, kmax + 1, dtype=float)
    x = beta - alpha * kk
    logr, sgn = _log_abs_rgamma(x)
    one_minus = 1.0 - x
    with np.errstate(divide="ignore"):
        logenv_coef = np.where(one_minus > 0.5,
                               lgamma_pos(np.maximum(one_minus, 0.5)) - math.log(math.pi),
                               np.maximum(logr, 0.0))
    signs = (-1.0) ** (kk + 1.0) * sgn
    return kk, logr, signs, logenv_coef


def _series_double(alpha, beta, z):
    """Power series in double precision. Returns (value, error estimate)."""
    z = np.asarray(z, dtype=float)
    zmax = float(np.max(np.abs(z))) if z.size else 0.0
    # pick the number of terms from the worst |z| in the batch
    kk, logr, sgn = _series_coefficients(alpha, beta)
    if zmax > 0:
        logmag = kk * math.log(zmax) + logr
        peak = int(np.argmax(np.where(np.isfinite(logmag), logmag, -np.inf)))
        cut = np.nonzero((kk > peak) & (logmag < logmag[peak] - 45.0))[0]
        if cut.size == 0:
            raise MLConvergenceError("series did not converge within 4096 terms")
        nterm = int(cut[0]) + 1
    else:
        nterm = 1
    kk, logr, sgn = kk[:nterm], logr[:nterm], sgn[:nterm]
    absz = np.abs(z)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(absz)
        logt = np.where(kk[None, :] == 0, 0.0, kk[None, :] * logz) + logr[None, :]
    mag = np.exp(logt)
    zsign = np.where(z < 0, -1.0, 1.0)[:, None] ** kk[None, :]
    terms = sgn[None, :] * zsign * mag
    val = terms.sum(axis=1)
    err = 4.0 * EPS * np.abs(terms).sum(axis=1) * math.sqrt(nterm)
    return val, err


def _asymptotic(alpha, beta, s, kmax=400):
    """Algebraic asymptotic expansion of E(-s), s > 0, optimally truncated.

    Returns (value, error estimate). The error estimate is the envelope of the
    first omitted term, built from |1/Gamma(x)| <= Gamma(1-x)/pi.
    """
    s = np.asarray(s, dtype=float)
    kk, logr, signs, logenv_coef = _asymptotic_coefficients(alpha, beta, kmax)
    logs = np.log(s)[:, None]
    logenv = logenv_coef[None, :] - kk[None, :] * logs
    nopt = np.argmin(logenv, axis=1)  # index of the smallest envelope term
    logt = logr[None, :] - kk[None, :] * logs
    # E(-s) ~ sum_k (-1)^(k+1) s^-k / Gamma(b - a k)
    with np.errstate(over="ignore"):
        terms = signs[None, :] * np.exp(logt)
    keep = np.arange(kmax)[None, :] < nopt[:, None]
    val = np.where(keep, terms, 0.0).sum(axis=1)
    err = np.exp(np.take_along_axis(logenv, nopt[:, None], axis=1)[:, 0])
    err = err + 8.0 * EPS * np.abs(np.where(keep, terms, 0.0)).sum(axis=1)
    if alpha == 1.0:
        # exponentially small term missing from the algebraic expansion
        err = err + np.exp(-s + (1.0 - beta) * np.log(s)) * (1.0 + abs(rgamma(beta)))
    return val, err, nopt


@functools.lru_cache(maxsize=256)
def _mp_coefficients(alpha, beta, dps):
    return _MPCoefficients(alpha, beta, dps)


class _MPCoefficients:
    """Lazily extended list of 1/Gamma(a k + b) in multiprecision."""

    def __init__(self, alpha, beta, dps):
        self.dps = dps
        with mp.workdps(dps):
            self.a = mp.mpf(alpha)
            self.b = mp.mpf(beta)
        self.coef = []

    def upto(self, n):
        if len(self.coef) < n:
            with mp.workdps(self.dps):
                for k in range(len(self.coef), n):
                    self.coef.append(mp.rgamma(self.a * k + self.b))
        return self.coef


def _mp_series(alpha, beta, z, nmax=20000):
    """Multiprecision power series for a real scalar z."""
    z = float(z)
    s = abs(z)
    if s == 0.0:
        return float(rgamma(beta))
    kk = np.arange(0, nmax, dtype=float)
    logr, _ = _log_abs_rgamma(alpha * kk + beta)
    logmag = kk * math.log(s) + logr
    finite = np.where(np.isfinite(logmag), logmag, -np.inf)
    peak = int(np.argmax(finite))
    peak_digits = max(finite[peak], 0.0) / math.log(10.0)
    dps = int(10 * math.ceil((30 + peak_digits + 2 * math.log10(1 + s)) / 10))
    cut = np.nonzero((kk > peak) & (logmag < finite[peak] - (dps + 5) * math.log(10.0)))[0]
    if cut.size == 0:
        raise MLConvergenceError(
            f"multiprecision series needs more than {nmax} terms at |z|={s}")
    nterm = int(cut[0]) + 1
    coef = _mp_coefficients(alpha, beta, dps).upto(nterm)
    with mp.workdps(dps):
        zz = mp.mpf(z)
        acc = mp.mpf(0)
        for c in reversed(coef[:nterm]):
            acc = acc * zz + c
        return float(acc)


def _horner(coef, x):
    acc = np.full(x.shape, coef[-1])
    for c in coef[-2::-1]:
        acc = acc * x + c
    return acc


# ---------------------------------------------------------------------------
# Vectorised evaluator


class MittagLeffler:
    """Vectorised ``E_{alpha,beta}(z)`` for real ``z <= 0`` (and small ``z > 0``).

    Construction scans the negative axis once to find where the double
    precision series stops being trustworthy (``x_series``) and where the
    asymptotic expansion starts to be (``x_asym``). A Chebyshev table built
    from multiprecision values covers the interval in between.
    """

    rtol = 5e-13

    def __init__(self, alpha: float, beta: float):
        _check_params(alpha, beta)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self._special = None
        if self.alpha == 1.0 and self.beta in (0.0, 1.0):
            self._special = self.beta
            self.x_series = self.x_asym = math.inf
            return
        self.x_series, self.x_asym = self._find_crossover()
        self._table = None

    def _find_crossover(self):
        grid = np.geomspace(1e-3, 1e5, 321)
        x_series = 0.0
        for i in range(0, grid.size, 8):
            chunk = grid[i:i + 8]
            try:
                sval, serr = _series_double(self.alpha, self.beta, -chunk)
            except MLConvergenceError:
                break
            ok = serr <= self.rtol * np.maximum(np.abs(sval), 1e-300)
            if not ok.all():
                n_ok = int(np.argmin(ok))
                x_series = chunk[n_ok - 1] if n_ok > 0 else x_series
                break
            x_series = chunk[-1]
        aval, aerr, _ = _asymptotic(self.alpha, self.beta, grid)
        ok_asym = aerr <= self.rtol * np.maximum(np.abs(aval), 1e-300)
        fail = np.nonzero(~ok_asym)[0]
        if fail.size == 0:
            x_asym = grid[0]
        elif fail[-1] == grid.size - 1:
            raise MLConvergenceError(
                f"asymptotic expansion never converges for alpha={self.alpha}, beta={self.beta}")
        else:
            x_asym = grid[fail[-1] + 1]
        x_asym = float(max(x_asym, x_series))
        # Fixed Horner coefficients for both expansions. Series terms shrink
        # with |z| and asymptotic terms with 1/s, so the term counts that are
        # adequate at the crossover points hold on the whole range.
        kk, logr, sgn = _series_coefficients(self.alpha, self.beta)
        if x_series > 0:
            logmag = kk * math.log(x_series) + logr
            peak = int(np.argmax(np.where(np.isfinite(logmag), logmag, -np.inf)))
            cut = np.nonzero((kk > peak) & (logmag < logmag[peak] - 45.0))[0]
            nser = int(cut[0]) + 1
        else:
            nser = 1
        self._series_coef = sgn[:nser] * np.exp(logr[:nser])
        _, _, nopt = _asymptotic(self.alpha, self.beta, np.array([x_asym]))
        nasy = int(nopt[0]) + 2
        _, logr_a, signs_a, _ = _asymptotic_coefficients(self.alpha, self.beta, nasy)
        self._asym_coef = signs_a * np.exp(logr_a)
        return float(x_series), x_asym

    # gap table -----------------------------------------------------------

    def _build_table(self):
        a, b = self.x_series, self.x_asym
        pieces = []
        stack = [(a, b)]
        nseg = max(1, int(math.ceil((b - a) / 2.0)))
        edges = np.linspace(a, b, nseg + 1)
        stack = [(edges[i], edges[i + 1]) for i in range(nseg)][::-1]
        deg = 28
        f = np.vectorize(lambda s: _mp_series(self.alpha, self.beta, -s))
        while stack:
            lo, hi = stack.pop()
            nodes = np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
            vals = f(0.5 * (hi - lo) * nodes + 0.5 * (hi + lo))
            coef = cheb.chebfit(nodes, vals, deg)
            scale = np.max(np.abs(vals))
            if np.max(np.abs(coef[-3:])) > 1e-14 * scale and hi - lo > 1e-3:
                mid = 0.5 * (lo + hi)
                stack.append((mid, hi))
                stack.append((lo, mid))
                continue
            pieces.append((lo, hi, coef))
        pieces.sort(key=lambda p: p[0])
        self._table = (np.array([p[0] for p in pieces] + [pieces[-1][1]]),
                       [p[2] for p in pieces])

    def _table_eval(self, s):
        if self._table is None:
            self._build_table()
        edges, coefs = self._table
        idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, len(coefs) - 1)
        out = np.empty_like(s)
        for i in np.unique(idx):
            m = idx == i
            lo, hi = edges[i], edges[i + 1]
            out[m] = cheb.chebval((2.0 * s[m] - (lo + hi)) / (hi - lo), coefs[i])
        return out

    # evaluation ----------------------------------------------------------

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        flat = z.ravel()
        if self._special is not None:
            out = np.exp(flat) if self._special == 1.0 else flat * np.exp(flat)
            return out.reshape(z.shape) if z.ndim else float(out[0])
        out = np.empty_like(flat)
        s = -flat
        pos = s < 0
        m_series = (s <= self.x_series) | pos
        m_asym = (~m_series) & (s >= self.x_asym)
        m_gap = ~(m_series | m_asym)
        if np.any(pos):
            zp = flat[pos]
            val, err = _series_double(self.alpha, self.beta, zp)
            if np.any(err > 1e-10 * np.abs(val)):
                raise MLConvergenceError("positive argument too large for the series")
            out[pos] = val
            m_series = m_series & ~pos
        if np.any(m_series):
            out[m_series] = _horner(self._series_coef, flat[m_series])
        if np.any(m_asym):
            w = 1.0 / s[m_asym]
            out[m_asym] = w * _horner(self._asym_coef, w)
        if np.any(m_gap):
            out[m_gap] = self._table_eval(s[m_gap])
        return out.reshape(z.shape) if z.ndim else float(out[0])

    def scalar(self, z: float) -> float:
        """Single value, multiprecision in the crossover gap (no table)."""
        z = float(z)
        s = -z
        if self._special is not None or s <= self.x_series or s >= self.x_asym:
            return float(self(z))
        return _mp_series(self.alpha, self.beta, z)


@functools.lru_cache(maxsize=128)
def mittag_leffler(alpha: float, beta: float) -> MittagLeffler:
    """Cached :class:`MittagLeffler` evaluator for ``(alpha, beta)``."""
    return MittagLeffler(alpha, beta)


# ---------------------------------------------------------------------------
# Public scalar API


@dataclass(frozen=True)
class MLQuery:
    alpha: float
    beta: float
    x: float

    def __post_init__(self):
        _check_params(self.alpha, self.beta)
        if not math.isfinite(self.x):
            raise ValueError("argument must be finite")


def ml_eval(q, beta: float | None = None, x: float | None = None) -> float:
    """``E_{alpha,beta}(x)`` for real ``x``.

    Accepts either an :class:`MLQuery` or the three numbers ``(alpha, beta, x)``.
    """
    if not isinstance(q, MLQuery):
        q = MLQuery(float(q), float(beta), float(x))
    return mittag_leffler(q.alpha, q.beta).scalar(q.x)


def _check_kernel_args(lam, t):
    lam = np.asarray(lam, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("lambda must be positive")
    if np.any(t <= 0):
        raise ValueError("t must be positive; the kernel is singular at t = 0")
    return lam, t


def ml_phi(alpha: float, lam, t):
    """Relaxation kernel ``t^(alpha-1) E_{alpha,alpha}(-lam t^alpha)``."""
    lam, t = _check_kernel_args(lam, t)
    ml = mittag_leffler(alpha, alpha)
    out = t ** (alpha - 1.0) * ml(-lam * t**alpha)
    return out if np.ndim(out) else float(out)


def ml_phi_derivative(alpha: float, lam, t):
    """Time derivative of :func:`ml_phi`: ``t^(alpha-2) E_{alpha,alpha-1}(-lam t^alpha)``."""
    lam, t = _check_kernel_args(lam, t)
    ml = mittag_leffler(alpha, alpha - 1.0)
    out = t ** (alpha - 2.0) * ml(-lam * t**alpha)
    return out if np.ndim(out) else float(out)
