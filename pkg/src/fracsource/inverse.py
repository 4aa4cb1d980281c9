"""Recovery of f and |g| from final-time moments, and instability diagnostics.

Expectation and covariance of the modal data are linear in f and in
g_k g_l respectively:

    E u_k(T) = f_k A_k,     Cov(u_k, u_l) = g_k g_l B_kl,

so the inversion is a division by the factors A_k and B_kl. Both factors
decay in k, which is what makes the problem ill-posed.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fintegral import second_moment_matrix
from .forward import (
    EigenSystem,
    EnsembleMoments,
    SimConfig,
    TimeProfile,
    assemble_field,
    ml_kernels,
    weighted_ml_integral,
)
from .mlf import mittag_leffler

__all__ = [
    "FactorPositivityError",
    "InversionFactors",
    "ReconstructionReport",
    "InstabilityProfile",
    "compute_factors",
    "reconstruct_f",
    "reconstruct_g_abs",
    "reconstruct",
    "beta_exponent",
    "instability_report",
    "loglog_slope",
]


class FactorPositivityError(ArithmeticError):
    """An inversion factor came out non-positive."""


@dataclass
class InversionFactors:
    A: np.ndarray
    B: np.ndarray
    C1: np.ndarray
    C2: np.ndarray | None
    lambdas: np.ndarray
    B_error: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.A.size


def compute_factors(config: SimConfig, eig: EigenSystem, h: TimeProfile, c_h: float, *,
                    tol: float = 1e-6, K: int | None = None) -> InversionFactors:
    """A_k (weighted ML integral of h) and B_kl (second moments of the ML kernels).

    Also returns the lower bounds C1_k = c_h T^alpha E_{alpha,alpha}(-lambda_k T^alpha)
    and, for H > 1/2, C2_kl = T^(2(alpha+H-1)) E(-lambda_k T^alpha) E(-lambda_l T^alpha).
    """
    K = eig.K if K is None else int(K)
    lam = eig.lambdas[:K]
    a, H, T = config.alpha, config.hurst, config.T
    A = np.atleast_1d(weighted_ml_integral(a, lam, h, T))
    B, err = second_moment_matrix(config.kernel, ml_kernels(a, lam, T), tol=tol,
                                  return_error=True)
    if np.any(~(A > 0)):
        bad = np.nonzero(~(A > 0))[0] + 1
        raise FactorPositivityError(f"A_k not positive for k = {bad.tolist()}; quadrature failed")
    if np.any(~(B > 0)):
        k, l = np.argwhere(~(B > 0))[0] + 1
        raise FactorPositivityError(f"B_kl not positive at (k, l) = ({k}, {l}); quadrature failed")
    ml = mittag_leffler(a, a)
    e = ml(-lam * T**a)
    C1 = c_h * T**a * e
    C2 = None
    if H > 0.5:
        # alpha_H T^(2 alpha - 2) E_k E_l times int int |u - r|^(2H-2) = T^2H / alpha_H
        C2 = T ** (2.0 * (a + H - 1.0)) * np.outer(e, e)
    return InversionFactors(A, B, C1, C2, lam.copy(), err)


# ---------------------------------------------------------------------------
# reconstruction


@dataclass
class ReconstructionReport:
    K_cut: int
    f_hat: np.ndarray
    g_abs_hat: np.ndarray
    g_sq_hat: np.ndarray
    amplification_f: np.ndarray
    amplification_g: np.ndarray
    clamped: int
    offdiag_residual: float
    signs: np.ndarray
    f_rel_error: np.ndarray | None = None
    g_rel_error: np.ndarray | None = None
    f_bound: np.ndarray | None = None
    g_sq_bound: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def rows(self):
        for k in range(self.f_hat.size):
            yield {
                "k": k + 1,
                "f_hat": self.f_hat[k],
                "g_abs_hat": self.g_abs_hat[k],
                "amp_f": self.amplification_f[k],
                "amp_g": self.amplification_g[k],
                "f_rel_error": None if self.f_rel_error is None else self.f_rel_error[k],
                "g_rel_error": None if self.g_rel_error is None else self.g_rel_error[k],
            }

    def to_json(self) -> dict:
        out = {}
        for key, val in asdict(self).items():
            out[key] = val.tolist() if isinstance(val, np.ndarray) else val
        return out


def _check_cut(K_cut, K):
    if int(K_cut) != K_cut or not 1 <= K_cut <= K:
        raise ValueError(f"K_cut must be an integer in [1, {K}]")
    return int(K_cut)


def reconstruct_f(moments: EnsembleMoments, factors: InversionFactors, K_cut: int,
                  x=None, eig: EigenSystem | None = None):
    """f_k = E u_k / A_k for k <= K_cut, zero beyond; field on ``x`` if given."""
    K = min(moments.K, factors.K)
    K_cut = _check_cut(K_cut, K)
    A = factors.A[:K_cut]
    if np.any(A < 1e-300):
        raise FactorPositivityError("A_k below 1e-300; refusing to divide")
    f_hat = np.zeros(K)
    f_hat[:K_cut] = moments.mean[:K_cut] / A
    field_ = assemble_field(f_hat, x, eig) if x is not None and eig is not None else None
    return f_hat, field_


def _best_signs(g_abs, ratio):
    """Sign pattern s (s_1 = +1) minimising max |s_k s_l g_k g_l - ratio_kl| off the diagonal."""
    K = g_abs.size
    off = ~np.eye(K, dtype=bool)
    prod = np.outer(g_abs, g_abs)

    def resid(s):
        return float(np.max(np.abs(np.outer(s, s) * prod - ratio)[off])) if K > 1 else 0.0

    if K <= 12:
        best, best_s = math.inf, np.ones(K)
        for tail in itertools.product((1.0, -1.0), repeat=K - 1):
            s = np.array((1.0,) + tail)
            r = resid(s)
            if r < best:
                best, best_s = r, s
        return best_s, best
    # large K: signs relative to the strongest mode
    ref = int(np.argmax(g_abs))
    s = np.where(ratio[ref] >= 0, 1.0, -1.0)
    s[ref] = 1.0
    s = s * s[0]
    return s, resid(s)


def reconstruct_g_abs(moments: EnsembleMoments, factors: InversionFactors, K_cut: int,
                      x=None, eig: EigenSystem | None = None):
    """|g_k| = sqrt(max(Var u_k / B_kk, 0)) for k <= K_cut.

    Returns ``(g_abs, g_sq, clamped, residual, signs, field)``. ``clamped``
    counts negative variance ratios set to zero; ``residual`` is the
    off-diagonal mismatch max |s_k s_l |g_k||g_l| - Cov_kl / B_kl| under the
    best sign pattern. The signs are reported for diagnostics only.
    """
    K = min(moments.K, factors.K)
    K_cut = _check_cut(K_cut, K)
    Bd = np.diag(factors.B)[:K_cut]
    g_sq = np.zeros(K)
    g_sq[:K_cut] = moments.variance[:K_cut] / Bd
    clamped = int(np.sum(g_sq[:K_cut] < 0))
    g_abs = np.sqrt(np.maximum(g_sq, 0.0))
    ratio = moments.covariance[:K_cut, :K_cut] / factors.B[:K_cut, :K_cut]
    signs, residual = _best_signs(g_abs[:K_cut], ratio)
    field_ = assemble_field(g_abs, x, eig) if x is not None and eig is not None else None
    return g_abs, g_sq, clamped, residual, signs, field_


def reconstruct(moments: EnsembleMoments, factors: InversionFactors, K_cut: int,
                f_true=None, g_true=None) -> ReconstructionReport:
    """Both reconstructions plus error bars and, if truth is given, relative errors."""
    f_hat, _ = reconstruct_f(moments, factors, K_cut)
    g_abs, g_sq, clamped, resid, signs, _ = reconstruct_g_abs(moments, factors, K_cut)
    K = f_hat.size
    rep = ReconstructionReport(
        K_cut=int(K_cut), f_hat=f_hat, g_abs_hat=g_abs, g_sq_hat=g_sq,
        amplification_f=1.0 / factors.A[:K], amplification_g=1.0 / np.diag(factors.B)[:K],
        clamped=clamped, offdiag_residual=resid, signs=signs,
        f_bound=5.0 * moments.se_mean[:K] / factors.A[:K],
        g_sq_bound=5.0 * moments.se_variance[:K] / np.diag(factors.B)[:K],
    )
    if f_true is not None:
        ft = np.asarray(f_true, dtype=float)[:K]
        with np.errstate(divide="ignore", invalid="ignore"):
            rep.f_rel_error = np.where(ft != 0, np.abs(f_hat - ft) / np.abs(ft), np.abs(f_hat))
    if g_true is not None:
        gt = np.abs(np.asarray(g_true, dtype=float)[:K])
        with np.errstate(divide="ignore", invalid="ignore"):
            rep.g_rel_error = np.where(gt != 0, np.abs(g_abs - gt) / gt, g_abs)
    return rep


# ---------------------------------------------------------------------------
# instability


def beta_exponent(alpha: float, hurst: float, gamma: float, *, use_2gamma_h: bool = False) -> float:
    """Decay exponent of B_kk in lambda_k for the split point t* = lambda_k^-gamma.

    ``use_2gamma_h`` replaces the 2H entry of the H < 1/2 case by 2 gamma H.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    if not (0.0 < alpha <= 1.0) or not (0.0 < hurst < 1.0):
        raise ValueError("need 0 < alpha <= 1 and 0 < H < 1")
    a, H, g = alpha, hurst, gamma
    if H == 0.5:
        if not a > 0.5:
            raise ValueError("H = 1/2 requires alpha > 1/2")
        return min(g * (2.0 * a - 1.0), 1.0 - g)
    if not a + H > 1.0:
        raise ValueError("alpha + H must exceed 1")
    if H < 0.5:
        third = 2.0 * g * H if use_2gamma_h else 2.0 * H
        return min(2.0 * g * (a + H - 1.0), 2.0 - 2.0 * g * (H - 1.0), third, g)
    return min(2.0 * g * (a + H - 1.0), 2.0 * (1.0 - g), 1.0 - g * (1.0 - a))


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.asarray(y)), 1)[0])


@dataclass
class InstabilityProfile:
    gamma: float
    beta: float
    lambdas: np.ndarray
    t_star: np.ndarray
    A: np.ndarray
    B_diag: np.ndarray
    A_scaled: np.ndarray  # A_k lambda_k
    B_scaled: np.ndarray  # B_kk lambda_k^beta
    slope_A: float
    slope_B: float
    epsilon: float
    g_sq_perturbation: np.ndarray  # epsilon / B_kk
    use_2gamma_h: bool = False

    @property
    def growth(self) -> float:
        return float(self.g_sq_perturbation[-1] / self.g_sq_perturbation[0])

    def rows(self):
        for k in range(self.lambdas.size):
            yield {
                "k": k + 1, "lambda": self.lambdas[k], "t_star": self.t_star[k],
                "A": self.A[k], "B_kk": self.B_diag[k], "A_lambda": self.A_scaled[k],
                "B_lambda_beta": self.B_scaled[k], "dg2_eps": self.g_sq_perturbation[k],
            }


def instability_report(config: SimConfig, eig: EigenSystem, h: TimeProfile, gamma: float, *,
                       c_h: float | None = None, factors: InversionFactors | None = None,
                       epsilon: float = 1e-3, use_2gamma_h: bool = False,
                       min_range: float = 50.0) -> InstabilityProfile:
    """Tabulate A_k lambda_k and B_kk lambda_k^beta and fit their trends in lambda_k."""
    lam = eig.lambdas
    if lam[-1] / lam[0] < min_range:
        raise ValueError(f"lambda_K / lambda_1 = {lam[-1] / lam[0]:.3g} is below {min_range}; "
                         "raise K to see the decay")
    beta = beta_exponent(config.alpha, config.hurst, gamma, use_2gamma_h=use_2gamma_h)
    if factors is None:
        factors = compute_factors(config, eig, h, h.lower_bound(config.T) if c_h is None else c_h)
    A = factors.A
    Bd = np.diag(factors.B).copy()
    As = A * lam
    Bs = Bd * lam**beta
    return InstabilityProfile(
        gamma=float(gamma), beta=float(beta), lambdas=lam.copy(), t_star=lam ** (-gamma),
        A=A.copy(), B_diag=Bd, A_scaled=As, B_scaled=Bs, slope_A=loglog_slope(lam, As),
        slope_B=loglog_slope(lam, Bs), epsilon=float(epsilon), g_sq_perturbation=epsilon / Bd,
        use_2gamma_h=use_2gamma_h)


# ---------------------------------------------------------------------------
# serialisation


def _fmt(v):
    if v is None:
        return ""
    return "%.17g" % v


def write_rows_csv(path, rows, header_lines=()):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        if not rows:
            return
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for r in rows:
            writer.writerow([v if isinstance(v, (int, str)) else _fmt(v) for v in r.values()])


def profile_to_json(p: InstabilityProfile) -> dict:
    out = {}
    for key, val in asdict(p).items():
        out[key] = val.tolist() if isinstance(val, np.ndarray) else val
    out["growth"] = p.growth
    return out


def dump_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
