import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

import oracles
from fracsource.fbm import TimeGrid, fbm_covariance, sample_bm_increments, sample_fbm_circulant
from fracsource.fintegral import (KernelParams, QuadratureError, WeightedFunction,
                                  fine_path_data, integrate_pathwise, integrate_pathwise_many,
                                  kernel_covariance, kernel_KH, kernel_KH_du, kstar_apply,
                                  refined_grid, scaling_exponent_check, second_moment_matrix,
                                  second_moment_pair)

PI2 = math.pi**2

# E[int phi_1 dB^H int phi_l dB^H] on [0, 1] for lambda_1 = pi^2, lambda_2 = 4 pi^2,
# from the power-series oracle (25 digits): (B11, B12, B22)
FROZEN_B = {
    (0.8, 0.7): (0.032906574964098557219, 0.011957078971186220115, 0.0058317795761617898792),
    (0.8, 0.3): (0.61330861609091695706, 0.48299467585013957059, 0.4336570255658652189),
    (0.8, 0.5): (0.10314980018577636069, 0.052921787899642015556, 0.036469615425989140057),
    (1.0, 0.3): (0.11310783363549641305, 0.062007943823117085816, 0.049232986346146111418),
    (0.9, 0.75): (0.023046462669990920674, 0.0073215591581922161958, 0.0031199758343725050024),
}


def smooth(fn, end=1.0):
    return WeightedFunction(0.0, fn, end)


# parameters --------------------------------------------------------------------


@pytest.mark.parametrize("H", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_normalisers(H):
    p = KernelParams(H)
    assert p.c_H == pytest.approx(float(oracles.c_H(H)), rel=1e-14)
    assert p.alpha_H == pytest.approx(H * (2 * H - 1))
    assert p.regime == (H > 0.5) - (H < 0.5)


@pytest.mark.parametrize("H", [0.0, 1.0, -0.2])
def test_hurst_range(H):
    with pytest.raises(ValueError):
        KernelParams(H)


# kernels --------------------------------------------------------------------------


@pytest.mark.parametrize("H", [0.1, 0.25, 0.45, 0.55, 0.75, 0.9])
@pytest.mark.parametrize("t, s", [(1.0, 0.3), (0.7, 0.69), (2.0, 1e-3), (1.0, 1 - 1e-9)])
def test_kernel_matches_oracle(H, t, s):
    got = kernel_KH(KernelParams(H), t, s)
    assert got == pytest.approx(float(oracles.kernel_KH(H, t, s)), rel=1e-12)


def test_kernel_brownian_case():
    s = np.linspace(0.01, 0.99, 7)
    assert np.all(kernel_KH(KernelParams(0.5), 1.0, s) == 1.0)
    assert np.all(kernel_KH_du(KernelParams(0.5), 1.0, s) == 0.0)


def test_kernel_positive_near_diagonal():
    p = KernelParams(0.25)
    vals = kernel_KH(p, 1.0, 1.0 - np.geomspace(1e-12, 1e-2, 11))
    assert np.all(vals > 0)
    assert np.all(np.diff(vals) < 0)  # grows as s -> t


@pytest.mark.parametrize("t, s", [(1.0, 1.0), (1.0, 1.5), (1.0, 0.0), (1.0, -0.1)])
def test_kernel_domain(t, s):
    with pytest.raises(ValueError):
        kernel_KH(KernelParams(0.7), t, s)


@pytest.mark.parametrize("H", [0.2, 0.4, 0.6, 0.8])
@pytest.mark.parametrize("u, s", [(0.5, 0.2), (1.0, 0.9), (2.0, 0.1)])
def test_kernel_derivative_vs_differences(H, u, s):
    p = KernelParams(H)
    h = 1e-6 * (u - s)
    fd = (kernel_KH(p, u + h, s) - kernel_KH(p, u - h, s)) / (2 * h)
    d = kernel_KH_du(p, u, s)
    assert d == pytest.approx(fd, rel=1e-4)
    assert np.sign(d) == np.sign(H - 0.5)


def test_kernel_derivative_domain():
    with pytest.raises(ValueError):
        kernel_KH_du(KernelParams(0.3), 0.5, 0.5)


@pytest.mark.parametrize("H", [0.25, 0.75])
def test_kernel_reproduces_covariance(H):
    p = KernelParams(H)
    pts = np.linspace(0.2, 1.0, 5)
    err = max(abs(kernel_covariance(p, t, s) - fbm_covariance(H, t, s)) for t in pts for s in pts)
    assert err < 1e-5


# K* -----------------------------------------------------------------------------


def test_kstar_identity_at_half():
    psi = smooth(np.cos)
    s = np.linspace(0.05, 0.95, 9)
    assert np.allclose(kstar_apply(KernelParams(0.5), psi, s), np.cos(s), rtol=0, atol=1e-15)


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_kstar_indicator_is_kernel(H):
    # psi = 1 on [0, t]: K* psi (s) = K_H(t, s) for s < t, zero after
    p = KernelParams(H, 1.0)
    t = 0.6
    s = np.array([0.05, 0.3, 0.59, 0.8])
    got = kstar_apply(p, WeightedFunction.constant(1.0, t), s)
    assert np.allclose(got[:3], kernel_KH(p, t, s[:3]), rtol=1e-8)
    assert got[3] == 0.0


def test_kstar_reports_failure():
    psi = WeightedFunction.ml_kernel(0.55, 50.0, 1.0)
    with pytest.raises(QuadratureError) as info:
        kstar_apply(KernelParams(0.6), psi, np.array([0.5, 0.999999]), tol=1e-16)
    assert info.value.points.size >= 1


def test_kstar_domain():
    with pytest.raises(ValueError):
        kstar_apply(KernelParams(0.6), smooth(np.cos), np.array([0.0, 0.5]))


# second moments ---------------------------------------------------------------------


@pytest.mark.parametrize("H", [0.1, 0.3, 0.5, 0.75, 0.9])
@pytest.mark.parametrize("T", [0.5, 1.0, 3.0])
def test_constant_gives_fbm_variance(H, T):
    one = WeightedFunction.constant(1.0, T)
    assert second_moment_pair(KernelParams(H, T), one, one) == pytest.approx(T ** (2 * H), rel=1e-8)


@pytest.mark.parametrize("alpha, H", sorted(FROZEN_B))
def test_ml_moments_match_series_oracle(alpha, H):
    psis = [WeightedFunction.ml_kernel(alpha, lam, 1.0) for lam in (PI2, 4 * PI2)]
    B, err = second_moment_matrix(KernelParams(H), psis, return_error=True)
    b11, b12, b22 = FROZEN_B[(alpha, H)]
    assert B[0, 0] == pytest.approx(b11, rel=1e-8)
    assert B[0, 1] == pytest.approx(b12, rel=1e-8)
    assert B[1, 1] == pytest.approx(b22, rel=1e-8)
    assert np.all(err < 1e-6)


def test_oracle_series_is_exact_for_classical_case():
    assert float(oracles.second_moment(1.0, 0.5, 3.0, 5.0)) == \
        pytest.approx(float(oracles.second_moment_classical(3.0, 5.0)), rel=1e-20)


def test_brownian_case_is_l2_product():
    p = KernelParams(0.5)
    psi, phi = smooth(np.cos), smooth(lambda x: np.exp(-x) * (1 + x))
    ref = quad(lambda x: math.cos(x) * math.exp(-x) * (1 + x), 0, 1)[0]
    assert second_moment_pair(p, psi, phi) == pytest.approx(ref, abs=1e-8)


coef = st.floats(-3.0, 3.0)


@given(coef, coef, st.sampled_from([0.3, 0.5, 0.8]))
def test_bilinear_and_symmetric(a, b, H):
    p = KernelParams(H)
    f = smooth(np.cos)
    g = smooth(lambda x: 1 + x**2)
    k = smooth(np.exp)
    combo = smooth(lambda x: a * np.cos(x) + b * (1 + x**2))
    lhs = second_moment_pair(p, combo, k)
    rhs = a * second_moment_pair(p, f, k) + b * second_moment_pair(p, g, k)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
    assert second_moment_pair(p, f, g) == pytest.approx(second_moment_pair(p, g, f), rel=1e-12)


def test_moment_matrix_positive_definite():
    psis = [WeightedFunction.ml_kernel(0.8, (k * math.pi) ** 2, 1.0) for k in range(1, 7)]
    for H in (0.3, 0.7):
        B = second_moment_matrix(KernelParams(H), psis)
        assert np.array_equal(B, B.T)
        assert np.linalg.eigvalsh(B).min() > 0


def test_moment_quadrature_failure_is_reported():
    psi = WeightedFunction.ml_kernel(0.6, 500.0, 1.0)
    with pytest.raises(QuadratureError):
        second_moment_matrix(KernelParams(0.45), [psi], tol=1e-15)


# pathwise integration ---------------------------------------------------------------


def test_refined_grid_tiles_horizon():
    g = refined_grid(2.0, 16)
    assert math.fsum(g.width) == pytest.approx(2.0, rel=1e-15)
    assert np.allclose(g.left[1:], g.left[:-1] + g.width[:-1], rtol=1e-14)
    assert np.allclose(g.right_to_end, 2.0 - g.left - g.width, atol=1e-15)
    assert g.width.min() < 1e-39
    plain = refined_grid(2.0, 16, refine=False)
    assert plain.width.size == 16 and plain.n_first == plain.n_last == 1


def test_fine_increments_add_up():
    grid = TimeGrid(1.0, 8)
    batch = sample_bm_increments(grid, 50, 3)
    fine = refined_grid(1.0, 8)
    dW, xi = fine_path_data(batch, fine)
    nf, nl = fine.n_first, fine.n_last
    assert np.allclose(dW[:, :nf].sum(axis=1), batch.data[:, 0], atol=1e-15)
    assert np.allclose(dW[:, -nl:].sum(axis=1), batch.data[:, -1], atol=1e-15)
    assert np.array_equal(dW[:, nf:-nl], batch.data[:, 1:-1])
    assert xi.shape == dW.shape


def test_bridge_pieces_have_right_variance():
    grid = TimeGrid(1.0, 4)
    batch = sample_bm_increments(grid, 20_000, 5)
    fine = refined_grid(1.0, 4)
    dW, xi = fine_path_data(batch, fine)
    var = dW.var(axis=0)
    z = (var - fine.width) / (fine.width * math.sqrt(2.0 / 20_000))
    assert np.max(np.abs(z)) < 5.0
    zx = (xi.var(axis=0) - fine.width**3 / 12) / (fine.width**3 / 12 * math.sqrt(2.0 / 20_000))
    assert np.max(np.abs(zx)) < 5.0


def test_constant_at_half_is_scaled_brownian_endpoint():
    batch = sample_bm_increments(TimeGrid(1.0, 64), 100, 2)
    got = integrate_pathwise(KernelParams(0.5), WeightedFunction.constant(2.5), batch)
    assert np.allclose(got, 2.5 * batch.data.sum(axis=1), rtol=0, atol=1e-13)


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_constant_integrand_variance(H):
    M = 10_000
    batch = sample_bm_increments(TimeGrid(1.0, 128), M, 17)
    x = integrate_pathwise(KernelParams(H), WeightedFunction.constant(1.0), batch)
    se = np.std(x**2, ddof=1) / math.sqrt(M)
    assert abs(np.mean(x**2) - 1.0) < 5 * se


def test_pathwise_matches_moment_for_ml_kernel():
    M, H, alpha = 10_000, 0.7, 0.8
    p = KernelParams(H)
    psis = [WeightedFunction.ml_kernel(alpha, lam, 1.0) for lam in (PI2, 4 * PI2)]
    batch = sample_bm_increments(TimeGrid(1.0, 256), M, 23)
    x = integrate_pathwise_many(p, psis, batch)
    B = second_moment_matrix(p, psis)
    for k, l in [(0, 0), (0, 1), (1, 1)]:
        prod = x[:, k] * x[:, l]
        se = np.std(prod, ddof=1) / math.sqrt(M)
        assert abs(prod.mean() - B[k, l]) < 3 * (se + 1e-6)
    assert np.all(np.abs(x.mean(axis=0)) < 4 * x.std(axis=0) / math.sqrt(M))


def test_midpoint_scheme_runs_and_is_close():
    batch = sample_bm_increments(TimeGrid(1.0, 64), 2000, 4)
    psi = WeightedFunction.ml_kernel(0.9, PI2, 1.0)
    a = integrate_pathwise(KernelParams(0.6), psi, batch, scheme="midpoint")
    b = integrate_pathwise(KernelParams(0.6), psi, batch)
    assert np.corrcoef(a, b)[0, 1] > 0.99
    with pytest.raises(ValueError):
        integrate_pathwise(KernelParams(0.6), psi, batch, scheme="trapezoid")


def test_pathwise_input_checks():
    fbm = sample_fbm_circulant(0.6, TimeGrid(1.0, 16), 4, 1)
    with pytest.raises(ValueError):
        integrate_pathwise(KernelParams(0.6), WeightedFunction.constant(1.0), fbm)
    bm = sample_bm_increments(TimeGrid(1.0, 16), 4, 1)
    with pytest.raises(ValueError):
        integrate_pathwise(KernelParams(0.6), WeightedFunction.constant(1.0, 0.5), bm)


# scaling ---------------------------------------------------------------------------


T_LIST = np.geomspace(0.0125, 0.2, 8)


def test_scaling_classical():
    slope = scaling_exponent_check(KernelParams(0.5), 1.0, 0.01, T_LIST)
    assert slope == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("alpha, H", [(0.8, 0.4), (0.9, 0.7)])
def test_scaling_exponent(alpha, H):
    slope = scaling_exponent_check(KernelParams(H), alpha, 1.0, T_LIST)
    assert abs(slope - (2 * alpha + 2 * H - 2)) < 0.15


def test_scaling_rejects_bad_inputs():
    with pytest.raises(ValueError, match="alpha \\+ H"):
        scaling_exponent_check(KernelParams(0.3), 0.6, 1.0, T_LIST)
    with pytest.raises(ValueError):
        scaling_exponent_check(KernelParams(0.7), 0.8, 1.0, [0.1, 0.5])
