import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from fracsource.fbm import (PathKind, TimeGrid, covariance_matrix, fbm_covariance,
                            path_generator, read_batch_csv, sample_bm_increments,
                            sample_fbm_circulant, sample_fbm_cholesky, write_batch_csv)

hurst = st.floats(min_value=0.05, max_value=0.95)
times = st.floats(min_value=0.0, max_value=10.0)


# covariance ------------------------------------------------------------------


def test_covariance_examples():
    assert fbm_covariance(0.5, 2.0, 3.0) == pytest.approx(2.0)
    assert fbm_covariance(0.75, 1.0, 0.0) == 0.0


@given(hurst, times, times)
def test_covariance_symmetric_and_matches_oracle(H, t, s):
    v = fbm_covariance(H, t, s)
    assert v == fbm_covariance(H, s, t)
    assert v == pytest.approx(float(oracles.fbm_covariance(H, t, s)), rel=1e-12, abs=1e-14)


@given(hurst, st.floats(0.01, 10.0))
def test_variance_on_diagonal(H, t):
    assert fbm_covariance(H, t, t) == pytest.approx(t ** (2 * H), rel=1e-14)


@pytest.mark.parametrize("H", [0.05, 0.3, 0.5, 0.7, 0.95])
@pytest.mark.parametrize("n", [8, 128, 512])
def test_covariance_matrix_psd(H, n):
    C = covariance_matrix(H, TimeGrid(1.0, n))
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() > -1e-10 * np.trace(C)


def test_covariance_domain():
    with pytest.raises(ValueError):
        fbm_covariance(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        fbm_covariance(0.5, -1.0, 1.0)


# grid ------------------------------------------------------------------------


def test_grid_nodes():
    g = TimeGrid(2.0, 4)
    assert np.array_equal(g.nodes, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert g.nodes[-1] == 2.0
    assert np.all(np.diff(g.nodes) > 0)


@pytest.mark.parametrize("T, n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
def test_grid_validation(T, n):
    with pytest.raises(ValueError):
        TimeGrid(T, n)


# Brownian increments -----------------------------------------------------------


def test_bm_determinism():
    g = TimeGrid(1.0, 4)
    a = sample_bm_increments(g, 1, 42)
    b = sample_bm_increments(g, 1, 42)
    assert a.data.shape == (1, 4)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.kind is PathKind.BROWNIAN_INCREMENTS


def test_bm_single_cell_is_standard_normal():
    batch = sample_bm_increments(TimeGrid(1.0, 1), 3, 5)
    want = [path_generator(5, i).standard_normal(1)[0] for i in range(3)]
    assert np.array_equal(batch.data[:, 0], want)


def test_bm_cell_variance():
    M, n, T = 100_000, 4, 2.0
    x = sample_bm_increments(TimeGrid(T, n), M, 3).data
    var = x.var(axis=0, ddof=1)
    sd = (T / n) * math.sqrt(2.0 / (M - 1))
    assert np.all(np.abs(var - T / n) < 5 * sd)


def test_bm_partition_invariance():
    g = TimeGrid(1.0, 16)
    whole = sample_bm_increments(g, 300, 9).data
    serial = np.concatenate([sample_bm_increments(g, 100, 9, first_path=i).data
                             for i in (0, 100, 200)])
    threaded = sample_bm_increments(g, 300, 9, threads=4).data
    assert whole.tobytes() == serial.tobytes() == threaded.tobytes()


def test_bm_needs_paths():
    with pytest.raises(ValueError):
        sample_bm_increments(TimeGrid(1.0, 4), 0, 1)


# fBm samplers ------------------------------------------------------------------


SAMPLERS = [sample_fbm_cholesky, sample_fbm_circulant]


def _cov_within(batch, H, k=5.0):
    x = batch.data[:, 1:]
    M = x.shape[0]
    prod = x[:, :, None] * x[:, None, :]
    emp = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(M)
    z = np.abs(emp - covariance_matrix(H, batch.grid)) / se
    return z.max()


@pytest.mark.parametrize("sampler", SAMPLERS)
@pytest.mark.parametrize("H", [0.25, 0.5, 0.75])
def test_sampler_covariance(sampler, H):
    batch = sampler(H, TimeGrid(1.0, 8), 20_000, 11)
    assert np.all(batch.data[:, 0] == 0.0)
    assert _cov_within(batch, H) < 5.0


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_half_is_brownian(sampler):
    g = TimeGrid(1.0, 8)
    inc = np.diff(sampler(0.5, g, 20_000, 2).data, axis=1)
    C = np.cov(inc, rowvar=False)
    sd = g.dt * math.sqrt(2.0 / inc.shape[0])
    assert np.all(np.abs(np.diag(C) - g.dt) < 5 * sd)
    off = C[~np.eye(8, dtype=bool)]
    assert np.all(np.abs(off) < 5 * g.dt / math.sqrt(inc.shape[0]))


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_increment_stationarity(sampler):
    H, g, M = 0.3, TimeGrid(1.0, 64), 10_000
    x = sampler(H, g, M, 4).data
    lag = 4
    delta = lag * g.dt
    for start in (0, 20, 59):
        d = x[:, start + lag] - x[:, start]
        m2 = np.mean(d**2)
        se = np.std(d**2, ddof=1) / math.sqrt(M)
        assert abs(m2 - delta ** (2 * H)) < 5 * se


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_holder_exponent(H):
    g = TimeGrid(1.0, 256)
    x = sample_fbm_circulant(H, g, 4000, 8).data
    lags = np.array([1, 2, 4, 8, 16, 32])
    m2 = [np.mean((x[:, lag:] - x[:, :-lag]) ** 2) for lag in lags]
    slope = np.polyfit(np.log(lags * g.dt), np.log(m2), 1)[0]
    assert abs(slope - 2 * H) < 0.05


@pytest.mark.parametrize("H", [0.2, 0.8])
def test_circulant_matches_cholesky_marginal(H):
    g = TimeGrid(1.0, 32)
    a = sample_fbm_cholesky(H, g, 10_000, 21).data[:, -1]
    b = sample_fbm_circulant(H, g, 10_000, 22).data[:, -1]
    assert stats.ks_2samp(a, b).pvalue > 0.01


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_sampler_determinism(sampler):
    g = TimeGrid(1.0, 32)
    a = sampler(0.7, g, 50, 3).data
    b = sampler(0.7, g, 50, 3, threads=3).data
    c = sampler(0.7, g, 50, 4).data
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_circulant_fallback_warns():
    g = TimeGrid(1.0, 16)
    with pytest.warns(RuntimeWarning):
        batch = sample_fbm_circulant(0.4, g, 10, 1, tol=-2.0)
    assert batch.meta["fallback"] is True
    assert batch.meta["method"] == "cholesky"


def test_cholesky_jitter_recorded():
    batch = sample_fbm_cholesky(0.02, TimeGrid(1.0, 1024), 2, 1)
    assert "jitter_applied" in batch.meta


def test_cholesky_size_guard():
    with pytest.raises(ValueError):
        sample_fbm_cholesky(0.5, TimeGrid(1.0, 5000), 1, 1)


def test_circulant_no_warning_in_normal_use():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sample_fbm_circulant(0.9, TimeGrid(1.0, 1000), 2, 1)


def test_csv_round_trip(tmp_path):
    batch = sample_fbm_circulant(0.6, TimeGrid(2.0, 8), 5, 7)
    path = tmp_path / "b.csv"
    write_batch_csv(batch, path)
    text = path.read_text().splitlines()
    assert text[0] == "# kind,H,T,n,seed"
    back = read_batch_csv(path)
    assert back.data.tobytes() == batch.data.tobytes()
    assert (back.kind, back.hurst, back.grid, back.seed) == \
        (batch.kind, batch.hurst, batch.grid, batch.seed)
    buf = io.StringIO()
    write_batch_csv(sample_bm_increments(TimeGrid(1.0, 3), 2, 1), buf)
    buf.seek(0)
    assert read_batch_csv(buf).hurst is None


def test_csv_requires_header():
    with pytest.raises(ValueError):
        read_batch_csv(io.StringIO("1,2,3\n"))
