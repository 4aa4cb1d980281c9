"""Brownian and fractional Brownian paths on uniform grids.

Every path draws from its own generator, derived from the master seed and
the path index, so a batch is bit-identical however it is split across
workers.
"""

from __future__ import annotations

import csv
import enum
import functools
import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "PathKind",
    "PathBatch",
    "path_generator",
    "fbm_covariance",
    "covariance_matrix",
    "sample_bm_increments",
    "sample_fbm_cholesky",
    "sample_fbm_circulant",
    "write_batch_csv",
    "read_batch_csv",
]

# stream tags mixed into the per-path seed
STREAM_COARSE = 0
STREAM_BRIDGE = 1


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"T must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def nodes(self) -> np.ndarray:
        # i*T/n hits T exactly at i = n
        return np.arange(self.n + 1) * self.T / self.n

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.T / self.n


class PathKind(str, enum.Enum):
    BROWNIAN_INCREMENTS = "BrownianIncrements"
    FBM_VALUES = "FbmValues"


@dataclass
class PathBatch:
    grid: TimeGrid
    kind: PathKind
    data: np.ndarray
    seed: int
    hurst: float | None = None
    first_path: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.data.shape[0]

    def path_indices(self) -> np.ndarray:
        return np.arange(self.first_path, self.first_path + self.n_paths)


def path_generator(seed: int, path: int, stream: int = STREAM_COARSE) -> np.random.Generator:
    """Generator for one path; depends only on (seed, path, stream)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def _check_hurst(H):
    if not (0.0 < H < 1.0):
        raise ValueError(f"Hurst index must lie in (0, 1), got {H}")


def fbm_covariance(H, t, s):
    """R_H(t, s) = (t^2H + s^2H - |t - s|^2H) / 2."""
    _check_hurst(H)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("times must be non-negative")
    h2 = 2.0 * H
    out = 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)
    return out if out.ndim else float(out)


def covariance_matrix(H, grid: TimeGrid) -> np.ndarray:
    """[R_H(t_i, t_j)] for i, j = 1..n (t_0 = 0 is dropped)."""
    t = grid.nodes[1:]
    return fbm_covariance(H, t[:, None], t[None, :])


def _normals(seed, first, count, width, threads, stream=STREAM_COARSE):
    """Standard normal matrix (count x width), row i from path first+i."""

    def block(lo, hi):
        return np.stack([path_generator(seed, first + i, stream).standard_normal(width)
                         for i in range(lo, hi)]) if hi > lo else np.empty((0, width))

    threads = max(1, int(threads))
    if threads == 1 or count < 64:
        return block(0, count)
    bounds = np.linspace(0, count, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(lambda ab: block(*ab), zip(bounds[:-1], bounds[1:])))
    return np.concatenate(parts, axis=0)


def sample_bm_increments(grid: TimeGrid, n_paths: int, seed: int, *,
                         first_path: int = 0, threads: int = 1) -> PathBatch:
    """Brownian increments dW_i ~ N(0, T/n), one row per path."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    z = _normals(seed, first_path, n_paths, grid.n, threads)
    return PathBatch(grid, PathKind.BROWNIAN_INCREMENTS, math.sqrt(grid.dt) * z,
                     int(seed), None, first_path)


@functools.lru_cache(maxsize=32)
def _cholesky_factor(H, T, n):
    grid = TimeGrid(T, n)
    C = covariance_matrix(H, grid)
    try:
        return np.linalg.cholesky(C), False
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(C) / n
        return np.linalg.cholesky(C + jitter * np.eye(n)), True


def _with_origin(values):
    return np.concatenate([np.zeros((values.shape[0], 1)), values], axis=1)


def sample_fbm_cholesky(H, grid: TimeGrid, n_paths: int, seed: int, *,
                        first_path: int = 0, threads: int = 1) -> PathBatch:
    """fBm values B^H(t_0..t_n) by Cholesky factorisation of the covariance."""
    _check_hurst(H)
    if grid.n > 4096:
        raise ValueError("Cholesky sampler limited to n <= 4096")
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    L, jittered = _cholesky_factor(float(H), grid.T, grid.n)
    z = _normals(seed, first_path, n_paths, grid.n, threads)
    batch = PathBatch(grid, PathKind.FBM_VALUES, _with_origin(z @ L.T), int(seed),
                      float(H), first_path)
    batch.meta.update(method="cholesky", jitter_applied=jittered)
    return batch


def _fgn_autocov(H, n):
    k = np.arange(n + 1, dtype=float)
    h2 = 2.0 * H
    return 0.5 * ((k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)


@functools.lru_cache(maxsize=32)
def _circulant_eigs(H, n):
    g = _fgn_autocov(H, n)
    row = np.concatenate([g, g[-2:0:-1]])  # length 2n
    return np.fft.fft(row).real


def sample_fbm_circulant(H, grid: TimeGrid, n_paths: int, seed: int, *,
                         first_path: int = 0, threads: int = 1,
                         tol: float = 1e-10) -> PathBatch:
    """fBm values by circulant embedding of fractional Gaussian noise (Davies-Harte)."""
    _check_hurst(H)
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    n = grid.n
    lam = _circulant_eigs(float(H), n)
    if lam.min() < -tol * lam.max():
        warnings.warn("circulant embedding is not positive semidefinite; "
                      "falling back to the Cholesky sampler", RuntimeWarning)
        batch = sample_fbm_cholesky(H, grid, n_paths, seed, first_path=first_path,
                                    threads=threads)
        batch.meta["fallback"] = True
        return batch
    m = 2 * n
    z = _normals(seed, first_path, n_paths, 2 * m, threads)
    w = (z[:, :m] + 1j * z[:, m:]) * np.sqrt(np.maximum(lam, 0.0) / m)
    fgn = np.fft.fft(w, axis=1).real[:, :n] * grid.dt**H
    batch = PathBatch(grid, PathKind.FBM_VALUES, _with_origin(np.cumsum(fgn, axis=1)),
                      int(seed), float(H), first_path)
    batch.meta.update(method="circulant", fallback=False)
    return batch


# ---------------------------------------------------------------------------
# CSV export


def write_batch_csv(batch: PathBatch, fh) -> None:
    """One row per path, preceded by a ``# kind,H,T,n,seed`` header."""
    own = isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__")
    stream = open(fh, "w", newline="") if own else fh
    try:
        hurst = "" if batch.hurst is None else repr(batch.hurst)
        stream.write("# kind,H,T,n,seed\n")
        stream.write(f"# {batch.kind.value},{hurst},{batch.grid.T!r},{batch.grid.n},{batch.seed}\n")
        for row in batch.data:
            stream.write(",".join("%.17g" % v for v in row) + "\n")
    finally:
        if own:
            stream.close()


def read_batch_csv(fh) -> PathBatch:
    own = isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__")
    text = open(fh).read() if own else fh.read()
    lines = text.splitlines()
    if len(lines) < 2 or not lines[0].startswith("# kind"):
        raise ValueError("missing '# kind,H,T,n,seed' header")
    kind, hurst, T, n, seed = lines[1][1:].strip().split(",")
    rows = list(csv.reader(io.StringIO("\n".join(lines[2:]))))
    data = np.array([[float(v) for v in r] for r in rows]) if rows else np.empty((0, 0))
    return PathBatch(TimeGrid(float(T), int(n)), PathKind(kind), data, int(seed),
                     float(hurst) if hurst else None)
