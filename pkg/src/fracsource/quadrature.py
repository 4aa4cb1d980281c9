"""Graded quadrature rules for integrands with algebraic endpoint singularities.

A rule is built once on the reference interval [0, 1] and then mapped
affinely. Cells shrink geometrically toward each endpoint; ordinary
Gauss-Legendre is used on every cell except the innermost one, which uses
Gauss-Jacobi nodes with the declared endpoint power folded back into the
weights. The rule therefore integrates ``x**p * smooth(x)`` directly and the
caller never has to split off the singular factor.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

__all__ = ["GradedRule", "graded_rule", "integrate", "mapped_nodes"]


@dataclass(frozen=True)
class GradedRule:
    """Nodes and weights on [0, 1]."""

    nodes: np.ndarray
    comp: np.ndarray  # 1 - nodes, kept exact near the right end
    weights: np.ndarray
    p_left: float
    p_right: float

    def __len__(self):
        return self.nodes.size

    def map(self, a, b):
        """Nodes and weights for [a, b]; ``a`` and ``b`` may be arrays (broadcast on a new last axis)."""
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        h = b - a
        return a + h * self.nodes, h * self.weights

    def map_offsets(self, h):
        """Offsets from both ends of an interval of length ``h``, plus weights.

        Returns ``(left, right, w)`` with ``left = u - a`` and ``right = b - u``
        computed without cancellation.
        """
        h = np.asarray(h, dtype=float)[..., None]
        return h * self.nodes, h * self.comp, h * self.weights


def _gauss_legendre_cells(edges, npts):
    x, w = np.polynomial.legendre.leggauss(npts)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    return (lo + half * (x + 1.0)).ravel(), (half * w).ravel()


def _jacobi_cell(delta, p, npts):
    """Innermost cell [0, delta] with weight x**p folded out of the rule."""
    if p == 0.0:
        x, w = np.polynomial.legendre.leggauss(npts)
        return 0.5 * delta * (x + 1.0), 0.5 * delta * w
    # roots_jacobi integrates against (1-y)^a (1+y)^b on [-1, 1]
    y, w = roots_jacobi(npts, 0.0, p)
    x = 0.5 * delta * (y + 1.0)
    # int_0^delta x^p g dx = (delta/2)^(1+p) sum w g
    wx = (0.5 * delta) ** (1.0 + p) * w / x**p
    return x, wx


def _half_rule(p, sigma, depth, npts):
    """Graded rule on [0, 1/2], refined toward 0."""
    nlev = max(1, int(math.ceil(math.log(2.0 * depth) / math.log(sigma))))
    edges = 0.5 * sigma ** np.arange(nlev, -1, -1, dtype=float)
    xg, wg = _gauss_legendre_cells(edges, npts)
    xj, wj = _jacobi_cell(edges[0], p, npts)
    return np.concatenate([xj, xg]), np.concatenate([wj, wg])


@functools.lru_cache(maxsize=512)
def graded_rule(p_left=0.0, p_right=0.0, npts=10, sigma=0.25, depth=1e-15):
    """Reference rule on [0, 1] for ``x**p_left (1-x)**p_right * smooth``.

    Both exponents must exceed -1. ``depth`` is the width of the innermost
    cell, ``sigma`` the geometric ratio between neighbouring cells.
    """
    for p in (p_left, p_right):
        if not p > -1.0:
            raise ValueError(f"endpoint exponent must exceed -1, got {p}")
    if not 0.0 < sigma < 1.0:
        raise ValueError("sigma must lie in (0, 1)")
    xl, wl = _half_rule(float(p_left), sigma, depth, npts)
    xr, wr = _half_rule(float(p_right), sigma, depth, npts)
    nodes = np.concatenate([xl, (1.0 - xr)[::-1]])
    comp = np.concatenate([1.0 - xl, xr[::-1]])
    weights = np.concatenate([wl, wr[::-1]])
    for arr in (nodes, comp, weights):
        arr.setflags(write=False)
    return GradedRule(nodes, comp, weights, float(p_left), float(p_right))


def mapped_nodes(a, b, p_left=0.0, p_right=0.0, **kw):
    """Shorthand for ``graded_rule(...).map(a, b)``."""
    return graded_rule(p_left, p_right, **kw).map(a, b)


def integrate(f, a, b, p_left=0.0, p_right=0.0, **kw):
    """Integrate a vectorised ``f`` over [a, b] with the graded rule."""
    x, w = mapped_nodes(a, b, p_left, p_right, **kw)
    return np.sum(w * f(x), axis=-1)
