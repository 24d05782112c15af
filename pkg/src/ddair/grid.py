"""Tabulated log-density for large trellises.

The log-density F(u, a) is tabulated in variance-stabilized coordinates
T(x), in which the peak ridge u ~ a has roughly unit width everywhere. The
table is sheared along the ridge: columns hold the offset d = T(u) - T(a)
within a band of +-``band``, rows a coordinate rho(a) = T(a) + k sqrt(2a/v1)
whose square-root term resolves the noncentral tail near a = 0. Outside the band the Gaussian
decay in d is continued from the band edge; those branches carry less than
exp(-band**2 / 2) of the ridge value.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import _kernels
from .density import DEFAULT_QUAD, EPS, QuadratureSpec, log_density


class DensityGrid:
    def __init__(self, var_pre: float, var_post: float, a_max: float,
                 quad: QuadratureSpec = DEFAULT_QUAD, step: float = 0.25, band: float = 12.0):
        if var_pre < EPS or var_post < EPS:
            raise ValueError("the grid is only needed when both variances are non-degenerate")
        self.v1, self.v2 = float(var_pre), float(var_post)
        self.sv0 = np.sqrt(self.v2)
        self._s_c = np.sqrt(self.v2 + self.v1**2)
        self._t_c = float(np.arcsinh(self.v1 / self.sv0))
        self.h = self.hd = float(step)
        self.band = float(band)
        self.a_max = float(a_max)
        # the sqrt term resolves the noncentral tail's sensitivity to a near a = 0
        self.kappa = min(1.0, band * self.v1 / self.sv0)
        nrows = int(np.ceil(self.rho(self.a_max) / self.h)) + 2
        ncols = int(round(2 * self.band / self.hd)) + 1
        rho = np.arange(0, nrows + 2) * self.h
        d = -self.band + np.arange(-1, ncols + 2) * self.hd
        a = self.rho_inv(rho)
        TA, DD = np.meshgrid(self.T(a), d, indexing="ij")
        u = self.T_inv(TA + DD)
        body = log_density(u, np.broadcast_to(a[:, None], u.shape), self.v1, self.v2, quad)
        grid = np.empty((len(rho) + 1, len(d)))
        grid[1:] = body
        grid[0] = grid[2]  # F is even in rho about a = 0
        self.grid = np.ascontiguousarray(grid)
        self.nrows, self.ncols = nrows, ncols

    @property
    def size(self) -> int:
        return self.grid.size

    def T(self, x):
        """Integral of 1/scale(x): scale is sqrt(v2 + x^2) up to x = v1, then grows
        like sqrt(2 v1 x); constant sqrt(v2) below zero."""
        x = np.asarray(x, dtype=float)
        s2, v1 = self.sv0, self.v1
        xp = np.maximum(x, 0.0)
        inner = np.arcsinh(np.minimum(xp, v1) / s2)
        xb = np.maximum(xp, v1)
        outer = 2 * (xb - v1) / (np.sqrt(s2**2 - v1**2 + 2 * v1 * xb) + self._s_c)
        return np.where(x >= 0, inner + outer, x / s2)

    def T_inv(self, t):
        t = np.asarray(t, dtype=float)
        s2, v1 = self.sv0, self.v1
        tc = self._t_c
        inner = s2 * np.sinh(np.clip(t, 0.0, tc))
        D = np.maximum(t - tc, 0.0)
        outer = v1 + D * self._s_c + 0.5 * v1 * D**2
        return np.where(t < 0, t * s2, np.where(t <= tc, inner, outer))

    def rho(self, a):
        """Row coordinate."""
        a = np.maximum(np.asarray(a, dtype=float), 0.0)
        return self.T(a) + self.kappa * np.sqrt(2 * a / self.v1)

    def rho_inv(self, r):
        r = np.asarray(r, dtype=float)
        lo = np.zeros_like(r)
        hi = np.maximum(self.T_inv(r), self.v1 * r**2)
        hi = np.where(self.rho(hi) < r, 2 * hi + 1.0, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.rho(mid) < r
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def covers(self, a) -> bool:
        return bool(np.all(np.asarray(a) <= self.a_max))

    def matrix(self, u, a) -> np.ndarray:
        """F[t, b] = log p(u[t] | a[b])."""
        tu = self.T(u).ravel()
        a = np.asarray(a, dtype=float).ravel()
        out = np.empty((len(tu), len(a)))
        _kernels.grid_matrix(self.grid, self.h, self.band, self.hd, self.rho(a), self.T(a), tu, out)
        return out

    def pairs(self, u, a) -> np.ndarray:
        tu = self.T(u).ravel()
        a = np.asarray(a, dtype=float).ravel()
        out = np.empty(len(tu))
        _kernels.grid_pairs(self.grid, self.h, self.band, self.hd, self.rho(a), self.T(a), tu, out)
        return out


def estimated_size(var_pre, var_post, a_max, step=0.25, band=12.0) -> int:
    s2 = np.sqrt(var_post)
    xb = max(a_max, var_pre)
    t = np.arcsinh(var_pre / s2) + 2 * (xb - var_pre) / (
        np.sqrt(var_post - var_pre**2 + 2 * var_pre * xb) + np.sqrt(var_post + var_pre**2))
    kappa = min(1.0, band * var_pre / s2)
    t += kappa * np.sqrt(2 * a_max / var_pre)
    return int((t / step + 5) * (2 * band / step + 4))


def quantize_up(a_max: float) -> float:
    """Round up to a power of 1.25 so small tap moves reuse a cached grid."""
    a_max = max(float(a_max), 1e-300)
    return float(1.25 ** np.ceil(np.log(a_max) / np.log(1.25)))


@lru_cache(maxsize=12)
def cached_grid(var_pre, var_post, a_cap, quad=DEFAULT_QUAD, step=0.25, band=12.0) -> DensityGrid:
    return DensityGrid(var_pre, var_post, a_cap, quad, step, band)
