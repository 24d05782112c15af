"""Compiled inner loops: grid interpolation of log-densities and the forward recursion."""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True, inline="always")
def _lagrange4(t, w):
    w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0
    w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0
    w[3] = (t + 1.0) * t * (t - 1.0) / 6.0


@njit(cache=True)
def _interp_one(grid, h, band, hd, ta, d, wr, wc):
    """Value at row coordinate ta and ridge offset d.

    Grid row 0 is the ghost row ta = -h, column 0 is d = -band - hd.
    Returns NaN when ta lies outside the tabulated rows.
    """
    nrows = grid.shape[0] - 3
    ncols = grid.shape[1] - 3
    x = ta / h
    i = int(math.floor(x))
    if i < 0 or i > nrows - 1:
        return np.nan
    _lagrange4(x - i, wr)
    extra = 0.0
    dc = d
    if dc > band:
        extra = -0.5 * (d * d - band * band)
        dc = band
    elif dc < -band:
        extra = -0.5 * (d * d - band * band)
        dc = -band
    yv = (dc + band) / hd
    j = int(math.floor(yv))
    if j > ncols - 2:
        j = ncols - 2
    _lagrange4(yv - j, wc)
    acc = 0.0
    for p in range(4):
        row = 0.0
        for q in range(4):
            row += wc[q] * grid[i + p, j + q]
        acc += wr[p] * row
    return acc + extra


@njit(cache=True)
def grid_matrix(grid, h, band, hd, rho, ta, tu, out):
    """out[t, b] = F(tu[t], branch b) from row coordinate rho[b] and ridge position ta[b]."""
    wr = np.empty(4)
    wc = np.empty(4)
    for t in range(tu.shape[0]):
        for b in range(ta.shape[0]):
            out[t, b] = _interp_one(grid, h, band, hd, rho[b], tu[t] - ta[b], wr, wc)


@njit(cache=True)
def grid_pairs(grid, h, band, hd, rho, ta, tu, out):
    wr = np.empty(4)
    wc = np.empty(4)
    for k in range(ta.shape[0]):
        out[k] = _interp_one(grid, h, band, hd, rho[k], tu[k] - ta[k], wr, wc)


@njit(cache=True)
def forward_steps(alpha, D, prior, Q, scales):
    """Run the normalized log-domain forward recursion over the rows of D.

    alpha: (S,) log state metric, normalized, updated in place.
    D: (T, S*Q) branch log-densities, branch b = state*Q + input.
    prior: (T, Q) log input probabilities.
    scales: (T,) receives the per-step log normalizers.
    """
    S = alpha.shape[0]
    T = D.shape[0]
    new = np.empty(S)
    vals = np.empty(Q)
    R = S // Q
    for t in range(T):
        if S == 1:
            mx = NEG_INF
            for x in range(Q):
                v = alpha[0] + D[t, x] + prior[t, x]
                vals[x] = v
                if v > mx:
                    mx = v
            if mx == NEG_INF:
                scales[t] = NEG_INF
                continue
            acc = 0.0
            for x in range(Q):
                acc += math.exp(vals[x] - mx)
            scales[t] = mx + math.log(acc)
            alpha[0] = 0.0
            continue
        gmx = NEG_INF
        for ns in range(S):
            x = ns % Q
            r = ns // Q
            pr = prior[t, x]
            mx = NEG_INF
            for k in range(Q):
                st = k * R + r
                v = alpha[st] + D[t, st * Q + x] + pr
                vals[k] = v
                if v > mx:
                    mx = v
            if mx == NEG_INF:
                new[ns] = NEG_INF
                continue
            acc = 0.0
            for k in range(Q):
                acc += math.exp(vals[k] - mx)
            v = mx + math.log(acc)
            new[ns] = v
            if v > gmx:
                gmx = v
        if gmx == NEG_INF:
            scales[t] = NEG_INF
            continue
        acc = 0.0
        for ns in range(S):
            acc += math.exp(new[ns] - gmx)
        c = gmx + math.log(acc)
        scales[t] = c
        for ns in range(S):
            alpha[ns] = new[ns] - c


@njit(cache=True)
def combine_phases(F0, inv0, F1, inv1, out):
    """out[t, b] = F0[t, inv0[b]] + F1[t, inv1[b]]."""
    for t in range(out.shape[0]):
        for b in range(out.shape[1]):
            out[t, b] = F0[t, inv0[b]] + F1[t, inv1[b]]
