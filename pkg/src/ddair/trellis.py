"""Achievable information rates by mismatched decoding over the auxiliary trellis.

The trellis state holds the last m = (L-1)/2 symbols as a base-Q integer,
oldest symbol most significant. Step t introduces symbol X_t; the branch
(state, X_t) carries the window X_{t-m} .. X_t, which is exactly the window
of the sample pair of symbol i = t - ceil(m/2). Windows reaching outside
the block are evaluated with those positions zeroed, and the trellis runs
ceil(m/2) dummy steps past the last symbol so every pair is emitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .constellation import Constellation, SymbolBlock
from .density import (DEFAULT_BRANCH_BUDGET, DEFAULT_QUAD, EPS, AuxChannelParams,
                      QuadratureSpec, branch_table, check_budget, log_density)
from .grid import cached_grid, estimated_size, quantize_up

LN2 = math.log(2.0)
# D-matrix entries per forward chunk
_CHUNK_ENTRIES = 1 << 22
_BRUTE_FORCE_LIMIT = 10**6


@dataclass(frozen=True)
class TrellisSpec:
    Q: int
    memory: int

    def __post_init__(self):
        if self.memory < 0 or self.Q < 2:
            raise ValueError("need Q >= 2 and memory >= 0")

    @classmethod
    def from_L(cls, Q: int, L: int) -> "TrellisSpec":
        if L < 1 or L % 2 != 1:
            raise ValueError(f"L must be odd and positive, got {L}")
        return cls(Q, (L - 1) // 2)

    @property
    def state_count(self) -> int:
        return self.Q**self.memory

    @property
    def branch_count(self) -> int:
        return self.Q ** (self.memory + 1)

    @property
    def lead(self) -> int:
        """Steps before the first sample pair is emitted."""
        return (self.memory + 1) // 2

    def encode(self, symbols_idx) -> int:
        """State index of a length-m index sequence (oldest first)."""
        s = 0
        for x in symbols_idx:
            s = s * self.Q + int(x)
        return s


@dataclass(frozen=True)
class RateEstimate:
    air: float
    n: int
    L: int
    log_q_joint: float
    log_q_marginal: float
    provenance: dict = field(default_factory=dict)

    @property
    def negative(self) -> bool:
        """Raw estimate below zero, a sign of gross model mismatch. Never clipped."""
        return self.air < 0


# --- inputs ------------------------------------------------------------------------------

def _as_points(symbols, constellation: Constellation | None):
    if isinstance(symbols, SymbolBlock):
        return np.asarray(symbols.symbols), symbols.constellation
    return np.asarray(symbols), constellation


def _check_received(received, n=None):
    y = np.asarray(getattr(received, "samples", received), dtype=float).ravel()
    if len(y) % 2:
        raise ValueError("received block must hold 2 samples per symbol")
    if n is not None and len(y) != 2 * n:
        raise ValueError(f"length mismatch: {len(y)} samples for {n} symbols")
    if not np.all(np.isfinite(y)):
        raise ValueError("received samples must be finite")
    return y


def _window_mask(i: int, n: int, m: int) -> tuple:
    lo = i - m // 2
    return tuple(0 <= lo + r < n for r in range(m + 1))


# --- density evaluation ------------------------------------------------------------------

class _PhaseEvaluator:
    """log p(y - mu_post | a) for one phase, exact or via the tabulated grid."""

    def __init__(self, v1, v2, quad, grid=None):
        self.v1, self.v2, self.quad, self.grid = v1, v2, quad, grid

    @property
    def mode(self):
        return "grid" if self.grid is not None else "exact"

    def matrix(self, u, a):
        if self.grid is None:
            return log_density(u[:, None], a[None, :], self.v1, self.v2, self.quad)
        out = self.grid.matrix(u, a)
        bad = np.isnan(out)
        if bad.any():
            rows, cols = np.nonzero(bad)
            out[bad] = log_density(u[rows], a[cols], self.v1, self.v2, self.quad)
        return out

    def pairs(self, u, a):
        if self.grid is None:
            return log_density(u, a, self.v1, self.v2, self.quad)
        out = self.grid.pairs(u, a)
        bad = np.isnan(out)
        if bad.any():
            out[bad] = log_density(u[bad], a[bad], self.v1, self.v2, self.quad)
        return out


def make_evaluators(params: AuxChannelParams, constellation: Constellation, n: int,
                    density: str = "auto", quad: QuadratureSpec = DEFAULT_QUAD,
                    budget: int = DEFAULT_BRANCH_BUDGET):
    """Pick exact or tabulated evaluation per phase.

    "auto" tabulates when the trellis needs several times more density
    values than the table holds.
    """
    if density not in ("auto", "exact", "grid"):
        raise ValueError(f"unknown density mode {density!r}")
    check_budget(constellation.order, params.memory, budget)
    table = branch_table(constellation, params, budget)
    out = []
    for p in (0, 1):
        v1, v2 = float(params.var_pre[p]), float(params.var_post[p])
        use_grid = density != "exact" and v1 >= EPS and v2 >= EPS
        if use_grid:
            a_cap = quantize_up(1.05 * float(np.max(table.a[p])) + 1e-12)
            if density == "auto":
                work = n * len(np.unique(table.a[p]))
                use_grid = work > 3 * estimated_size(v1, v2, a_cap)
        grid = cached_grid(v1, v2, a_cap, quad) if use_grid else None
        out.append(_PhaseEvaluator(v1, v2, quad, grid))
    return out


# --- log q(y | x) ------------------------------------------------------------------------

def pair_amplitudes(points, params: AuxChannelParams) -> np.ndarray:
    """(2, n) noiseless auxiliary samples (including mu_pre) of the true windows."""
    x = np.asarray(points, dtype=complex)
    m = params.memory
    xp = np.concatenate([np.zeros(m // 2), x, np.zeros(m - m // 2)])
    windows = np.lib.stride_tricks.sliding_window_view(xp, m + 1)
    return params.window_coefficients() @ windows.T + params.mu_pre[:, None]


def log_conditional(received, symbols, params: AuxChannelParams, constellation=None,
                    quad: QuadratureSpec = DEFAULT_QUAD, evaluators=None) -> float:
    """log q(y | x); positions outside the block count as zero symbols."""
    x, _ = _as_points(symbols, constellation)
    y = _check_received(received, len(x))
    s = pair_amplitudes(x, params)
    a = s.real**2 + s.imag**2
    terms = []
    for p in (0, 1):
        u = y[p::2] - params.mu_post[p]
        if evaluators is None:
            terms.append(log_density(u, a[p], params.var_pre[p], params.var_post[p], quad))
        else:
            terms.append(evaluators[p].pairs(u, a[p]))
    return math.fsum(np.concatenate(terms))


# --- log q(y) by the forward recursion ---------------------------------------------------

def _prior_rows(t0, t1, n, Q, known):
    pr = np.full((t1 - t0, Q), -math.log(Q))
    if known is not None:
        for t in range(t0, min(t1, n)):
            k = known[t]
            if k >= 0:
                pr[t - t0] = -np.inf
                pr[t - t0, k] = 0.0
    return pr


def forward_log_marginal(received, params: AuxChannelParams, constellation: Constellation,
                         known=None, density: str = "auto",
                         quad: QuadratureSpec = DEFAULT_QUAD,
                         budget: int = DEFAULT_BRANCH_BUDGET, evaluators=None) -> float:
    """log q(y) = log sum_x P(x) q(y|x) with i.i.d. uniform inputs.

    ``known`` optionally pins symbols: an int array of constellation indices
    with -1 for free positions.
    """
    y = _check_received(received)
    n = len(y) // 2
    if n == 0:
        raise ValueError("empty block")
    spec = TrellisSpec.from_L(constellation.order, params.L)
    check_budget(spec.Q, spec.memory, budget)
    if known is not None:
        known = np.asarray(known, dtype=np.int64)
        if len(known) != n:
            raise ValueError("known-symbol mask must have one entry per symbol")
        if np.any(known >= spec.Q):
            raise ValueError("known symbol index out of range")
    if evaluators is None:
        evaluators = make_evaluators(params, constellation, n, density, quad, budget)
    m, Q, B, lead = spec.memory, spec.Q, spec.branch_count, spec.lead

    # pairs grouped by window mask; interior pairs share the full table
    tables = {}

    def table_for(mask):
        if mask not in tables:
            t = branch_table(constellation, params, budget, mask=np.array(mask))
            uniq = [np.unique(t.a[p], return_inverse=True) for p in (0, 1)]
            uniq = [(ua, inv.astype(np.int64)) for ua, inv in uniq]
            tables[mask] = uniq
        return tables[mask]

    u_all = [y[p::2] - params.mu_post[p] for p in (0, 1)]
    full = tuple([True] * (m + 1))

    def branch_rows(i0, i1):
        """(i1 - i0, B) pair log-densities for pairs i0..i1-1."""
        D = np.empty((i1 - i0, B))
        i = i0
        while i < i1:
            mask = _window_mask(i, n, m)
            j = i + 1
            while j < i1 and _window_mask(j, n, m) == mask:
                j += 1
            (ua0, inv0), (ua1, inv1) = table_for(mask)
            F0 = evaluators[0].matrix(u_all[0][i:j], ua0)
            F1 = evaluators[1].matrix(u_all[1][i:j], ua1)
            _kernels.combine_phases(F0, inv0, F1, inv1, D[i - i0:j - i0])
            i = j
        return D

    table_for(full)
    steps = n + lead
    alpha = np.full(spec.state_count, -math.log(spec.state_count))
    scales = np.empty(steps)
    chunk = max(1, _CHUNK_ENTRIES // B)
    for t0 in range(0, steps, chunk):
        t1 = min(steps, t0 + chunk)
        D = np.zeros((t1 - t0, B))
        i0, i1 = max(t0 - lead, 0), t1 - lead
        if i1 > i0:
            D[i0 + lead - t0:] = branch_rows(i0, i1)
        prior = _prior_rows(t0, t1, n, Q, known)
        _kernels.forward_steps(alpha, D, prior, Q, scales[t0:t1])
    return math.fsum(scales)


# --- brute-force oracle ------------------------------------------------------------------

def toeplitz_matrix(h, n: int) -> np.ndarray:
    """(2n, n) map from symbols to noiseless samples, zero padded at both ends."""
    h = np.asarray(h, dtype=complex)
    c = (len(h) - 1) // 2
    k = np.arange(2 * n)[:, None]
    l = np.arange(n)[None, :]
    j = k + c - 2 * l
    ok = (j >= 0) & (j < len(h))
    return np.where(ok, h[np.clip(j, 0, len(h) - 1)], 0)


def brute_force_log_marginal(received, params: AuxChannelParams, constellation: Constellation,
                             quad: QuadratureSpec = DEFAULT_QUAD, chunk: int = 4096) -> float:
    """Exhaustive log sum over all Q^n sequences; small instances only."""
    y = _check_received(received)
    n = len(y) // 2
    Q = constellation.order
    if Q**n > _BRUTE_FORCE_LIMIT:
        raise ValueError(f"instance too large for enumeration: Q^n = {Q}^{n}")
    H = toeplitz_matrix(params.h, n)
    phase = np.arange(2 * n) % 2
    mu_pre = params.mu_pre[phase]
    u = y - params.mu_post[phase]
    v1, v2 = params.var_pre[phase], params.var_post[phase]
    total = Q**n
    parts = []
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        digits = (idx[:, None] // Q ** np.arange(n - 1, -1, -1)[None, :]) % Q
        s = constellation.points[digits] @ H.T + mu_pre
        a = s.real**2 + s.imag**2
        ll = np.zeros(len(idx))
        for k in range(2 * n):
            ua, inv = np.unique(a[:, k], return_inverse=True)
            ll += log_density(np.full(len(ua), u[k]), ua, v1[k], v2[k], quad)[inv]
        parts.append(ll)
    return float(logsumexp(np.concatenate(parts))) - n * math.log(Q)


# --- AIR ---------------------------------------------------------------------------------

def border_mask(indices, memory: int) -> np.ndarray:
    """Known-pilot convention: the first and last m symbols are pinned."""
    idx = np.asarray(indices, dtype=np.int64)
    known = np.full(len(idx), -1, dtype=np.int64)
    if memory > 0:
        known[:memory] = idx[:memory]
        known[-memory:] = idx[-memory:]
    return known


def estimate_air(received, symbols, params: AuxChannelParams, constellation=None,
                 known_borders: bool = True, density: str = "auto",
                 quad: QuadratureSpec = DEFAULT_QUAD, budget: int = DEFAULT_BRANCH_BUDGET,
                 provenance: dict | None = None) -> RateEstimate:
    """AIR in bits per symbol, (log q(y|x) - log q(y)) / (n ln 2)."""
    x, constellation = _as_points(symbols, constellation)
    if constellation is None:
        raise ValueError("constellation required")
    n = len(x)
    if n == 0:
        raise ValueError("empty block")
    y = _check_received(received, n)
    idx = constellation.index_of(x)
    evaluators = make_evaluators(params, constellation, n, density, quad, budget)
    known = border_mask(idx, params.memory) if known_borders else None
    joint = log_conditional(y, x, params, quad=quad, evaluators=evaluators)
    marginal = forward_log_marginal(y, params, constellation, known=known, quad=quad,
                                    budget=budget, evaluators=evaluators)
    prov = {"density": [e.mode for e in evaluators], "known_borders": known_borders}
    if provenance:
        prov.update(provenance)
    air = (joint - marginal) / (n * LN2)
    return RateEstimate(air=air, n=n, L=params.L, log_q_joint=joint, log_q_marginal=marginal,
                        provenance=prov)


def sample_auxiliary(symbols, params: AuxChannelParams, seed=None) -> np.ndarray:
    """Draw received samples from the auxiliary model itself (planted-model data)."""
    x, _ = _as_points(symbols, None)
    rng = np.random.default_rng(seed)
    s = pair_amplitudes(x, params)
    n = len(x)
    out = np.empty(2 * n)
    for p in (0, 1):
        sd1 = math.sqrt(params.var_pre[p] / 2)
        z = s[p] + sd1 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        out[p::2] = z.real**2 + z.imag**2 + params.mu_post[p] \
            + math.sqrt(params.var_post[p]) * rng.standard_normal(n)
    return out
