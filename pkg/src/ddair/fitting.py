"""Fitting the auxiliary channel parameters to pilot symbols.

The search maximizes the pilot AIR. It runs in a normalized intensity
domain (received samples divided by their RMS) so step sizes and bounds
are scale free, and maps the result back at the end. Before the
derivative-free search, a maximum-likelihood refinement of log q(y|x)
with analytic gradients gives a cheap, usually much better starting
point; it is kept only when it raises the pilot AIR.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .channel import ImpulseResponse, PulseParams, build_impulse_response
from .constellation import Constellation, SymbolBlock
from .density import EPS, AuxChannelParams, QuadratureSpec, log_density_grad
from .trellis import RateEstimate, _check_received, estimate_air, pair_amplitudes

VAR_FLOOR = 1e-10
POST_VAR_REL = 1e-6  # post-detection variance floor relative to mean(y^2)
_GROUPS = ("taps", "mu_pre", "mu_post", "log_var")


@dataclass(frozen=True)
class ParamBounds:
    """Box constraints: |mu_pre| per component, |mu_post|, variance ranges, tap magnitude."""

    mu_pre_max: float
    mu_post_max: float
    var_pre_max: float
    var_post_max: float
    tap_max: float
    var_min: float = VAR_FLOOR
    var_post_min: float = VAR_FLOOR

    def scaled(self, c: float) -> "ParamBounds":
        r = math.sqrt(c)
        return ParamBounds(self.mu_pre_max * r, self.mu_post_max * c, self.var_pre_max * c,
                           self.var_post_max * c * c, self.tap_max * r, self.var_min,
                           max(self.var_post_min * c * c, VAR_FLOOR))


def default_bounds(received, h_init) -> ParamBounds:
    y = np.asarray(received, dtype=float)
    rms = float(np.sqrt(np.mean(y**2)))
    var = float(np.var(y))
    peak = float(np.max(np.abs(h_init))) if np.any(h_init) else math.sqrt(rms)
    # a vanishing post-detection variance turns the model into a hard edge at
    # mu_post that held-out samples can fall below, so keep it off the floor
    return ParamBounds(mu_pre_max=10 * math.sqrt(rms), mu_post_max=10 * rms,
                       var_pre_max=10 * math.sqrt(var), var_post_max=10 * var,
                       tap_max=10 * peak, var_post_min=max(VAR_FLOOR, POST_VAR_REL * rms * rms))


@dataclass(frozen=True)
class FitConfig:
    pilot_count: int = 5000
    L_target: int = 3
    max_iterations: int = 40
    tol: float = 1e-4
    restart_count: int = 3
    bounds: ParamBounds | None = None
    seed: int = 0
    prefit: bool = True
    jitter: float = 0.1
    density: str = "grid"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.L_target < 1 or self.L_target % 2 != 1:
            raise ValueError("L_target must be a positive odd number")
        if self.pilot_count < 1 or self.restart_count < 1 or self.max_iterations < 0:
            raise ValueError("pilot_count and restart_count must be >= 1, max_iterations >= 0")


@dataclass(frozen=True)
class FitResult:
    params: AuxChannelParams
    pilot_air: float
    trace: tuple
    initializer: dict
    converged: bool
    initial_air: float
    evaluations: int = 0
    pilot_ids: frozenset = field(default_factory=frozenset)

    def improving_steps(self, tol: float = 0.0) -> int:
        return int(np.sum(np.diff(self.trace) > tol))


# --- parameter vector ----------------------------------------------------------------------

def _pack(p: AuxChannelParams) -> np.ndarray:
    return np.concatenate([p.h.real, p.h.imag, p.mu_pre.real, p.mu_pre.imag, p.mu_post,
                           np.log(np.maximum(p.var_pre, VAR_FLOOR)),
                           np.log(np.maximum(p.var_post, VAR_FLOOR))])


def _unpack(theta, L) -> AuxChannelParams:
    h = theta[:L] + 1j * theta[L:2 * L]
    o = 2 * L
    return AuxChannelParams(h, theta[o:o + 2] + 1j * theta[o + 2:o + 4], theta[o + 4:o + 6],
                            np.exp(theta[o + 6:o + 8]), np.exp(theta[o + 8:o + 10]))


def _group_slices(L):
    o = 2 * L
    return {"taps": np.arange(0, o), "mu_pre": np.arange(o, o + 4),
            "mu_post": np.arange(o + 4, o + 6), "log_var": np.arange(o + 6, o + 10)}


def _box(bounds: ParamBounds, L):
    lo = np.concatenate([np.full(2 * L, -bounds.tap_max), np.full(4, -bounds.mu_pre_max),
                         np.full(2, -bounds.mu_post_max),
                         np.full(2, math.log(bounds.var_min)), np.full(2, math.log(bounds.var_post_min))])
    hi = np.concatenate([np.full(2 * L, bounds.tap_max), np.full(4, bounds.mu_pre_max),
                         np.full(2, bounds.mu_post_max),
                         np.full(2, math.log(max(bounds.var_pre_max, bounds.var_min))),
                         np.full(2, math.log(max(bounds.var_post_max, bounds.var_post_min)))])
    return lo, hi


# --- initializer ---------------------------------------------------------------------------

def _prior_taps(physical_prior, L):
    if physical_prior is None:
        # a delta would leave the between-symbol taps at a zero-gradient saddle
        return _default_prior().truncated(L), "raised_cosine_b2b"
    if isinstance(physical_prior, ImpulseResponse):
        return physical_prior.truncated(L), "impulse_response"
    taps = np.asarray(physical_prior, dtype=complex)
    return ImpulseResponse(taps).truncated(L), "taps"


@lru_cache(maxsize=1)
def _default_prior() -> ImpulseResponse:
    return build_impulse_response(PulseParams())


def initialize_params(pilots, received, L: int, physical_prior=None,
                      bounds: ParamBounds | None = None) -> AuxChannelParams:
    """Moment-based starting point.

    Taps: the truncated physical response scaled by a least-squares match of
    predicted to received intensity. Variances: per phase, the squared
    residual is regressed on the predicted intensity a, using
    Var(y | a) = var_pre^2 + var_post + 2 var_pre a.
    """
    x = np.asarray(getattr(pilots, "symbols", pilots))
    y = _check_received(received, len(x))
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("degenerate pilots: constant symbols or constant received samples")
    h0, _ = _prior_taps(physical_prior, L)
    s0 = pair_amplitudes(x, AuxChannelParams(h0))
    a0 = np.empty(2 * len(x))
    a0[0::2] = np.abs(s0[0]) ** 2
    a0[1::2] = np.abs(s0[1]) ** 2
    ph = np.arange(2 * len(x)) % 2
    A = np.column_stack([a0, ph == 0, ph == 1]).astype(float)
    (c, b0, b1), *_ = np.linalg.lstsq(A, y, rcond=None)
    if not c > 0:
        raise ValueError("degenerate pilots: received intensity does not follow the prior")
    h = h0 * math.sqrt(c)
    a = c * a0
    r = y - a - np.where(ph == 0, b0, b1)
    var_pre, var_post, mu_post = np.zeros(2), np.zeros(2), np.zeros(2)
    for p, b in ((0, b0), (1, b1)):
        ap, rp = a[ph == p], r[ph == p]
        if np.ptp(ap) > 1e-9 * max(1.0, np.max(ap)):
            slope, icpt = np.polyfit(ap, rp**2, 1)
            v1 = max(slope / 2, 0.0)
            v2 = max(icpt - v1**2, 0.0)
        else:
            v1, v2 = 0.0, float(np.mean(rp**2))
        var_pre[p], var_post[p] = max(v1, VAR_FLOOR), max(v2, VAR_FLOOR)
        mu_post[p] = b - v1
    # zero-field positions: every symbol of the window at level 0
    m = (L - 1) // 2
    if np.any(x == 0):
        xp = np.concatenate([np.zeros(m // 2), x, np.zeros(m - m // 2)])
        win = np.lib.stride_tricks.sliding_window_view(xp, m + 1)
        zero = np.all(win == 0, axis=1)
        if zero.sum() >= 10:
            for p in (0, 1):
                mu_post[p] = float(np.mean(y[p::2][zero])) - var_pre[p]
    params = AuxChannelParams(h, (0j, 0j), mu_post, var_pre, var_post)
    if bounds is not None:
        params = clip_params(params, bounds)
    return params


def clip_params(p: AuxChannelParams, bounds: ParamBounds) -> AuxChannelParams:
    lo, hi = _box(bounds, p.L)
    return _unpack(np.clip(_pack(p), lo, hi), p.L)


# --- maximum-likelihood refinement ---------------------------------------------------------

ML_QUAD = QuadratureSpec(nodes=32)  # starting point only; the AIR search uses the full rule

def ml_refine(pilots, received, params: AuxChannelParams, bounds: ParamBounds,
              max_iter: int = 60, max_symbols: int = 1500) -> AuxChannelParams:
    """Maximize the per-sample auxiliary log-likelihood log q(y|x) with L-BFGS-B."""
    x = np.asarray(getattr(pilots, "symbols", pilots), dtype=float)[:max_symbols]
    y = np.asarray(received, dtype=float)[:2 * len(x)]
    n, L = len(x), params.L
    # W[k, j]: symbol multiplying tap j at sample k
    c = (L - 1) // 2
    k = np.arange(2 * n)[:, None]
    j = np.arange(L)[None, :]
    src = k + c - j
    ok = (src >= 0) & (src < 2 * n) & (src % 2 == 0)
    W = np.where(ok, x[np.clip(src // 2, 0, n - 1)], 0.0)
    ph = np.arange(2 * n) % 2
    masks = [ph == 0, ph == 1]
    lo, hi = _box(bounds, L)

    def objective(theta):
        p = _unpack(theta, L)
        s = W @ p.h + p.mu_pre[ph]
        a = s.real**2 + s.imag**2
        total = 0.0
        g = np.zeros_like(theta)
        gs = np.zeros(2 * n, dtype=complex)  # dF/dRe s + i dF/dIm s
        o = 2 * L
        for q in (0, 1):
            mq = masks[q]
            F, (gu, ga, gv1, gv2) = log_density_grad(y[mq] - p.mu_post[q], a[mq],
                                                     p.var_pre[q], p.var_post[q], ML_QUAD)
            total += F.sum()
            gs[mq] = 2 * ga * s[mq]
            g[o + q] = np.sum(gs[mq].real)
            g[o + 2 + q] = np.sum(gs[mq].imag)
            g[o + 4 + q] = -np.sum(gu)
            g[o + 6 + q] = np.sum(gv1) * p.var_pre[q]
            g[o + 8 + q] = np.sum(gv2) * p.var_post[q]
        g[:L] = W.T @ gs.real
        g[L:o] = W.T @ gs.imag
        return -total / n, -g / n

    theta0 = np.clip(_pack(params), lo, hi)
    if np.any(params.var_pre < EPS) or np.any(params.var_post < EPS):
        theta0[2 * L + 6:] = np.maximum(theta0[2 * L + 6:], math.log(10 * EPS))
    with np.errstate(all="ignore"):
        res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                       bounds=list(zip(lo, hi)), options={"maxiter": max_iter})
    if not np.all(np.isfinite(res.x)):
        return params
    return _unpack(res.x, L)


# --- pattern search on the pilot AIR -------------------------------------------------------

class _Objective:
    def __init__(self, y, x, constellation, density):
        self.y, self.x, self.c, self.density = y, x, constellation, density
        self.cache = {}
        self.calls = 0

    def __call__(self, theta, L):
        key = theta.tobytes()
        if key not in self.cache:
            self.calls += 1
            p = _unpack(theta, L)
            try:
                r = estimate_air(self.y, self.x, p, self.c, density=self.density)
                val = r.air if np.isfinite(r.air) else -np.inf
            except (ValueError, FloatingPointError):
                val = -np.inf
            self.cache[key] = val
        return self.cache[key]


def _initial_steps(theta, L):
    taps = theta[:2 * L]
    peak = max(float(np.max(np.abs(taps))), 1e-3)
    return {"taps": 0.1 * peak, "mu_pre": 0.1 * peak, "mu_post": 0.05, "log_var": 0.5}


def pattern_search(objective, theta, L, bounds: ParamBounds, max_iterations, tol,
                   shrink_levels: int = 6):
    """Coordinate-group compass search accepting only strict improvements.

    Returns (theta, best, trace, converged); trace[0] is the starting value
    and trace[k] the value after sweep k.
    """
    lo, hi = _box(bounds, L)
    theta = np.clip(theta, lo, hi)
    best = objective(theta, L)
    trace = [best]
    steps = _initial_steps(theta, L)
    min_steps = {g: s / 2**shrink_levels for g, s in steps.items()}
    groups = _group_slices(L)
    converged = False
    quiet = 0
    for _ in range(max_iterations):
        start = best
        for g in _GROUPS:
            moved = False
            for i in groups[g]:
                for sign in (1.0, -1.0):
                    cand = theta.copy()
                    cand[i] = np.clip(cand[i] + sign * steps[g], lo[i], hi[i])
                    if cand[i] == theta[i]:
                        continue
                    f = objective(cand, L)
                    if f > best:
                        theta, best, moved = cand, f, True
                        break
            steps[g] = steps[g] * (1.5 if moved else 0.5)
        trace.append(best)
        quiet = quiet + 1 if best - start < tol else 0
        if quiet >= 2 or all(steps[g] < min_steps[g] for g in _GROUPS):
            converged = True
            break
    return theta, best, trace, converged


def _jittered(theta, L, rng, jitter):
    t = theta.copy()
    t[:2 * L] *= 1 + jitter * rng.standard_normal(2 * L)
    t[2 * L + 6:] += jitter * 3 * rng.standard_normal(4)
    return t


def fit(pilots, received, config: FitConfig = FitConfig(), constellation: Constellation | None = None,
        physical_prior=None, init: AuxChannelParams | None = None, block_ids=()) -> FitResult:
    """Fit auxiliary parameters on the first ``pilot_count`` symbols."""
    if isinstance(pilots, SymbolBlock):
        constellation = constellation or pilots.constellation
        x = np.asarray(pilots.symbols)
    else:
        x = np.asarray(pilots)
    if constellation is None:
        raise ValueError("constellation required")
    y = _check_received(received, len(x))
    npil = min(config.pilot_count, len(x))
    x, y = x[:npil], y[:2 * npil]
    L = config.L_target
    floor = 10 * constellation.order ** ((L - 1) // 2 + 1)
    if npil < floor:
        warnings.warn(f"{npil} pilots is below the recommended floor of {floor} for L={L}",
                      stacklevel=2)

    scale = 1.0 / math.sqrt(float(np.mean(y**2)))
    ys = y * scale
    if init is None:
        start = initialize_params(x, ys, L, physical_prior)
        origin = {"source": "moments", "prior": _prior_taps(physical_prior, L)[1]}
    else:
        start = init.scaled(scale)
        if start.L < L:
            start = start.embed(L)
        elif start.L > L:
            raise ValueError("initializer has more taps than L_target")
        origin = {"source": "given", "L": init.L}
    bounds = (config.bounds.scaled(scale) if config.bounds is not None
              else default_bounds(ys, start.h))
    start = clip_params(start, bounds)
    objective = _Objective(ys, x, constellation, config.density)
    theta0 = _pack(start)
    initial_air = objective(theta0, L)

    runs = []
    for r in range(config.restart_count):
        theta = theta0 if r == 0 else _jittered(theta0, L, np.random.default_rng([config.seed, r]),
                                                config.jitter)
        theta = np.clip(theta, *_box(bounds, L))
        prefit_used = False
        if config.prefit:
            cand = ml_refine(x, ys, _unpack(theta, L), bounds)
            ct = np.clip(_pack(cand), *_box(bounds, L))
            if objective(ct, L) > objective(theta, L):
                theta, prefit_used = ct, True
        theta, best, trace, conv = pattern_search(objective, theta, L, bounds,
                                                  config.max_iterations, config.tol)
        energy = float(np.sum(theta[:2 * L] ** 2))
        runs.append((best, energy, theta, trace, conv, r, prefit_used))

    top = max(b for b, *_ in runs)
    # near-ties go to the most parsimonious taps
    tied = [run for run in runs if run[0] >= top - config.tol]
    best, _, theta, trace, conv, r, prefit_used = min(tied, key=lambda run: (run[1], run[5]))
    if best < initial_air:
        # cannot happen for restart 0, kept as a guard for the documented invariant
        theta, best, trace, conv = theta0, initial_air, [initial_air], False
    params = _unpack(theta, L).scaled(1.0 / scale)
    origin.update(restart=r, prefit=prefit_used, scale=scale)
    return FitResult(params=params, pilot_air=best, trace=tuple(trace), initializer=origin,
                     converged=conv, initial_air=initial_air, evaluations=objective.calls,
                     pilot_ids=frozenset(block_ids))


def cross_validate(params, holdout_received, holdout_symbols, constellation=None,
                   holdout_ids=(), density: str = "auto") -> RateEstimate:
    """AIR of fitted parameters on held-out data."""
    pilot_ids = frozenset()
    if isinstance(params, FitResult):
        pilot_ids = params.pilot_ids
        params = params.params
    overlap = pilot_ids & frozenset(holdout_ids)
    if overlap:
        raise ValueError(f"holdout overlaps the pilot blocks: {sorted(overlap)[:5]}")
    if isinstance(holdout_symbols, SymbolBlock):
        constellation = constellation or holdout_symbols.constellation
    if len(np.asarray(getattr(holdout_symbols, "symbols", holdout_symbols))) == 0:
        raise ValueError("empty holdout")
    return estimate_air(holdout_received, holdout_symbols, params, constellation, density=density,
                        provenance={"role": "holdout"})
