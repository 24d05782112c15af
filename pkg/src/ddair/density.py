"""Log-likelihood of one received sample under the auxiliary channel

    y = |s + mu_pre + N1|^2 + mu_post + N2,

i.e. a scaled noncentral chi-square (2 d.o.f.) convolved with a Gaussian.
Everything is evaluated in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import i0e, i1e, logsumexp

from .constellation import Constellation

EPS = 1e-12
LOG_2PI = np.log(2 * np.pi)
DEFAULT_BRANCH_BUDGET = 8**6


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Legendre rule on an interval around the integrand's mode.

    The interval is widened until the log-integrand has dropped by
    ``coverage**2 / 2`` on both sides (or hits w = 0).
    """

    nodes: int = 96
    coverage: float = 8.0

    def __post_init__(self):
        if self.nodes < 16:
            raise ValueError("quadrature needs at least 16 nodes")
        if self.coverage < 6:
            raise ValueError("coverage factor must be >= 6")

    def rule(self):
        return _leggauss(self.nodes)


DEFAULT_QUAD = QuadratureSpec()


@lru_cache(maxsize=16)
def _leggauss(k):
    x, w = np.polynomial.legendre.leggauss(k)
    return x, np.log(w)


@dataclass(frozen=True, eq=False)
class AuxChannelParams:
    """Fitted auxiliary model: L-tap response at T/2 spacing plus per-phase
    bias and noise parameters (index 0 on-symbol, 1 between-symbol)."""

    h: np.ndarray
    mu_pre: np.ndarray = (0j, 0j)
    mu_post: np.ndarray = (0.0, 0.0)
    var_pre: np.ndarray = (0.0, 0.0)
    var_post: np.ndarray = (0.0, 0.0)

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=complex))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "mu_pre", np.asarray(self.mu_pre, dtype=complex).reshape(2))
        for name in ("mu_post", "var_pre", "var_post"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(2))
        if len(h) % 2 != 1:
            raise ValueError(f"auxiliary response needs an odd tap count, got L={len(h)}")
        if np.any(self.var_pre < 0) or np.any(self.var_post < 0):
            raise ValueError("variances must be >= 0")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(self.mu_pre))
                and np.all(np.isfinite(self.mu_post)) and np.all(np.isfinite(self.var_pre))
                and np.all(np.isfinite(self.var_post))):
            raise ValueError("parameters must be finite")

    @property
    def L(self) -> int:
        return len(self.h)

    @property
    def memory(self) -> int:
        return (self.L - 1) // 2

    def replace(self, **changes) -> "AuxChannelParams":
        kw = dict(h=self.h, mu_pre=self.mu_pre, mu_post=self.mu_post,
                  var_pre=self.var_pre, var_post=self.var_post)
        kw.update(changes)
        return AuxChannelParams(**kw)

    def embed(self, L: int) -> "AuxChannelParams":
        """Zero-pad the taps symmetrically to a longer odd length."""
        if L < self.L or L % 2 != 1:
            raise ValueError("can only embed into a longer odd length")
        pad = (L - self.L) // 2
        return self.replace(h=np.pad(self.h, pad))

    def scaled(self, c: float) -> "AuxChannelParams":
        """Parameters describing the same channel with intensities multiplied by c."""
        r = np.sqrt(c)
        return self.replace(h=self.h * r, mu_pre=self.mu_pre * r, mu_post=self.mu_post * c,
                            var_pre=self.var_pre * c, var_post=self.var_post * c**2)

    def window_coefficients(self) -> np.ndarray:
        """(2, m+1) coefficients mapping a symbol window to the two noiseless samples.

        Window position r holds symbol i + r - m//2 for the sample pair of symbol i.
        """
        m = self.memory
        a0 = m // 2
        coef = np.zeros((2, m + 1), dtype=complex)
        for p in (0, 1):
            for r in range(m + 1):
                j = m + p - 2 * (r - a0)
                if 0 <= j < self.L:
                    coef[p, r] = self.h[j]
        return coef

    def isclose(self, other, rtol=1e-12, atol=0.0) -> bool:
        return all(np.allclose(getattr(self, k), getattr(other, k), rtol=rtol, atol=atol)
                   for k in ("h", "mu_pre", "mu_post", "var_pre", "var_post")) and self.L == other.L


# --- noncentral chi-square intensity law -------------------------------------------------

def noncentral_intensity_logpdf(w, noncentrality, var) -> np.ndarray:
    """log density of |s + N1|^2 with |s|^2 = noncentrality and E|N1|^2 = var."""
    w = np.asarray(w, dtype=float)
    a = np.asarray(noncentrality, dtype=float)
    sw = np.sqrt(np.maximum(w, 0.0))
    sa = np.sqrt(a)
    z = 2.0 * sw * sa / var
    out = -((sw - sa) ** 2) / var - np.log(var) + np.log(i0e(z))
    return np.where(w < 0, -np.inf, out)


def _bessel_ratio_terms(z):
    """q = I1(z) / (z I0(z)) and q'(z)/z, both stable near z = 0."""
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    R = i1e(zs) / i0e(zs)
    q = np.where(small, 0.5 - z**2 / 16, R / zs)
    dq = np.where(small, -1.0 / 8 + z**2 / 24, (zs - 2 * R - R * R * zs) / zs**3)
    return q, dq


def _nc_derivs(w, a, v1):
    """First and second w-derivative of the noncentral log density."""
    z = 2.0 * np.sqrt(np.maximum(w, 0.0) * a) / v1
    q, dq = _bessel_ratio_terms(z)
    g1 = -1.0 / v1 + 2.0 * a * q / v1**2
    g2 = 4.0 * a**2 * dq / v1**4
    return g1, g2


def _log_integrand(w, u, a, v1, v2):
    return (noncentral_intensity_logpdf(w, a, v1)
            - (u - w) ** 2 / (2 * v2) - 0.5 * (LOG_2PI + np.log(v2)))


def _integrand_derivs(w, u, a, v1, v2):
    g1, g2 = _nc_derivs(w, a, v1)
    return g1 + (u - w) / v2, g2 - 1.0 / v2


def _find_mode(u, a, v1, v2, iters=60):
    """Maximizer of the (log-concave) integrand over w >= 0 by safeguarded Newton."""
    m_nc = a + v1
    v_nc = v1 * v1 + 2 * a * v1
    w = np.maximum((m_nc / v_nc + u / v2) / (1 / v_nc + 1 / v2), 0.0)
    lo = np.zeros_like(w)
    hi = np.maximum(np.maximum(u, m_nc), 0.0) + 1e-300
    g1_0, _ = _integrand_derivs(lo, u, a, v1, v2)
    at_zero = g1_0 <= 0
    w = np.where(at_zero, 0.0, np.clip(w, lo, hi))
    active = ~at_zero
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        wi, ui, ai = w[idx], u[idx], a[idx]
        g1, g2 = _integrand_derivs(wi, ui, ai, v1, v2)
        pos = g1 > 0
        lo[idx] = np.where(pos, wi, lo[idx])
        hi[idx] = np.where(pos, hi[idx], wi)
        step = -g1 / g2
        cand = wi + step
        bad = (cand <= lo[idx]) | (cand >= hi[idx]) | ~np.isfinite(cand)
        cand = np.where(bad, 0.5 * (lo[idx] + hi[idx]), cand)
        w[idx] = cand
        done = np.abs(cand - wi) <= 1e-13 * (1.0 + np.abs(cand)) + 1e-300
        done |= (hi[idx] - lo[idx]) <= 1e-14 * (1.0 + hi[idx])
        active[idx] = ~done
    return w


def _quadrature_interval(u, a, v1, v2, quad):
    w0 = _find_mode(u, a, v1, v2)
    g0 = _log_integrand(w0, u, a, v1, v2)
    g1, g2 = _integrand_derivs(w0, u, a, v1, v2)
    drop = 0.5 * quad.coverage**2
    width = quad.coverage / np.sqrt(-g2)
    boundary = (w0 == 0) & (g1 < 0)
    width = np.where(boundary, np.minimum(width, drop / np.maximum(-g1, 1e-300)), width)

    hi = w0 + width
    for _ in range(60):
        short = _log_integrand(hi, u, a, v1, v2) > g0 - drop
        if not short.any():
            break
        hi = np.where(short, w0 + 2 * (hi - w0), hi)

    lo = np.maximum(w0 - width, 0.0)
    for _ in range(60):
        short = (lo > 0) & (_log_integrand(lo, u, a, v1, v2) > g0 - drop)
        if not short.any():
            break
        lo = np.where(short, np.maximum(w0 - 2 * (w0 - lo), 0.0), lo)
    return lo, hi


def _quadrature_nodes(u, a, v1, v2, quad):
    lo, hi = _quadrature_interval(u, a, v1, v2, quad)
    x, logw = quad.rule()
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    g = _log_integrand(nodes, u[:, None], a[:, None], v1, v2)
    return nodes, g + logw[None, :] + np.log(half)[:, None]


def gaussian_logpdf(x, mean, var):
    return -((x - mean) ** 2) / (2 * var) - 0.5 * (LOG_2PI + np.log(var))


def log_density(u, a, var_pre: float, var_post: float, quad: QuadratureSpec = DEFAULT_QUAD):
    """log p(u) for u = |s_eff + N1|^2 + N2 with |s_eff|^2 = a.

    ``u`` is the received sample with the post-detection bias removed.
    Falls back to the closed forms when either variance is below EPS.
    """
    u, a = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(a, dtype=float))
    shape = u.shape
    u = u.ravel()
    a = a.ravel()
    v1, v2 = float(var_pre), float(var_post)
    if v1 < EPS and v2 < EPS:
        out = np.where(np.abs(u - a) <= EPS, 0.0, -np.inf)
    elif v1 < EPS:
        out = gaussian_logpdf(u, a, v2)
    elif v2 < EPS:
        out = noncentral_intensity_logpdf(u, a, v1)
    else:
        out = np.empty_like(u)
        for start in range(0, len(u), 8192):
            sl = slice(start, start + 8192)
            _, terms = _quadrature_nodes(u[sl], a[sl], v1, v2, quad)
            out[sl] = logsumexp(terms, axis=1)
    return out.reshape(shape)


def log_density_grad(u, a, var_pre: float, var_post: float, quad: QuadratureSpec = DEFAULT_QUAD):
    """log density and its partials with respect to (u, a, var_pre, var_post).

    The partials are posterior expectations of the integrand's partials over
    the quadrature nodes. Requires both variances above EPS.
    """
    u = np.asarray(u, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    v1, v2 = float(var_pre), float(var_post)
    if v1 < EPS or v2 < EPS:
        raise ValueError("gradients need both variances above EPS")
    F = np.empty_like(u)
    grads = np.empty((4, len(u)))
    for start in range(0, len(u), 8192):
        sl = slice(start, start + 8192)
        uu, aa = u[sl], a[sl]
        w, terms = _quadrature_nodes(uu, aa, v1, v2, quad)
        Fs = logsumexp(terms, axis=1)
        post = np.exp(terms - Fs[:, None])
        uu2, aa2 = uu[:, None], aa[:, None]
        z = 2.0 * np.sqrt(w * aa2) / v1
        q, _ = _bessel_ratio_terms(z)
        d_u = -(uu2 - w) / v2
        d_a = -1.0 / v1 + 2.0 * w * q / v1**2
        d_v1 = (w + aa2) / v1**2 - 1.0 / v1 - q * z * z / v1
        d_v2 = -0.5 / v2 + (uu2 - w) ** 2 / (2 * v2**2)
        F[sl] = Fs
        for k, d in enumerate((d_u, d_a, d_v1, d_v2)):
            grads[k, sl] = np.sum(post * d, axis=1)
    return F, grads


def log_density_sample(y, s, phase: int, params: AuxChannelParams,
                       quad: QuadratureSpec = DEFAULT_QUAD):
    """log q(y | s) for a sample of the given phase (0 on-symbol, 1 between)."""
    s_eff = np.asarray(s) + params.mu_pre[phase]
    a = s_eff.real**2 + s_eff.imag**2
    return log_density(np.asarray(y, dtype=float) - params.mu_post[phase], a,
                       params.var_pre[phase], params.var_post[phase], quad)


# --- branch amplitudes -------------------------------------------------------------------

def branch_amplitude(window, h, phase: int) -> complex:
    """Noiseless auxiliary sample for a window of (L-1)/2 + 1 symbols."""
    h = np.asarray(h, dtype=complex)
    window = np.asarray(window)
    m = (len(h) - 1) // 2
    if len(window) != m + 1:
        raise ValueError(f"window must hold {m + 1} symbols for L={len(h)}, got {len(window)}")
    coef = AuxChannelParams(h).window_coefficients()[phase]
    return complex(np.dot(coef, window))


def branch_symbols(constellation: Constellation, m: int) -> np.ndarray:
    """All Q^(m+1) windows, row b holds the base-Q digits of b (most significant first)."""
    Q = constellation.order
    digits = np.indices((Q,) * (m + 1)).reshape(m + 1, -1).T
    return constellation.points[digits]


@dataclass(frozen=True, eq=False)
class BranchTable:
    Q: int
    memory: int
    s: np.ndarray  # (2, Q^(m+1)) complex noiseless samples incl. mu_pre
    a: np.ndarray  # (2, Q^(m+1)) |s|^2

    @property
    def size(self) -> int:
        return self.s.shape[1]


def check_budget(Q: int, m: int, budget: int = DEFAULT_BRANCH_BUDGET):
    need = Q ** (m + 1)
    if need > budget:
        raise ValueError(f"branch budget exceeded: Q^(m+1) = {Q}^{m + 1} = {need} "
                         f"branches per phase, budget is {budget}")


def branch_table(constellation: Constellation, params: AuxChannelParams,
                 budget: int = DEFAULT_BRANCH_BUDGET, mask=None) -> BranchTable:
    """Every distinct branch amplitude of the trellis, per phase.

    ``mask`` (length m+1, bool) zeroes window positions that fall outside the block.
    """
    m = params.memory
    check_budget(constellation.order, m, budget)
    coef = params.window_coefficients()
    if mask is not None:
        coef = coef * np.asarray(mask, dtype=float)[None, :]
    s = coef @ branch_symbols(constellation, m).T + params.mu_pre[:, None]
    return BranchTable(constellation.order, m, s, s.real**2 + s.imag**2)
