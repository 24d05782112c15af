import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import logsumexp

from ddair.constellation import draw_symbols, make_constellation
from ddair.density import AuxChannelParams, log_density, log_density_sample
from ddair.trellis import (TrellisSpec, border_mask, brute_force_log_marginal, estimate_air,
                           forward_log_marginal, log_conditional, pair_amplitudes,
                           sample_auxiliary, toeplitz_matrix)


def random_params(rng, L, v1=None, v2=None):
    h = rng.normal(size=L) + 1j * rng.normal(size=L)
    h /= np.linalg.norm(h)
    return AuxChannelParams(
        h, mu_pre=0.1 * (rng.normal(size=2) + 1j * rng.normal(size=2)),
        mu_post=0.05 * rng.normal(size=2),
        var_pre=rng.uniform(0.02, 0.3, 2) if v1 is None else (v1, v1),
        var_post=rng.uniform(0.005, 0.1, 2) if v2 is None else (v2, v2))


def product_oracle(y, x, params):
    """Direct product over samples of the per-sample density."""
    n = len(x)
    H = toeplitz_matrix(params.h, n)
    s = H @ x
    return math.fsum(float(log_density_sample(y[k], s[k], k % 2, params)) for k in range(2 * n))


def test_spec_counts():
    t = TrellisSpec.from_L(4, 11)
    assert (t.memory, t.state_count, t.branch_count) == (5, 4**5, 4**6)
    assert TrellisSpec.from_L(2, 1).state_count == 1
    assert t.encode([1, 0, 0, 0, 3]) == 1 * 4**4 + 3
    with pytest.raises(ValueError):
        TrellisSpec.from_L(4, 4)


def test_toeplitz_matches_pair_amplitudes(rng):
    for L in (1, 3, 5, 7, 9):
        p = random_params(rng, L)
        x = rng.choice([-3.0, -1, 1, 3], 12)
        s = pair_amplitudes(x, p)
        direct = toeplitz_matrix(p.h, 12) @ x
        np.testing.assert_allclose(s[0] - p.mu_pre[0], direct[0::2], atol=1e-12)
        np.testing.assert_allclose(s[1] - p.mu_pre[1], direct[1::2], atol=1e-12)


def test_log_conditional_single_symbol():
    p = AuxChannelParams(np.array([1.0]), var_pre=(0.1, 0.1), var_post=(0.01, 0.01))
    y = np.array([1.05, 0.11])
    want = log_density(1.05, 1.0, 0.1, 0.01) + log_density(0.11, 0.0, 0.1, 0.01)
    assert log_conditional(y, np.array([1.0]), p) == pytest.approx(float(want), rel=1e-14)


def test_log_conditional_matches_product_oracle(rng):
    for _ in range(5):
        p = random_params(rng, 3)
        x = rng.choice([0.0, 1, 2, 3], 8)
        y = sample_auxiliary(x, p, seed=int(rng.integers(1 << 30)))
        assert abs(log_conditional(y, x, p) - product_oracle(y, x, p)) < 1e-10


def test_log_conditional_additive_over_cut(rng):
    p = random_params(rng, 5)
    x = rng.choice([-3.0, -1, 1, 3], 40)
    y = sample_auxiliary(x, p, seed=1)
    whole = log_conditional(y, x, p)
    s = pair_amplitudes(x, p)
    a = np.abs(s) ** 2
    parts = 0.0
    for lo, hi in ((0, 17), (17, 40)):
        for ph in (0, 1):
            parts += np.sum(log_density(y[2 * lo + ph:2 * hi:2] - p.mu_post[ph], a[ph, lo:hi],
                                        p.var_pre[ph], p.var_post[ph]))
    assert whole == pytest.approx(parts, abs=1e-9)


def test_log_conditional_length_mismatch():
    p = AuxChannelParams(np.ones(3), var_pre=(0.1, 0.1), var_post=(0.1, 0.1))
    with pytest.raises(ValueError):
        log_conditional(np.zeros(6), np.zeros(4), p)


def test_memoryless_marginal_formula(rng):
    c = make_constellation("ASK", 4)
    p = random_params(rng, 1)
    x = draw_symbols(c, 30, 2).symbols
    y = sample_auxiliary(x, p, seed=3)
    want = 0.0
    for i in range(30):
        terms = [float(log_density_sample(y[2 * i], p.h[0] * pt, 0, p)
                       + log_density_sample(y[2 * i + 1], 0.0, 1, p)) for pt in c.points]
        want += logsumexp(terms) - math.log(4)
    assert forward_log_marginal(y, p, c) == pytest.approx(want, abs=1e-10)
    assert brute_force_log_marginal(y[:2], p, c) == pytest.approx(
        logsumexp([float(log_density_sample(y[0], p.h[0] * pt, 0, p)
                         + log_density_sample(y[1], 0.0, 1, p)) for pt in c.points]) - math.log(4),
        abs=1e-12)


@pytest.mark.parametrize("kind,Q,L,n", [("ASK", 2, 3, 6), ("PAM", 4, 5, 6), ("ASK", 4, 3, 6),
                                        ("PAM", 2, 7, 9), ("ASK", 4, 7, 6), ("PAM", 8, 3, 4)])
def test_forward_matches_enumeration(kind, Q, L, n, rng):
    c = make_constellation(kind, Q)
    for _ in range(3):
        p = random_params(rng, L)
        x = draw_symbols(c, n, int(rng.integers(1 << 30))).symbols
        y = sample_auxiliary(x, p, seed=int(rng.integers(1 << 30)))
        bf = brute_force_log_marginal(y, p, c)
        fw = forward_log_marginal(y, p, c, density="exact")
        assert abs(fw - bf) <= 1e-10 * max(1.0, abs(bf))


@given(st.integers(0, 2**31 - 1))
def test_forward_brute_force_property(seed):
    rng = np.random.default_rng(seed)
    Q = int(rng.choice([2, 4]))
    L = int(rng.choice([1, 3, 5]))
    n = int(rng.integers(1, 7 if Q == 2 else 6))
    c = make_constellation(str(rng.choice(["ASK", "PAM"])), Q)
    p = random_params(rng, L)
    x = draw_symbols(c, n, seed).symbols
    y = sample_auxiliary(x, p, seed=seed + 1)
    bf = brute_force_log_marginal(y, p, c)
    assert abs(forward_log_marginal(y, p, c, density="exact") - bf) <= 1e-10 * max(1.0, abs(bf))


def test_known_symbols_restrict_the_sum(rng):
    c = make_constellation("PAM", 2)
    p = random_params(rng, 3)
    x = draw_symbols(c, 6, 1)
    y = sample_auxiliary(x.symbols, p, seed=2)
    known = border_mask(x.indices, 1)
    # enumerate only the free middle symbols, borders fixed
    terms = []
    for b in range(2**4):
        mid = [(b >> k) & 1 for k in (3, 2, 1, 0)]
        idx = [x.indices[0], *mid, x.indices[-1]]
        terms.append(log_conditional(y, c.points[idx], p))
    want = logsumexp(terms) - 4 * math.log(2)
    assert forward_log_marginal(y, p, c, known=known, density="exact") == pytest.approx(want, abs=1e-10)


def test_brute_force_size_limit():
    c = make_constellation("ASK", 4)
    p = AuxChannelParams(np.ones(1), var_pre=(0.1, 0.1), var_post=(0.1, 0.1))
    with pytest.raises(ValueError):
        brute_force_log_marginal(np.zeros(22), p, c)


def test_brute_force_bias_shift_invariance(rng):
    c = make_constellation("ASK", 2)
    p = random_params(rng, 3)
    y = sample_auxiliary(np.array([1.0, -1, -1, 1, 1]), p, seed=9)
    q = p.replace(mu_post=p.mu_post + 0.75)
    assert brute_force_log_marginal(y + 0.75, q, c) == pytest.approx(brute_force_log_marginal(y, p, c), abs=1e-10)


def test_pam_ceiling():
    c = make_constellation("PAM", 4)
    p = AuxChannelParams(np.array([1.0]), var_pre=(1e-4, 1e-4), var_post=(1e-4, 1e-4))
    x = draw_symbols(c, 2000, 1)
    y = sample_auxiliary(x, p, seed=2)
    assert abs(estimate_air(y, x, p).air - 2.0) < 0.02


def test_ask_sign_ambiguity_ceiling():
    c = make_constellation("ASK", 4)
    p = AuxChannelParams(np.array([1.0]), var_pre=(1e-4, 1e-4), var_post=(1e-4, 1e-4))
    x = draw_symbols(c, 2000, 1)
    y = sample_auxiliary(x, p, seed=2)
    r = estimate_air(y, x, p)
    assert r.air <= 1.02
    assert r.air > 0.95


def test_ask_ceiling_by_enumeration():
    c = make_constellation("ASK", 4)
    p = AuxChannelParams(np.array([1.0]), var_pre=(1e-4, 1e-4), var_post=(1e-4, 1e-4))
    x = draw_symbols(c, 8, 4)
    y = sample_auxiliary(x, p, seed=5)
    air = (log_conditional(y, x.symbols, p) - brute_force_log_marginal(y, p, c)) / (8 * math.log(2))
    assert air <= 1.0 + 1e-9


def test_zero_response_gives_zero_rate():
    c = make_constellation("PAM", 4)
    p = AuxChannelParams(np.zeros(3), var_pre=(0.1, 0.1), var_post=(0.01, 0.01))
    x = draw_symbols(c, 200, 1)
    y = sample_auxiliary(x, p, seed=1)
    r = estimate_air(y, x, p)
    assert abs(r.air) < 1e-12


def test_shift_invariance(rng):
    c = make_constellation("ASK", 4)
    p = random_params(rng, 5)
    x = draw_symbols(c, 300, 3)
    y = sample_auxiliary(x, p, seed=4)
    a = estimate_air(y, x, p, density="exact").air
    b = estimate_air(y + 2.5, x, p.replace(mu_post=p.mu_post + 2.5), density="exact").air
    assert abs(a - b) < 1e-10


def test_embedding_keeps_the_rate(rng):
    c = make_constellation("PAM", 4)
    p3 = random_params(rng, 3, 0.05, 0.01)
    x = draw_symbols(c, 400, 5)
    y = sample_auxiliary(x, p3, seed=6)
    r3 = estimate_air(y, x, p3, known_borders=False, density="exact")
    r7 = estimate_air(y, x, p3.embed(7), known_borders=False, density="exact")
    assert r7.air >= r3.air - 1e-9
    assert abs(r7.air - r3.air) < 1e-9


def test_negative_rate_is_reported_not_clipped():
    c = make_constellation("PAM", 4)
    true = AuxChannelParams(np.array([1.0]), var_pre=(0.01, 0.01), var_post=(1e-3, 1e-3))
    wrong = AuxChannelParams(np.array([0.3]), mu_post=(2.0, 2.0), var_pre=(0.01, 0.01),
                             var_post=(1e-3, 1e-3))
    x = draw_symbols(c, 200, 1)
    y = sample_auxiliary(x, true, seed=1)
    r = estimate_air(y, x, wrong)
    assert r.air < 0 and r.negative


def test_rate_estimate_fields():
    c = make_constellation("PAM", 4)
    p = AuxChannelParams(np.array([0.2, 1.0, 0.2]), var_pre=(0.05, 0.05), var_post=(0.01, 0.01))
    x = draw_symbols(c, 100, 1)
    y = sample_auxiliary(x, p, seed=1)
    r = estimate_air(y, x, p, provenance={"seed": 1})
    assert r.n == 100 and r.L == 3
    assert r.air == pytest.approx((r.log_q_joint - r.log_q_marginal) / (100 * math.log(2)))
    assert r.provenance["seed"] == 1


def test_budget_rejected():
    c = make_constellation("ASK", 8)
    p = AuxChannelParams(np.ones(13), var_pre=(0.1, 0.1), var_post=(0.1, 0.1))
    with pytest.raises(ValueError, match="budget"):
        forward_log_marginal(np.zeros(40), p, c)


def test_halves_concentrate():
    c = make_constellation("PAM", 4)
    p = AuxChannelParams(np.array([0.1, 0.3, 1.0, 0.3, 0.1]), var_pre=(0.1, 0.1), var_post=(0.02, 0.02))
    x = draw_symbols(c, 10000, 8)
    y = sample_auxiliary(x, p, seed=9)
    from ddair.constellation import SymbolBlock
    a = estimate_air(y[:10000], SymbolBlock(x.symbols[:5000], c), p).air
    b = estimate_air(y[10000:], SymbolBlock(x.symbols[5000:], c), p).air
    assert abs(a - b) < 0.05
