import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from majchain.chain import (ChainError, ChainSpec, binom_cdf, binom_sf, coupled_chain_run, criterion_series,
                            decoupling_bound, escape_prob, exact_sign_flip_prob, is_monotone, log_ratio,
                            run_chain, sign_change_scale, step_down, step_from_uniforms, toy_iterate)
from majchain.gfunction import MajorityRule
from majchain.scales import ScaleParams, build_scale_table

PURE, IDENT = MajorityRule.pure(), MajorityRule.identity()


def flip_by_enumeration(n, m):
    """(P(sum <= 0), P(sum < 0)) by listing all 2**n sign vectors, in exact arithmetic."""
    m = Fraction(m)
    p_plus = (1 + m) / 2
    le = lt = Fraction(0)
    for signs in itertools.product((1, -1), repeat=n):
        w = Fraction(1)
        for s in signs:
            w *= p_plus if s == 1 else 1 - p_plus
        total = sum(signs)
        if total <= 0:
            le += w
        if total < 0:
            lt += w
    return le, lt


def test_sign_flip_known_values():
    assert exact_sign_flip_prob(3, 0.5)[0] == pytest.approx(0.15625, rel=1e-14)
    assert exact_sign_flip_prob(2, 0.0) == pytest.approx((0.75, 0.25))
    assert exact_sign_flip_prob(1, 1.0) == (0.0, 0.0)


@pytest.mark.parametrize("n", [1, 2, 5, 8, 11])
@pytest.mark.parametrize("m", [-0.9, -0.25, 0.0, 0.1, 0.5, 0.95])
def test_sign_flip_enumeration(n, m):
    le, lt = flip_by_enumeration(n, m)
    got = exact_sign_flip_prob(n, m)
    assert got[0] == pytest.approx(float(le), rel=1e-12, abs=1e-300)
    assert got[1] == pytest.approx(float(lt), rel=1e-12, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 3000), p=st.floats(0.001, 0.999), c=st.integers(-2, 3001))
def test_binom_sums_against_scipy(n, p, c):
    ref = binom.cdf(c, n, p)
    assert binom_cdf(c, n, p) == pytest.approx(ref, rel=1e-9, abs=1e-290)
    assert binom_sf(c, n, p) == pytest.approx(binom.sf(c, n, p), rel=1e-9, abs=1e-290)


def test_binom_tiny_tails_keep_relative_accuracy():
    # far tail: P(Bin(2000, 0.75) <= 1000), around e^-288
    v = binom_cdf(1000, 2000, 0.75)
    assert 0 < v < 1e-100
    assert math.log(v) == pytest.approx(binom.logcdf(1000, 2000, 0.75), rel=1e-9)
    with pytest.raises(ChainError):
        binom_cdf(1, 10 ** 7, 0.5)


def test_escape_prob():
    # n=1: |mean| = 1 > delta for any delta < 1
    assert escape_prob(1, 0.3, 0.5) == pytest.approx(1.0)
    assert escape_prob(10, 0.0, 1.0) == 0.0
    n, m, d = 20, 0.2, 0.3
    p = (1 + m) / 2
    ref = sum(binom.pmf(c, n, p) for c in range(n + 1) if abs(2 * c - n) / n > d + 1e-12)
    assert escape_prob(n, m, d) == pytest.approx(ref, rel=1e-10)


@given(xi=st.sampled_from([-1.0, -0.2, 0.0, 0.6, 1.0]), n=st.integers(1, 300), u=st.floats(0, 1))
def test_step_lattice(xi, n, u):
    out = step_from_uniforms(np.array([xi]), n, 0.4, IDENT, np.array([u]))[0]
    c = (out * n + n) / 2
    assert abs(c - round(c)) < 1e-9 and -1 <= out <= 1


def test_step_down_mean():
    draws = step_down(0.5, 101, 0.5, IDENT, seed=1, size=20000)
    assert abs(draws.mean() - 0.25) < 4 * draws.std() / math.sqrt(len(draws))
    assert step_down(0.5, 101, 0.5, IDENT, seed=1) == draws[0]
    with pytest.raises(ChainError):
        step_down(0.5, 11, 0.6, IDENT, seed=0)


def test_chain_spec_validation():
    with pytest.raises(ChainError):
        ChainSpec(1, 1, (3,), (0.1,), PURE)
    with pytest.raises(ChainError):
        ChainSpec.constant(5, 0.7, PURE, 3)
    with pytest.raises(ChainError):
        ChainSpec(1, 3, (5, 5), (0.1, 0.1, 0.1), PURE)
    s = ChainSpec.constant(5, 0.25, PURE, 3)
    assert s.n_at(4) == 5 and s.h_at(2) == 0.25 and s.depth == 3
    assert s.to_dict()["rule"] == {"kind": "pure"}


def test_from_table_caps_n():
    t = build_scale_table(ScaleParams(0.5, 3, alpha=0.4), 13)
    s = ChainSpec.from_table(t, PURE, 3, 13, n_cap=10 ** 4)
    assert s.n_at(3) == 4  # ceil(16 ** 0.5)
    assert max(s.n) == 10 ** 4
    assert s.h_at(5) == t.h(5)


def test_run_chain_threads_and_parity():
    spec = ChainSpec.constant(11, 0.5, PURE, 6)
    a = run_chain(spec, 1.0, seed=4, replicas=3000, threads=1)
    b = run_chain(spec, 1.0, seed=4, replicas=3000, threads=4)
    assert np.array_equal(a.xi, b.xi)
    assert np.all(a.at(7) == 1.0) and a.final.shape == (3000,)
    assert set(np.unique(a.sigma)) <= {-1, 1}
    with pytest.raises(ChainError):
        run_chain(ChainSpec.constant(10, 0.5, PURE, 3), 0.1, seed=0)


def test_mirror_antisymmetry():
    spec = ChainSpec.constant(21, 0.4, MajorityRule.tanh(2.0), 5)
    up = run_chain(spec, 1.0, seed=8, replicas=500)
    down = run_chain(spec, -1.0, seed=8, replicas=500, mirror=True)
    assert np.mean(up.xi == -down.xi) > 0.999


def test_sign_change_scale():
    xi = np.array([[0.2, -0.1, 0.5, 1.0],
                   [0.2, 0.3, 0.5, 1.0],
                   [-0.4, 0.0, 0.5, -1.0]])
    assert sign_change_scale(xi, 1).tolist() == [2, 0, 3]


def test_identity_chain_mean():
    spec = ChainSpec.constant(101, 0.5, IDENT, 5, k_lo=0)
    tr = run_chain(spec, 1.0, seed=2, replicas=20000)
    means = tr.xi.mean(axis=0)
    for k in range(0, 6):
        se = tr.at(k).std() / math.sqrt(20000) + 1e-12
        assert abs(means[k] - 0.5 ** (5 - k)) <= 4 * se


def test_coupled_chain():
    spec = ChainSpec.constant(51, 0.25, MajorityRule.tanh(1.5), 6)
    cc = coupled_chain_run(spec, 2.0, 0.5, 1 / 51, seed=3, replicas=2000, threads=2)
    # before decoupling the plain chain follows the modified one
    for r in range(200):
        for i in range(spec.depth, -1, -1):
            if not cc.gamma[r, i]:
                break
            assert cc.plain.xi[r, i] == cc.tilde.xi[r, i]
    assert np.all((cc.D >= spec.k_lo - 1) & (cc.D <= spec.M - 1))
    emp = float(np.mean(cc.D >= 4))
    assert emp <= decoupling_bound(spec, 0.5, 4) + 3 * math.sqrt(0.25 / 2000)
    again = coupled_chain_run(spec, 2.0, 0.5, 1 / 51, seed=3, replicas=2000, threads=1)
    assert np.array_equal(again.plain.xi, cc.plain.xi)
    with pytest.raises(ChainError):
        coupled_chain_run(spec, 0.5, 0.5, 1 / 51, seed=0)  # tanh(1.5 z) is not 0.5-Lipschitz


def test_log_ratio_matches_direct():
    for x0, x1 in [(1.0, 2.0), (3.0, 2.5), (0.5, 0.5), (-2.0, 1.0)]:
        direct = math.log(math.exp(-2 ** x1) / math.exp(-2 ** x0))
        assert log_ratio(x0, x1) == pytest.approx(direct, rel=1e-12, abs=1e-15)


def test_criterion_series_small_alpha():
    t = build_scale_table(ScaleParams(0.5, 7, alpha=0.1), 40)
    rep = criterion_series(t)
    assert rep.verdict == "summable"
    assert is_monotone(rep.x_conv) and is_monotone(rep.x_div)
    rows = rep.rows()
    assert rows[0]["k"] == 7 and "conv_partial" in rows[-1]
    with pytest.raises(ChainError):
        criterion_series(t, 41)


def test_criterion_too_short_is_inconclusive():
    t = build_scale_table(ScaleParams(0.5, 7, alpha=0.1), 12)
    assert criterion_series(t).verdict == "inconclusive"


def test_toy_iterate():
    mu = toy_iterate(IDENT, 0.5, 1.0, 0, 5)
    assert mu[0] == 0.03125 and mu[-1] == 1.0
    assert toy_iterate(PURE, 0.5, -0.01, 0, 3)[0] == -0.5
    assert np.all(toy_iterate(PURE, [0.1, 0.2, 0.3, 0.4], 0.0, 0, 3) == 0)
    mu = toy_iterate(IDENT, lambda k: 1.0 / (k + 1), 1.0, 0, 3)
    assert mu[0] == pytest.approx(1 / 24)
    with pytest.raises(ChainError):
        toy_iterate(IDENT, 0.5, 1.5, 0, 3)


@given(mu=st.floats(-1, 1).filter(lambda x: x != 0), h=st.floats(0.01, 1.0), depth=st.integers(1, 30))
def test_toy_pure_keeps_sign(mu, h, depth):
    out = toy_iterate(PURE, h, mu, 0, depth)
    assert np.all(np.sign(out) == np.sign(mu))
