import numpy as np
import pytest

from majchain.environment import BoundaryError
from majchain.gfunction import GSpec, MajorityRule
from majchain.sampler import (StatisticalFloorError, boundary_gap, build_plan, linear_oracle, marginal_audit,
                              quad_coupling_run, sample_coupled_pair, sample_quenched)

from conftest import deep_table, determined_structure, small_table

N, H = 120, 0


@pytest.fixture(scope="module")
def bs():
    return determined_structure(-N + 1, H, deep_table(), lo=-(1 << 17))


def test_plan(bs):
    plan = build_plan(bs, N, H)
    assert plan.first == -N + 1 and len(plan.sites) == N
    assert plan.lo <= plan.first
    for sp in plan.sites:
        if sp.influential:
            assert np.all(sp.idx + plan.lo < sp.t)
    assert all(s < plan.first for s in plan.reach())


def test_plan_undetermined():
    bs = determined_structure(-5, 0, small_table())
    with pytest.raises(BoundaryError):
        build_plan(bs, 5000, 0)


def test_quenched_boundaries_and_threads(bs):
    spec = GSpec(bs.table, MajorityRule.pure())
    a = sample_quenched(spec, bs, "plus", N, H, seed=3, replicas=300, threads=1)
    b = sample_quenched(spec, bs, "plus", N, H, seed=3, replicas=300, threads=3)
    assert np.array_equal(a.path.values, b.path.values)
    assert np.all(a.path.values[:, :-N] == 1)
    m = sample_quenched(spec, bs, "minus", N, H, seed=3, replicas=300)
    assert np.all(m.path.values[:, :-N] == -1)
    assert set(np.unique(a.values)) <= {-1, 1}


def test_custom_boundary(bs):
    spec = GSpec(bs.table, MajorityRule.pure())
    plan = build_plan(bs, N, H)
    bd = {s: 1 for s in plan.reach()}
    p = sample_quenched(spec, bs, bd, N, H, seed=1, replicas=10)
    q = sample_quenched(spec, bs, "plus", N, H, seed=1, replicas=10)
    assert np.array_equal(p.values, q.values)
    if plan.reach():
        with pytest.raises(ValueError):
            sample_quenched(spec, bs, {}, N, H, seed=1)


def test_linear_oracle_matches_mc(bs):
    spec = GSpec(bs.table, MajorityRule.identity())
    R = 4000
    path = sample_quenched(spec, bs, "plus", N, H, seed=11, replicas=R)
    exact = linear_oracle(spec, bs, N, H, "plus")
    mean = path.values.mean(axis=0)
    se = np.sqrt(np.maximum(1 - exact ** 2, 1e-12) / R)
    z = np.abs(mean - exact) / se
    assert np.mean(z > 3) < 0.02
    assert np.all(np.abs(exact) <= 0.5)


def test_coupled_pair_ordering_and_marginals(bs):
    spec = GSpec(bs.table, MajorityRule.tanh(2.0))
    pair = sample_coupled_pair(spec, bs, "minus", "plus", N, H, seed=5, replicas=2000, threads=2)
    assert pair.ordering_violations() == 0
    aud = marginal_audit(pair)
    assert aud["failures"] <= 0.02 * len(aud["sites"]) + 1
    same = sample_coupled_pair(spec, bs, "plus", "plus", N, H, seed=5, replicas=50)
    assert not same.discrepancy().any()
    with pytest.raises(ValueError):
        sample_coupled_pair(spec, bs, "plus", "minus", N, H, seed=5)


def test_coupled_marginal_equals_quenched(bs):
    # the upper path of the coupling uses U < g2, exactly as the single-path sampler
    spec = GSpec(bs.table, MajorityRule.pure())
    pair = sample_coupled_pair(spec, bs, "minus", "plus", N, H, seed=9, replicas=64)
    single = sample_quenched(spec, bs, "plus", N, H, seed=9, replicas=64)
    assert np.array_equal(pair.upper.window(-N + 1), single.values)


def test_quad_coupling(bs):
    tilde = MajorityRule.tilde(MajorityRule.tanh(1.5), 2.0, 0.5)
    q = quad_coupling_run(GSpec(bs.table, tilde), bs, N, H, seed=2, replicas=1000)
    assert q.domination_violations() == 0
    g_tilde, g_bar = q.gaps()
    assert np.all(g_tilde <= g_bar)
    with pytest.raises(ValueError, match="Lipschitz"):
        quad_coupling_run(GSpec(bs.table, MajorityRule.pure()), bs, N, H, seed=2)


def test_boundary_gap(bs):
    spec = GSpec(bs.table, MajorityRule.identity())
    with pytest.raises(StatisticalFloorError):
        boundary_gap(spec, bs, 0, 40, replicas=99, seed=0)
    g = boundary_gap(spec, bs, 0, 40, replicas=2000, seed=0)
    exact = linear_oracle(spec, bs, 40, 0, "plus")[-1] - linear_oracle(spec, bs, 40, 0, "minus")[-1]
    # under the monotone coupling 2 P(discrepancy) estimates E+ X - E- X
    assert abs(g.estimate - exact) <= 2 * g.half_width + 1e-12
    assert g.lo <= g.estimate <= g.hi
