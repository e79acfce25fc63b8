"""Quenched path sampling, the ordered two-path coupling and the four-path coupling.

All paths live on ``(-N, horizon]``; sites ``<= -N`` carry the boundary
condition. One uniform ``U_t`` per (replica, site) drives every path of a
replica, so couplings are exact rather than statistical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from . import rng
from .environment import BlockStructure, BoundaryError
from .gfunction import GSpec, MajorityRule, lipschitz_check
from .stats import Interval, wilson

Boundary = Union[str, Mapping[int, int]]
MIN_REPLICAS = 100


class StatisticalFloorError(ValueError):
    """Too few replicas for the requested interval."""


@dataclass(frozen=True)
class SitePlan:
    t: int
    h: float
    idx: np.ndarray  # target positions, relative to the plan origin
    influential: bool


@dataclass(frozen=True)
class Plan:
    """Per-site targets over ``(-N, horizon]`` and the boundary sites they reach."""

    lo: int  # first array position (may lie in the boundary region)
    N: int
    horizon: int
    sites: tuple[SitePlan, ...]

    @property
    def first(self) -> int:
        return -self.N + 1

    @property
    def n_boundary(self) -> int:
        return self.first - self.lo

    def reach(self) -> list[int]:
        """Boundary sites some target set reads."""
        used = set()
        for sp in self.sites:
            if sp.influential:
                used.update(int(i) + self.lo for i in sp.idx if i + self.lo < self.first)
        return sorted(used)


def build_plan(structure: BlockStructure, N: int, horizon: int) -> Plan:
    if horizon < -N + 1:
        raise ValueError("empty sampling window")
    table = structure.table
    targets = []
    lo = -N + 1
    for t in range(-N + 1, horizon + 1):
        res = structure.target(t)
        if not res.determined:
            raise BoundaryError(f"target of site {t} is undetermined; widen the environment window")
        targets.append(res)
        if res.influential:
            lo = min(lo, res.S_t[0])
    sites = []
    for res in targets:
        if res.influential:
            sites.append(SitePlan(res.t, table.h(res.k_t), np.asarray(res.S_t, dtype=np.int64) - lo, True))
        else:
            sites.append(SitePlan(res.t, 0.0, np.empty(0, dtype=np.int64), False))
    return Plan(lo, N, horizon, tuple(sites))


def _boundary_row(plan: Plan, boundary: Boundary) -> np.ndarray:
    nb = plan.n_boundary
    if isinstance(boundary, str):
        if boundary not in ("plus", "minus"):
            raise ValueError(f"unknown boundary {boundary!r}")
        return np.full(nb, 1 if boundary == "plus" else -1, dtype=np.int8)
    row = np.zeros(nb, dtype=np.int8)
    for s in plan.reach():
        if s not in boundary:
            raise ValueError(f"custom boundary does not specify site {s} (reach {plan.reach()[0]}..{-plan.N})")
        v = int(boundary[s])
        if v not in (1, -1):
            raise ValueError("boundary values must be +1 or -1")
        row[s - plan.lo] = v
    return row


def _boundary_le(b1: Boundary, b2: Boundary, plan: Plan) -> bool:
    r1, r2 = _boundary_row(plan, b1), _boundary_row(plan, b2)
    return bool(np.all(r1 <= r2))


def _site_psi(sp: SitePlan, rule: MajorityRule, x: np.ndarray) -> np.ndarray:
    m = x[:, sp.idx].mean(axis=1)
    return sp.h * np.asarray(rule(m))


@dataclass
class SitePath:
    """Sampled values of several replicas on ``[lo, horizon]`` (boundary included)."""

    lo: int
    values: np.ndarray  # (replicas, sites), int8

    def at(self, t: int) -> np.ndarray:
        return self.values[:, t - self.lo]

    def window(self, first: int) -> np.ndarray:
        return self.values[:, first - self.lo:]


@dataclass
class SamplePath:
    N: int
    horizon: int
    boundary: Boundary
    seed: int
    path: SitePath

    @property
    def values(self) -> np.ndarray:
        return self.path.window(-self.N + 1)

    def at(self, t: int) -> np.ndarray:
        return self.path.at(t)


@dataclass
class CoupledPair:
    N: int
    horizon: int
    seed: int
    lower: SitePath
    upper: SitePath
    uniforms: np.ndarray  # (replicas, sites in (-N, horizon])
    audit: dict = field(default_factory=dict)

    def discrepancy(self) -> np.ndarray:
        """Indicator of ``(X^2, X^1) = (+, -)`` on ``(-N, horizon]``."""
        first = -self.N + 1
        return (self.upper.window(first) == 1) & (self.lower.window(first) == -1)

    def ordering_violations(self) -> int:
        first = -self.N + 1
        return int(np.sum(self.lower.window(first) > self.upper.window(first)))


@dataclass
class QuadCoupling:
    N: int
    horizon: int
    seed: int
    tilde: CoupledPair
    bar: CoupledPair

    def domination_violations(self) -> int:
        return int(np.sum(self.tilde.discrepancy() & ~self.bar.discrepancy()))

    def gaps(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-site ``2 * P(discrepancy)`` for the tilde and bar pairs."""
        return 2 * self.tilde.discrepancy().mean(axis=0), 2 * self.bar.discrepancy().mean(axis=0)


def _init(plan: Plan, rows: int, boundary: Boundary) -> np.ndarray:
    x = np.zeros((rows, plan.horizon - plan.lo + 1), dtype=np.int8)
    x[:, :plan.n_boundary] = _boundary_row(plan, boundary)
    return x


def _sample_batch(plan: Plan, rule: MajorityRule, boundary: Boundary, u: np.ndarray) -> np.ndarray:
    x = _init(plan, u.shape[0], boundary)
    off = plan.n_boundary
    for j, sp in enumerate(plan.sites):
        g = 0.5 * (1 + _site_psi(sp, rule, x)) if sp.influential else 0.5
        x[:, off + j] = np.where(u[:, j] < g, 1, -1)
    return x


def _uniforms(plan: Plan, seed: int, batch: int, rows: int) -> np.ndarray:
    return rng.replica_uniforms(seed, (rng.PATH,), batch, rows, plan.first, plan.horizon)


def sample_quenched(spec: GSpec, structure: BlockStructure, boundary: Boundary, N: int,
                    horizon: int, seed: int, replicas: int = 1, threads: int = 1) -> SamplePath:
    plan = build_plan(structure, N, horizon)
    _boundary_row(plan, boundary)

    def run(b, start, stop):
        return _sample_batch(plan, spec.rule, boundary, _uniforms(plan, seed, b, stop - start))

    parts = rng.run_batches(run, replicas, threads)
    return SamplePath(N, horizon, boundary, seed, SitePath(plan.lo, np.concatenate(parts)))


def _coupled_batch(plan: Plan, rule: MajorityRule, b1: Boundary, b2: Boundary, u: np.ndarray):
    x1 = _init(plan, u.shape[0], b1)
    x2 = _init(plan, u.shape[0], b2)
    off = plan.n_boundary
    n = len(plan.sites)
    # per-site audit sums: probability of + and its variance, and observed + counts
    aud = np.zeros((6, n))
    for j, sp in enumerate(plan.sites):
        if sp.influential:
            g1 = 0.5 * (1 + _site_psi(sp, rule, x1))
            g2 = 0.5 * (1 + _site_psi(sp, rule, x2))
        else:
            g1 = g2 = np.full(u.shape[0], 0.5)
        uj = u[:, j]
        width = g2 - g1
        up = uj < g2
        low = up & (uj >= width)
        x2[:, off + j] = np.where(up, 1, -1)
        x1[:, off + j] = np.where(low, 1, -1)
        aud[:, j] = (g1.sum(), (g1 * (1 - g1)).sum(), low.sum(), g2.sum(), (g2 * (1 - g2)).sum(), up.sum())
    return x1, x2, aud


def sample_coupled_pair(spec: GSpec, structure: BlockStructure, lower: Boundary, upper: Boundary,
                        N: int, horizon: int, seed: int, replicas: int = 1,
                        threads: int = 1) -> CoupledPair:
    """Two paths with boundaries ``lower <= upper`` driven by one uniform per site.

    With ``g1 <= g2`` the probabilities of ``+`` under the two histories,
    ``[0, g2 - g1)`` gives ``(+, -)``, ``[g2 - g1, g2)`` gives ``(+, +)`` and
    the rest gives ``(-, -)``.
    """
    plan = build_plan(structure, N, horizon)
    if not _boundary_le(lower, upper, plan):
        raise ValueError("boundaries must be ordered: lower <= upper at every reached site")
    return _coupled(plan, spec.rule, lower, upper, seed, replicas, threads)


def _coupled(plan, rule, lower, upper, seed, replicas, threads) -> CoupledPair:
    def run(b, start, stop):
        u = _uniforms(plan, seed, b, stop - start)
        x1, x2, aud = _coupled_batch(plan, rule, lower, upper, u)
        return x1, x2, aud, u

    parts = rng.run_batches(run, replicas, threads)
    x1 = np.concatenate([p[0] for p in parts])
    x2 = np.concatenate([p[1] for p in parts])
    aud = sum(p[2] for p in parts)
    u = np.concatenate([p[3] for p in parts])
    audit = {"sites": np.arange(plan.first, plan.horizon + 1),
             "lower_expected": aud[0], "lower_var": aud[1], "lower_plus": aud[2],
             "upper_expected": aud[3], "upper_var": aud[4], "upper_plus": aud[5]}
    return CoupledPair(plan.N, plan.horizon, seed, SitePath(plan.lo, x1), SitePath(plan.lo, x2), u, audit)


def marginal_audit(pair: CoupledPair, sites=None, sigmas: float = 3.0) -> dict:
    """Compare observed ``+`` counts with the summed one-step probabilities.

    Under correct marginals ``count - sum(g)`` is a martingale sum with
    variance ``sum g (1 - g)``; a site fails when it exceeds ``sigmas``
    standard deviations.
    """
    a = pair.audit
    all_sites = a["sites"]
    sel = np.arange(len(all_sites)) if sites is None else np.searchsorted(all_sites, sites)
    z = []
    for side in ("lower", "upper"):
        var = a[f"{side}_var"][sel]
        dev = a[f"{side}_plus"][sel] - a[f"{side}_expected"][sel]
        with np.errstate(divide="ignore", invalid="ignore"):
            zz = np.where(var > 0, np.abs(dev) / np.sqrt(var), np.where(dev == 0, 0.0, np.inf))
        z.append(zz)
    z = np.maximum(*z)
    return {"sites": all_sites[sel], "z": z, "failures": int(np.sum(z > sigmas)), "max_z": float(z.max())}


@dataclass(frozen=True)
class GapEstimate:
    t: int
    N: int
    estimate: float
    half_width: float
    lo: float
    hi: float
    replicas: int
    seed: int

    def to_dict(self) -> dict:
        return {"t": self.t, "N": self.N, "estimate": self.estimate, "half_width": self.half_width,
                "lo": self.lo, "hi": self.hi, "replicas": self.replicas, "seed": self.seed}


def boundary_gap(spec: GSpec, structure: BlockStructure, t: int, N: int, replicas: int,
                 seed: int, threads: int = 1, level: float = 0.95) -> GapEstimate:
    """``2 P(discrepancy at t)`` between the plus- and minus-boundary paths."""
    if replicas < MIN_REPLICAS:
        raise StatisticalFloorError(f"replicas={replicas} is below the floor of {MIN_REPLICAS}")
    pair = sample_coupled_pair(spec, structure, "minus", "plus", N, t, seed, replicas, threads)
    hits = int(pair.discrepancy()[:, -1].sum())
    iv: Interval = wilson(hits, replicas, level)
    return GapEstimate(t, N, 2 * iv.estimate, 2 * iv.half_width, 2 * iv.lo, 2 * iv.hi, replicas, seed)


def quad_coupling_run(spec: GSpec, structure: BlockStructure, N: int, horizon: int, seed: int,
                      replicas: int = 1, threads: int = 1) -> QuadCoupling:
    """Plus/minus pairs under ``spec.rule`` and under the identity rule, same uniforms.

    ``spec.rule`` must be 1-Lipschitz; the discrepancies of the first pair are
    then contained in those of the second.
    """
    chk = lipschitz_check(spec.rule, 1.0)
    if not chk.ok:
        raise ValueError(f"rule is not 1-Lipschitz: slope {chk.constant:.6g} on {chk.worst_pair}")
    plan = build_plan(structure, N, horizon)
    tilde = _coupled(plan, spec.rule, "minus", "plus", seed, replicas, threads)
    bar = _coupled(plan, MajorityRule.identity(), "minus", "plus", seed, replicas, threads)
    return QuadCoupling(N, horizon, seed, tilde, bar)


def linear_oracle(spec: GSpec, structure: BlockStructure, N: int, horizon: int,
                  boundary: Boundary = "plus") -> np.ndarray:
    """Exact ``E[X_t]`` on ``(-N, horizon]`` under the identity rule.

    The rule is linear, so expectations propagate as ``m_t = h * mean(m_s, s in S_t)``.
    """
    plan = build_plan(structure, N, horizon)
    m = _init(plan, 1, boundary)[0].astype(np.float64)
    off = plan.n_boundary
    for j, sp in enumerate(plan.sites):
        m[off + j] = sp.h * m[sp.idx].mean() if sp.influential else 0.0
    return m[off:]
