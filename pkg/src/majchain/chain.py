"""The magnetization chain across scales, exact sign-flip probabilities, and the toy map.

A step from scale ``k+1`` down to ``k`` averages ``n_k`` independent signs
with mean ``h_{k+1} phi(xi_{k+1})``. The number of ``+`` signs is drawn by
inverse CDF from a single uniform, so chains started from different values
with the same uniforms are ordered, and ``U -> 1 - U`` mirrors a chain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

from . import rng
from .environment import BlockStructure, BoundaryError
from .gfunction import MajorityRule, lipschitz_check
from .scales import ScaleTable, exp2

MAX_EXACT_N = 10 ** 6
_TINY = np.finfo(float).tiny


class ChainError(ValueError):
    pass


# exact binomial sums

def _log_pmf(n: int, p: float, j: np.ndarray) -> np.ndarray:
    return (gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)
            + j * math.log(p) + (n - j) * math.log1p(-p))


def binom_cdf(c: int, n: int, p: float) -> float:
    """``P(Bin(n, p) <= c)`` by direct summation of the mass function in log space."""
    if n > MAX_EXACT_N:
        raise ChainError(f"n={n} exceeds the exact-summation limit {MAX_EXACT_N}")
    if c < 0:
        return 0.0
    if c >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    # sum the smaller side and complement, so the result keeps relative accuracy
    mode = (n + 1) * p
    if c < mode:
        j = np.arange(0, c + 1, dtype=np.float64)
        return _sum_exp(_log_pmf(n, p, j))
    j = np.arange(c + 1, n + 1, dtype=np.float64)
    return max(0.0, 1.0 - _sum_exp(_log_pmf(n, p, j)))


def _sum_exp(logs: np.ndarray) -> float:
    top = float(logs.max())
    if top == -math.inf:
        return 0.0
    return math.exp(top) * math.fsum(np.exp(logs - top).tolist())


def binom_sf(c: int, n: int, p: float) -> float:
    """``P(Bin(n, p) > c)``, summed directly on the upper side."""
    if c >= n:
        return 0.0
    if c < 0:
        return 1.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    mode = (n + 1) * p
    if c + 1 > mode:
        j = np.arange(c + 1, n + 1, dtype=np.float64)
        return _sum_exp(_log_pmf(n, p, j))
    return max(0.0, 1.0 - binom_cdf(c, n, p))


def exact_sign_flip_prob(n: int, m: float) -> tuple[float, float]:
    """``P(sum <= 0)`` and ``P(sum < 0)`` for ``n`` independent signs of mean ``m``."""
    if n < 1:
        raise ChainError("n must be positive")
    if abs(m) > 1:
        raise ChainError("mean must lie in [-1, 1]")
    p = (1.0 + m) / 2.0
    return binom_cdf(n // 2, n, p), binom_cdf((n + 1) // 2 - 1, n, p)


# schedules

@dataclass(frozen=True)
class ChainSpec:
    """Sizes ``n_k`` and biases ``h_k`` for ``k_lo <= k <= M``.

    Index ``i`` of ``n``/``h`` is scale ``k_lo + i``; the step into scale
    ``k`` uses ``n[k]`` and ``h[k+1]`` (``h[k_lo]`` is never read).
    """

    k_lo: int
    M: int
    n: tuple[int, ...]
    h: tuple[float, ...]
    rule: MajorityRule

    def __post_init__(self):
        if self.M <= self.k_lo:
            raise ChainError("need M > k_lo")
        size = self.M - self.k_lo + 1
        if len(self.n) < size or len(self.h) < size:
            raise ChainError(f"schedules must cover scales {self.k_lo}..{self.M}")
        object.__setattr__(self, "n", tuple(int(x) for x in self.n[:size]))
        object.__setattr__(self, "h", tuple(float(x) for x in self.h[:size]))
        if any(x < 1 for x in self.n):
            raise ChainError("n_k must be >= 1")
        if any(not 0 <= x <= 0.5 for x in self.h[1:]):
            raise ChainError("h_k must lie in [0, 1/2]")

    @property
    def depth(self) -> int:
        return self.M - self.k_lo

    def n_at(self, k: int) -> int:
        return self.n[k - self.k_lo]

    def h_at(self, k: int) -> float:
        return self.h[k - self.k_lo]

    @classmethod
    def constant(cls, n: int, h: float, rule: MajorityRule, depth: int, k_lo: int = 1) -> "ChainSpec":
        size = depth + 1
        return cls(k_lo, k_lo + depth, (n,) * size, (h,) * size, rule)

    @classmethod
    def from_table(cls, table: ScaleTable, rule: MajorityRule, k_lo: int, M: int,
                   n_cap: int = MAX_EXACT_N) -> "ChainSpec":
        """``n_k = ceil(beta_k ** (1 - eps))`` capped at ``n_cap``; ``h`` from the table."""
        ks = range(k_lo, M + 1)
        n = tuple(min(n_cap, math.ceil(exp2((1 - table.epsilon) * table.ell(k)))) for k in ks)
        return cls(k_lo, M, n, tuple(table.h(k) for k in ks), rule)

    @classmethod
    def from_environment(cls, structure: BlockStructure, rule: MajorityRule, k_lo: int, M: int,
                         origin: int = 0) -> "ChainSpec":
        """``n_k = |act(B^k(origin))|``; every block must be good-sized."""
        table = structure.table
        ns = []
        for k in range(k_lo, M + 1):
            blk = structure.block_of(k, origin)
            if not blk.determinate:
                raise BoundaryError(f"block of the origin at scale {k} is not determinate")
            size = len(structure.active_points(k, blk))
            if not table.n1(k) < size < table.n2(k):
                raise ChainError(f"|act| = {size} at scale {k} is outside ({table.n1(k):.4g}, {table.n2(k):.4g})")
            ns.append(size)
        return cls(k_lo, M, tuple(ns), tuple(table.h(k) for k in range(k_lo, M + 1)), rule)

    def to_dict(self) -> dict:
        return {"k_lo": self.k_lo, "M": self.M, "n": list(self.n), "h": list(self.h), "rule": self.rule.to_dict()}


# sampling

def _signs_mean(xi_next: np.ndarray, h: float, rule: MajorityRule) -> np.ndarray:
    m = h * np.asarray(rule(xi_next), dtype=np.float64)
    if np.any(np.abs(m) > 1):
        raise ChainError("sign mean outside [-1, 1]")
    return m


def step_from_uniforms(xi_next: np.ndarray, n: int, h: float, rule: MajorityRule,
                       u: np.ndarray) -> np.ndarray:
    p = (1.0 + _signs_mean(np.asarray(xi_next, dtype=np.float64), h, rule)) / 2.0
    c = binom.ppf(np.clip(u, _TINY, 1.0), n, p)
    return (2.0 * c - n) / n


def step_down(xi_next: float, n: int, h: float, rule: MajorityRule, seed: int,
              size: Optional[int] = None):
    """One transition; ``size`` draws independent copies (keyed by index)."""
    if abs(xi_next) > 1:
        raise ChainError("|xi_next| must be <= 1")
    if not 0 <= h <= 0.5:
        raise ChainError("h must lie in [0, 1/2]")
    if n < 1:
        raise ChainError("n must be positive")
    k = 1 if size is None else size
    u = rng.positional_uniforms(0, k - 1, seed, rng.CHAIN)
    out = step_from_uniforms(np.full(k, float(xi_next)), n, h, rule, u)
    return float(out[0]) if size is None else out


def sign_change_scale(xi: np.ndarray, k_lo: int) -> np.ndarray:
    """Largest ``k < M`` where the chain is not strictly on the side of ``xi_M``; ``k_lo - 1`` if none."""
    ref = np.where(xi[:, -1] < 0, -1.0, 1.0)[:, None]
    crossed = ref * xi[:, :-1] <= 0
    any_ = crossed.any(axis=1)
    last = crossed.shape[1] - 1 - np.argmax(crossed[:, ::-1], axis=1)
    return np.where(any_, k_lo + last, k_lo - 1)


@dataclass
class Trajectory:
    """Replicated chains; column ``i`` of ``xi`` is scale ``k_lo + i`` (last column is ``M``)."""

    k_lo: int
    M: int
    xi: np.ndarray
    seed: int
    D: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None

    @property
    def sigma(self) -> np.ndarray:
        return np.sign(self.xi).astype(np.int8)

    @property
    def S_M(self) -> np.ndarray:
        return sign_change_scale(self.xi, self.k_lo)

    def at(self, k: int) -> np.ndarray:
        return self.xi[:, k - self.k_lo]

    @property
    def final(self) -> np.ndarray:
        return self.xi[:, 0]

    def rows(self) -> list[dict]:
        out = []
        sig = self.sigma
        for r in range(self.xi.shape[0]):
            for i in range(self.xi.shape[1] - 1, -1, -1):
                out.append({"replica": r, "k": self.k_lo + i, "xi": float(self.xi[r, i]), "sigma": int(sig[r, i])})
        return out


def _check_start(spec: ChainSpec, xi_M: float) -> None:
    if abs(xi_M) > 1:
        raise ChainError("|xi_M| must be <= 1")
    n = spec.n_at(spec.M)
    c = (xi_M * n + n) / 2
    if abs(c - round(c)) > 1e-9:
        raise ChainError(f"xi_M * n_M must be an integer of the parity of n_M (n_M={n})")


def _chain_uniforms(spec: ChainSpec, seed: int, tag: int, batch: int, rows: int) -> np.ndarray:
    return rng.replica_uniforms(seed, (rng.CHAIN, tag), batch, rows, spec.k_lo, spec.M - 1)


def run_chain(spec: ChainSpec, xi_M: float, seed: int, replicas: int = 1, threads: int = 1,
              mirror: bool = False) -> Trajectory:
    """Run ``replicas`` chains from ``xi_M`` down to ``k_lo``.

    ``mirror`` replaces every uniform ``U`` by ``1 - U``.
    """
    _check_start(spec, xi_M)

    def run(b, start, stop):
        u = _chain_uniforms(spec, seed, 0, b, stop - start)
        if mirror:
            u = 1.0 - u
        xi = np.empty((stop - start, spec.depth + 1))
        xi[:, -1] = xi_M
        for k in range(spec.M - 1, spec.k_lo - 1, -1):
            i = k - spec.k_lo
            xi[:, i] = step_from_uniforms(xi[:, i + 1], spec.n_at(k), spec.h_at(k + 1), spec.rule, u[:, i])
        return xi

    return Trajectory(spec.k_lo, spec.M, np.concatenate(rng.run_batches(run, replicas, threads)), seed)


@dataclass
class CoupledChain:
    plain: Trajectory  # xi, the chain under (phi, h)
    tilde: Trajectory  # the chain under (phi~, lam h)
    lam: float
    delta: float

    @property
    def D(self) -> np.ndarray:
        return self.plain.D

    @property
    def gamma(self) -> np.ndarray:
        return self.plain.gamma


def coupled_chain_run(spec: ChainSpec, lam: float, delta: float, xi_M: float, seed: int,
                      replicas: int = 1, threads: int = 1) -> CoupledChain:
    """Chain under ``spec.rule`` glued to the chain under its 1-Lipschitz modification.

    While ``gamma = 1`` the two coincide; the first exit from ``[-delta, delta]``
    sets ``gamma = 0`` and afterwards the plain chain runs on its own uniforms.
    ``D`` is the largest scale with ``gamma = 0`` (``k_lo - 1`` if none).
    """
    _check_start(spec, xi_M)
    if abs(xi_M) > delta:
        raise ChainError("|xi_M| must be <= delta")
    chk = lipschitz_check(spec.rule, lam, -delta, delta)
    if not chk.ok:
        raise ChainError(f"rule is not {lam}-Lipschitz on [-{delta}, {delta}]: slope {chk.constant:.6g} at {chk.worst_pair}")
    hmax = max(spec.h[1:])
    if lam * hmax > 0.5:
        raise ChainError(f"lam * h = {lam * hmax:.6g} exceeds 1/2")
    tilde_rule = MajorityRule.tilde(spec.rule, lam, delta)

    def run(b, start, stop):
        rows = stop - start
        ut = _chain_uniforms(spec, seed, 0, b, rows)
        up = _chain_uniforms(spec, seed, 1, b, rows)
        xt = np.empty((rows, spec.depth + 1))
        xp = np.empty_like(xt)
        gam = np.zeros((rows, spec.depth + 1), dtype=bool)
        xt[:, -1] = xp[:, -1] = xi_M
        gam[:, -1] = True
        for k in range(spec.M - 1, spec.k_lo - 1, -1):
            i = k - spec.k_lo
            n, h = spec.n_at(k), spec.h_at(k + 1)
            xt[:, i] = step_from_uniforms(xt[:, i + 1], n, lam * h, tilde_rule, ut[:, i])
            free = step_from_uniforms(xp[:, i + 1], n, h, spec.rule, up[:, i])
            coupled = gam[:, i + 1]
            xp[:, i] = np.where(coupled, xt[:, i], free)
            gam[:, i] = coupled & (np.abs(xp[:, i]) <= delta)
        return xt, xp, gam

    parts = rng.run_batches(run, replicas, threads)
    xt = np.concatenate([p[0] for p in parts])
    xp = np.concatenate([p[1] for p in parts])
    gam = np.concatenate([p[2] for p in parts])
    off = ~gam
    last = off.shape[1] - 1 - np.argmax(off[:, ::-1], axis=1)
    D = np.where(off.any(axis=1), spec.k_lo + last, spec.k_lo - 1)
    plain = Trajectory(spec.k_lo, spec.M, xp, seed, D=D, gamma=gam)
    return CoupledChain(plain, Trajectory(spec.k_lo, spec.M, xt, seed), lam, delta)


def escape_prob(n: int, m: float, delta: float) -> float:
    """``P(|mean of n signs with mean m| > delta)``, exactly."""
    p = (1 + m) / 2
    hi = math.floor(n * (1 + delta) / 2 + 1e-9)  # C > hi  <=> 2C - n > n delta
    lo = math.ceil(n * (1 - delta) / 2 - 1e-9)   # C < lo  <=> 2C - n < -n delta
    return binom_sf(hi, n, p) + binom_cdf(lo - 1, n, p)


def decoupling_bound(spec: ChainSpec, delta: float, L: int, grid: int = 41) -> float:
    """Union bound on ``P(D >= L)``: worst-case exit probability summed over ``k >= L``."""
    zs = np.linspace(-delta, delta, grid)
    phis = np.abs(np.asarray(spec.rule(zs)))
    total = 0.0
    for k in range(L, spec.M):
        h = spec.h_at(k + 1)
        total += max(escape_prob(spec.n_at(k), float(h * f), delta) for f in np.unique(phis))
    return min(1.0, total)


# criterion series
#
# Every term has the form exp(-2**x); terms are carried through their
# exponent x, since 2**x overflows long before the series is decided.

@dataclass
class CriterionReport:
    ks: list[int]
    x_conv: list[float]  # term exp(-h_{k+1}^2 n1(k) / 16) = exp(-2**x)
    x_div: list[float]   # term exp(-2 h_{k+1}^2 n2(k))
    x_lead: list[float]  # term exp(-h_{k+1}^2 beta_k^(1-eps))
    verdict: str
    leading_verdict: str
    details: dict = field(default_factory=dict)

    @staticmethod
    def terms(xs: Sequence[float]) -> list[float]:
        return [math.exp(-exp2(x)) for x in xs]

    def rows(self) -> list[dict]:
        out = []
        cols = {"conv": self.terms(self.x_conv), "div": self.terms(self.x_div), "lead": self.terms(self.x_lead)}
        partial = {name: np.cumsum(v).tolist() for name, v in cols.items()}
        for i, k in enumerate(self.ks):
            row = {"k": k}
            for name in ("conv", "div", "lead"):
                row[f"{name}_term"] = cols[name][i]
                row[f"{name}_partial"] = partial[name][i]
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "leading_verdict": self.leading_verdict,
                "details": self.details, "rows": self.rows()}


WINDOW = 10
RATIO = 0.5
TAIL = 1e-12
FLOOR = 0.1


def log_ratio(x0: float, x1: float) -> float:
    """``log(t1 / t0)`` for ``t = exp(-2**x)``."""
    d = x1 - x0
    if d > 0:
        return -exp2(x0 + d + math.log2(-math.expm1(-d * math.log(2))))
    if d < 0:
        return exp2(x0 + math.log2(-math.expm1(d * math.log(2))))
    return 0.0


def summable_hint(xs: Sequence[float]) -> tuple[bool, dict]:
    """Last ``WINDOW`` ratios below ``RATIO`` and geometric tail bound below ``TAIL``."""
    tail = list(xs[-(WINDOW + 1):])
    if len(tail) < WINDOW + 1:
        return False, {"reason": "too few terms"}
    log_r = max(log_ratio(a, b) for a, b in zip(tail, tail[1:]))
    ok_ratio = log_r < math.log(RATIO)
    if ok_ratio:
        # last term times r / (1 - r)
        log_tail = -exp2(tail[-1]) + log_r - math.log1p(-math.exp(log_r))
    else:
        log_tail = math.inf
    return ok_ratio and log_tail < math.log(TAIL), {"max_log_ratio": log_r, "log_tail_bound": log_tail}


def divergent_hint(xs: Sequence[float]) -> tuple[bool, dict]:
    """Last ``WINDOW`` terms all at least ``FLOOR``."""
    tail = list(xs[-WINDOW:])
    if len(tail) < WINDOW:
        return False, {"reason": "too few terms"}
    lo = -exp2(max(tail))
    return lo >= math.log(FLOOR), {"min_log_term": lo}


def _verdict(conv: list[float], div: list[float]) -> tuple[str, dict]:
    s, ds = summable_hint(conv)
    d, dd = divergent_hint(div)
    v = "summable" if s else "divergent" if d else "inconclusive"
    return v, {"summable_check": ds, "divergent_check": dd}


def criterion_series(table: ScaleTable, K: Optional[int] = None) -> CriterionReport:
    """Terms of the two bounding series for ``k_star <= k < K`` (defaults to ``table.k_max``).

    The verdict is a hint from finitely many terms: "summable" is read off the
    ``n1`` series, "divergent" off the ``n2`` series. The same hint applied to
    the leading-order series ``exp(-h_{k+1}^2 beta_k^(1-eps))`` is reported as
    ``leading_verdict``.
    """
    K = table.k_max if K is None else K
    if K > table.k_max:
        raise ChainError(f"table stops at {table.k_max}, K={K}")
    eps = table.epsilon
    ks, conv, div, lead = [], [], [], []
    for k in range(table.k_star, K):
        r, r1 = table.row(k), table.row(k + 1)
        ks.append(k)
        conv.append(2 * r1.log2_h + r.log2_n1 - 4)
        div.append(1 + 2 * r1.log2_h + r.log2_n2)
        lead.append(2 * r1.log2_h + (1 - eps) * r.ell)
    v, details = _verdict(conv, div)
    lv, ldet = _verdict(lead, lead)
    details["leading"] = ldet
    return CriterionReport(ks, conv, div, lead, v, lv, details)


def is_monotone(values: Sequence[float]) -> bool:
    d = np.diff(values)
    return bool(np.all(d <= 0) or np.all(d >= 0))


# toy model

HSchedule = Union[float, Sequence[float], Callable[[int], float]]


def _h_fn(h: HSchedule, k_lo: int) -> Callable[[int], float]:
    if callable(h):
        return h
    if np.isscalar(h):
        return lambda k: float(h)
    seq = list(h)
    return lambda k: float(seq[k - k_lo])


def toy_iterate(rule: MajorityRule, h: HSchedule, mu_M: float, k_lo: int, M: int) -> np.ndarray:
    """``mu_k = h_{k+1} phi(mu_{k+1})`` for ``k = M-1 ... k_lo``; entry ``i`` is scale ``k_lo + i``."""
    if abs(mu_M) > 1:
        raise ChainError("|mu_M| must be <= 1")
    hk = _h_fn(h, k_lo)
    mu = np.empty(M - k_lo + 1)
    mu[-1] = mu_M
    for k in range(M - 1, k_lo - 1, -1):
        mu[k - k_lo] = hk(k + 1) * rule(mu[k - k_lo + 1])
    return mu
