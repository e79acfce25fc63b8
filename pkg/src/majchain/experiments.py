"""Monte Carlo checks of the block laws, connectivity, phase scans and the gap diagnostic.

Each check returns :class:`McReport` records. ``passed`` is ``None`` when the
reference is a bound that is only proved for large scales and is shown for
comparison only.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import ks_2samp

from . import rng
from .chain import ChainSpec, CriterionReport, criterion_series, exact_sign_flip_prob, run_chain
from .environment import BlockStructure, BoundaryError, sample_environment
from .gfunction import GSpec
from .sampler import boundary_gap
from .scales import ScaleTable
from .stats import Interval, mean_ci, wilson, z_value

DEFAULT_BUDGET = 1 << 22


class InfeasibleError(ValueError):
    """Scale too large for the window budget."""

    def __init__(self, message: str, required: int):
        super().__init__(message)
        self.required = required


@dataclass
class McReport:
    quantity: str
    estimate: float
    half_width: float
    replicas: int
    seed: int
    reference: Optional[float]
    passed: Optional[bool]
    kind: str = "two-sided"  # two-sided | upper-bound | lower-bound | bracket | info
    note: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _two_sided(name, iv: Interval, ref, seed, sigmas=3.0, **kw) -> McReport:
    ok = abs(iv.estimate - ref) <= sigmas * iv.se
    return McReport(name, iv.estimate, iv.half_width, iv.n, seed, ref, bool(ok), "two-sided", **kw)


def _upper(name, iv: Interval, bound, seed, sigmas=3.0, certified=True, **kw) -> McReport:
    ok = iv.estimate <= bound + sigmas * iv.se
    return McReport(name, iv.estimate, iv.half_width, iv.n, seed, bound,
                    bool(ok) if certified else None, "upper-bound", **kw)


# pattern waiting times

def paper_wait_sum(ell: int) -> int:
    """``2 + 4 + ... + 2**ell``."""
    return (1 << (ell + 1)) - 2


def conway_wait(pattern: Sequence[int]) -> int:
    """Expected waiting time of ``pattern`` in fair bits: sum of ``2**j`` over self-overlaps of length ``j``."""
    p = tuple(pattern)
    return sum(1 << j for j in range(1, len(p) + 1) if p[:j] == p[-j:])


def wait_survival(ell: int, n: int) -> float:
    """``P(T > n)`` for the pattern ``1^(ell-1) 0``, by a run-length recursion."""
    probs = np.zeros(ell)
    probs[0] = 1.0
    for _ in range(n):
        new = np.zeros(ell)
        new[1:] += probs[:-1] / 2
        new[-1] += probs[-1] / 2
        new[0] += probs[:-1].sum() / 2 if ell > 1 else 0.0  # a 0 after a short run restarts
        probs = new
    return float(probs.sum())


@dataclass
class WordSample:
    ell: int
    ell_prev: int
    T: np.ndarray        # diameter of the word
    N: np.ndarray        # number of (k-1)-words inside
    begin: np.ndarray    # diameter of the beginning


def sample_words(ell: int, ell_prev: int, m: int, replicas: int, seed: int,
                 threads: int = 1) -> WordSample:
    """``replicas`` independent k-words built from fresh fair bits after a leading 0."""

    def run(b, start, stop):
        rows = stop - start
        run_len = np.zeros(rows, dtype=np.int64)
        T = np.zeros(rows, dtype=np.int64)
        N = np.zeros(rows, dtype=np.int64)
        beg = np.zeros(rows, dtype=np.int64)
        alive = np.ones(rows, dtype=bool)
        lo = 1
        while alive.any():
            hi = lo + rng.SITE_CHUNK - 1
            u = rng.replica_uniforms(seed, (rng.WORD, ell, ell_prev), b, rows, lo, hi)
            for c in range(u.shape[1]):
                j = lo + c
                one = u[:, c] <= 0.5
                zero = alive & ~one
                closes_child = zero & (run_len >= ell_prev - 1)
                N += closes_child
                beg = np.where(closes_child & (N == m) & (beg == 0), j, beg)
                ends = zero & (run_len >= ell - 1)
                T = np.where(ends, j, T)
                alive &= ~ends
                run_len = np.where(one, run_len + 1, 0)
                if not alive.any():
                    break
            lo = hi + 1
        beg = np.where(beg == 0, T, beg)
        return T, N, beg

    parts = rng.run_batches(run, replicas, threads)
    return WordSample(ell, ell_prev, *(np.concatenate([p[i] for p in parts]) for i in range(3)))


def _ratio_ci(num: np.ndarray, den: np.ndarray, level: float = 0.95) -> Interval:
    """Ratio estimator ``sum num / sum den`` with a delta-method standard error."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    n = num.size
    r = num.sum() / den.sum()
    resid = num - r * den
    se = math.sqrt(resid.var(ddof=1) / n) / den.mean() if n > 1 else math.inf
    z = z_value(level)
    return Interval(float(r), float(r - z * se), float(r + z * se), se, n)


def geometric_ks(N: np.ndarray, p: float) -> float:
    """Kolmogorov distance between the empirical law of ``N`` and Geometric(p) on ``{1, 2, ...}``."""
    N = np.asarray(N)
    top = int(N.max())
    j = np.arange(1, top + 1)
    emp = np.searchsorted(np.sort(N), j, side="right") / N.size
    geo = 1.0 - (1.0 - p) ** j
    return float(np.max(np.abs(emp - geo)))


def required_window(table: ScaleTable, k: int) -> int:
    """Window needed for environment statistics up to scale ``k`` (activity needs ``k + 1``)."""
    return 1024 * table.beta(min(k + 1, table.k_max))


def verify_block_laws(table: ScaleTable, ks: Sequence[int], replicas: int, seed: int,
                      window: int = 1 << 18, tail_js: Sequence[int] = (1, 2, 3),
                      budget: int = DEFAULT_BUDGET, threads: int = 1) -> list[McReport]:
    reports: list[McReport] = []
    ks = list(ks)
    for k in ks:
        if k not in table.rows:
            raise ValueError(f"scale {k} outside the table")
        need = required_window(table, k)
        if need > budget:
            raise InfeasibleError(f"scale {k} needs a window of {need} sites, budget is {budget}", need)
    eps = table.epsilon
    for k in ks:
        ell = table.ell(k)
        prev = table.row(k).ell_prev
        m = table.children_in_beginning(k) if k > table.k_star else 1 << 62
        words = sample_words(ell, prev, m, replicas, seed, threads)
        beta = table.beta(k)

        # (a) mean waiting time
        iv = mean_ci(words.T)
        reports.append(McReport(f"mean_T[k={k}]", iv.estimate, iv.half_width, replicas, seed,
                                float(paper_wait_sum(ell)),
                                bool(abs(iv.estimate - paper_wait_sum(ell)) <= 4 * iv.se), "two-sided",
                                note="reference 2+4+...+2^ell; pass within 4 SE",
                                extra={"se": iv.se, "conway_reference": conway_wait(table.pattern(k))}))
        reports.append(_two_sided(f"mean_T_conway[k={k}]", iv, float(conway_wait(table.pattern(k))), seed,
                                  sigmas=4.0, note="reference from pattern self-overlaps; pass within 4 SE"))

        # (b) tail of the waiting time
        for j in tail_js:
            hits = int(np.sum(words.T >= j * beta))
            w = wilson(hits, replicas)
            reports.append(_upper(f"tail_T_ge[k={k},j={j}]", w, math.exp(-j), seed,
                                  note="P(T >= j beta) <= e^-j + 3 SE",
                                  extra={"se": w.se, "exact": wait_survival(ell, j * beta - 1),
                                         "exact_strict": wait_survival(ell, j * beta)}))

        if k > table.k_star:
            # (c) number of children
            nu = table.nu(k)
            p_hat = 1.0 / words.N.mean()
            se = math.sqrt(p_hat ** 2 * (1 - p_hat) / replicas)  # delta method for 1 / mean of a geometric
            p_paper = paper_wait_sum(prev) / beta
            p_exact = conway_wait((1,) * (prev - 1) + (0,)) / beta
            ks_dist = geometric_ks(words.N, p_hat)
            extra = {"se": se, "ks": ks_dist, "p_exact": p_exact, "bracket": [1 / nu, 2 / nu]}
            reports.append(McReport(f"p_children[k={k}]", p_hat, 1.96 * se, replicas, seed, p_paper,
                                    bool(abs(p_hat - p_paper) <= 3 * se), "two-sided",
                                    note="reference E[T^(k-1)]/beta_k with E[T] = 2+...+2^ell", extra=extra))
            reports.append(McReport(f"p_children_exact[k={k}]", p_hat, 1.96 * se, replicas, seed, p_exact,
                                    bool(abs(p_hat - p_exact) <= 3 * se), "two-sided",
                                    note="reference E[T^(k-1)]/beta_k with the self-overlap mean", extra=extra))
            reports.append(McReport(f"p_children_bracket[k={k}]", p_hat, 1.96 * se, replicas, seed, None,
                                    bool(1 / nu <= p_hat <= 2 / nu), "bracket", note="1/nu <= p <= 2/nu",
                                    extra=extra))
            reports.append(McReport(f"children_ks[k={k}]", ks_dist, 0.0, replicas, seed, 0.01,
                                    bool(ks_dist < 0.01), "upper-bound", note="KS distance to Geometric(p_hat)"))
            # beginning share from words: E[diam beginning] / beta
            iv = mean_ci(words.begin / beta)
            reports.append(_upper(f"begin_share_words[k={k}]", iv, 2 * nu ** (-eps), seed,
                                  note="E[diam beginning]/beta_k <= 2 nu^-eps"))

    # (d), (e) from one long environment
    env = sample_environment((0, window - 1), seed, 0)
    bs = BlockStructure(env, table)
    for k in ks:
        blocks = [b for b in bs.partition_blocks(k) if b.determinate]
        if len(blocks) < 2:
            continue
        diam = np.array([b.diam for b in blocks])
        try:
            beg = np.array([len(bs.beginning(b)) for b in blocks])
        except BoundaryError:
            continue
        iv = _ratio_ci(beg, diam)
        if k > table.k_star:
            reports.append(_upper(f"begin_share[k={k}]", iv, 2 * table.nu(k) ** (-eps), seed,
                                  note="Q(t in beginning) <= 2 nu^-eps"))
        else:
            f = math.floor(table.beta(k) ** eps)
            lb = 1 - 6 * f * math.exp(-f)
            reports.append(McReport(f"begin_share[k={k}]", iv.estimate, iv.half_width, iv.n, seed, lb,
                                    bool(iv.estimate >= lb - 3 * iv.se), "lower-bound",
                                    note="Q(t in beginning) >= 1 - 6 f e^-f, f = floor(beta^eps)"))
        if k <= bs.k_top:
            bad = np.array([bs.classify_block(b) == "bad" for b in blocks], dtype=np.float64)
            iv = _ratio_ci(bad * diam, diam)
            reports.append(McReport(f"bad_block[k={k}]", iv.estimate, iv.half_width, iv.n, seed, 2.0 ** (-k),
                                    None, "upper-bound",
                                    note="bound not certified at this scale (proved for large k_star)"))
    return reports


# connectivity

def connectivity_bound(table: ScaleTable, k: int, k_max: int) -> float:
    eps = table.epsilon
    return 1.0 - sum(2.0 ** (-j) + 2.0 * table.nu(j) ** (-eps) for j in range(k, k_max + 1))


def connectivity_rate(table: ScaleTable, k: int, k_max: int, replicas: int, seed: int,
                      budget: int = DEFAULT_BUDGET, threads: int = 1) -> McReport:
    """Frequency of the window event that the origin's blocks from ``k`` to ``k_max`` are good
    and avoid their beginnings; each replica uses its own environment."""
    if k_max >= k and k_max > table.k_max - 1:
        raise ValueError(f"k_max must be at most {table.k_max - 1}")
    top = max(k, min(k_max, table.k_max - 1))
    half = 8 * table.beta(min(top + 1, table.k_max))
    if 2 * half > budget:
        raise InfeasibleError(f"connectivity at scale {k_max} needs {2 * half} sites, budget is {budget}", 2 * half)

    def run(b, start, stop):
        out = np.zeros(3, dtype=np.int64)  # true, false, undetermined
        for r in range(start, stop):
            w = half
            while True:
                env = sample_environment((-w, w), seed, r)
                res = BlockStructure(env, table).check_connectivity(k, k_max) if k_max >= k else True
                if res is not None or 4 * w > budget:
                    break
                w *= 2
            out[0 if res is True else 1 if res is False else 2] += 1
        return out

    counts = sum(rng.run_batches(run, replicas, threads, size=64))
    decided = int(counts[0] + counts[1])
    w = wilson(int(counts[0]), max(decided, 1))
    ref = connectivity_bound(table, k, k_max) if k_max >= k else 1.0
    return McReport(f"connectivity[k={k},K={k_max}]", w.estimate, w.half_width, replicas, seed, ref, None,
                    "lower-bound", note="bound informative only at small scales",
                    extra={"true": int(counts[0]), "false": int(counts[1]), "undetermined": int(counts[2])})


# phase scan

@dataclass
class PhaseRow:
    label: str
    rule: str
    p_plus: Interval
    mean_final: Interval
    ks_pvalue: float
    persistence: Optional[float]
    flip_sum: Optional[float]
    h_product: float
    verdict: Optional[str] = None
    leading_verdict: Optional[str] = None
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"label": self.label, "rule": self.rule, **self.params,
                "p_plus": self.p_plus.estimate, "p_plus_half_width": self.p_plus.half_width,
                "mean_final": self.mean_final.estimate, "mean_final_half_width": self.mean_final.half_width,
                "mean_final_se": self.mean_final.se, "ks_pvalue": self.ks_pvalue,
                "persistence": "" if self.persistence is None else self.persistence,
                "flip_sum": "" if self.flip_sum is None else self.flip_sum,
                "h_product": self.h_product,
                "verdict": self.verdict or "", "leading_verdict": self.leading_verdict or ""}


@dataclass
class PhasePoint:
    label: str
    spec: ChainSpec
    table: Optional[ScaleTable] = None
    params: dict = field(default_factory=dict)


def persistence(spec: ChainSpec) -> tuple[float, float]:
    """For the pure rule: ``prod (1 - P(flip))`` and ``sum P(flip)`` from the exact oracle."""
    prod, total = 1.0, 0.0
    for k in range(spec.k_lo, spec.M):
        p, _ = exact_sign_flip_prob(spec.n_at(k), spec.h_at(k + 1))
        prod *= 1.0 - p
        total += p
    return prod, total


def phase_scan(points: Sequence[PhasePoint], replicas: int, seed: int, threads: int = 1) -> list[PhaseRow]:
    rows = []
    for i, pt in enumerate(points):
        spec = pt.spec
        plus = run_chain(spec, 1.0, _sub_seed(seed, i, 0), replicas, threads)
        minus = run_chain(spec, -1.0, _sub_seed(seed, i, 1), replicas, threads)
        fin = plus.final
        p_plus = wilson(int(np.sum(fin > 0)), replicas)
        mean = mean_ci(fin)
        ks_p = float(ks_2samp(fin, minus.final).pvalue)
        pers = flips = None
        if spec.rule.kind == "pure":
            pers, flips = persistence(spec)
        hprod = float(np.prod([spec.h_at(k) for k in range(spec.k_lo + 1, spec.M + 1)]))
        verdict = lead = None
        if pt.table is not None:
            rep = criterion_series(pt.table)
            verdict, lead = rep.verdict, rep.leading_verdict
        rows.append(PhaseRow(pt.label, spec.rule.kind, p_plus, mean, ks_p, pers, flips, hprod,
                             verdict, lead, dict(pt.params)))
    return rows


def _sub_seed(seed: int, i: int, j: int) -> int:
    # a deterministic child seed per grid point and boundary sign
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(rng.SCAN, i, j)).generate_state(1, np.uint64)[0])


# gap diagnostic

@dataclass
class GapReport:
    rows: list[dict]
    verdict: str
    monotone: dict

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "monotone": self.monotone, "rows": self.rows}


def uniqueness_diagnostic(spec: GSpec, structure: BlockStructure, sites: Sequence[int],
                          Ns: Sequence[int], replicas: int, seed: int, threads: int = 1) -> GapReport:
    Ns = sorted(Ns)
    rows = []
    monotone = {}
    for t in sites:
        ests = []
        for N in Ns:
            g = boundary_gap(spec, structure, t, N, replicas, seed, threads)
            rows.append(g.to_dict())
            ests.append(g)
        monotone[str(t)] = all(b.estimate <= a.estimate + a.half_width + b.half_width
                               for a, b in zip(ests, ests[1:]))
    last = [r for r in rows if r["N"] == Ns[-1]]
    if any(r["estimate"] > 3 * r["half_width"] for r in last):
        verdict = "gap detected"
    elif all(r["estimate"] <= r["half_width"] for r in last):
        verdict = "consistent with uniqueness"
    else:
        verdict = "inconclusive"
    return GapReport(rows, verdict, monotone)
