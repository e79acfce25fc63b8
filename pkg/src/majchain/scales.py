"""Deterministic scale arithmetic: pattern lengths, block sizes, biases, thresholds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

# beyond this exponent a count is larger than any window we can hold
_CAP_LOG2 = 62
CAP = 1 << _CAP_LOG2


class ScaleError(ValueError):
    """Invalid or infeasible scale configuration."""


def exp2(x: float) -> float:
    """``2**x`` that saturates to ``inf``/``0.0`` instead of raising."""
    if x > 1023:
        return math.inf
    if x < -1074:
        return 0.0
    return 2.0 ** x


def capped_floor_exp2(x: float) -> int:
    """``floor(2**x)`` for x >= 0, saturating at :data:`CAP`."""
    if x >= _CAP_LOG2:
        return CAP
    return int(math.floor(2.0 ** x))


@dataclass(frozen=True)
class ScaleParams:
    """Configuration of the scale hierarchy.

    ``ell_custom[i]`` and ``h_custom[i]`` are the values at scale
    ``k_star + i``. With ``h_custom`` unset the bias follows the power law
    ``h_k = beta_{k-1} ** -alpha``.
    """

    epsilon_star: float
    k_star: int
    alpha: Optional[float] = None
    h_custom: Optional[tuple[float, ...]] = None
    ell_custom: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not 0.0 < self.epsilon_star < 1.0:
            raise ScaleError(f"epsilon_star must lie in (0, 1), got {self.epsilon_star}")
        if int(self.k_star) != self.k_star or self.k_star < 1:
            raise ScaleError(f"k_star must be a positive integer, got {self.k_star}")
        if self.h_custom is None:
            if self.alpha is None or self.alpha <= 0:
                raise ScaleError("power-law h schedule needs alpha > 0")
        else:
            object.__setattr__(self, "h_custom", tuple(float(h) for h in self.h_custom))
            hs = self.h_custom
            if not hs:
                raise ScaleError("h_custom is empty")
            if any(h <= 0 for h in hs):
                raise ScaleError("h_custom entries must be positive")
            if any(b >= a for a, b in zip(hs, hs[1:])):
                raise ScaleError("h_custom must be strictly decreasing")
        if self.ell_custom is not None:
            object.__setattr__(self, "ell_custom", tuple(int(x) for x in self.ell_custom))
            ls = self.ell_custom
            if not ls:
                raise ScaleError("ell_custom is empty")
            if ls[0] < 1:
                raise ScaleError("ell_custom entries must be >= 1")
            if any(b <= a for a, b in zip(ls, ls[1:])):
                raise ScaleError("ell_custom must be strictly increasing")

    def ell(self, k: int) -> int:
        if self.ell_custom is None:
            return math.ceil((1.0 + self.epsilon_star) ** k)
        i = k - self.k_star
        if i == -1:
            # scale below the first custom entry: largest value keeping the schedule increasing
            return self.ell_custom[0] - 1
        if not 0 <= i < len(self.ell_custom):
            raise ScaleError(f"custom ell schedule does not cover scale {k}")
        return self.ell_custom[i]

    def max_scale(self) -> Optional[int]:
        """Largest scale the custom schedules can describe (``None`` if unbounded)."""
        limits = []
        if self.ell_custom is not None:
            limits.append(self.k_star + len(self.ell_custom) - 1)
        if self.h_custom is not None:
            limits.append(self.k_star + len(self.h_custom) - 1)
        return min(limits) if limits else None

    def to_dict(self) -> dict:
        d = {"epsilon_star": self.epsilon_star, "k_star": self.k_star}
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.h_custom is not None:
            d["h_custom"] = list(self.h_custom)
        if self.ell_custom is not None:
            d["ell_custom"] = list(self.ell_custom)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleParams":
        allowed = {"epsilon_star", "k_star", "alpha", "h_custom", "ell_custom"}
        unknown = set(d) - allowed
        if unknown:
            raise ScaleError(f"unknown scale keys: {sorted(unknown)}")
        return cls(
            epsilon_star=float(d["epsilon_star"]),
            k_star=int(d["k_star"]),
            alpha=None if d.get("alpha") is None else float(d["alpha"]),
            h_custom=None if d.get("h_custom") is None else tuple(d["h_custom"]),
            ell_custom=None if d.get("ell_custom") is None else tuple(d["ell_custom"]),
        )


@dataclass(frozen=True)
class ScaleRow:
    k: int
    ell: int
    ell_prev: int
    h: float
    log2_h: float
    log2_n1: float
    log2_n2: float

    @property
    def beta(self) -> int:
        return 1 << self.ell

    @property
    def nu(self) -> int:
        return 1 << (self.ell - self.ell_prev)

    @property
    def n1(self) -> float:
        return exp2(self.log2_n1)

    @property
    def n2(self) -> float:
        return exp2(self.log2_n2)

    @property
    def pattern(self) -> tuple[int, ...]:
        return (1,) * (self.ell - 1) + (0,)


@dataclass(frozen=True)
class ScaleTable:
    params: ScaleParams
    k_max: int
    rows: dict = field(repr=False)

    @property
    def k_star(self) -> int:
        return self.params.k_star

    @property
    def epsilon(self) -> float:
        return self.params.epsilon_star

    def row(self, k: int) -> ScaleRow:
        try:
            return self.rows[k]
        except KeyError:
            raise ScaleError(f"scale {k} outside table [{self.k_star}, {self.k_max}]") from None

    def scales(self) -> range:
        return range(self.k_star, self.k_max + 1)

    def ell(self, k: int) -> int:
        return self.row(k).ell

    def beta(self, k: int) -> int:
        return self.row(k).beta

    def nu(self, k: int) -> int:
        return self.row(k).nu

    def h(self, k: int) -> float:
        return self.row(k).h

    def n1(self, k: int) -> float:
        return self.row(k).n1

    def n2(self, k: int) -> float:
        return self.row(k).n2

    def pattern(self, k: int) -> tuple[int, ...]:
        return self.row(k).pattern

    def children_in_beginning(self, k: int) -> int:
        """``floor(nu_k ** (1 - eps))``, the number of leading children forming the beginning."""
        r = self.row(k)
        return capped_floor_exp2((1.0 - self.epsilon) * (r.ell - r.ell_prev))

    def base_radius(self) -> int:
        """``floor(beta_{k*} ** (1 + eps))``: reach of the beginning of a base-scale block."""
        return capped_floor_exp2((1.0 + self.epsilon) * self.ell(self.k_star))

    def beta_capped(self, k: int) -> int:
        r = self.row(k)
        return CAP if r.ell >= _CAP_LOG2 else r.beta

    def good_diameter(self, k: int) -> float:
        """Strict upper bound ``beta_k ** (1 + eps) / 2`` on the diameter of a good block."""
        return exp2((1.0 + self.epsilon) * self.ell(k) - 1.0)


def build_scale_table(params: ScaleParams, k_max: int) -> ScaleTable:
    """Populate every scale ``k_star <= k <= k_max``.

    Raises :class:`ScaleError` when the schedules cannot cover ``k_max``,
    when the default pattern lengths fail to increase strictly, or when
    ``h_{k*} > 1/2``.
    """
    ks = params.k_star
    if k_max < ks:
        raise ScaleError(f"k_max={k_max} is below k_star={ks}")
    limit = params.max_scale()
    if limit is not None and k_max > limit:
        raise ScaleError(f"custom schedules cover scales up to {limit}, k_max={k_max} requested")
    eps = params.epsilon_star
    rows = {}
    for k in range(ks, k_max + 1):
        ell, ell_prev = params.ell(k), params.ell(k - 1)
        if ell <= ell_prev:
            raise ScaleError(
                f"pattern length does not increase at scale {k} (ell={ell}, previous {ell_prev}); "
                f"raise k_star")
        if params.h_custom is None:
            log2_h = -params.alpha * ell_prev
            h = exp2(log2_h)
        else:
            h = params.h_custom[k - ks]
            log2_h = math.log2(h)
        rows[k] = ScaleRow(
            k=k, ell=ell, ell_prev=ell_prev, h=h, log2_h=log2_h,
            log2_n1=(1.0 - eps) * ell - k,
            log2_n2=(1.0 - eps) * ell + 2.0 * eps * ell_prev,
        )
    if rows[ks].h > 0.5:
        raise ScaleError(f"h at k_star is {rows[ks].h:.6g} > 1/2")
    return ScaleTable(params=params, k_max=k_max, rows=rows)


def _increasing_from(p: ScaleParams, ks: int) -> bool:
    # once eps * (1+eps)**(k-1) >= 1 consecutive ceilings differ by at least one
    k = ks
    while p.epsilon_star * (1.0 + p.epsilon_star) ** (k - 1) < 1.0:
        if p.ell(k) <= p.ell(k - 1):
            return False
        k += 1
    return p.ell(k) > p.ell(k - 1)


def smallest_admissible_k_star(epsilon_star: float, alpha: float, k_max_search: int = 200) -> int:
    """Smallest ``k_star`` for which the power-law schedule gives ``h_{k*} <= 1/2``
    and the default pattern lengths increase strictly from ``k_star - 1``."""
    for ks in range(1, k_max_search + 1):
        p = ScaleParams(epsilon_star=epsilon_star, k_star=ks, alpha=alpha)
        if alpha * p.ell(ks - 1) >= 1.0 and _increasing_from(p, ks):
            return ks
    raise ScaleError(f"no admissible k_star below {k_max_search} for eps={epsilon_star}, alpha={alpha}")


def table_rows(table: ScaleTable) -> list[dict]:
    """Flat records for CSV/JSON export; huge integers are rendered as strings."""
    out = []
    for k in table.scales():
        r = table.row(k)
        beta = r.beta if r.ell < 64 else f"2^{r.ell}"
        out.append({
            "k": k, "ell": r.ell, "beta": beta, "nu": r.nu if r.ell - r.ell_prev < 64 else f"2^{r.ell - r.ell_prev}",
            "h": r.h, "n1": r.n1, "n2": r.n2, "pattern": "".join(map(str, r.pattern)) if r.ell <= 64 else f"1^{r.ell - 1}0",
        })
    return out


def check_n1_recursion(table: ScaleTable, rel_tol: float = 1e-9) -> list[int]:
    """Scales where ``n1(k) = n1(k-1) * nu_k**(1-eps) / 2`` fails in floating point."""
    bad = []
    eps = table.epsilon
    for k in table.scales():
        if k == table.k_star:
            continue
        prev, cur = table.n1(k - 1), table.n1(k)
        if not (math.isfinite(prev) and math.isfinite(cur)):
            continue
        nu = table.row(k).ell - table.row(k).ell_prev
        rhs = prev * 0.5 * exp2((1.0 - eps) * nu)
        if not math.isclose(cur, rhs, rel_tol=rel_tol):
            bad.append(k)
    return bad


def check_decreasing_h(table: ScaleTable) -> Sequence[int]:
    # compared in log space: h underflows to 0.0 long before log2 h stops decreasing
    return [k for k in table.scales() if k > table.k_star and not table.row(k).log2_h < table.row(k - 1).log2_h]
