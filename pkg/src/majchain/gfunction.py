"""Majority rules, the perturbation psi, and the quenched / joint transition kernels."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .environment import BlockStructure, BoundaryError, TargetResult
from .scales import ScaleTable

_TOL = 1e-12

KINDS = ("pure", "identity", "linear", "tanh", "tilde", "custom")


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class MajorityRule:
    """An odd, non-decreasing map ``[-1, 1] -> [-1, 1]``.

    Only the fields relevant to ``kind`` are used:

    * ``linear``: ``lam * clip(z, -delta, delta)``
    * ``tanh``: ``tanh(beta * z)``
    * ``tilde``: the extension of ``base`` beyond ``[-delta, delta]`` with slope
      ``lam``, divided by ``lam``
    * ``custom``: ``points`` on ``[0, 1]``, reflected oddly and interpolated
    """

    kind: str
    lam: float = 1.0
    delta: float = 1.0
    beta: float = 1.0
    base: Optional["MajorityRule"] = None
    points: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RuleError(f"unknown rule kind {self.kind!r}")
        if self.kind in ("linear", "tilde"):
            if not self.lam > 0:
                raise RuleError("lam must be positive")
            if not 0 < self.delta <= 1:
                raise RuleError("delta must lie in (0, 1]")
        if self.kind == "tanh" and not self.beta >= 0:
            raise RuleError("beta must be non-negative")
        if self.kind == "tilde" and self.base is None:
            raise RuleError("tilde rule needs a base rule")
        if self.kind == "custom":
            pts = tuple((float(z), float(v)) for z, v in self.points)
            if not pts:
                raise RuleError("custom rule needs at least one point")
            zs = [z for z, _ in pts]
            vs = [v for _, v in pts]
            if zs[0] < 0 or zs[-1] > 1 or any(b <= a for a, b in zip(zs, zs[1:])):
                raise RuleError("custom abscissae must be strictly increasing in [0, 1]")
            if vs[0] < 0 or any(b < a for a, b in zip(vs, vs[1:])):
                raise RuleError("custom values must be non-negative and non-decreasing")
            if zs[0] == 0 and vs[0] != 0:
                raise RuleError("custom value at 0 must be 0 (oddness)")
            object.__setattr__(self, "points", pts)

    # constructors

    @classmethod
    def pure(cls) -> "MajorityRule":
        return cls("pure")

    @classmethod
    def identity(cls) -> "MajorityRule":
        return cls("identity")

    @classmethod
    def linear(cls, lam: float, delta: float = 1.0) -> "MajorityRule":
        return cls("linear", lam=lam, delta=delta)

    @classmethod
    def tanh(cls, beta: float) -> "MajorityRule":
        return cls("tanh", beta=beta)

    @classmethod
    def tilde(cls, base: "MajorityRule", lam: float, delta: float) -> "MajorityRule":
        return cls("tilde", lam=lam, delta=delta, base=base)

    @classmethod
    def custom(cls, points: Sequence[Sequence[float]]) -> "MajorityRule":
        return cls("custom", points=tuple(tuple(p) for p in points))

    # evaluation

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        if np.any(np.abs(z) > 1 + _TOL):
            raise RuleError("majority rules are defined on [-1, 1]")
        z = np.clip(z, -1.0, 1.0)
        out = np.clip(self._raw(z), -1.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def _raw(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        if k == "pure":
            return np.sign(z)
        if k == "identity":
            return z.copy()
        if k == "linear":
            return self.lam * np.clip(z, -self.delta, self.delta)
        if k == "tanh":
            return np.tanh(self.beta * z)
        if k == "tilde":
            d, lam = self.delta, self.lam
            base = self.base
            inner = np.asarray(base(np.clip(z, -d, d)))
            upper = lam * (z - d) + base(d)
            lower = lam * (z + d) + base(-d)
            ext = np.where(z > d, upper, np.where(z < -d, lower, inner))
            return ext / lam
        # custom
        zs = np.array([p[0] for p in self.points])
        vs = np.array([p[1] for p in self.points])
        a = np.abs(z)
        val = np.interp(a, zs, vs)  # constant beyond the end points
        return np.where(a == 0, 0.0, np.sign(z) * val)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind in ("linear", "tilde"):
            d.update(lam=self.lam, delta=self.delta)
        if self.kind == "tanh":
            d["beta"] = self.beta
        if self.kind == "tilde":
            d["base"] = self.base.to_dict()
        if self.kind == "custom":
            d["points"] = [list(p) for p in self.points]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MajorityRule":
        allowed = {"kind", "lam", "delta", "beta", "base", "points"}
        unknown = set(d) - allowed
        if unknown:
            raise RuleError(f"unknown rule keys: {sorted(unknown)}")
        kind = d.get("kind")
        if kind == "tilde":
            return cls.tilde(cls.from_dict(d["base"]), float(d["lam"]), float(d["delta"]))
        if kind == "custom":
            return cls.custom(d["points"])
        return cls(kind, lam=float(d.get("lam", 1.0)), delta=float(d.get("delta", 1.0)),
                   beta=float(d.get("beta", 1.0)))


def phi_eval(rule: MajorityRule, z):
    return rule(z)


@dataclass(frozen=True)
class LipschitzCheck:
    ok: bool
    constant: float
    worst_pair: tuple[float, float]


def lipschitz_check(rule: MajorityRule, bound: float, lo: float = -1.0, hi: float = 1.0,
                    points: int = 2001) -> LipschitzCheck:
    """Largest grid slope of ``rule`` on ``[lo, hi]`` compared with ``bound``."""
    z = np.linspace(lo, hi, points)
    v = np.asarray(rule(z))
    slopes = np.abs(np.diff(v)) / np.diff(z)
    i = int(np.argmax(slopes))
    c = float(slopes[i])
    return LipschitzCheck(c <= bound * (1 + 1e-9), c, (float(z[i]), float(z[i + 1])))


def is_odd_monotone(rule: MajorityRule, points: int = 1001) -> bool:
    z = np.linspace(-1.0, 1.0, points)
    v = np.asarray(rule(z))
    return bool(np.allclose(v, -v[::-1], atol=1e-12) and np.all(np.diff(v) >= -1e-12))


@dataclass(frozen=True)
class GSpec:
    table: ScaleTable
    rule: MajorityRule

    @property
    def eta(self) -> float:
        return 0.25 * (1.0 - self.table.h(self.table.k_star))

    def h(self, k: int) -> float:
        return self.table.h(k)


History = Union[Mapping[int, int], "PathView"]


@dataclass(frozen=True)
class PathView:
    """Read access to a +-1 array indexed from ``lo``."""

    values: np.ndarray
    lo: int

    def __getitem__(self, s: int) -> int:
        i = s - self.lo
        if not 0 <= i < len(self.values):
            raise KeyError(s)
        return int(self.values[i])


def _require(res: TargetResult) -> TargetResult:
    if not res.determined:
        raise BoundaryError(f"target of site {res.t} is undetermined in this window")
    return res


def psi_value(rule: MajorityRule, h: float, mean):
    """``h * phi(mean)``; vectorises over ``mean``."""
    return h * np.asarray(rule(mean)) if np.ndim(mean) else h * rule(mean)


def psi(spec: GSpec, structure: BlockStructure, t: int, history: History) -> float:
    res = _require(structure.target(t))
    if not res.influential:
        return 0.0
    try:
        total = sum(history[s] for s in res.S_t)
    except KeyError as e:
        raise KeyError(f"history is missing site {e.args[0]} of the target set of {t}") from None
    return float(spec.h(res.k_t) * spec.rule(total / len(res.S_t)))


def quenched_prob(spec: GSpec, structure: BlockStructure, t: int, history: History,
                  symbol: int) -> float:
    if symbol not in (1, -1):
        raise ValueError("symbol must be +1 or -1")
    return 0.5 * (1.0 + symbol * psi(spec, structure, t, history))


def joint_prob(spec: GSpec, structure: BlockStructure, t: int, history: History,
               symbol: int, bit: int) -> float:
    """Joint kernel for the pair ``(x_t, omega_t) = (symbol, bit)``.

    ``psi`` is evaluated in the environment whose bit at ``t`` equals ``bit``.
    """
    if symbol not in (1, -1) or bit not in (0, 1):
        raise ValueError("symbol must be +-1 and bit 0/1")
    env = structure.env
    if env.bit(t) != bit:
        structure = BlockStructure(env.with_bit(t, bit), structure.table)
    return 0.25 * (1.0 + symbol * psi(spec, structure, t, history))


def variation_bound(table: ScaleTable, j: int) -> float:
    """``h_{k-1}`` for the scale ``k`` with ``beta_k <= j < beta_{k+1}``; ``h_{k*}`` below the table."""
    k = table.k_star - 1
    for kk in table.scales():
        if table.beta(kk) <= j:
            k = kk
    return table.h(max(k - 1, table.k_star))


def variation_probe(spec: GSpec, first: tuple[BlockStructure, History],
                    second: tuple[BlockStructure, History], j: int, origin: int = 0) -> float:
    """``max |g(. | first) - g(. | second)|`` over the four joint symbols at ``origin``.

    Both pairs must agree (bits and history) on ``[origin - j, origin]``.
    """
    (s1, x1), (s2, x2) = first, second
    for s in range(origin - j, origin + 1):
        if s1.env.bit(s) != s2.env.bit(s):
            raise ValueError(f"environments differ at {s} inside the agreement window")
        if s < origin:
            a, b = _maybe(x1, s), _maybe(x2, s)
            if a is not None and b is not None and a != b:
                raise ValueError(f"histories differ at {s} inside the agreement window")
    best = 0.0
    for bit in (0, 1):
        p1 = joint_prob(spec, s1, origin, x1, 1, bit)
        p2 = joint_prob(spec, s2, origin, x2, 1, bit)
        best = max(best, abs(p1 - p2))  # the x = -1 entries differ by the same amount
    return best


def _maybe(history: History, s: int) -> Optional[int]:
    try:
        return history[s]
    except KeyError:
        return None


def closed_variation_bound(alpha: float, epsilon: float, j: int) -> float:
    """Power-law decay ``2**alpha * j**(-alpha / (1+eps)**3)`` of the variation."""
    return 2.0 ** alpha * j ** (-alpha / (1.0 + epsilon) ** 3)
