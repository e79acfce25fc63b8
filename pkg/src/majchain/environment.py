"""Finite-window environments and the multiscale block structure they induce.

Blocks touching the window edge are never guessed: a block whose left end
precedes the window is *left-open*, one whose right end runs past it is
*right-open*, and anything depending on an unknown end reports
"undetermined" instead of a value.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from . import rng
from .scales import ScaleTable


class BoundaryError(ValueError):
    """The requested quantity depends on bits outside the window."""


@dataclass(frozen=True, eq=False)
class Environment:
    """Bits ``omega_t`` for ``lo <= t <= hi``."""

    lo: int
    hi: int
    bits: np.ndarray
    seed: Optional[int] = None
    key: tuple = ()

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError(f"empty window [{self.lo}, {self.hi}]")
        b = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if b.shape != (self.hi - self.lo + 1,):
            raise ValueError("bits length does not match window")
        if b.size and b.max() > 1:
            raise ValueError("bits must be 0/1")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @classmethod
    def from_bits(cls, bits, lo: int = 0) -> "Environment":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(lo=lo, hi=lo + len(bits) - 1, bits=bits)

    @property
    def window(self) -> tuple[int, int]:
        return self.lo, self.hi

    def __len__(self) -> int:
        return self.hi - self.lo + 1

    def __contains__(self, t: int) -> bool:
        return self.lo <= t <= self.hi

    def bit(self, t: int) -> int:
        if t not in self:
            raise BoundaryError(f"position {t} outside window [{self.lo}, {self.hi}]")
        return int(self.bits[t - self.lo])

    def segment(self, a: int, b: int) -> np.ndarray:
        if a < self.lo or b > self.hi:
            raise BoundaryError(f"[{a}, {b}] not inside window [{self.lo}, {self.hi}]")
        return self.bits[a - self.lo:b - self.lo + 1]

    def with_bit(self, t: int, value: int) -> "Environment":
        bits = self.bits.copy()
        bits[t - self.lo] = value
        return Environment(self.lo, self.hi, bits)

    def shifted(self, s: int) -> "Environment":
        return Environment(self.lo + s, self.hi + s, self.bits)

    def restricted(self, lo: int, hi: int) -> "Environment":
        return Environment(lo, hi, self.segment(lo, hi).copy(), self.seed, self.key)

    def extended(self, lo: int, hi: int) -> "Environment":
        """Same seed on a wider window; requires a seeded environment."""
        if self.seed is None:
            raise ValueError("only seeded environments can be extended")
        return sample_environment((min(lo, self.lo), max(hi, self.hi)), self.seed, *self.key)

    def header(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "seed": self.seed, "key": list(self.key)}

    def dumps(self) -> str:
        """Bit-file format: a JSON header line, then one 0/1 character per position."""
        return json.dumps(self.header(), sort_keys=True) + "\n" + "".join(map(str, self.bits.tolist())) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Environment":
        head, body = text.split("\n", 1)
        meta = json.loads(head)
        body = body.strip()
        bits = np.frombuffer(body.encode("ascii"), dtype=np.uint8) - ord("0")
        return cls(lo=int(meta["lo"]), hi=int(meta["hi"]), bits=bits, seed=meta.get("seed"),
                   key=tuple(meta.get("key", ())))


def sample_environment(window: tuple[int, int], seed: int, *key: int) -> Environment:
    """I.i.d. fair bits on ``window``; the bit at ``t`` depends only on ``(seed, key, t)``.

    ``key`` selects independent environments under one seed (e.g. a replica index).
    """
    lo, hi = window
    if hi < lo:
        raise ValueError(f"empty window [{lo}, {hi}]")
    return Environment(lo, hi, rng.positional_bits(lo, hi, seed, rng.ENV, *key), seed, tuple(key))


@dataclass(frozen=True)
class Block:
    """A k-block as seen through the window.

    ``a``/``b`` are the visible extent; ``left_open``/``right_open`` mark an
    end that lies outside the window (the true end is then unknown).
    """

    scale: int
    a: int
    b: int
    left_open: bool = False
    right_open: bool = False

    @property
    def determinate(self) -> bool:
        return not (self.left_open or self.right_open)

    @property
    def diam(self) -> int:
        return self.b - self.a + 1

    def __contains__(self, t: int) -> bool:
        return self.a <= t <= self.b

    def positions(self) -> range:
        return range(self.a, self.b + 1)

    def word(self, env: Environment) -> tuple[int, ...]:
        return tuple(env.segment(self.a, self.b).tolist())


@dataclass(frozen=True)
class TargetResult:
    """``k_t`` and ``S_t`` for one site; ``None`` fields mean undetermined."""

    t: int
    k_t: Optional[int]
    S_t: Optional[tuple[int, ...]]
    anchor: Optional[int] = None
    cutoff_ok: bool = False

    @property
    def determined(self) -> bool:
        return self.k_t is not None

    @property
    def influential(self) -> bool:
        """Whether the site's law depends on the past (non-empty target and cutoff met)."""
        return bool(self.S_t) and self.cutoff_ok


class BlockStructure:
    """Block partitions of one window at every scale of a table, with activity flags."""

    def __init__(self, env: Environment, table: ScaleTable):
        if table.k_max <= table.k_star:
            raise ValueError("table must reach at least k_star + 1")
        self.env = env
        self.table = table
        self.k_star = table.k_star
        self.k_top = table.k_max - 1  # activity at k needs beta_{k+1}
        n = len(env)
        self._pos = np.arange(env.lo, env.hi + 1, dtype=np.int64)
        self._ends: dict[int, np.ndarray] = {}
        self._idx: dict[int, np.ndarray] = {}
        for k in range(table.k_star, table.k_max + 1):
            ends = self._scan(table.ell(k))
            self._ends[k] = ends
            self._idx[k] = np.searchsorted(ends, self._pos, side="right").astype(np.int64) - 1
        self._act_val: dict[int, np.ndarray] = {}
        self._act_known: dict[int, np.ndarray] = {}
        self._compute_activity(n)
        self._targets: dict[int, TargetResult] = {}

    # scanning

    def _scan(self, ell: int) -> np.ndarray:
        bits = self.env.bits
        n = len(bits)
        i = np.arange(n)
        zero = bits == 0
        last_zero = np.maximum.accumulate(np.where(zero, i, -1))
        prev_zero = np.concatenate(([-1], last_zero[:-1]))
        ones_before = i - 1 - prev_zero
        return self._pos[zero & (ones_before >= ell - 1)]

    def _left_end(self, k: int) -> np.ndarray:
        idx = self._idx[k]
        ends = self._ends[k]
        out = np.full(idx.shape, np.iinfo(np.int64).min // 4, dtype=np.int64)
        ok = idx >= 0
        out[ok] = ends[idx[ok]]
        return out

    def _compute_activity(self, n: int) -> None:
        t = self._pos
        tab = self.table
        ks = self.k_star
        val = known = None
        for k in range(ks, self.k_top + 1):
            a = self._left_end(k)
            left_known = self._idx[k] >= 0
            dist = t - a
            near = dist < tab.beta_capped(k + 1)
            if k == ks:
                in_beg = dist <= tab.base_radius()
                known = left_known.copy()
                val = left_known & in_beg & near
            else:
                idx_lower = self._idx[k - 1]
                a_rel = np.clip(a - self.env.lo, 0, n - 1)
                child = idx_lower - idx_lower[a_rel]
                in_beg = child < tab.children_in_beginning(k)
                known = known & (~val | left_known)
                val = val & left_known & in_beg & near
            self._act_val[k] = val
            self._act_known[k] = known

    # blocks

    def occurrence_ends(self, k: int) -> np.ndarray:
        return self._ends[k]

    def find_occurrences(self, k: int) -> list[tuple[int, int]]:
        ell = self.table.ell(k)
        return [(int(e) - ell + 1, int(e)) for e in self._ends[k]]

    def partition_blocks(self, k: int) -> list[Block]:
        ends = [int(e) for e in self._ends[k]]
        lo, hi = self.env.lo, self.env.hi
        if not ends:
            return [Block(k, lo, hi, left_open=True, right_open=True)]
        out = []
        if ends[0] > lo:
            out.append(Block(k, lo, ends[0] - 1, left_open=True))
        out.extend(Block(k, x, y - 1) for x, y in zip(ends, ends[1:]))
        out.append(Block(k, ends[-1], hi, right_open=True))
        return out

    def block_of(self, k: int, t: int) -> Block:
        i = self._index(k, t)
        ends = self._ends[k]
        lo, hi = self.env.lo, self.env.hi
        if i < 0:
            return Block(k, lo, int(ends[0]) - 1 if len(ends) else hi,
                         left_open=True, right_open=len(ends) == 0)
        a = int(ends[i])
        if i + 1 < len(ends):
            return Block(k, a, int(ends[i + 1]) - 1)
        return Block(k, a, hi, right_open=True)

    def _index(self, k: int, t: int) -> int:
        if t not in self.env:
            raise BoundaryError(f"position {t} outside window [{self.env.lo}, {self.env.hi}]")
        return int(self._idx[k][t - self.env.lo])

    def children(self, block: Block) -> tuple[list[Block], int]:
        if block.scale <= self.k_star:
            raise ValueError("base-scale blocks have no children")
        if not block.determinate:
            raise BoundaryError("boundary-undetermined")
        kids = [self.block_of(block.scale - 1, block.a)]
        while kids[-1].b < block.b:
            kids.append(self.block_of(block.scale - 1, kids[-1].b + 1))
        return kids, len(kids)

    def beginning(self, block: Block) -> range:
        """Positions of the beginning of ``block`` (always a prefix interval)."""
        if block.left_open:
            raise BoundaryError("boundary-undetermined")
        k = block.scale
        if k == self.k_star:
            end = block.a + self.table.base_radius()
            if end > block.b and block.right_open:
                raise BoundaryError("boundary-undetermined")
            return range(block.a, min(block.b, end) + 1)
        m = self.table.children_in_beginning(k)
        lower = self._ends[k - 1]
        j0 = self._index(k - 1, block.a)
        last = j0 + m  # start of child number m, if it exists inside the block
        if last < len(lower) and lower[last] <= block.b:
            return range(block.a, int(lower[last]))
        if block.right_open:
            raise BoundaryError("boundary-undetermined")
        return range(block.a, block.b + 1)

    def in_beginning(self, k: int, t: int) -> Optional[bool]:
        """Whether ``t`` lies in the beginning of its own k-block (``None``: undetermined)."""
        i = self._index(k, t)
        if i < 0:
            return None
        a = int(self._ends[k][i])
        if k == self.k_star:
            return t - a <= self.table.base_radius()
        child = self._index(k - 1, t) - self._index(k - 1, a)
        return child < self.table.children_in_beginning(k)

    # activity

    def is_active(self, k: int, t: int) -> Optional[bool]:
        """``t`` in act_k, or ``None`` when the window cannot decide."""
        self._check_scale(k)
        i = t - self.env.lo
        if not 0 <= i < len(self.env):
            raise BoundaryError(f"position {t} outside window")
        if not self._act_known[k][i]:
            return None
        return bool(self._act_val[k][i])

    def active_mask(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(known, value) arrays of k-activity over the window."""
        self._check_scale(k)
        return self._act_known[k], self._act_val[k]

    def active_points(self, k: int, block: Block) -> list[int]:
        self._check_scale(k)
        if not block.determinate:
            raise BoundaryError("boundary-undetermined")
        sl = slice(block.a - self.env.lo, block.b - self.env.lo + 1)
        if not self._act_known[k][sl].all():
            raise BoundaryError("boundary-undetermined")
        return [int(x) for x in self._pos[sl][self._act_val[k][sl]]]

    def _check_scale(self, k: int) -> None:
        if not self.k_star <= k <= self.k_top:
            raise ValueError(f"activity is available for scales {self.k_star}..{self.k_top}, got {k}")

    def target(self, t: int) -> TargetResult:
        if t in self._targets:
            return self._targets[t]
        i = t - self.env.lo
        if not 0 <= i < len(self.env):
            raise BoundaryError(f"position {t} outside window")
        res = TargetResult(t, None, None)
        for k in range(self.k_star, self.k_top + 1):
            if not self._act_known[k][i]:
                break
            if not self._act_val[k][i]:
                a = int(self._ends[k][self._idx[k][i]]) if self._idx[k][i] >= 0 else None
                if k == self.k_star or a is None:
                    res = TargetResult(t, k, (), anchor=a)
                else:
                    sl = slice(a - self.env.lo, i)
                    members = self._pos[sl][self._act_val[k][sl]]
                    cut = (t - a) < self.table.beta_capped(k + 1)
                    res = TargetResult(t, k, tuple(int(s) for s in members), anchor=a, cutoff_ok=bool(cut))
                break
        self._targets[t] = res
        return res

    def targets(self, lo: int, hi: int) -> list[TargetResult]:
        return [self.target(t) for t in range(lo, hi + 1)]

    # good blocks and connectivity

    def classify_block(self, block: Block) -> str:
        k = block.scale
        n_act = len(self.active_points(k, block))
        good = (block.diam < self.table.good_diameter(k)
                and self.table.n1(k) < n_act < self.table.n2(k))
        return "good" if good else "bad"

    def check_connectivity(self, k: int, k_max: int, origin: int = 0) -> Optional[bool]:
        """Window version of the event that every block of ``origin`` from scale ``k``
        through ``k_max`` is good and excludes ``origin`` from its beginning."""
        undecided = False
        for j in range(k, k_max + 1):
            inside = self.in_beginning(j, origin)
            if inside is True:
                return False
            if inside is None:
                undecided = True
                continue
            block = self.block_of(j, origin)
            if not block.determinate:
                undecided = True
                continue
            try:
                if self.classify_block(block) == "bad":
                    return False
            except BoundaryError:
                undecided = True
        return None if undecided else True

    def block_report(self, k: int) -> list[dict]:
        rows = []
        for blk in self.partition_blocks(k):
            if not blk.determinate:
                continue
            row = {"scale": k, "a": blk.a, "b": blk.b, "diam": blk.diam}
            if k <= self.k_top:
                row["n_active"] = len(self.active_points(k, blk))
                row["good"] = self.classify_block(blk) == "good"
            else:
                row["n_active"] = ""
                row["good"] = ""
            rows.append(row)
        return rows


# function-style entry points mirroring the structure methods

def find_occurrences(structure: BlockStructure, k: int) -> list[tuple[int, int]]:
    return structure.find_occurrences(k)


def partition_blocks(structure: BlockStructure, k: int) -> list[Block]:
    return structure.partition_blocks(k)


def children(structure: BlockStructure, block: Block) -> tuple[list[Block], int]:
    return structure.children(block)


def beginning(structure: BlockStructure, block: Block) -> range:
    return structure.beginning(block)


def active_points(structure: BlockStructure, k: int, block: Block) -> list[int]:
    return structure.active_points(k, block)


def target(structure: BlockStructure, t: int) -> TargetResult:
    return structure.target(t)


def classify_block(structure: BlockStructure, block: Block) -> str:
    return structure.classify_block(block)


def check_connectivity(structure: BlockStructure, k: int, k_max: int, origin: int = 0) -> Optional[bool]:
    return structure.check_connectivity(k, k_max, origin)
