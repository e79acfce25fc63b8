import numpy as np
import pytest

from majchain.environment import BlockStructure, Environment
from majchain.scales import ScaleParams, build_scale_table

SMALL_ELL = (2, 3, 4, 5)
SMALL_H = (0.4, 0.3, 0.2, 0.1)


def small_table(k_max: int = 4, eps: float = 0.5):
    params = ScaleParams(eps, 1, h_custom=SMALL_H[:k_max], ell_custom=SMALL_ELL[:k_max])
    return build_scale_table(params, k_max)


DEEP_ELL = (2, 3, 4, 6, 9, 13)
DEEP_H = (0.4, 0.3, 0.2, 0.1, 0.05, 0.02)


def deep_table():
    return build_scale_table(ScaleParams(0.5, 1, h_custom=DEEP_H, ell_custom=DEEP_ELL), 6)


@pytest.fixture
def table():
    return small_table()


def structure_from_bits(bits, table, lo: int = 0) -> BlockStructure:
    return BlockStructure(Environment.from_bits(np.asarray(bits, dtype=np.uint8), lo), table)


# brute-force parser used as an oracle: direct translation of the definitions,
# written position by position with no shared code

def occurrence_ends(bits, lo, ell):
    ends = []
    for i in range(ell - 1, len(bits)):
        if bits[i] == 0 and all(bits[j] == 1 for j in range(i - ell + 1, i)):
            ends.append(lo + i)
    return ends


def left_end(ends, t):
    best = None
    for e in ends:
        if e <= t:
            best = e
    return best


def brute_activity(bits, lo, table):
    """dict k -> list of True/False/None for k_star <= k <= k_max - 1."""
    ks, top = table.k_star, table.k_max - 1
    ends = {k: occurrence_ends(bits, lo, table.ell(k)) for k in range(ks, table.k_max + 1)}
    out = {}
    prev = None
    for k in range(ks, top + 1):
        cur = []
        for i in range(len(bits)):
            t = lo + i
            if prev is not None and prev[i] is not True:
                cur.append(prev[i])
                continue
            a = left_end(ends[k], t)
            if a is None:
                cur.append(None)
                continue
            near = t - a < table.beta(k + 1)
            if k == ks:
                cur.append(t - a <= table.base_radius() and near)
            else:
                child = sum(1 for e in ends[k - 1] if a < e <= t)
                cur.append(child < table.children_in_beginning(k) and near)
        out[k] = cur
        prev = cur
    return out


def determined_structure(first: int, last: int, table=None, lo: int = -4000, start_seed: int = 0):
    """A seeded structure whose targets on [first, last] are all determined."""
    from majchain.environment import sample_environment
    table = table or small_table()
    for seed in range(start_seed, start_seed + 500):
        bs = BlockStructure(sample_environment((lo, last + 8), seed), table)
        if all(bs.target(t).determined for t in range(first, last + 1)):
            return bs
    raise RuntimeError("no determined window found")


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
