"""Counter-keyed random streams.

Every draw in the package comes from a generator keyed by ``(seed, *key)``
through :class:`numpy.random.SeedSequence` spawn keys, so a value depends on
where it sits (position, replica, scale) and never on how work was scheduled.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

# stream tags keep unrelated consumers of the same seed apart
ENV = 1
PATH = 2
CHAIN = 3
WORD = 4
PROBE = 5
SCAN = 6

CHUNK = 1 << 12
BATCH = 1024

T = TypeVar("T")


def _encode(i: int) -> int:
    # spawn keys must be non-negative; interleave signs
    return 2 * i if i >= 0 else -2 * i - 1


def generator(seed: int, *key: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(_encode(int(k)) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _positional(lo: int, hi: int, draw: Callable[[np.random.Generator], np.ndarray],
                dtype, seed: int, key: Sequence[int]) -> np.ndarray:
    out = np.empty(hi - lo + 1, dtype=dtype)
    for c in range(lo // CHUNK, hi // CHUNK + 1):
        vals = draw(generator(seed, *key, c))
        start = max(lo, c * CHUNK)
        stop = min(hi, (c + 1) * CHUNK - 1)
        out[start - lo:stop - lo + 1] = vals[start - c * CHUNK:stop - c * CHUNK + 1]
    return out


def positional_bits(lo: int, hi: int, seed: int, *key: int) -> np.ndarray:
    """Fair bits on ``[lo, hi]``; the bit at ``t`` depends only on ``(seed, key, t)``."""
    return _positional(lo, hi, lambda g: g.integers(0, 2, CHUNK, dtype=np.uint8),
                       np.uint8, seed, key)


def positional_uniforms(lo: int, hi: int, seed: int, *key: int) -> np.ndarray:
    """Uniforms on ``(0, 1]`` indexed by position, keyed like :func:`positional_bits`."""
    return _positional(lo, hi, lambda g: 1.0 - g.random(CHUNK), np.float64, seed, key)


SITE_CHUNK = 256


def replica_uniforms(seed: int, key: Sequence[int], batch: int, rows: int,
                     lo: int, hi: int) -> np.ndarray:
    """Uniforms on ``(0, 1]`` of shape ``(rows, hi - lo + 1)`` for one replica batch.

    A full ``BATCH x SITE_CHUNK`` block is drawn per site chunk, so the value
    for (replica, site) is the same whatever ``rows`` or ``[lo, hi]`` is.
    """
    if rows > BATCH:
        raise ValueError(f"at most {BATCH} rows per batch")
    out = np.empty((rows, hi - lo + 1))
    for c in range(lo // SITE_CHUNK, hi // SITE_CHUNK + 1):
        block = 1.0 - generator(seed, *key, batch, c).random((BATCH, SITE_CHUNK))
        start = max(lo, c * SITE_CHUNK)
        stop = min(hi, (c + 1) * SITE_CHUNK - 1)
        out[:, start - lo:stop - lo + 1] = block[:rows, start - c * SITE_CHUNK:stop - c * SITE_CHUNK + 1]
    return out


def batches(n: int, size: int = BATCH) -> list[tuple[int, int, int]]:
    """Fixed partition of ``range(n)`` into ``(index, start, stop)`` triples."""
    return [(b, s, min(n, s + size)) for b, s in enumerate(range(0, n, size))]


def run_batches(fn: Callable[[int, int, int], T], n: int, threads: int = 1,
                size: int = BATCH) -> list[T]:
    """Apply ``fn(index, start, stop)`` over the fixed batch partition.

    The partition does not depend on ``threads``, so the returned list is
    identical for any thread count.
    """
    parts = batches(n, size)
    if threads <= 1 or len(parts) <= 1:
        return [fn(*p) for p in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda p: fn(*p), parts))


def seed_record(seed: int, key: Iterable[int] = ()) -> dict:
    return {"seed": int(seed), "key": [int(k) for k in key]}
