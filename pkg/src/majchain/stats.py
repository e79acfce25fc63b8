"""Confidence intervals used by the Monte Carlo reports."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


def z_value(level: float = 0.95) -> float:
    return float(norm.ppf(0.5 + level / 2))


@dataclass(frozen=True)
class Interval:
    estimate: float
    lo: float
    hi: float
    se: float
    n: int

    @property
    def half_width(self) -> float:
        return max(self.estimate - self.lo, self.hi - self.estimate)


def wilson(successes: int, n: int, level: float = 0.95) -> Interval:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need at least one trial")
    z = z_value(level)
    p = successes / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return Interval(p, max(0.0, centre - half), min(1.0, centre + half), math.sqrt(p * (1 - p) / n), n)


def mean_ci(x, level: float = 0.95) -> Interval:
    """Normal-approximation interval for a mean, using the sample variance."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    m = float(x.mean())
    se = float(x.std(ddof=1)) / math.sqrt(n)
    z = z_value(level)
    return Interval(m, m - z * se, m + z * se, se, n)


def batch_means(x, n_batches: int = 50, level: float = 0.95) -> Interval:
    """Mean of a correlated series with the standard error taken from batch means."""
    x = np.asarray(x, dtype=np.float64)
    size = x.size // n_batches
    if size < 1:
        raise ValueError("series shorter than the number of batches")
    means = x[:size * n_batches].reshape(n_batches, size).mean(axis=1)
    m = float(x.mean())
    se = float(means.std(ddof=1)) / math.sqrt(n_batches)
    z = z_value(level)
    return Interval(m, m - z * se, m + z * se, se, x.size)
