"""Mergeable streaming moments (count, mean, central moments up to fourth order)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MomentAccumulator:
    """Per-column running moments.

    Batches are reduced with numpy's pairwise sums and combined with the
    pairwise update formulas, so merging is exact up to rounding and does not
    depend on how a stream was split, only on the merge order.
    """

    count: int
    mean: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    m4: np.ndarray

    @classmethod
    def empty(cls, width: int) -> "MomentAccumulator":
        z = np.zeros(width)
        return cls(0, z.copy(), z.copy(), z.copy(), z.copy())

    @classmethod
    def from_batch(cls, x) -> "MomentAccumulator":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        if n == 0:
            return cls.empty(x.shape[1])
        mean = x.mean(axis=0)
        d = x - mean
        d2 = d * d
        return cls(n, mean, d2.sum(axis=0), (d2 * d).sum(axis=0), (d2 * d2).sum(axis=0))

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        na, nb = self.count, other.count
        if nb == 0:
            return self.copy()
        if na == 0:
            return other.copy()
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        mean = self.mean + nb * d_n
        m2 = self.m2 + other.m2 + delta * d_n * na * nb
        m3 = (self.m3 + other.m3 + delta * d_n * d_n * na * nb * (na - nb)
              + 3.0 * d_n * (na * other.m2 - nb * self.m2))
        m4 = (self.m4 + other.m4 + delta * d_n ** 3 * na * nb * (na * na - na * nb + nb * nb)
              + 6.0 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
              + 4.0 * d_n * (na * other.m3 - nb * self.m3))
        return MomentAccumulator(n, mean, m2, m3, m4)

    def copy(self) -> "MomentAccumulator":
        return MomentAccumulator(self.count, self.mean.copy(), self.m2.copy(), self.m3.copy(), self.m4.copy())

    @property
    def variance(self) -> np.ndarray:
        """Population variance (divides by count)."""
        if self.count == 0:
            return np.full_like(self.mean, np.nan)
        return self.m2 / self.count

    @property
    def excess_kurtosis(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.count * self.m4 / (self.m2 * self.m2) - 3.0

    @property
    def skewness(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sqrt(self.count) * self.m3 / self.m2 ** 1.5


def reduce_in_order(accs) -> MomentAccumulator:
    """Left fold of ``merge``; the fixed order keeps results reproducible."""
    accs = list(accs)
    out = accs[0]
    for a in accs[1:]:
        out = out.merge(a)
    return out
