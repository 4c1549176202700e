"""Monte Carlo estimates with standard errors and chi-squared tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as _st


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n: int

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")

    @classmethod
    def from_samples(cls, values) -> "Estimate":
        v = np.asarray(values, dtype=float)
        n = len(v)
        if n < 2:
            raise ValueError("need at least two samples")
        return cls(float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)), n)

    def z(self, exact: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.mean == exact else math.copysign(math.inf, self.mean - exact)
        return (self.mean - exact) / self.stderr

    def __sub__(self, other: "Estimate") -> "Estimate":
        """Difference of two independent estimates."""
        return Estimate(self.mean - other.mean, math.hypot(self.stderr, other.stderr), min(self.n, other.n))


def mc_estimate(statistic: Callable, sampler: Callable, n: int, rng: np.random.Generator) -> Estimate:
    """Mean and standard error of ``statistic(sampler(rng))`` over ``n`` independent draws."""
    if n < 2:
        raise ValueError("n must be at least 2")
    return Estimate.from_samples([statistic(sampler(rng)) for _ in range(n)])


def chi_squared(observed: Sequence[float], expected: Sequence[float]) -> float:
    """Pearson goodness-of-fit p-value of counts against cell probabilities."""
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(expected, dtype=float)
    if obs.shape != p.shape:
        raise ValueError("observed and expected must have the same cells")
    if np.any(p <= 0):
        raise ValueError("zero expected cell")
    if len(obs) <= 1:
        return 1.0
    p = p / p.sum()
    exp = p * obs.sum()
    stat = float(((obs - exp) ** 2 / exp).sum())
    return float(_st.chi2.sf(stat, len(obs) - 1))


def pool_cells(counts: np.ndarray, probs: np.ndarray, min_expected: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Merge trailing low-expectation cells so that every cell expects at least ``min_expected``."""
    total = counts.sum()
    order = np.argsort(-probs, kind="stable")
    c, p = counts[order], probs[order]
    keep = p * total >= min_expected
    if keep.all():
        return c, p
    k = max(int(keep.sum()), 1)
    c = np.append(c[:k], c[k:].sum())
    p = np.append(p[:k], p[k:].sum())
    if p[-1] * total < min_expected and len(p) > 1:
        c = np.append(c[:-2], c[-2:].sum())
        p = np.append(p[:-2], p[-2:].sum())
    return c, p


def chi_squared_two_sample(a: Sequence[int], b: Sequence[int], min_expected: float = 5.0) -> float:
    """Homogeneity p-value of two samples of a discrete statistic (tail values pooled)."""
    a = np.asarray(a)
    b = np.asarray(b)
    values = np.union1d(a, b)
    ca = np.array([(a == v).sum() for v in values], dtype=float)
    cb = np.array([(b == v).sum() for v in values], dtype=float)
    pooled = ca + cb
    na, nb = len(a), len(b)
    # merge cells (in value order) until each has enough expected count in both samples
    cells_a, cells_b = [], []
    acc_a = acc_b = 0.0
    for xa, xb in zip(ca, cb):
        acc_a += xa
        acc_b += xb
        tot = acc_a + acc_b
        if tot * min(na, nb) / (na + nb) >= min_expected:
            cells_a.append(acc_a)
            cells_b.append(acc_b)
            acc_a = acc_b = 0.0
    if acc_a + acc_b > 0:
        if cells_a:
            cells_a[-1] += acc_a
            cells_b[-1] += acc_b
        else:
            cells_a.append(acc_a)
            cells_b.append(acc_b)
    if len(cells_a) <= 1 or pooled.sum() == 0:
        return 1.0
    table = np.array([cells_a, cells_b])
    return float(_st.chi2_contingency(table, correction=False)[1])
