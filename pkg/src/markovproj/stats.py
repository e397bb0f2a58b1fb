"""Empirical marginals and distributional tests.

KS statistics are computed here; p-values use the asymptotic Kolmogorov
distribution (``scipy.stats.kstwobign``) and the chi-square law.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Sorted 1-D sample; ``histogram`` counts integer values 0..max."""

    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        object.__setattr__(self, "values", v)

    @property
    def size(self):
        return self.values.size

    def histogram(self):
        v = self.values
        if v.size == 0:
            return np.zeros(0, dtype=np.int64)
        if np.any(v != np.round(v)) or v[0] < 0:
            raise ValueError("histogram needs nonnegative integer values")
        return np.bincount(v.astype(np.int64))

    def ecdf(self, x):
        return np.searchsorted(self.values, x, side="right") / self.values.size


def _dist(x):
    return x if isinstance(x, EmpiricalDistribution) else EmpiricalDistribution(x)


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    statistic: float
    pvalue: float
    dof: int | None = None

    def passes(self, alpha):
        return self.pvalue >= alpha


def ks_two_sample(a, b):
    """Two-sample KS: ``D = sup |F_a - F_b|`` with asymptotic p-value."""
    a, b = _dist(a), _dist(b)
    if a.size == 0 or b.size == 0:
        raise ValueError("KS test needs nonempty samples")
    pts = np.concatenate([a.values, b.values])
    d = float(np.max(np.abs(a.ecdf(pts) - b.ecdf(pts))))
    en = np.sqrt(a.size * b.size / (a.size + b.size))
    return TestResult(d, float(sps.kstwobign.sf(en * d)))


def ks_vs_cdf(a, cdf):
    """One-sample KS against a CDF callable, asymptotic p-value."""
    a = _dist(a)
    if a.size == 0:
        raise ValueError("KS test needs a nonempty sample")
    f = np.asarray(cdf(a.values), dtype=float)
    if np.any(np.diff(f) < 0) or np.any((f < 0) | (f > 1)):
        raise ValueError("cdf is not a nondecreasing map into [0, 1] on the sample")
    n = a.size
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))
    return TestResult(d, float(sps.kstwobign.sf(np.sqrt(n) * d)))


def _pool_tail(obs, exp, min_expected):
    """Merge cells from the right until the last cell has ``min_expected``."""
    obs, exp = list(obs), list(exp)
    while len(exp) > 1 and exp[-1] < min_expected:
        e, o = exp.pop(), obs.pop()
        exp[-1] += e
        obs[-1] += o
    return np.asarray(obs, dtype=float), np.asarray(exp, dtype=float)


def _tail_counts(obs, cells):
    obs = np.asarray(obs, dtype=float)
    out = np.zeros(cells)
    m = min(cells, len(obs))
    out[:m] = obs[:m]
    if len(obs) > cells:
        out[-1] += obs[cells:].sum()
    return out


def chi_square_counts(observed, expected, two_sample=False, min_expected=5.0):
    """Pearson chi-square on integer-valued counts.

    ``observed`` is a histogram indexed by value.  With ``two_sample=False``
    ``expected`` holds cell probabilities (or any nonnegative weights); if
    they sum to less than one the remainder becomes a ``>= K`` tail cell.
    With ``two_sample=True`` ``expected`` is a second histogram.  Tail cells
    are pooled into ``>= K`` until every pooled cell meets ``min_expected``.
    """
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if two_sample:
        return _chi_square_two_sample(observed, expected, min_expected)
    if expected.sum() <= 0:
        raise ValueError("expected distribution has no mass")
    n = observed.sum()
    probs = expected / expected.sum() if expected.sum() > 1 + 1e-9 else expected
    if probs.sum() < 1 - 1e-12:
        probs = np.append(probs, 1.0 - probs.sum())
    obs = _tail_counts(observed, len(probs))
    obs, exp = _pool_tail(obs, probs * n, min_expected)
    if np.any(exp <= 0):
        raise ValueError("expected count of zero in a cell")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(exp) - 1
    return TestResult(stat, float(sps.chi2.sf(stat, dof)) if dof > 0 else 1.0, dof)


def _chi_square_two_sample(a, b, min_expected):
    cells = max(len(a), len(b))
    a, b = _tail_counts(a, cells), _tail_counts(b, cells)
    na, nb = a.sum(), b.sum()
    if na == 0 or nb == 0:
        raise ValueError("two-sample chi-square needs two nonempty histograms")
    # pooling is driven by the expected count of the smaller sample
    frac = min(na, nb) / (na + nb)
    a_list, b_list = list(a), list(b)
    while len(a_list) > 1 and (a_list[-1] + b_list[-1]) * frac < min_expected:
        x, y = a_list.pop(), b_list.pop()
        a_list[-1] += x
        b_list[-1] += y
    a, b = np.asarray(a_list), np.asarray(b_list)
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    k1, k2 = np.sqrt(nb / na), np.sqrt(na / nb)
    stat = float(np.sum((k1 * a - k2 * b) ** 2 / (a + b)))
    dof = len(a) - 1
    return TestResult(stat, float(sps.chi2.sf(stat, dof)) if dof > 0 else 1.0, dof)


def moment_ci(samples, order=1):
    """Plug-in moment ``mean(x**order)`` and its standard error."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("moment of an empty sample")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    y = x**order
    se = float(y.std(ddof=1) / np.sqrt(y.size)) if y.size > 1 else 0.0
    return float(y.mean()), se
