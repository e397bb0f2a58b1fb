"""Weak non-local Fokker-Planck check along simulated marginals.

For a test function ``f`` the per-particle quantity

    r_i(t_k) = f(X_k^i) - f(X_0^i) - sum_{j<k} (t_{j+1} - t_j) L_j f(X_j^i)

is the discretized martingale ``M^f``; its mean is the residual
``mu_t(f) - mu_0(f) - int_0^t mu_s(L_s f) ds`` and its standard error is the
combined Monte Carlo error of both sides.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .characteristics import (
    apply_generator,
    apply_particle_generator,
    bump,
)


def test_function_suite(d, radius, m, lo=None, hi=None):
    """``m`` radial bumps of the given radius with centers on a grid in a box.

    The box defaults to ``[-radius, radius]^d``.
    """
    if not radius > 0:
        raise ValueError("support radius must be positive")
    if m < 3:
        raise ValueError("need at least 3 test functions")
    lo = np.broadcast_to(np.asarray(-radius if lo is None else lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(radius if hi is None else hi, dtype=float), (d,))
    if d == 1:
        centers = np.linspace(lo[0], hi[0], m)[:, None]
    else:
        per = int(np.ceil(m ** (1.0 / d)))
        axes = [np.linspace(lo[j], hi[j], per) for j in range(d)]
        grid = np.array(list(itertools.product(*axes)))
        pick = np.unique(np.round(np.linspace(0, len(grid) - 1, m)).astype(int))
        centers = grid[pick]
    return [bump(c, radius) for c in centers]


test_function_suite.__test__ = False


@dataclass
class ResidualReport:
    """Both sides of the weak identity per grid time, with standard errors."""

    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    se_lhs: np.ndarray
    se_rhs: np.ndarray
    se: np.ndarray
    generator_mean: np.ndarray
    mode: str = "projected"
    constant: float = float("nan")
    label: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def grid_step(self):
        return float(np.max(np.diff(self.times))) if len(self.times) > 1 else 0.0

    def budget(self, constant=None, n_se=3.0):
        c = self.constant if constant is None else constant
        return n_se * self.se + c * self.grid_step

    def within_budget(self, constant=None, n_se=3.0):
        return bool(np.all(np.abs(self.residual) <= self.budget(constant, n_se)))

    def max_abs_residual(self):
        return float(np.max(np.abs(self.residual)))


def _se(x):
    n = x.shape[-1]
    return x.std(axis=-1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(x.shape[:-1])


def quadrature_constant(times, gen_mean):
    """Scheme-error constant ``C`` for the budget ``C * dt``.

    Left-endpoint quadrature of ``g(s) = mu_s(L_s f)`` errs by about
    ``dt/2 * int |g'|``; we take ``2 T sup|g'|`` (a factor four of
    headroom) with ``g'`` from a cubic least-squares fit, which smooths the
    Monte Carlo noise in ``g``.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 5:
        return 0.0
    span = times[-1] - times[0]
    s = (times - times[0]) / span
    coef = np.polynomial.polynomial.polyfit(s, gen_mean, 3)
    dcoef = np.polynomial.polynomial.polyder(coef)
    fine = np.linspace(0.0, 1.0, 201)
    slope = np.max(np.abs(np.polynomial.polynomial.polyval(fine, dcoef))) / span
    return float(2.0 * span * slope)


def fpke_residual(times, snapshots, characteristics, f, trunc, mode="projected", constant=None,
                  label=""):
    """Residual of ``mu_t(f) = mu_0(f) + int_0^t mu_s(L_s f) ds`` on a grid.

    ``snapshots`` is a sequence of ``(N, d)`` particle arrays (same particle
    order at every time).  ``characteristics`` is a sequence of the same
    length holding projected characteristics (``mode="projected"``) or
    per-particle :class:`DifferentialCharacteristics` (``mode="particle"``).
    """
    times = np.asarray(times, dtype=float)
    if len(snapshots) != len(times) or len(characteristics) != len(times):
        raise ValueError(
            f"grid mismatch: {len(times)} times, {len(snapshots)} snapshots, "
            f"{len(characteristics)} characteristics"
        )
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    x0 = np.asarray(snapshots[0], dtype=float)
    f0 = f.value(x0)
    n = len(x0)
    K = len(times)
    lhs_i = np.empty((K, n))
    rhs_i = np.zeros((K, n))
    gen_mean = np.empty(K)
    acc = np.zeros(n)
    for k in range(K):
        x = np.asarray(snapshots[k], dtype=float)
        if x.shape != x0.shape:
            raise ValueError("snapshot shapes differ across times")
        lhs_i[k] = f.value(x) - f0
        rhs_i[k] = acc
        if mode == "projected":
            lf = np.asarray(apply_generator(characteristics[k], f, times[k], x, trunc)).reshape(n)
        elif mode == "particle":
            lf = apply_particle_generator(characteristics[k], f, x, trunc)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        gen_mean[k] = lf.mean()
        if k + 1 < K:
            acc = acc + (times[k + 1] - times[k]) * lf
    res_i = lhs_i - rhs_i
    lhs = lhs_i.mean(axis=1)
    rhs = rhs_i.mean(axis=1)
    c = quadrature_constant(times, gen_mean) if constant is None else float(constant)
    return ResidualReport(
        times=times,
        lhs=lhs,
        rhs=rhs,
        residual=lhs - rhs,
        se_lhs=_se(lhs_i),
        se_rhs=_se(rhs_i),
        se=_se(res_i),
        generator_mean=gen_mean,
        mode=mode,
        constant=c,
        label=label,
    )


def ensemble_characteristics(ensemble, mode="projected"):
    """Characteristics at every snapshot: projected or per-particle."""
    K = len(ensemble.times)
    if mode == "projected":
        return [ensemble.projected(k) for k in range(K)]
    if mode == "particle":
        return [ensemble.characteristics(k) for k in range(K)]
    raise ValueError(f"unknown mode {mode!r}")


def ensemble_residuals(ensemble, fs, mode="projected", constant=None, chars=None):
    """Residual reports for several test functions on one ensemble."""
    chars = ensemble_characteristics(ensemble, mode) if chars is None else chars
    return [
        fpke_residual(ensemble.times, list(ensemble.states), chars, f,
                      ensemble.model.truncation, mode, constant, label=f"f{i}")
        for i, f in enumerate(fs)
    ]


def ensemble_residual(ensemble, f, mode="projected", constant=None, label=""):
    """Residual for a simulated ensemble, recomputing characteristics per snapshot."""
    rep = ensemble_residuals(ensemble, [f], mode, constant)[0]
    rep.label = label
    return rep


def model_test_functions(model, ensemble, m=5):
    """A default suite placed over the bulk of the simulated marginals."""
    final = ensemble.states[-1]
    if model.kind in ("li", "lsi"):
        top = max(2.0, float(np.quantile(final[:, 0], 0.99)))
        return test_function_suite(1, 1.0, m, 0.0, min(top, m - 1.0))
    if model.kind in ("lv", "lsv"):
        lo, hi = np.quantile(final[:, 0], [0.05, 0.95])
        width = (hi - lo) / (m - 1)
        return test_function_suite(1, max(1.5 * width, 1e-3), m, lo, hi)
    # (X, Y): one bump per count level, centered at the median intensity there
    xs, ys = final[:, 0], final[:, 1]
    centers = []
    for x in range(m):
        sel = ys[xs == x]
        y = float(np.median(sel)) if sel.size else model.lam0 + 0.5 * model.c * x
        centers.append((float(x), y))
    return [bump(c, 0.9) for c in centers]
