"""Empirical conditional expectations over a particle-cloud snapshot.

The binned scheme is the workhorse: per-bin weighted means, so the tower
property and per-bin orthogonality hold up to rounding.  Responses may be
scalars, vectors or matrices; they are flattened to ``(n, p)`` internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .characteristics import JumpKernelSpec, ProjectedCharacteristics, ensure_psd


@dataclass(frozen=True)
class SnapshotSlice:
    """States ``(n, d)`` with matched responses ``(n, ...)`` and optional weights."""

    states: np.ndarray
    responses: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        responses = np.asarray(self.responses, dtype=float)
        if states.shape[0] == 0:
            raise ValueError("empty snapshot slice")
        if responses.shape[0] != states.shape[0]:
            raise ValueError(
                f"{states.shape[0]} states but {responses.shape[0]} responses"
            )
        weights = self.weights
        if weights is not None:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (states.shape[0],):
                raise ValueError("weights must have one entry per state")
            if np.any(weights < 0) or not np.any(weights > 0):
                raise ValueError("weights must be nonnegative and not all zero")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "weights", weights)

    @property
    def w(self):
        return np.ones(len(self.states)) if self.weights is None else self.weights


@dataclass(frozen=True)
class BinSpec:
    """Per-dimension binning rule.

    Each entry of ``dims`` is either ``"integer"`` (one bin per integer
    value) or an array of bin edges.  ``None`` entries get ``n_bins``
    equal-width bins over the empirical range at fit time.  Values outside
    the edges fall in overflow bins at either end.
    """

    dims: tuple = (None,)
    n_bins: int | None = None

    @classmethod
    def default(cls, d=1, n_bins=None):
        return cls((None,) * d, n_bins)

    @classmethod
    def integer(cls, d=1):
        return cls(("integer",) * d)

    @classmethod
    def edges(cls, *edges):
        return cls(tuple(np.asarray(e, dtype=float) for e in edges))


def default_bin_count(n):
    """``ceil(n ** (1/3))`` equal-width bins per continuous dimension."""
    return max(1, math.ceil(round(n ** (1.0 / 3.0), 12)))


class _Grid:
    """Resolved bin layout: maps states to flat bin codes."""

    def __init__(self, spec, states):
        d = states.shape[1]
        dims = spec.dims if len(spec.dims) == d else (spec.dims[0],) * d
        nb = spec.n_bins or default_bin_count(len(states))
        self.kinds, self.params, self.sizes = [], [], []
        for j, rule in enumerate(dims):
            col = states[:, j]
            if isinstance(rule, str) and rule == "integer":
                lo, hi = int(np.floor(col.min())), int(np.floor(col.max()))
                self.kinds.append("integer")
                self.params.append((lo, hi))
                self.sizes.append(hi - lo + 3)
                continue
            if rule is None:
                lo, hi = float(col.min()), float(col.max())
                if hi <= lo:
                    hi = lo + 1.0
                edges = np.linspace(lo, hi, nb + 1)
            else:
                edges = np.asarray(rule, dtype=float)
            self.kinds.append("edges")
            self.params.append(edges)
            self.sizes.append(len(edges) + 1)
        self.shape = tuple(self.sizes)

    def codes(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        idx = []
        for j, (kind, p) in enumerate(zip(self.kinds, self.params)):
            col = x[:, j]
            if kind == "integer":
                lo, hi = p
                c = np.floor(col).astype(np.int64) - lo + 1
                c = np.clip(c, 0, hi - lo + 2)
            else:
                # closed range [e0, e_last] maps to 1..len-1; outside to overflow
                c = np.searchsorted(p[1:-1], col, side="right") + 1
                c = np.where(col < p[0], 0, c)
                c = np.where(col > p[-1], len(p), c)
            idx.append(c)
        return np.ravel_multi_index(idx, self.shape)

    @property
    def n_cells(self):
        return int(np.prod(self.shape))


class ConditionalEstimator:
    """Fitted map ``x -> E[response | state = x]``."""

    def __init__(self, scheme, response_shape, fallback, evaluate_flat, is_matrix=False, **info):
        self.scheme = scheme
        self.response_shape = tuple(response_shape)
        self.fallback = fallback
        self._evaluate_flat = evaluate_flat
        self.is_matrix = is_matrix
        self.info = info

    def evaluate_flat(self, x):
        return self._evaluate_flat(x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0
        x2 = x.reshape(1, -1) if single else (x[:, None] if x.ndim == 1 else x)
        out = self._evaluate_flat(x2).reshape((len(x2),) + self.response_shape)
        if self.is_matrix:
            out = ensure_psd(out)
        return out[0] if single else out

    evaluate = __call__


def _flatten(responses):
    n = responses.shape[0]
    shape = responses.shape[1:]
    return responses.reshape(n, -1), shape


def fit_binned(slice_, bins=None):
    """Per-bin weighted mean of responses; empty bins return the global mean.

    Bin means are clipped to the per-bin componentwise response range so a
    bin of identical responses returns that value exactly.
    """
    if not isinstance(slice_, SnapshotSlice):
        raise TypeError("fit_binned expects a SnapshotSlice")
    bins = bins or BinSpec.default(slice_.states.shape[1])
    grid = _Grid(bins, slice_.states)
    y, shape = _flatten(slice_.responses)
    w = slice_.w
    codes = grid.codes(slice_.states)
    ncell = grid.n_cells
    wsum = np.bincount(codes, weights=w, minlength=ncell)
    total_w = wsum.sum()
    fallback = np.clip((w @ y) / total_w, y.min(axis=0), y.max(axis=0))
    means = np.empty((ncell, y.shape[1]))
    occupied = wsum > 0
    lo = np.full((ncell, y.shape[1]), np.inf)
    hi = np.full((ncell, y.shape[1]), -np.inf)
    for k in range(y.shape[1]):
        s = np.bincount(codes, weights=w * y[:, k], minlength=ncell)
        means[:, k] = np.where(occupied, s / np.where(occupied, wsum, 1.0), fallback[k])
        np.minimum.at(lo[:, k], codes, y[:, k])
        np.maximum.at(hi[:, k], codes, y[:, k])
    means[occupied] = np.clip(means[occupied], lo[occupied], hi[occupied])
    is_matrix = len(shape) == 2 and shape[0] == shape[1] and shape[0] > 0

    def evaluate_flat(x):
        return means[grid.codes(x)]

    est = ConditionalEstimator(
        "binned", shape, fallback.reshape(shape), evaluate_flat, is_matrix,
        grid=grid, counts=wsum, means=means,
    )
    est.codes = grid.codes
    return est


def gaussian_kernel(u):
    return np.exp(-0.5 * u)


def fit_kernel_regression(slice_, bandwidth, chunk=2048):
    """Nadaraya-Watson estimator with a Gaussian product kernel.

    Queries whose kernel mass is below ``1e-12`` of the total sample weight
    fall back to the global weighted mean.
    """
    if not isinstance(slice_, SnapshotSlice):
        raise TypeError("fit_kernel_regression expects a SnapshotSlice")
    bandwidth = float(bandwidth)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    X = slice_.states
    y, shape = _flatten(slice_.responses)
    w = slice_.w
    total_w = w.sum()
    fallback = (w @ y) / total_w
    is_matrix = len(shape) == 2 and shape[0] == shape[1] and shape[0] > 0
    ylo, yhi = y.min(axis=0), y.max(axis=0)

    def evaluate_flat(x):
        out = np.empty((len(x), y.shape[1]))
        for s in range(0, len(x), chunk):
            q = x[s : s + chunk]
            d2 = np.sum((q[:, None, :] - X[None, :, :]) ** 2, axis=2) / bandwidth**2
            k = gaussian_kernel(d2) * w
            den = k.sum(axis=1)
            ok = den >= 1e-12 * total_w
            num = k @ y
            val = np.where(ok[:, None], num / np.where(ok, den, 1.0)[:, None], fallback)
            out[s : s + chunk] = np.clip(val, ylo, yhi)
        return out

    return ConditionalEstimator(
        "kernel", shape, fallback.reshape(shape), evaluate_flat, is_matrix, bandwidth=bandwidth
    )


@dataclass(frozen=True)
class JumpEvents:
    """Jumps observed during ``[t, t + dt)``: particle index and jump size."""

    particles: np.ndarray
    sizes: np.ndarray
    dt: float


class ConditionalJumpKernel:
    """Per-bin atomic jump kernels; evaluate gives a :class:`JumpKernelSpec`."""

    def __init__(self, grid, atoms, rates):
        self.grid = grid
        self.atoms = atoms
        self.rates = rates  # (n_cells, m)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return JumpKernelSpec(self.rates[self.grid.codes(x)], self.atoms)

    evaluate = __call__


def fit_jump_kernel(slice_, jump_events, bins=None):
    """Counting estimator of the conditional jump kernel.

    Rate of atom ξ in a bin = (jumps of size ξ by particles in the bin) /
    (particles in the bin × dt).  Events are attributed to the bin of the
    particle's pre-jump state in ``slice_``.  Zero-size events are dropped.
    """
    if not isinstance(slice_, SnapshotSlice):
        raise TypeError("fit_jump_kernel expects a SnapshotSlice")
    dt = float(jump_events.dt)
    if not dt > 0:
        raise ValueError("observation window must be positive")
    d = slice_.states.shape[1]
    bins = bins or BinSpec.default(d)
    grid = _Grid(bins, slice_.states)
    codes = grid.codes(slice_.states)
    w = slice_.w
    occupancy = np.bincount(codes, weights=w, minlength=grid.n_cells)
    parts = np.asarray(jump_events.particles, dtype=np.int64)
    sizes = np.asarray(jump_events.sizes, dtype=float)
    sizes = sizes.reshape(len(parts), -1) if len(parts) else sizes.reshape(0, sizes.shape[-1] if sizes.ndim == 2 else d)
    nonzero = np.any(sizes != 0.0, axis=1)
    sizes, parts = sizes[nonzero], parts[nonzero]
    if len(parts) == 0:
        return ConditionalJumpKernel(grid, np.zeros((0, sizes.shape[1])), np.zeros((grid.n_cells, 0)))
    atoms, atom_idx = np.unique(sizes, axis=0, return_inverse=True)
    atom_idx = atom_idx.ravel()
    counts = np.zeros((grid.n_cells, len(atoms)))
    np.add.at(counts, (codes[parts], atom_idx), w[parts])
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(occupancy[:, None] > 0, counts / (occupancy[:, None] * dt), 0.0)
    return ConditionalJumpKernel(grid, atoms, rates)


@dataclass(frozen=True)
class EstimatorConfig:
    """How conditional expectations are estimated from the cloud."""

    scheme: str = "binned"
    n_bins: int | None = None
    bandwidth: float | None = None
    bins: BinSpec | None = None

    def __post_init__(self):
        if self.scheme not in ("binned", "kernel"):
            raise ValueError(f"unknown estimator scheme {self.scheme!r}")
        if self.scheme == "kernel" and not (self.bandwidth and self.bandwidth > 0):
            raise ValueError("kernel scheme needs a positive bandwidth")
        if self.n_bins is not None and self.n_bins < 1:
            raise ValueError("n_bins must be at least 1")

    def with_bins(self, bins):
        return EstimatorConfig(self.scheme, self.n_bins, self.bandwidth, bins)

    def fit(self, states, responses, weights=None):
        sl = SnapshotSlice(states, responses, weights)
        if self.scheme == "kernel":
            return fit_kernel_regression(sl, self.bandwidth)
        bins = self.bins or BinSpec.default(sl.states.shape[1])
        if self.n_bins is not None and bins.n_bins is None:
            bins = BinSpec(bins.dims, self.n_bins)
        return fit_binned(sl, bins)


def projected_characteristics(t, states, chars, bins=None, jump_events=None, config=None):
    """Conditional expectations of per-particle characteristics given the state.

    ``b`` and ``a`` are binned means of ``beta`` and ``alpha``.  ``k`` is the
    binned mean of the per-particle compensator rates on their common atoms,
    or, if ``jump_events`` is given, the counting estimator of observed jumps.
    The returned coefficients ignore their time argument: they are the
    projection at time ``t``.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    d = states.shape[1]
    config = config or EstimatorConfig(bins=bins)
    if bins is not None and config.bins is None:
        config = config.with_bins(bins)
    b_est = config.fit(states, chars.beta)
    a_est = config.fit(states, chars.alpha.reshape(len(states), d, d))
    kappa = chars.kappa
    if jump_events is not None:
        cjk = fit_jump_kernel(SnapshotSlice(states, np.zeros(len(states))), jump_events,
                              config.bins or BinSpec.default(d, config.n_bins))
        k_fn = lambda x: cjk(x)  # noqa: E731
    elif kappa.atoms.shape[0]:
        rates = np.broadcast_to(kappa.rates, (len(states), kappa.atoms.shape[0]))
        k_est = config.fit(states, rates)
        atoms = kappa.atoms
        k_fn = lambda x: JumpKernelSpec(np.maximum(k_est(x).reshape(len(x), -1), 0.0), atoms)  # noqa: E731
    else:
        k_fn = lambda x: JumpKernelSpec(np.zeros((len(x), 0)), np.zeros((0, d)))  # noqa: E731

    def _x(x):
        x = np.asarray(x, dtype=float)
        return x[:, None] if x.ndim == 1 else x

    pc = ProjectedCharacteristics(
        b=lambda s, x: b_est(_x(x)).reshape(len(_x(x)), d),
        a=lambda s, x: a_est(_x(x)).reshape(len(_x(x)), d, d),
        k=lambda s, x: k_fn(_x(x)),
        dim=d,
    )
    return pc
