"""Differential characteristics, truncation, the non-local generator and the
hypothesis checkers of the projection theorem.

Array conventions: states are ``(n, d)``; drifts ``(n, d)``; diffusion
matrices ``(n, d, d)``; jump kernels carry fixed atoms ``(m, d)`` with
per-state rates ``(n, m)``.  All jump kernels are finite-activity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PSD_TOL = 1e-12


class GeneratorError(ValueError):
    """Raised when a generator term evaluates to a non-finite value."""


def _as_states(x, d=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if d is None or x.shape[0] == d else x.reshape(-1, 1)
    return x


@dataclass(frozen=True)
class TruncationConfig:
    """Truncation ``h(x) = x 1{|x| <= r}``."""

    r: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 0):
            raise ValueError(f"truncation radius must be positive, got {self.r}")

    def indicator(self, xi):
        """``1{|xi| <= r}`` row-wise."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.linalg.norm(xi, axis=-1) <= self.r

    def h(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return xi * self.indicator(xi)[:, None]


@dataclass(frozen=True)
class JumpKernelSpec:
    """Finite-activity Lévy kernel on a fixed list of atoms.

    ``rates`` has shape ``(m,)`` for a single kernel or ``(n, m)`` for one
    kernel per state; ``atoms`` has shape ``(m, d)``.
    """

    rates: np.ndarray
    atoms: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1)
        if atoms.ndim != 2:
            raise ValueError("atoms must be an (m, d) array")
        if rates.shape[-1:] != atoms.shape[:1] and not (atoms.shape[0] == 0 and rates.size == 0):
            raise ValueError(f"rates shape {rates.shape} does not match {atoms.shape[0]} atoms")
        if atoms.shape[0] and np.any(np.all(atoms == 0.0, axis=1)):
            raise ValueError("jump kernels must not charge the origin")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("jump rates must be finite and nonnegative")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def empty(cls, d=1):
        return cls(np.zeros(0), np.zeros((0, d)))

    @classmethod
    def compound_poisson(cls, intensity, sizes, probs):
        """Total intensity with a discrete jump-size law."""
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
            raise ValueError("jump-size probabilities must be a distribution")
        return cls(float(intensity) * probs, sizes)

    @property
    def dim(self):
        return self.atoms.shape[1]

    @property
    def total_intensity(self):
        return self.rates.sum(axis=-1)

    def mass_at_origin(self):
        return 0.0

    def small_jump_mass(self):
        """``∫ 1 ∧ |ξ|² κ(dξ)``."""
        w = np.minimum(1.0, np.sum(self.atoms**2, axis=1))
        return self.rates @ w


@dataclass(frozen=True)
class DifferentialCharacteristics:
    """Triplet ``(beta, alpha, kappa)``, one row per particle."""

    beta: np.ndarray
    alpha: np.ndarray
    kappa: JumpKernelSpec

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.ndim == 2:
            alpha = alpha[None]
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", ensure_psd(alpha))


def ensure_psd(a, tol=PSD_TOL):
    """Symmetrize and clip eigenvalues in ``[-tol, 0)`` to zero.

    Larger negative eigenvalues raise ``ValueError``.
    """
    a = np.asarray(a, dtype=float)
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    if sym.shape[-1] == 1:
        if np.any(sym < -tol):
            raise ValueError(f"matrix not PSD: min eigenvalue {sym.min():.3e}")
        return np.maximum(sym, 0.0)
    w, v = np.linalg.eigh(sym)
    if np.any(w < -tol):
        raise ValueError(f"matrix not PSD: min eigenvalue {w.min():.3e}")
    if np.all(w >= 0):
        return sym
    w = np.maximum(w, 0.0)
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


@dataclass(frozen=True)
class ProjectedCharacteristics:
    """State-indexed coefficients ``(b, a, k)``.

    Each callable takes ``(t, x)`` with ``x`` of shape ``(n, d)`` and returns
    ``(n, d)``, ``(n, d, d)`` and a :class:`JumpKernelSpec` with ``(n, m)``
    rates respectively.
    """

    b: Callable
    a: Callable
    k: Callable
    dim: int = 1

    @classmethod
    def constant(cls, b=None, a=None, k=None, dim=1):
        """Coefficients that do not depend on ``(t, x)``."""
        b = np.zeros(dim) if b is None else np.asarray(b, dtype=float).reshape(dim)
        a = np.zeros((dim, dim)) if a is None else np.asarray(a, dtype=float).reshape(dim, dim)
        k = JumpKernelSpec.empty(dim) if k is None else k

        def _b(t, x):
            return np.broadcast_to(b, (len(x), dim))

        def _a(t, x):
            return np.broadcast_to(a, (len(x), dim, dim))

        def _k(t, x):
            return JumpKernelSpec(np.broadcast_to(k.rates, (len(x), k.rates.shape[-1])), k.atoms)

        return cls(_b, _a, _k, dim)


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported C² function with analytic derivatives.

    ``value(x)`` maps ``(n, d)`` to ``(n,)``, ``gradient`` to ``(n, d)`` and
    ``hessian`` to ``(n, d, d)``.  ``sup_norm`` bounds ``|value|``.
    """

    __test__ = False  # not a pytest class

    value: Callable
    gradient: Callable
    hessian: Callable
    radius: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(1))
    sup_norm: float = 1.0

    def __add__(self, other):
        return combine(1.0, self, 1.0, other)


def combine(c1, f, c2, g):
    """The test function ``c1 f + c2 g``."""
    return TestFunction(
        value=lambda x: c1 * f.value(x) + c2 * g.value(x),
        gradient=lambda x: c1 * f.gradient(x) + c2 * g.gradient(x),
        hessian=lambda x: c1 * f.hessian(x) + c2 * g.hessian(x),
        radius=max(f.radius, g.radius),
        center=f.center,
        sup_norm=abs(c1) * f.sup_norm + abs(c2) * g.sup_norm,
    )


def bump(center, radius, amplitude=1.0):
    """Radial bump ``A exp(1 - 1/(1 - |x-c|²/R²))`` on the open ball, 0 outside."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    R2 = float(radius) ** 2

    def _parts(x):
        x = _as_states(x, len(center))
        dx = x - center
        u = np.sum(dx**2, axis=1) / R2
        inside = u < 1.0
        inv = np.zeros_like(u)
        inv[inside] = 1.0 / (1.0 - u[inside])
        g = np.zeros_like(u)
        # exp(1 - inv) underflows long before inv**4 overflows
        live = inside & (inv < 800.0)
        g[live] = amplitude * np.exp(1.0 - inv[live])
        return dx, u, inv, g

    def value(x):
        return _parts(x)[3]

    def gradient(x):
        dx, u, inv, g = _parts(x)
        dg = -g * inv**2
        return (dg * 2.0 / R2)[:, None] * dx

    def hessian(x):
        dx, u, inv, g = _parts(x)
        dg = -g * inv**2
        d2g = g * (2.0 * u - 1.0) * inv**4
        du = 2.0 * dx / R2
        eye = np.eye(len(center))
        return d2g[:, None, None] * du[:, :, None] * du[:, None, :] + (dg * 2.0 / R2)[:, None, None] * eye

    return TestFunction(value, gradient, hessian, float(radius), center, abs(float(amplitude)))


def generator_terms(drift, diffusion, kernel, f, x, trunc):
    """Evaluate the three generator terms at states ``x``.

    Returns ``(drift_term, diffusion_term, jump_term)``, each of shape ``(n,)``.
    """
    x = _as_states(x)
    n, d = x.shape
    grad = f.gradient(x)
    drift = np.broadcast_to(np.asarray(drift, dtype=float), (n, d))
    diffusion = np.broadcast_to(np.asarray(diffusion, dtype=float), (n, d, d))
    drift_term = np.einsum("ij,ij->i", drift, grad)
    if np.any(diffusion != 0.0):
        diff_term = 0.5 * np.einsum("ijk,ikj->i", diffusion, f.hessian(x))
    else:
        diff_term = np.zeros(n)
    jump_term = np.zeros(n)
    if kernel is not None and kernel.atoms.shape[0]:
        rates = np.broadcast_to(kernel.rates, (n, kernel.atoms.shape[0]))
        fx = f.value(x)
        hx = trunc.h(kernel.atoms)
        for j, xi in enumerate(kernel.atoms):
            rj = rates[:, j]
            if not np.any(rj):
                continue
            incr = f.value(x + xi) - fx - grad @ hx[j]
            jump_term += rj * incr
    return drift_term, diff_term, jump_term


def _checked_sum(terms):
    names = ("drift", "diffusion", "jump")
    for name, term in zip(names, terms):
        if not np.all(np.isfinite(term)):
            raise GeneratorError(f"non-finite {name} term in generator evaluation")
    return terms[0] + terms[1] + terms[2]


def apply_generator(pc, f, t, x, trunc):
    """``L_t f(x)`` for projected characteristics ``pc``.

    ``x`` may be a single state or an ``(n, d)`` array; the result matches.
    """
    xa = _as_states(x, pc.dim)
    terms = generator_terms(pc.b(t, xa), pc.a(t, xa), pc.k(t, xa), f, xa, trunc)
    out = _checked_sum(terms)
    return out[0] if np.ndim(x) <= 1 and out.shape[0] == 1 else out


def apply_particle_generator(chars, f, x, trunc):
    """Generator with each particle's own characteristics, row by row."""
    terms = generator_terms(chars.beta, chars.alpha, chars.kappa, f, x, trunc)
    return _checked_sum(terms)


def change_truncation(kappa, beta, r_old, r_new):
    """Drift under a new truncation radius.

    ``beta(h_new) = beta(h_old) + ∫ (h_new(ξ) - h_old(ξ)) κ(dξ)``
    """
    beta = np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(beta)) or not (np.isfinite(r_old) and np.isfinite(r_new)):
        raise ValueError("non-finite input to change_truncation")
    if kappa.atoms.shape[0] == 0 or r_old == r_new:
        return beta.copy()
    norms = np.linalg.norm(kappa.atoms, axis=1)
    # only atoms between the two radii change h
    weight = (norms <= r_new).astype(float) - (norms <= r_old).astype(float)
    return beta + (kappa.rates * weight) @ kappa.atoms


@dataclass(frozen=True)
class CharacteristicsLog:
    """Per-particle norms of the characteristics on a time grid.

    Arrays have shape ``(K, N)``: ``|beta|``, ``|alpha|`` (Frobenius) and
    ``∫ 1 ∧ |ξ|² κ(dξ)``.
    """

    times: np.ndarray
    beta_norm: np.ndarray
    alpha_norm: np.ndarray
    jump_mass: np.ndarray

    @classmethod
    def from_characteristics(cls, times, chars_list):
        b, a, j = [], [], []
        for c in chars_list:
            b.append(np.linalg.norm(c.beta, axis=-1))
            a.append(np.linalg.norm(c.alpha, axis=(-2, -1)))
            j.append(c.kappa.small_jump_mass() if c.kappa.atoms.shape[0] else np.zeros(len(c.beta)))
        return cls(np.asarray(times, float), np.array(b), np.array(a), np.array(j))


@dataclass(frozen=True)
class IntegrabilityEstimate:
    estimate: float
    stderr: float
    finite: bool


def check_integrability(log, horizon):
    """Monte Carlo estimate of ``E ∫_0^T (|β| + |α| + ∫1∧|ξ|²κ) ds``.

    Left-endpoint quadrature on the log's grid, truncated at ``horizon``.
    """
    times = np.asarray(log.times, dtype=float)
    if times.size == 0 or np.size(log.beta_norm) == 0:
        raise ValueError("empty characteristics log")
    integrand = np.asarray(log.beta_norm) + np.asarray(log.alpha_norm) + np.asarray(log.jump_mass)
    grid = np.append(times, max(horizon, times[-1]))
    widths = np.clip(np.minimum(grid[1:], horizon) - np.minimum(grid[:-1], horizon), 0.0, None)
    per_particle = widths @ integrand
    n = per_particle.size
    est = float(per_particle.mean())
    se = float(per_particle.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return IntegrabilityEstimate(est, se, bool(np.isfinite(est) and np.isfinite(se)))


def check_growth(pc, probes, trunc):
    """Empirical sup of the growth functional over probe points.

    ``probes`` is a sequence of ``(t, x)`` pairs where ``x`` may hold many
    states; the maximum over everything is returned.
    """
    best = 0.0
    r = trunc.r
    for t, x in probes:
        x = _as_states(x, pc.dim)
        nx = np.linalg.norm(x, axis=1)
        b = np.linalg.norm(pc.b(t, x), axis=1)
        a = np.linalg.norm(pc.a(t, x), axis=(1, 2))
        val = b / (1.0 + nx) + a / (1.0 + nx**2)
        k = pc.k(t, x)
        if k.atoms.shape[0]:
            rates = np.broadcast_to(k.rates, (len(x), k.atoms.shape[0]))
            for j, xi in enumerate(k.atoms):
                s = np.linalg.norm(xi)
                if s < r:
                    val = val + rates[:, j] * s**2 / (1.0 + nx**2)
                else:
                    val = val + rates[:, j] * np.log1p(s / (1.0 + nx))
        if val.size:
            best = max(best, float(np.max(val)))
    return best
