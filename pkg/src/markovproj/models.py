"""Model specifications and their per-particle differential characteristics.

Reference (Markovian) models: LV, LI, Hawkes.  Their McKean-Vlasov
counterparts LSV, LSI and FakeHawkes multiply the volatility or intensity by
a stochastic factor normalized with a conditional expectation estimated from
the particle cloud.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .characteristics import DifferentialCharacteristics, JumpKernelSpec, TruncationConfig
from .estimators import BinSpec, EstimatorConfig

Coefficient = Union[float, Callable]


def as_function(coef):
    """Wrap a constant so every coefficient is callable as ``coef(t, x)``."""
    if callable(coef):
        return coef
    value = float(coef)
    return lambda t, x: np.full(np.shape(x), value)


def _sup(coef, bound):
    if bound is not None:
        return float(bound)
    if callable(coef):
        raise ValueError("state-dependent coefficients need an explicit bound")
    return abs(float(coef))


@dataclass(frozen=True)
class StochasticFactorSpec:
    """Two-state continuous-time chain on ``{eta_lo, eta_hi}``.

    ``q_up`` is the rate lo -> hi, ``q_dn`` the rate hi -> lo.  ``initial``
    is ``"lo"``, ``"hi"`` or ``"stationary"`` (level drawn from the
    stationary law independently per particle).
    """

    eta_lo: float = 1.0
    eta_hi: float = 1.0
    q_up: float = 1.0
    q_dn: float = 1.0
    initial: str = "stationary"

    def __post_init__(self):
        if not (0 < self.eta_lo <= self.eta_hi < np.inf):
            raise ValueError("need 0 < eta_lo <= eta_hi < inf")
        if self.q_up < 0 or self.q_dn < 0:
            raise ValueError("switching rates must be nonnegative")
        if self.initial not in ("lo", "hi", "stationary"):
            raise ValueError(f"unknown initial level {self.initial!r}")

    @property
    def degenerate(self):
        return self.eta_lo == self.eta_hi

    @property
    def ratio_bound(self):
        """Upper bound of ``eta / E[eta | .]``."""
        return self.eta_hi / self.eta_lo

    @property
    def p_hi(self):
        tot = self.q_up + self.q_dn
        return 0.5 if tot == 0 else self.q_up / tot


@dataclass(frozen=True)
class LV:
    """Local volatility ``dS = r S dt + sigma(t, S) S dB``."""

    r: float = 0.0
    sigma: Coefficient = 0.2
    s0: float = 1.0
    sigma_bound: float | None = None

    kind = "lv"
    dim = 1
    counting = (False,)

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError("s0 must be positive")
        if _sup(self.sigma, self.sigma_bound) < 0:
            raise ValueError("sigma bound must be nonnegative")

    @property
    def truncation(self):
        return TruncationConfig(1.0)

    @property
    def factor(self):
        return None

    def initial_state(self, n):
        return np.full((n, 1), float(self.s0))

    def bins(self):
        return BinSpec.default(1)

    def leverage(self, t, states, eta, config):
        return np.ones(len(states))

    def characteristics(self, t, states, eta=None, config=None):
        s = states[:, 0]
        lev = self.leverage(t, states, eta, config or EstimatorConfig())
        vol = lev * as_function(self.sigma)(t, s)
        beta = (self.r * s)[:, None]
        alpha = ((vol * s) ** 2)[:, None, None]
        return DifferentialCharacteristics(beta, alpha, JumpKernelSpec(np.zeros((len(s), 0)), np.zeros((0, 1))))


@dataclass(frozen=True)
class LSV(LV):
    """Local stochastic volatility with leverage ``sigma / sqrt(E[eta^2 | S])``."""

    factor_spec: StochasticFactorSpec = field(default_factory=StochasticFactorSpec)

    kind = "lsv"

    @property
    def factor(self):
        return self.factor_spec

    def leverage(self, t, states, eta, config):
        if self.factor_spec.degenerate:
            return np.ones(len(states))
        est = config.with_bins(config.bins or self.bins()).fit(states, eta**2)
        return eta / np.sqrt(est(states))


@dataclass(frozen=True)
class LI:
    """Local intensity counting process with intensity ``lam(t, X_-)``."""

    lam: Coefficient = 1.0
    lam_bound: float | None = None

    kind = "li"
    dim = 1
    counting = (True,)

    def __post_init__(self):
        if _sup(self.lam, self.lam_bound) < 0:
            raise ValueError("intensity bound must be nonnegative")

    @property
    def truncation(self):
        return TruncationConfig(0.5)

    @property
    def factor(self):
        return None

    @property
    def intensity_bound(self):
        return _sup(self.lam, self.lam_bound)

    @property
    def thinning_bound(self):
        return self.intensity_bound

    def initial_state(self, n):
        return np.zeros((n, 1))

    def bins(self):
        return BinSpec.integer(1)

    def multiplier(self, t, states, eta, config):
        return np.ones(len(states))

    def characteristics(self, t, states, eta=None, config=None):
        x = states[:, 0]
        mult = self.multiplier(t, states, eta, config or EstimatorConfig())
        lam = as_function(self.lam)(t, x)
        if np.any(lam < 0):
            raise ValueError("negative local intensity")
        n = len(x)
        kappa = JumpKernelSpec((mult * lam)[:, None], np.ones((1, 1)))
        return DifferentialCharacteristics(np.zeros((n, 1)), np.zeros((n, 1, 1)), kappa)


@dataclass(frozen=True)
class LSI(LI):
    """Local stochastic intensity ``eta / E[eta | X_-] * lam(t, X_-)``."""

    factor_spec: StochasticFactorSpec = field(default_factory=StochasticFactorSpec)

    kind = "lsi"

    @property
    def factor(self):
        return self.factor_spec

    @property
    def thinning_bound(self):
        return self.factor_spec.ratio_bound * self.intensity_bound

    def multiplier(self, t, states, eta, config):
        if self.factor_spec.degenerate:
            return np.ones(len(states))
        est = config.with_bins(config.bins or self.bins()).fit(states, eta)
        return eta / est(states)


@dataclass(frozen=True)
class Hawkes:
    """Exponential Hawkes process lifted to ``(X, Y)``, ``Y`` the intensity.

    ``dY = theta (lam0 - Y_-) dt + c dX``.
    """

    lam0: float = 1.0
    c: float = 1.0
    theta: float = 2.0
    y0: float | None = None

    kind = "hawkes"
    dim = 2
    counting = (True, False)

    def __post_init__(self):
        for name in ("lam0", "theta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.c >= 0:
            raise ValueError("c must be nonnegative")
        if self.y0 is not None and not self.y0 > 0:
            raise ValueError("y0 must be positive")

    @property
    def y_start(self):
        return float(self.lam0 if self.y0 is None else self.y0)

    @property
    def truncation(self):
        return TruncationConfig(0.5 * np.sqrt(1.0 + self.c**2))

    @property
    def factor(self):
        return None

    @property
    def jump(self):
        return np.array([1.0, self.c])

    def initial_state(self, n):
        return np.column_stack([np.zeros(n), np.full(n, self.y_start)])

    def bins(self):
        return BinSpec(("integer", None))

    def multiplier(self, t, states, eta, config):
        return np.ones(len(states))

    def characteristics(self, t, states, eta=None, config=None):
        y = states[:, 1]
        n = len(y)
        mult = self.multiplier(t, states, eta, config or EstimatorConfig())
        beta = np.column_stack([np.zeros(n), self.theta * (self.lam0 - y)])
        kappa = JumpKernelSpec((mult * y)[:, None], self.jump[None, :])
        return DifferentialCharacteristics(beta, np.zeros((n, 2, 2)), kappa)


@dataclass(frozen=True)
class FakeHawkes(Hawkes):
    """Counting process with intensity ``eta / E[eta | X_-, Y_-] * Y_-``."""

    factor_spec: StochasticFactorSpec = field(default_factory=StochasticFactorSpec)

    kind = "fake_hawkes"

    @property
    def factor(self):
        return self.factor_spec

    def multiplier(self, t, states, eta, config):
        if self.factor_spec.degenerate:
            return np.ones(len(states))
        est = config.with_bins(config.bins or self.bins()).fit(states, eta)
        return eta / est(states)


MODELS = {m.kind: m for m in (LV, LSV, LI, LSI, Hawkes, FakeHawkes)}
REFERENCE_OF = {"lsv": "lv", "lsi": "li", "fake_hawkes": "hawkes"}


def hawkes_mean_intensity(t, lam0, c, theta, y0=None):
    """Closed-form solution of ``m' = theta lam0 + (c - theta) m``, ``m(0) = y0``."""
    y0 = lam0 if y0 is None else y0
    k = c - theta
    if k == 0:
        return y0 + theta * lam0 * t
    fixed = -theta * lam0 / k
    return fixed + (y0 - fixed) * np.exp(k * t)
