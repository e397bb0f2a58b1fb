"""Fake Hawkes: a counting process whose (X, Y) marginals match a Hawkes process.

Y follows the usual exponential excitation, but jumps fire at rate
eta / E[eta | X, Y] * Y.  The mean intensity follows the same linear ODE as
the true Hawkes process.
"""
import numpy as np

from markovproj import FakeHawkes, Hawkes, StochasticFactorSpec, simulate
from markovproj.models import hawkes_mean_intensity
from markovproj.stats import chi_square_counts, ks_two_sample, moment_ci

params = dict(lam0=1.0, c=1.0, theta=2.0)
fake = simulate(FakeHawkes(**params, factor_spec=StochasticFactorSpec(0.5, 2.0)), 10_000, 1e-3, 1.0, seed=5)
ref = simulate(Hawkes(**params), 10_000, None, 1.0, seed=6)  # exact event-driven

for t in (0.25, 0.5, 1.0):
    m = hawkes_mean_intensity(t, **params)
    yf, se_f = moment_ci(fake.at(t)[:, 1])
    yr, se_r = moment_ci(ref.at(t)[:, 1])
    print(f"t={t:4}: m(t)={m:.4f}  fake {yf:.4f}+-{se_f:.4f}  reference {yr:.4f}+-{se_r:.4f}")

a, b = fake.at(1.0), ref.at(1.0)
print("Y_1 KS:", ks_two_sample(a[:, 1], b[:, 1]))
print("X_1 chi-square:", chi_square_counts(np.bincount(a[:, 0].astype(int)), np.bincount(b[:, 0].astype(int)),
                                           two_sample=True))
