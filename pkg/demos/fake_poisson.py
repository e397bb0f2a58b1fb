"""A counting process with a random intensity whose marginals stay Poisson.

Each particle's intensity is eta / E[eta | X] with eta a two-state chain.
Conditioning on the current count is estimated from the whole cloud, so the
average intensity seen at every count level is exactly one, and X_1 ends up
Poisson(1) even though no individual path is a Poisson process.
"""
import numpy as np
from scipy import stats

from markovproj import LI, LSI, StochasticFactorSpec, simulate
from markovproj.stats import chi_square_counts

eta = StochasticFactorSpec(eta_lo=0.5, eta_hi=2.0, q_up=1.0, q_dn=1.0)
n, dt = 20_000, 1e-3

fake = simulate(LSI(1.0, factor_spec=eta), n, dt, 1.0, seed=1)
ref = simulate(LI(1.0), n, dt, 1.0, seed=2)

x_fake = fake.states[-1, :, 0].astype(int)
x_ref = ref.states[-1, :, 0].astype(int)
pmf = stats.poisson.pmf(np.arange(7), 1.0)

print("k   P(X=k)   fake     reference")
for k in range(6):
    print(f"{k}   {pmf[k]:.4f}   {np.mean(x_fake == k):.4f}   {np.mean(x_ref == k):.4f}")

print("chi-square vs pmf:", chi_square_counts(np.bincount(x_fake), pmf))
print("two-sample chi-square:", chi_square_counts(np.bincount(x_fake), np.bincount(x_ref), two_sample=True))

# the paths themselves differ: the time-averaged intensity of a particle
# depends on how long it spent in the high state
hi = fake.eta[:, :] == eta.eta_hi
print("spread of time in high state across particles:", hi.mean(axis=0).std().round(3))
