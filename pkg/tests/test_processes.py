import numpy as np
import pytest
from scipy import stats

from markovproj.estimators import EstimatorConfig
from markovproj.models import LSI, LSV, LI, LV, FakeHawkes, Hawkes, StochasticFactorSpec, hawkes_mean_intensity
from markovproj.processes import (
    BoundViolation,
    CounterStreams,
    hawkes_states_from_events,
    simulate,
    simulate_factor,
    simulate_fake_hawkes_particles,
    simulate_lsi_particles,
    simulate_lsv_particles,
    simulate_reference_hawkes,
    simulate_reference_li,
    simulate_reference_lv,
    step_euler_jump,
    thinning_step,
)

TWO_STATE = StochasticFactorSpec(0.5, 2.0, 1.0, 1.0)


def within(mean, se, target, k=3.0):
    return abs(mean - target) <= k * se


class TestEulerStep:
    def test_zero_inputs(self):
        x = np.array([1.5, -2.0])
        assert np.array_equal(step_euler_jump(x, np.zeros(2), np.zeros((2, 2)), 0.1, np.zeros(2)), x)

    def test_drift(self):
        assert step_euler_jump(np.array([0.0]), np.array([1.0]), np.zeros((1, 1)), 0.01, np.zeros(1))[0] == 0.01

    def test_jump(self):
        out = step_euler_jump(np.array([2.0, 1.0]), np.zeros(2), np.zeros((2, 2)), 0.1, np.zeros(2),
                              [np.array([1.0, 0.7])])
        assert out.tolist() == [3.0, 1.7]

    def test_diffusion(self):
        out = step_euler_jump(np.zeros(2), np.zeros(2), np.diag([2.0, 3.0]), 0.25, np.array([1.0, -1.0]))
        assert out.tolist() == [1.0, -1.5]

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            step_euler_jump(np.zeros(1), np.zeros(1), np.zeros((1, 1)), 0.0, np.zeros(1))


def _draw(streams, ids, step=0):
    return lambda k, idx: streams.uniform2(2, ids[idx], step, slot=k)


class TestThinning:
    def test_zero_intensity(self):
        ids = np.arange(100, dtype=np.uint64)
        res = thinning_step(np.zeros(100), 5.0, 1.0, _draw(CounterStreams(1), ids))
        assert res.accepted.sum() == 0 and res.proposed.sum() > 0

    def test_intensity_at_bound(self):
        ids = np.arange(100, dtype=np.uint64)
        res = thinning_step(np.full(100, 3.0), 3.0, 1.0, _draw(CounterStreams(1), ids))
        assert np.array_equal(res.accepted, res.proposed)

    def test_bound_violation(self):
        with pytest.raises(BoundViolation):
            thinning_step(np.array([2.0]), 1.0, 0.1, _draw(CounterStreams(1), np.zeros(1, np.uint64)))

    def test_poisson_mean(self):
        n, lam = 100_000, 2.0
        ids = np.arange(n, dtype=np.uint64)
        res = thinning_step(np.full(n, lam), 3.0, 1.0, _draw(CounterStreams(9), ids))
        c = res.accepted
        assert within(c.mean(), c.std(ddof=1) / np.sqrt(n), lam)
        assert np.all((res.event_offset >= 0) & (res.event_offset < 1.0))


class TestFactor:
    def test_degenerate(self):
        spec = StochasticFactorSpec(1.3, 1.3)
        path = simulate_factor(spec, 5.0, CounterStreams(0), 50)
        assert np.all(path.value_at(0.0) == 1.3) and np.all(path.value_at(4.9) == 1.3)

    def test_values_in_support(self):
        path = simulate_factor(TWO_STATE, 3.0, CounterStreams(0), 500)
        for t in np.linspace(0, 3, 13):
            assert set(np.unique(path.value_at(t))) <= {0.5, 2.0}

    def test_symmetric_occupation(self):
        T = 50.0
        path = simulate_factor(StochasticFactorSpec(0.5, 2.0, 1.0, 1.0, "lo"), T, CounterStreams(2), 2000)
        frac = path.time_at_hi(T) / T
        # P(hi at t | lo at 0) = (1 - exp(-2t)) / 2, integrated over [0, T]
        exact = 0.5 - (1 - np.exp(-2 * T)) / (4 * T)
        assert within(frac.mean(), frac.std(ddof=1) / np.sqrt(len(frac)), exact)
        assert abs(frac.mean() - 0.5) < 0.01

    def test_stationary_start(self):
        spec = StochasticFactorSpec(0.5, 2.0, 1.0, 3.0)
        path = simulate_factor(spec, 1.0, CounterStreams(2), 40_000)
        p = path.start_hi.mean()
        assert within(p, np.sqrt(0.25 * 0.75 / 40_000), 0.25)


class TestLocalVolatility:
    def test_zero_vol_deterministic(self):
        ens = simulate_reference_lv(LV(0.05, 0.0, 2.0), 10, 0.01, 1.0, seed=1)
        assert np.allclose(ens.states[:, :, 0], 2.0 * np.exp(0.05 * ens.times)[:, None], rtol=1e-13, atol=0)

    def test_gbm_mean(self):
        ens = simulate_reference_lv(LV(0.03, 0.2, 1.0), 50_000, 0.01, 1.0, seed=2)
        s = ens.states[-1, :, 0]
        assert within(s.mean(), s.std(ddof=1) / np.sqrt(len(s)), np.exp(0.03))

    def test_lsv_degenerate_equals_lv(self):
        a = simulate_reference_lv(LV(0.0, 0.2, 1.0), 2000, 0.01, 1.0, seed=5)
        b = simulate_lsv_particles(LSV(0.0, 0.2, 1.0, factor_spec=StochasticFactorSpec(1.0, 1.0)),
                                   2000, 0.01, 1.0, seed=5)
        assert np.array_equal(a.states, b.states)

    def test_leverage_squared_has_unit_bin_mean(self, rng):
        model = LSV(0.0, 0.2, 1.0, factor_spec=TWO_STATE)
        s = rng.lognormal(0, 0.2, size=(5000, 1))
        eta = rng.choice([0.5, 2.0], size=5000)
        cfg = EstimatorConfig()
        lev = model.leverage(0.0, s, eta, cfg)
        est = cfg.with_bins(model.bins()).fit(s, lev**2)
        # every bin mean of the squared leverage is one
        assert np.allclose(est.info["means"][est.info["counts"] > 0], 1.0, rtol=1e-12)

    def test_lsv_lognormal(self):
        ens = simulate_lsv_particles(LSV(0.0, 0.2, 1.0, factor_spec=TWO_STATE), 20_000, 0.01, 1.0, seed=3)
        res = stats.kstest(ens.states[-1, :, 0], stats.lognorm(0.2, scale=np.exp(-0.02)).cdf)
        assert res.statistic <= 0.02


class TestLocalIntensity:
    def test_zero_intensity(self):
        ens = simulate_reference_li(LI(0.0), 100, 0.01, 1.0, seed=1)
        assert np.all(ens.states == 0) and ens.events.times.size == 0

    def test_prob_zero(self):
        n = 100_000
        ens = simulate_reference_li(LI(1.0), n, 0.01, 1.0, seed=1)
        p = np.mean(ens.states[-1, :, 0] == 0)
        assert within(p, np.sqrt(p * (1 - p) / n), np.exp(-1.0))

    def test_time_dependent_intensity(self):
        n, dt = 20_000, 1e-3
        ens = simulate_reference_li(LI(lambda t, x: np.full(np.shape(x), t), lam_bound=1.0), n, dt, 1.0, seed=1)
        x = ens.states[-1, :, 0]
        # left-endpoint freezing lowers the mean by dt/2
        assert within(x.mean(), x.std(ddof=1) / np.sqrt(n), 0.5 - dt / 2)

    def test_lsi_counting_paths(self):
        ens = simulate_lsi_particles(LSI(1.0, factor_spec=TWO_STATE), 2000, 0.01, 1.0, seed=1, record_dt=0.01)
        x = ens.states[:, :, 0]
        assert np.all(np.diff(x, axis=0) >= 0) and np.all(x == np.round(x))
        assert np.all(ens.events.sizes == 1.0)
        assert ens.events.times.size == x[-1].sum()

    def test_lsi_degenerate_equals_li(self):
        a = simulate_reference_li(LI(1.0), 3000, 0.01, 1.0, seed=8)
        b = simulate_lsi_particles(LSI(1.0, factor_spec=StochasticFactorSpec(0.7, 0.7)), 3000, 0.01, 1.0, seed=8)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.events.times, b.events.times)

    def test_state_dependent_needs_bound(self):
        with pytest.raises(ValueError):
            LI(lambda t, x: x)


class TestHawkes:
    def test_no_excitation_is_poisson(self):
        n = 50_000
        ens = simulate_reference_hawkes(Hawkes(1.5, 0.0, 2.0), n, 1.0, seed=3)
        p = np.mean(ens.states[-1, :, 0] == 0)
        assert within(p, np.sqrt(p * (1 - p) / n), np.exp(-1.5))

    def test_intensity_floor(self):
        ens = simulate_reference_hawkes(Hawkes(1.0, 1.0, 2.0), 2000, 1.0, seed=3)
        assert np.all(ens.states[:, :, 1] >= 1.0)

    @pytest.mark.parametrize("dt", [None, 1e-3])
    def test_reference_mean(self, dt):
        n = 20_000
        ens = simulate_reference_hawkes(Hawkes(1.0, 1.0, 2.0), n, 1.0, seed=4, dt=dt)
        y = ens.states[-1, :, 1]
        assert within(y.mean(), y.std(ddof=1) / np.sqrt(n), hawkes_mean_intensity(1.0, 1.0, 1.0, 2.0))

    def test_fake_mean(self):
        n = 10_000
        ens = simulate_fake_hawkes_particles(FakeHawkes(1.0, 1.0, 2.0, factor_spec=TWO_STATE), n, 1e-3, 1.0, seed=4)
        y = ens.states[-1, :, 1]
        assert within(y.mean(), y.std(ddof=1) / np.sqrt(n), hawkes_mean_intensity(1.0, 1.0, 1.0, 2.0))

    def test_mean_oracle_closed_form(self):
        # m' = 2 - m, m(0) = 1  =>  m(t) = 2 - exp(-t)
        assert hawkes_mean_intensity(1.0, 1.0, 1.0, 2.0) == pytest.approx(2 - np.exp(-1))
        assert hawkes_mean_intensity(0.7, 1.0, 2.0, 2.0) == pytest.approx(1 + 2 * 0.7)

    def test_fake_degenerate_equals_stepped_reference(self):
        a = simulate_reference_hawkes(Hawkes(1.0, 1.0, 2.0), 2000, 1.0, seed=6, dt=0.01)
        b = simulate_fake_hawkes_particles(FakeHawkes(1.0, 1.0, 2.0, factor_spec=StochasticFactorSpec(2.0, 2.0)),
                                           2000, 0.01, 1.0, seed=6)
        assert np.array_equal(a.states, b.states)

    def test_states_rebuilt_from_events(self):
        model = Hawkes(1.0, 0.8, 1.5)
        ens = simulate_reference_hawkes(model, 30, 2.0, seed=1)
        t = 1.37
        got = hawkes_states_from_events(model, 30, ens.events, np.array([0.0, t]))[1]
        for i in range(30):
            tau = ens.events.times[(ens.events.particles == i) & (ens.events.times <= t)]
            assert got[i, 0] == len(tau)
            assert got[i, 1] == pytest.approx(1.0 + 0.8 * np.exp(-1.5 * (t - tau)).sum(), rel=1e-12)


@pytest.mark.parametrize(
    "model, dt",
    [
        (LSV(0.0, 0.2, 1.0, factor_spec=TWO_STATE), 0.01),
        (LSI(1.0, factor_spec=TWO_STATE), 0.01),
        (FakeHawkes(1.0, 1.0, 2.0, factor_spec=TWO_STATE), 0.01),
        (Hawkes(1.0, 1.0, 2.0), None),
    ],
    ids=lambda v: getattr(v, "kind", str(v)),
)
def test_worker_count_does_not_change_results(model, dt):
    one = simulate(model, 1500, dt, 1.0, seed=21, workers=1)
    three = simulate(model, 1500, dt, 1.0, seed=21, workers=3)
    assert np.array_equal(one.states, three.states)
    assert np.array_equal(one.events.times, three.events.times)
    assert np.array_equal(one.events.particles, three.events.particles)


def test_snapshot_times_must_be_on_grid():
    with pytest.raises(ValueError):
        simulate(LI(1.0), 10, 0.1, 1.0, seed=0, snapshot_times=(0.55,))


def test_intensity_ratio_bin_means_and_bounds(rng):
    model = LSI(1.0, factor_spec=TWO_STATE)
    x = rng.poisson(1.0, size=(5000, 1)).astype(float)
    eta = rng.choice([0.5, 2.0], size=5000)
    cfg = EstimatorConfig(bins=model.bins())
    ratio = model.multiplier(0.0, x, eta, cfg)
    assert np.all((ratio >= 0.25 - 1e-15) & (ratio <= 4.0 + 1e-15))
    for v in np.unique(x):
        assert np.mean(ratio[x[:, 0] == v]) == pytest.approx(1.0, rel=1e-12)
