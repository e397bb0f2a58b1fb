"""Time-stepped particle simulators for the reference and McKean-Vlasov models.

Per step: snapshot the left-limit states, fit the conditional estimator on
the whole cloud, then advance particles independently with the frozen
estimator.  Randomness is keyed by ``(seed, stream, particle, step, slot)``
so results do not depend on how particles are split across workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .characteristics import CharacteristicsLog
from .estimators import EstimatorConfig, projected_characteristics
from .models import LSI, LSV, LI, LV, FakeHawkes, Hawkes
from .rng import CounterStreams

BROWNIAN, THINNING, FACTOR, HAWKES_EXACT, INITIAL = 1, 2, 3, 4, 5


class BoundViolation(ValueError):
    """Thinning intensity exceeded its dominating rate."""


def step_euler_jump(state, drift, factor, dt, gaussians, jumps=()):
    """``state + drift dt + factor sqrt(dt) gaussians + sum(jumps)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=float)
    out = state + np.asarray(drift, dtype=float) * dt
    factor = np.asarray(factor, dtype=float)
    g = np.asarray(gaussians, dtype=float)
    if factor.size and g.size:
        out = out + np.sqrt(dt) * (factor @ g)
    for xi in jumps:
        out = out + np.asarray(xi, dtype=float)
    return out


@dataclass
class ThinningOutcome:
    accepted: np.ndarray
    proposed: np.ndarray
    event_index: np.ndarray
    event_offset: np.ndarray


def thinning_step(intensity, bound, dt, draw):
    """Thinning of a dominating Poisson stream over one step of length ``dt``.

    Proposals arrive at rate ``bound``; each is kept with probability
    ``intensity / bound`` (intensity frozen over the step).  ``draw(k, idx)``
    returns the pair of uniforms for the ``k``-th proposal of entries
    ``idx``: one for the exponential gap, one for acceptance.
    """
    intensity = np.atleast_1d(np.asarray(intensity, dtype=float))
    bound = np.broadcast_to(np.asarray(bound, dtype=float), intensity.shape)
    if np.any(intensity < 0):
        raise ValueError("negative intensity")
    over = intensity > bound * (1.0 + 1e-12)
    if np.any(over):
        i = int(np.argmax(over))
        raise BoundViolation(f"intensity {intensity[i]:.6g} exceeds thinning bound {bound[i]:.6g}")
    n = intensity.size
    accepted = np.zeros(n, dtype=np.int64)
    proposed = np.zeros(n, dtype=np.int64)
    clock = np.zeros(n)
    active = np.flatnonzero(bound > 0)
    ev_idx, ev_off = [], []
    k = 0
    while active.size:
        u_gap, u_acc = draw(k, active)
        clock[active] -= np.log(u_gap) / bound[active]
        alive = clock[active] < dt
        active, u_acc = active[alive], u_acc[alive]
        proposed[active] += 1
        keep = u_acc * bound[active] < intensity[active]
        hit = active[keep]
        accepted[hit] += 1
        ev_idx.append(hit)
        ev_off.append(clock[hit])
        k += 1
    ev_idx = np.concatenate(ev_idx) if ev_idx else np.zeros(0, dtype=np.int64)
    ev_off = np.concatenate(ev_off) if ev_off else np.zeros(0)
    return ThinningOutcome(accepted, proposed, ev_idx, ev_off)


@dataclass
class FactorPath:
    """Right-continuous two-level paths, one per particle.

    ``switch_times`` is ``(N, K)`` padded with ``inf``; the level flips at
    each finite entry.
    """

    spec: object
    start_hi: np.ndarray
    switch_times: np.ndarray

    def hi_at(self, t):
        flips = np.sum(self.switch_times <= t, axis=1)
        return self.start_hi ^ (flips % 2 == 1)

    def value_at(self, t):
        return np.where(self.hi_at(t), self.spec.eta_hi, self.spec.eta_lo)

    def time_at_hi(self, horizon):
        """Occupation time of the high level on ``[0, horizon]``."""
        st = np.minimum(self.switch_times, horizon)
        edges = np.column_stack([np.zeros(len(st)), st, np.full(len(st), horizon)])
        widths = np.diff(edges, axis=1)
        k = np.arange(widths.shape[1])
        hi = self.start_hi[:, None] ^ (k[None, :] % 2 == 1)
        return np.sum(widths * hi, axis=1)


def simulate_factor(spec, horizon, streams, particles=1):
    """Exact simulation of the two-state chain by exponential holding times."""
    ids = np.arange(particles, dtype=np.uint64) if np.isscalar(particles) else np.asarray(particles, np.uint64)
    n = len(ids)
    u0, _ = streams.uniform2(FACTOR, ids, 0, slot=1)
    if spec.initial == "hi":
        start_hi = np.ones(n, dtype=bool)
    elif spec.initial == "lo":
        start_hi = np.zeros(n, dtype=bool)
    else:
        start_hi = u0 < spec.p_hi
    if spec.degenerate:
        return FactorPath(spec, start_hi, np.full((n, 0), np.inf))
    clock = np.zeros(n)
    hi = start_hi.copy()
    cols = []
    k = 0
    active = np.arange(n)
    while active.size:
        u, _ = streams.uniform2(FACTOR, ids[active], k + 1)
        rate = np.where(hi[active], spec.q_dn, spec.q_up)
        with np.errstate(divide="ignore"):
            gap = np.where(rate > 0, -np.log(u) / np.where(rate > 0, rate, 1.0), np.inf)
        clock[active] += gap
        col = np.full(n, np.inf)
        live = clock[active] <= horizon
        col[active[live]] = clock[active[live]]
        cols.append(col)
        active = active[live]
        hi[active] = ~hi[active]
        k += 1
    switch = np.column_stack(cols[:-1]) if len(cols) > 1 else np.full((n, 0), np.inf)
    return FactorPath(spec, start_hi, switch)


@dataclass
class EventLog:
    """Jumps realized by the simulation: time, particle, jump vector."""

    times: np.ndarray
    particles: np.ndarray
    sizes: np.ndarray

    @classmethod
    def empty(cls, d):
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, d)))

    def window(self, t0, t1):
        m = (self.times >= t0) & (self.times < t1)
        return EventLog(self.times[m], self.particles[m], self.sizes[m])


@dataclass
class Ensemble:
    """Particle snapshots on a recording grid plus the realized jumps."""

    model: object
    n: int
    dt: float
    horizon: float
    seed: int
    times: np.ndarray
    states: np.ndarray  # (K, N, d)
    eta: np.ndarray | None  # (K, N)
    events: EventLog
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    @property
    def dim(self):
        return self.states.shape[2]

    def index_of(self, t, tol=1e-9):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol:
            raise KeyError(f"no snapshot at t={t}")
        return k

    def at(self, t):
        return self.states[self.index_of(t)]

    def eta_at(self, k):
        return None if self.eta is None else self.eta[k]

    def characteristics(self, k):
        """Per-particle characteristics at snapshot ``k`` (left limits)."""
        return self.model.characteristics(self.times[k], self.states[k], self.eta_at(k), self.estimator)

    def projected(self, k):
        chars = self.characteristics(k)
        cfg = self.estimator.with_bins(self.estimator.bins or self.model.bins())
        return projected_characteristics(self.times[k], self.states[k], chars, config=cfg)

    def characteristics_log(self):
        return CharacteristicsLog.from_characteristics(
            self.times, [self.characteristics(k) for k in range(len(self.times))]
        )


def _grid(dt, horizon, record_dt=None, snapshot_times=()):
    if not (dt > 0 and horizon > 0):
        raise ValueError("dt and horizon must be positive")
    n_steps = int(round(horizon / dt))
    if n_steps < 1 or abs(n_steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
    every = 1 if record_dt is None else max(1, int(round(record_dt / dt)))
    rec = set(range(0, n_steps + 1, every)) | {n_steps}
    for t in snapshot_times:
        k = int(round(t / dt))
        if k < 0 or k > n_steps or abs(k * dt - t) > 1e-9:
            raise ValueError(f"snapshot time {t} is not on the step grid")
        rec.add(k)
    return n_steps, sorted(rec)


def _default_record_dt(dt, horizon):
    return max(dt, horizon / 100.0)


def _chunks(n, workers):
    workers = max(1, int(workers))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [slice(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i + 1] > bounds[i]]


def _run_chunks(fn, n, workers):
    parts = _chunks(n, workers)
    if len(parts) == 1:
        fn(parts[0])
        return
    with ThreadPoolExecutor(len(parts)) as pool:
        list(pool.map(fn, parts))


class _Recorder:
    def __init__(self, record_steps, n, d, with_eta):
        self.steps = record_steps
        self.pos = {k: i for i, k in enumerate(record_steps)}
        self.states = np.empty((len(record_steps), n, d))
        self.eta = np.empty((len(record_steps), n)) if with_eta else None

    def maybe(self, k, states, eta):
        i = self.pos.get(k)
        if i is not None:
            self.states[i] = states
            if self.eta is not None:
                self.eta[i] = eta


def _factor(model, horizon, streams, n):
    if model.factor is None:
        return None
    return simulate_factor(model.factor, horizon, streams, n)


def simulate_diffusion(model, n, dt, horizon, seed, estimator=None, record_dt=None,
                       snapshot_times=(), workers=1):
    """LV / LSV in log-price.

    Over each step the volatility is frozen at its left-endpoint value, so
    the log-price increment is exactly Gaussian given the step start.
    """
    estimator = estimator or EstimatorConfig()
    record_dt = _default_record_dt(dt, horizon) if record_dt is None else record_dt
    n_steps, rec = _grid(dt, horizon, record_dt, snapshot_times)
    streams = CounterStreams(seed)
    ids = np.arange(n, dtype=np.uint64)
    factor = _factor(model, horizon, streams, n)
    recorder = _Recorder(rec, n, 1, factor is not None)
    logs = np.full(n, np.log(model.s0))
    s = np.exp(logs)
    sigma = model.sigma if callable(model.sigma) else None
    sqdt = np.sqrt(dt)
    for k in range(n_steps + 1):
        t = k * dt
        states = s[:, None]
        eta = None if factor is None else factor.value_at(t)
        recorder.maybe(k, states, eta)
        if k == n_steps:
            break
        lev = model.leverage(t, states, eta, estimator)
        vol = lev * (sigma(t, s) if sigma is not None else float(model.sigma))
        if np.any(~np.isfinite(vol)):
            raise FloatingPointError(f"non-finite volatility at t={t}")

        def advance(sl, t=t, vol=vol, k=k):
            z = streams.normal(BROWNIAN, ids[sl], k)
            v = vol[sl]
            logs[sl] += (model.r - 0.5 * v * v) * dt + v * sqdt * z
            s[sl] = np.exp(logs[sl])

        _run_chunks(advance, n, workers)
    return Ensemble(model, n, dt, horizon, seed, dt * np.asarray(rec, dtype=float),
                    recorder.states, recorder.eta, EventLog.empty(1), estimator)


def simulate_counting(model, n, dt, horizon, seed, estimator=None, record_dt=None,
                      snapshot_times=(), workers=1):
    """LI / LSI counting processes by per-step thinning."""
    estimator = estimator or EstimatorConfig(bins=model.bins())
    record_dt = _default_record_dt(dt, horizon) if record_dt is None else record_dt
    n_steps, rec = _grid(dt, horizon, record_dt, snapshot_times)
    streams = CounterStreams(seed)
    ids = np.arange(n, dtype=np.uint64)
    factor = _factor(model, horizon, streams, n)
    recorder = _Recorder(rec, n, 1, factor is not None)
    x = np.zeros(n)
    bound = model.thinning_bound
    ev_t, ev_p = [], []
    for k in range(n_steps + 1):
        t = k * dt
        states = x[:, None]
        eta = None if factor is None else factor.value_at(t)
        recorder.maybe(k, states, eta)
        if k == n_steps:
            break
        rate = model.characteristics(t, states, eta, estimator).kappa.rates[:, 0]
        out_p, out_t = [None], [None]

        def advance(sl, t=t, rate=rate, k=k):
            sub = ids[sl]
            res = thinning_step(rate[sl], bound, dt,
                                lambda j, idx: streams.uniform2(THINNING, sub[idx], k, slot=j))
            x[sl] += res.accepted
            return sl.start + res.event_index, t + res.event_offset

        parts = _chunks(n, workers)
        if len(parts) == 1:
            results = [advance(parts[0])]
        else:
            with ThreadPoolExecutor(len(parts)) as pool:
                results = list(pool.map(advance, parts))
        for p, tt in results:
            ev_p.append(p)
            ev_t.append(tt)
    events = _event_log(ev_t, ev_p, np.array([1.0]))
    return Ensemble(model, n, dt, horizon, seed, dt * np.asarray(rec, dtype=float),
                    recorder.states, recorder.eta, events, estimator)


def _event_log(ev_t, ev_p, jump):
    t = np.concatenate(ev_t) if ev_t else np.zeros(0)
    p = np.concatenate(ev_p).astype(np.int64) if ev_p else np.zeros(0, dtype=np.int64)
    order = np.lexsort((p, t))
    return EventLog(t[order], p[order], np.tile(jump, (len(t), 1)))


def simulate_hawkes_stepped(model, n, dt, horizon, seed, estimator=None, record_dt=None,
                            snapshot_times=(), workers=1):
    """Hawkes / fake Hawkes on a time grid.

    Intensity is frozen at the step start; proposals come from a thinning
    bound refreshed each step from the current maximum of ``Y``.  ``Y``
    relaxes exactly toward ``lam0`` and each accepted jump at offset ``s``
    contributes ``c exp(-theta (dt - s))`` at the step end.
    """
    estimator = estimator or EstimatorConfig(bins=model.bins())
    record_dt = _default_record_dt(dt, horizon) if record_dt is None else record_dt
    n_steps, rec = _grid(dt, horizon, record_dt, snapshot_times)
    streams = CounterStreams(seed)
    ids = np.arange(n, dtype=np.uint64)
    factor = _factor(model, horizon, streams, n)
    recorder = _Recorder(rec, n, 2, factor is not None)
    xy = model.initial_state(n)
    ratio_max = 1.0 if model.factor is None else model.factor.ratio_bound
    decay = np.exp(-model.theta * dt)
    ev_t, ev_p = [], []
    for k in range(n_steps + 1):
        t = k * dt
        eta = None if factor is None else factor.value_at(t)
        recorder.maybe(k, xy, eta)
        if k == n_steps:
            break
        rate = model.characteristics(t, xy, eta, estimator).kappa.rates[:, 0]
        bound = ratio_max * float(xy[:, 1].max())

        def advance(sl, t=t, rate=rate, k=k, bound=bound):
            sub = ids[sl]
            res = thinning_step(rate[sl], bound, dt,
                                lambda j, idx: streams.uniform2(THINNING, sub[idx], k, slot=j))
            kick = np.zeros(sl.stop - sl.start)
            np.add.at(kick, res.event_index, np.exp(-model.theta * (dt - res.event_offset)))
            y = xy[sl, 1]
            xy[sl, 1] = model.lam0 + (y - model.lam0) * decay + model.c * kick
            xy[sl, 0] += res.accepted
            return sl.start + res.event_index, t + res.event_offset

        parts = _chunks(n, workers)
        if len(parts) == 1:
            results = [advance(parts[0])]
        else:
            with ThreadPoolExecutor(len(parts)) as pool:
                results = list(pool.map(advance, parts))
        for p, tt in results:
            ev_p.append(p)
            ev_t.append(tt)
    events = _event_log(ev_t, ev_p, model.jump)
    return Ensemble(model, n, dt, horizon, seed, dt * np.asarray(rec, dtype=float),
                    recorder.states, recorder.eta, events, estimator)


def simulate_hawkes_exact(model, n, horizon, seed, record_dt=None, snapshot_times=(), workers=1):
    """Event-driven Hawkes simulation by Ogata thinning.

    Between events ``Y`` relaxes as ``lam0 + (Y - lam0) exp(-theta s)``, so
    ``max(Y, lam0)`` dominates the intensity until the next proposal.
    Snapshots are reconstructed from the event times.
    """
    record_dt = _default_record_dt(horizon / 100.0, horizon) if record_dt is None else record_dt
    n_rec = int(round(horizon / record_dt))
    grid = list(np.linspace(0.0, horizon, n_rec + 1)) + [float(t) for t in snapshot_times]
    times = np.unique(np.round(np.asarray(grid), 12))
    streams = CounterStreams(seed)
    ids = np.arange(n, dtype=np.uint64)
    lam0, c, theta = model.lam0, model.c, model.theta
    ev_t, ev_p = [], []

    def run(sl):
        m = sl.stop - sl.start
        clock = np.zeros(m)
        y = np.full(m, float(model.y_start))
        active = np.arange(m)
        out_t, out_p = [], []
        k = 0
        while active.size:
            u_gap, u_acc = streams.uniform2(HAWKES_EXACT, ids[sl][active], k)
            yb = np.maximum(y[active], lam0)
            gap = -np.log(u_gap) / yb
            clock[active] += gap
            y[active] = lam0 + (y[active] - lam0) * np.exp(-theta * gap)
            alive = clock[active] < horizon
            active, u_acc, yb = active[alive], u_acc[alive], yb[alive]
            keep = u_acc * yb < y[active]
            hit = active[keep]
            y[hit] += c
            out_t.append(clock[hit])
            out_p.append(sl.start + hit)
            k += 1
        return out_t, out_p

    parts = _chunks(n, workers)
    if len(parts) == 1:
        results = [run(parts[0])]
    else:
        with ThreadPoolExecutor(len(parts)) as pool:
            results = list(pool.map(run, parts))
    for tt, pp in results:
        ev_t.extend(tt)
        ev_p.extend(pp)
    events = _event_log(ev_t, ev_p, model.jump)
    states = hawkes_states_from_events(model, n, events, times)
    return Ensemble(model, n, 0.0, horizon, seed, times, states, None, events,
                    EstimatorConfig(bins=model.bins()))


def hawkes_states_from_events(model, n, events, times):
    """``(X_t, Y_t)`` at each time from the event log (right-continuous)."""
    times = np.asarray(times, dtype=float)
    K = len(times)
    states = np.empty((K, n, 2))
    ystart = model.y_start
    # index of first grid time at or after each event
    first = np.searchsorted(times, events.times, side="left")
    counts = np.zeros((K + 1, n))
    np.add.at(counts, (first, events.particles), 1.0)
    counts = np.cumsum(counts[:K], axis=0)
    base = model.lam0 + (ystart - model.lam0) * np.exp(-model.theta * times)
    y = np.zeros((K, n))
    # sum over events of c exp(-theta (t - tau)) accumulated grid by grid
    order = np.argsort(first, kind="stable")
    f_sorted = first[order]
    tau = events.times[order]
    who = events.particles[order]
    acc = np.zeros(n)
    prev_t = 0.0
    pos = 0
    for i, t in enumerate(times):
        acc *= np.exp(-model.theta * (t - prev_t))
        end = np.searchsorted(f_sorted, i, side="right")
        if end > pos:
            np.add.at(acc, who[pos:end], model.c * np.exp(-model.theta * (t - tau[pos:end])))
            pos = end
        y[i] = acc
        prev_t = t
    states[:, :, 0] = counts
    states[:, :, 1] = base[:, None] + y
    return states


SIMULATORS = {
    "lv": simulate_diffusion,
    "lsv": simulate_diffusion,
    "li": simulate_counting,
    "lsi": simulate_counting,
    "fake_hawkes": simulate_hawkes_stepped,
}


def simulate(model, n, dt, horizon, seed, **kw):
    """Dispatch on model kind.  Hawkes with ``dt=None`` is simulated exactly."""
    if model.kind == "hawkes":
        if dt is None:
            kw.pop("estimator", None)
            return simulate_hawkes_exact(model, n, horizon, seed, **kw)
        return simulate_hawkes_stepped(model, n, dt, horizon, seed, **kw)
    return SIMULATORS[model.kind](model, n, dt, horizon, seed, **kw)


def simulate_reference_lv(spec: LV, n, dt, horizon, seed, **kw):
    return simulate_diffusion(spec, n, dt, horizon, seed, **kw)


def simulate_lsv_particles(spec: LSV, n, dt, horizon, seed, estimator=None, **kw):
    return simulate_diffusion(spec, n, dt, horizon, seed, estimator=estimator, **kw)


def simulate_reference_li(spec: LI, n, dt, horizon, seed, **kw):
    return simulate_counting(spec, n, dt, horizon, seed, **kw)


def simulate_lsi_particles(spec: LSI, n, dt, horizon, seed, estimator=None, **kw):
    return simulate_counting(spec, n, dt, horizon, seed, estimator=estimator, **kw)


def simulate_reference_hawkes(spec: Hawkes, n, horizon, seed, dt=None, **kw):
    """Exact event-driven simulation, or the stepped scheme when ``dt`` is given."""
    if dt is None:
        return simulate_hawkes_exact(spec, n, horizon, seed, **kw)
    return simulate_hawkes_stepped(spec, n, dt, horizon, seed, **kw)


def simulate_fake_hawkes_particles(spec: FakeHawkes, n, dt, horizon, seed, estimator=None, **kw):
    return simulate_hawkes_stepped(spec, n, dt, horizon, seed, estimator=estimator, **kw)
