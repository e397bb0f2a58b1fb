"""Experiment runner: simulate, persist, test, compare."""
from __future__ import annotations

import datetime as _dt
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import __version__
from . import io
from .characteristics import check_growth, check_integrability
from .config import ConfigError, load_config, parse_config
from .fpke import ensemble_residuals, model_test_functions
from .models import hawkes_mean_intensity
from .processes import Ensemble, EventLog, simulate
from .stats import chi_square_counts, ks_two_sample, ks_vs_cdf, moment_ci

OUTPUT_ROOT_ENV = "MARKOVPROJ_OUTPUT_ROOT"
DATA_FILES = ("snapshots.csv", "factor.csv", "events.csv", "characteristics_log.csv")


def output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run_simulation(cfg):
    kw = dict(record_dt=cfg.record_dt, snapshot_times=cfg.snapshot_times, workers=cfg.workers)
    if not (cfg.model.kind == "hawkes" and cfg.dt is None):
        kw["estimator"] = cfg.estimator
    return simulate(cfg.model, cfg.n, cfg.dt, cfg.horizon, cfg.seed, **kw)


@dataclass
class TestRow:
    __test__ = False

    test: str
    time: float
    coordinate: int
    statistic: float
    pvalue: float
    dof: int
    threshold: float
    passed: bool


def write_test_rows(path, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write("test,time,coordinate,statistic,pvalue,dof,threshold,passed\n")
        for r in rows:
            fh.write(f"{r.test},{r.time:.17g},{r.coordinate},{r.statistic:.17g},{r.pvalue:.17g},"
                     f"{r.dof},{r.threshold:.17g},{int(r.passed)}\n")


def read_test_rows(path):
    rows = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            t, time, j, st, p, dof, thr, ok = line.strip().split(",")
            rows.append(TestRow(t, float(time), int(j), float(st), float(p), int(dof), float(thr), ok == "1"))
    return rows


def oracle_tests(cfg, ens):
    """Oracle checks at the horizon selected by ``tests.oracle``."""
    m, T, alpha = cfg.model, cfg.horizon, cfg.alpha
    final = ens.at(ens.times[-1])
    if cfg.oracle == "poisson":
        mu = float(m.lam) * T
        top = max(6, int(np.ceil(mu + 5 * np.sqrt(mu))))
        pmf = sps.poisson.pmf(np.arange(top + 1), mu)
        res = chi_square_counts(np.bincount(final[:, 0].astype(np.int64)), pmf)
        return [TestRow("chi2_poisson", T, 0, res.statistic, res.pvalue, res.dof, alpha, res.passes(alpha))]
    if cfg.oracle == "lognormal":
        sig = float(m.sigma)
        loc, scale = np.log(m.s0) + (m.r - 0.5 * sig**2) * T, sig * np.sqrt(T)
        res = ks_vs_cdf(final[:, 0], lambda s: sps.norm.cdf((np.log(s) - loc) / scale))
        return [TestRow("ks_lognormal", T, 0, res.statistic, res.pvalue, -1, alpha, res.passes(alpha))]
    if cfg.oracle == "hawkes_mean":
        mean, se = moment_ci(final[:, 1], 1)
        target = hawkes_mean_intensity(T, m.lam0, m.c, m.theta, m.y0)
        z = abs(mean - target) / se if se > 0 else 0.0
        return [TestRow("hawkes_mean_y", T, 1, z, float(2 * sps.norm.sf(z)), -1, 3.0, bool(z <= 3.0))]
    return []


def fpke_report(ens, m=5, modes=("projected", "particle")):
    fs = model_test_functions(ens.model, ens, m)
    reports = []
    for mode in modes:
        reports.extend(ensemble_residuals(ens, fs, mode))
    return reports


def write_fpke_report(path, reports):
    fn, mode, rows = [], [], []
    for i, r in enumerate(reports):
        b = r.budget()
        for k in range(len(r.times)):
            rows.append((r.times[k], r.lhs[k], r.rhs[k], r.residual[k], r.se_lhs[k], r.se_rhs[k],
                         r.se[k], r.constant, b[k], float(abs(r.residual[k]) <= b[k])))
            fn.append(int(r.label[1:]) if r.label.startswith("f") else i)
            mode.append(0 if r.mode == "projected" else 1)
    arr = np.array(rows).reshape(-1, 10)
    io.write_table(path, ["function", "mode", "time", "lhs", "rhs", "residual", "se_lhs", "se_rhs", "se",
                          "constant", "budget", "within"],
                   [np.array(fn, dtype=np.int64), np.array(mode, dtype=np.int64)] + [arr[:, j] for j in range(10)])


def run_experiment(config_path, output=None):
    """Simulate a configured model and write the run directory; returns its path."""
    start = _now()
    cfg = load_config(config_path)
    text = Path(config_path).read_text()
    run_dir = Path(output or cfg.output or output_root() / cfg.name)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(text)
    ens = run_simulation(cfg)
    io.write_snapshots(run_dir / "snapshots.csv", ens.times, ens.states)
    if ens.eta is not None:
        io.write_factor(run_dir / "factor.csv", ens.times, ens.eta)
    io.write_events(run_dir / "events.csv", ens.events)
    io.write_characteristics_log(run_dir / "characteristics_log.csv", ens.characteristics_log())
    rows = oracle_tests(cfg, ens)
    if rows:
        write_test_rows(run_dir / "tests.csv", rows)
    if cfg.fpke:
        write_fpke_report(run_dir / "fpke_residual.csv", fpke_report(ens, cfg.fpke_functions))
    _finish_manifest(run_dir, cfg, start)
    return run_dir


def _finish_manifest(run_dir, cfg, start, extra=None):
    entries = {
        "code.version": __version__,
        "run.seed": cfg.seed,
        "run.start": start,
        "run.end": _now(),
    }
    entries.update(io.flatten("config", cfg.raw))
    for path in sorted(Path(run_dir).iterdir()):
        if path.name != "manifest.txt" and path.is_file():
            entries[f"files.{path.name}.sha256"] = io.sha256(path)
    entries.update(extra or {})
    io.write_manifest(Path(run_dir) / "manifest.txt", entries)


def load_run(run_dir):
    """Rebuild the configuration and ensemble from a run directory."""
    run_dir = Path(run_dir)
    if not (run_dir / "config.toml").exists():
        raise FileNotFoundError(f"{run_dir} is not a run directory (no config.toml)")
    cfg = parse_config((run_dir / "config.toml").read_text(), str(run_dir / "config.toml"))
    times, states = io.read_snapshots(run_dir / "snapshots.csv")
    eta = io.read_factor(run_dir / "factor.csv")[1] if (run_dir / "factor.csv").exists() else None
    d = states.shape[2]
    events = io.read_events(run_dir / "events.csv") if (run_dir / "events.csv").exists() else EventLog.empty(d)
    ens = Ensemble(cfg.model, states.shape[1], cfg.dt or 0.0, cfg.horizon, cfg.seed, times, states, eta,
                   events, cfg.estimator)
    return cfg, ens


def fpke_run(run_dir, m=None, modes=("projected", "particle")):
    cfg, ens = load_run(run_dir)
    reports = fpke_report(ens, m or cfg.fpke_functions, modes)
    write_fpke_report(Path(run_dir) / "fpke_residual.csv", reports)
    return reports


def growth_probes(model, ens):
    """Deterministic probe grid around the simulated range."""
    final = ens.states[-1]
    if model.kind in ("li", "lsi"):
        return np.arange(0.0, final[:, 0].max() + 6.0)[:, None]
    if model.kind in ("lv", "lsv"):
        return np.linspace(0.0, 3.0 * final[:, 0].max(), 61)[:, None]
    xs = np.arange(0.0, final[:, 0].max() + 3.0)
    ys = np.linspace(model.lam0, 1.5 * final[:, 1].max(), 21)
    return np.array([(x, y) for x in xs for y in ys])


@dataclass
class HypothesesReport:
    integrability: object
    growth: float
    probe_grid: np.ndarray = field(repr=False)


def hypotheses(ens, log=None):
    log = log or ens.characteristics_log()
    integ = check_integrability(log, ens.horizon)
    grid = growth_probes(ens.model, ens)
    sup = 0.0
    for k, t in enumerate(ens.times):
        pc = ens.projected(k)
        sup = max(sup, check_growth(pc, [(t, ens.states[k]), (t, grid)], ens.model.truncation))
    return HypothesesReport(integ, sup, grid)


def hypotheses_run(run_dir):
    cfg, ens = load_run(run_dir)
    log = io.read_characteristics_log(Path(run_dir) / "characteristics_log.csv")
    rep = hypotheses(ens, log)
    io.write_table(Path(run_dir) / "probes.csv", [f"coord_{j}" for j in range(rep.probe_grid.shape[1])],
                   [rep.probe_grid[:, j] for j in range(rep.probe_grid.shape[1])])
    io.write_manifest(Path(run_dir) / "hypotheses.txt", {
        "integrability.estimate": rep.integrability.estimate,
        "integrability.stderr": rep.integrability.stderr,
        "integrability.finite": rep.integrability.finite,
        "growth.sup": rep.growth,
        "growth.finite": bool(np.isfinite(rep.growth)),
        "growth.probes.grid_file": "probes.csv",
        "growth.probes.snapshot_times": [float(t) for t in ens.times],
        "growth.truncation_radius": float(ens.model.truncation.r),
    })
    return rep


@dataclass
class ComparisonReport:
    rows: list
    alpha: float

    @property
    def passed(self):
        return all(r.passed for r in self.rows)


def load_testspec(path):
    from .config import tomllib

    try:
        raw = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("<testspec>", str(exc)) from None
    unknown = set(raw) - {"times", "alpha", "coordinates"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key in test spec; allowed: alpha, coordinates, times")
    return raw


def compare_runs(run_a, run_b, spec=None):
    """Per-time, per-coordinate two-sample tests between two runs."""
    spec = spec or {}
    cfg_a, ens_a = load_run(run_a)
    _, ens_b = load_run(run_b)
    alpha = float(spec.get("alpha", 0.01))
    times = [float(t) for t in spec.get("times", [cfg_a.horizon])]
    missing = [t for t in times
               if not (np.any(np.isclose(ens_a.times, t, atol=1e-9)) and np.any(np.isclose(ens_b.times, t, atol=1e-9)))]
    if missing:
        raise ConfigError("times", f"snapshot times missing from a run: {missing}")
    d = ens_a.dim
    coords = spec.get("coordinates", list(range(d)))
    counting = cfg_a.model.counting
    rows = []
    for t in times:
        a, b = ens_a.at(t), ens_b.at(t)
        for j in coords:
            if counting[j]:
                ha = np.bincount(a[:, j].astype(np.int64))
                hb = np.bincount(b[:, j].astype(np.int64))
                res = chi_square_counts(ha, hb, two_sample=True)
                rows.append(TestRow("chi2_two_sample", t, j, res.statistic, res.pvalue, res.dof, alpha,
                                    res.passes(alpha)))
            else:
                res = ks_two_sample(a[:, j], b[:, j])
                rows.append(TestRow("ks_two_sample", t, j, res.statistic, res.pvalue, -1, alpha,
                                    res.passes(alpha)))
    return ComparisonReport(rows, alpha)
