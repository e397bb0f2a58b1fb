"""Experiment configuration: TOML ingestion and validation.

Every rejection raises :class:`ConfigError` naming the offending field and,
when it can be located, the line in the source file.
"""
from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .estimators import EstimatorConfig
from .models import LSI, LSV, LI, LV, FakeHawkes, Hawkes, StochasticFactorSpec


class ConfigError(ValueError):
    """Invalid experiment configuration."""

    def __init__(self, field, message, line=None):
        self.field = field
        self.line = line
        where = f" (line {line})" if line else ""
        super().__init__(f"{field}{where}: {message}")


_TOP = {"name", "seed", "n", "dt", "horizon", "record_dt", "snapshot_times", "workers",
        "output", "model", "estimator", "tests"}
_MODEL = {
    "lv": {"kind", "r", "sigma", "s0", "sigma_bound"},
    "lsv": {"kind", "r", "sigma", "s0", "sigma_bound", "factor"},
    "li": {"kind", "lam", "lam_bound"},
    "lsi": {"kind", "lam", "lam_bound", "factor"},
    "hawkes": {"kind", "lam0", "c", "theta", "y0"},
    "fake_hawkes": {"kind", "lam0", "c", "theta", "y0", "factor"},
}
_FACTOR = {"eta_lo", "eta_hi", "q_up", "q_dn", "initial"}
_ESTIMATOR = {"scheme", "n_bins", "bandwidth"}
_TESTS = {"oracle", "fpke", "fpke_functions", "alpha"}
_ORACLES = {"none", "poisson", "lognormal", "hawkes_mean"}

_ALLOWED_NAMES = {"t", "x", "exp", "log", "sqrt", "sin", "cos", "tanh", "minimum", "maximum",
                  "abs", "pi", "where", "clip"}


def _expression(text, field_name, locate):
    """Compile ``text`` into a vectorized ``f(t, x)``; only arithmetic and numpy math."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(field_name, f"cannot parse expression: {exc.msg}", locate(field_name)) from None
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES:
            raise ConfigError(field_name, f"unknown name {node.id!r} in expression", locate(field_name))
        if isinstance(node, (ast.Attribute, ast.Subscript, ast.Lambda, ast.comprehension)):
            raise ConfigError(field_name, "only arithmetic expressions are allowed", locate(field_name))
    code = compile(tree, f"<{field_name}>", "eval")
    env = {name: getattr(np, name) for name in _ALLOWED_NAMES - {"t", "x", "abs"}}
    env["abs"] = np.abs

    def coef(t, x):
        val = eval(code, {"__builtins__": {}}, {**env, "t": t, "x": x})
        return np.broadcast_to(np.asarray(val, dtype=float), np.shape(x)).copy()

    coef.expression = text
    return coef


@dataclass
class ExperimentConfig:
    """Validated experiment parameters; ``raw`` keeps the parsed TOML."""

    model: object
    seed: int
    n: int
    horizon: float
    dt: float | None
    record_dt: float | None
    snapshot_times: tuple
    workers: int
    estimator: EstimatorConfig
    oracle: str
    fpke: bool
    fpke_functions: int
    alpha: float
    name: str
    output: str | None
    raw: dict = field(default_factory=dict)
    source: str = ""


def _locator(text):
    lines = text.splitlines()

    def locate(dotted):
        key = dotted.split(".")[-1]
        pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
        for i, line in enumerate(lines, 1):
            if pat.match(line):
                return i
        return None

    return locate


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def parse_config(text, source="<string>"):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError("<toml>", str(exc), int(m.group(1)) if m else None) from None
    return validate_config(raw, _locator(text), source)


def _check_keys(table, allowed, prefix, locate):
    for key in table:
        if key not in allowed:
            name = f"{prefix}{key}"
            raise ConfigError(name, f"unknown key; allowed: {', '.join(sorted(allowed))}", locate(name))


def _number(table, key, prefix, locate, *, required=False, default=None, positive=False,
            nonneg=False, integer=False, allow_expr=False):
    name = f"{prefix}{key}"
    if key not in table:
        if required:
            raise ConfigError(name, "required field is missing")
        return default
    val = table[key]
    if allow_expr and isinstance(val, str):
        return _expression(val, name, locate)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(name, f"expected a number, got {type(val).__name__}", locate(name))
    if integer and not isinstance(val, int):
        raise ConfigError(name, "expected an integer", locate(name))
    if not math.isfinite(val):
        raise ConfigError(name, "must be finite", locate(name))
    if positive and not val > 0:
        raise ConfigError(name, f"must be > 0, got {val}", locate(name))
    if nonneg and val < 0:
        raise ConfigError(name, f"must be >= 0, got {val}", locate(name))
    return val


def _factor(table, locate):
    if not isinstance(table, dict):
        raise ConfigError("model.factor", "expected a table", locate("factor"))
    _check_keys(table, _FACTOR, "model.factor.", locate)
    p = "model.factor."
    lo = _number(table, "eta_lo", p, locate, required=True, positive=True)
    hi = _number(table, "eta_hi", p, locate, required=True, positive=True)
    if hi < lo:
        raise ConfigError("model.factor.eta_hi", "must be >= eta_lo", locate("eta_hi"))
    initial = table.get("initial", "stationary")
    if initial not in ("lo", "hi", "stationary"):
        raise ConfigError("model.factor.initial", "must be 'lo', 'hi' or 'stationary'", locate("initial"))
    return StochasticFactorSpec(
        lo, hi,
        _number(table, "q_up", p, locate, default=1.0, nonneg=True),
        _number(table, "q_dn", p, locate, default=1.0, nonneg=True),
        initial,
    )


def _model(table, locate):
    if not isinstance(table, dict):
        raise ConfigError("model", "expected a table", locate("model"))
    kind = table.get("kind")
    if kind is None:
        raise ConfigError("model.kind", "required field is missing")
    if kind not in _MODEL:
        raise ConfigError("model.kind", f"unknown model {kind!r}; one of {', '.join(sorted(_MODEL))}",
                          locate("model.kind"))
    _check_keys(table, _MODEL[kind], "model.", locate)
    p = "model."
    factor = None
    if "factor" in _MODEL[kind]:
        if "factor" not in table:
            raise ConfigError("model.factor", "required table is missing")
        factor = _factor(table["factor"], locate)
    if kind in ("lv", "lsv"):
        sigma = _number(table, "sigma", p, locate, required=True, nonneg=True, allow_expr=True)
        bound = _number(table, "sigma_bound", p, locate, positive=True)
        if callable(sigma) and bound is None:
            raise ConfigError("model.sigma_bound", "required when sigma is an expression")
        args = dict(r=_number(table, "r", p, locate, default=0.0),
                    sigma=sigma,
                    s0=_number(table, "s0", p, locate, default=1.0, positive=True),
                    sigma_bound=bound)
        return LV(**args) if factor is None else LSV(**args, factor_spec=factor)
    if kind in ("li", "lsi"):
        lam = _number(table, "lam", p, locate, required=True, nonneg=True, allow_expr=True)
        bound = _number(table, "lam_bound", p, locate, nonneg=True)
        if callable(lam) and bound is None:
            raise ConfigError("model.lam_bound", "required when lam is an expression")
        return LI(lam, bound) if factor is None else LSI(lam, bound, factor_spec=factor)
    args = dict(lam0=_number(table, "lam0", p, locate, required=True, positive=True),
                c=_number(table, "c", p, locate, required=True, nonneg=True),
                theta=_number(table, "theta", p, locate, required=True, positive=True),
                y0=_number(table, "y0", p, locate, positive=True))
    return Hawkes(**args) if factor is None else FakeHawkes(**args, factor_spec=factor)


def validate_config(raw, locate=lambda name: None, source=""):
    _check_keys(raw, _TOP, "", locate)
    seed = _number(raw, "seed", "", locate, required=True, nonneg=True, integer=True)
    if seed >= 2**64:
        raise ConfigError("seed", "must be below 2**64", locate("seed"))
    n = _number(raw, "n", "", locate, required=True, positive=True, integer=True)
    horizon = _number(raw, "horizon", "", locate, required=True, positive=True)
    if "model" not in raw:
        raise ConfigError("model", "required table is missing")
    model = _model(raw["model"], locate)
    dt = _number(raw, "dt", "", locate, positive=True)
    if dt is None and model.kind != "hawkes":
        raise ConfigError("dt", f"required field is missing for model {model.kind!r}")
    if dt is not None:
        steps = round(horizon / dt)
        if steps < 1 or abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
            raise ConfigError("dt", f"horizon {horizon} is not a multiple of dt {dt}", locate("dt"))
    record_dt = _number(raw, "record_dt", "", locate, positive=True)
    times = raw.get("snapshot_times", [])
    if not isinstance(times, list) or not all(isinstance(t, (int, float)) and not isinstance(t, bool)
                                              for t in times):
        raise ConfigError("snapshot_times", "expected a list of numbers", locate("snapshot_times"))
    for t in times:
        if not 0 <= t <= horizon:
            raise ConfigError("snapshot_times", f"time {t} outside [0, {horizon}]", locate("snapshot_times"))
        if dt is not None and abs(round(t / dt) * dt - t) > 1e-9:
            raise ConfigError("snapshot_times", f"time {t} is not on the dt grid", locate("snapshot_times"))
    workers = _number(raw, "workers", "", locate, default=1, positive=True, integer=True)

    est = raw.get("estimator", {})
    if not isinstance(est, dict):
        raise ConfigError("estimator", "expected a table", locate("estimator"))
    _check_keys(est, _ESTIMATOR, "estimator.", locate)
    scheme = est.get("scheme", "binned")
    if scheme not in ("binned", "kernel"):
        raise ConfigError("estimator.scheme", "must be 'binned' or 'kernel'", locate("scheme"))
    n_bins = _number(est, "n_bins", "estimator.", locate, positive=True, integer=True)
    bandwidth = _number(est, "bandwidth", "estimator.", locate, positive=True)
    if scheme == "kernel" and bandwidth is None:
        raise ConfigError("estimator.bandwidth", "required for the kernel scheme")
    estimator = EstimatorConfig(scheme, n_bins, bandwidth, model.bins())

    tests = raw.get("tests", {})
    if not isinstance(tests, dict):
        raise ConfigError("tests", "expected a table", locate("tests"))
    _check_keys(tests, _TESTS, "tests.", locate)
    oracle = tests.get("oracle", "none")
    if oracle not in _ORACLES:
        raise ConfigError("tests.oracle", f"one of {', '.join(sorted(_ORACLES))}", locate("oracle"))
    _check_oracle(oracle, model, locate)
    fpke = tests.get("fpke", False)
    if not isinstance(fpke, bool):
        raise ConfigError("tests.fpke", "expected true or false", locate("fpke"))
    m = _number(tests, "fpke_functions", "tests.", locate, default=5, integer=True, positive=True)
    if m < 3:
        raise ConfigError("tests.fpke_functions", "must be >= 3", locate("fpke_functions"))
    alpha = _number(tests, "alpha", "tests.", locate, default=0.01, positive=True)
    if alpha >= 1:
        raise ConfigError("tests.alpha", "must be in (0, 1)", locate("alpha"))
    name = raw.get("name", model.kind)
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        raise ConfigError("name", "must be a simple file name", locate("name"))
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("output", "expected a path string", locate("output"))
    return ExperimentConfig(model, int(seed), int(n), float(horizon),
                            None if dt is None else float(dt),
                            None if record_dt is None else float(record_dt),
                            tuple(float(t) for t in times), int(workers), estimator,
                            oracle, fpke, int(m), float(alpha), name, output, raw, source)


def _check_oracle(oracle, model, locate):
    if oracle == "none":
        return
    need = {"poisson": ("li", "lsi"), "lognormal": ("lv", "lsv"), "hawkes_mean": ("hawkes", "fake_hawkes")}
    if model.kind not in need[oracle]:
        raise ConfigError("tests.oracle", f"{oracle!r} does not apply to model {model.kind!r}", locate("oracle"))
    if oracle == "poisson" and callable(model.lam):
        raise ConfigError("tests.oracle", "poisson oracle needs a constant intensity", locate("oracle"))
    if oracle == "lognormal" and callable(model.sigma):
        raise ConfigError("tests.oracle", "lognormal oracle needs a constant volatility", locate("oracle"))
