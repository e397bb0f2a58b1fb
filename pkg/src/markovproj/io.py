"""Run-directory file formats.

Tables are comma-separated text with a header row and floats written with
17 significant digits, so they re-parse to the same doubles.  The manifest
is one ``key = value`` line per entry in a flat namespace, values JSON
encoded.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def write_table(path, header, columns):
    """Write equal-length columns; integer columns are written as integers."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    fmt = ["%d" if np.issubdtype(c.dtype, np.integer) else FLOAT_FMT for c in cols]
    data = np.rec.fromarrays([c if f == "%d" else c.astype(np.float64) for c, f in zip(cols, fmt)])
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        if n:
            np.savetxt(fh, data, fmt=fmt, delimiter=",")


def read_table(path):
    """Return ``(header, data)``; ``data`` is a float array ``(rows, cols)``."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        has_rows = bool(fh.readline().strip())
    if not has_rows:
        return header, np.zeros((0, len(header)))
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_snapshots(path, times, states):
    """``time, particle_id, coord_0..coord_{d-1}``; rows by time then particle."""
    states = np.asarray(states, dtype=float)
    K, N, d = states.shape
    t = np.repeat(np.asarray(times, dtype=float), N)
    pid = np.tile(np.arange(N, dtype=np.int64), K)
    cols = [t, pid] + [states[:, :, j].ravel() for j in range(d)]
    write_table(path, ["time", "particle_id"] + [f"coord_{j}" for j in range(d)], cols)


def read_snapshots(path):
    header, data = read_table(path)
    if header[:2] != ["time", "particle_id"]:
        raise ValueError(f"{path}: not a snapshot table")
    times = np.unique(data[:, 0])
    d = len(header) - 2
    K = len(times)
    N = len(data) // K if K else 0
    if K * N != len(data):
        raise ValueError(f"{path}: ragged snapshot table")
    order = np.lexsort((data[:, 1], data[:, 0]))
    states = data[order, 2:].reshape(K, N, d)
    return times, states


def write_factor(path, times, eta):
    eta = np.asarray(eta, dtype=float)
    K, N = eta.shape
    write_table(path, ["time", "particle_id", "eta"],
                [np.repeat(np.asarray(times, float), N), np.tile(np.arange(N, dtype=np.int64), K), eta.ravel()])


def read_factor(path):
    header, data = read_table(path)
    times = np.unique(data[:, 0])
    order = np.lexsort((data[:, 1], data[:, 0]))
    return times, data[order, 2].reshape(len(times), -1)


def write_events(path, events):
    d = events.sizes.shape[1]
    write_table(path, ["time", "particle_id"] + [f"xi_{j}" for j in range(d)],
                [events.times, events.particles.astype(np.int64)] + [events.sizes[:, j] for j in range(d)])


def read_events(path):
    from .processes import EventLog

    header, data = read_table(path)
    return EventLog(data[:, 0], data[:, 1].astype(np.int64), data[:, 2:])


def write_characteristics_log(path, log):
    K, N = log.beta_norm.shape
    write_table(path, ["time", "particle_id", "beta_norm", "alpha_norm", "jump_mass"],
                [np.repeat(log.times, N), np.tile(np.arange(N, dtype=np.int64), K),
                 log.beta_norm.ravel(), log.alpha_norm.ravel(), log.jump_mass.ravel()])


def read_characteristics_log(path):
    from .characteristics import CharacteristicsLog

    header, data = read_table(path)
    times = np.unique(data[:, 0])
    order = np.lexsort((data[:, 1], data[:, 0]))
    cols = data[order].reshape(len(times), -1, data.shape[1])
    return CharacteristicsLog(times, cols[:, :, 2], cols[:, :, 3], cols[:, :, 4])


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def flatten(prefix, obj, out=None):
    """Flatten nested dicts into dotted keys."""
    out = {} if out is None else out
    if isinstance(obj, dict):
        for k, v in obj.items():
            flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    else:
        out[prefix] = obj
    return out


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {json.dumps(entries[key])}\n")


def read_manifest(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        out[key] = json.loads(value)
    return out
