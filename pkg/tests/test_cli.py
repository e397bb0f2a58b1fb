import numpy as np
import pytest

from markovproj import io
from markovproj.cli import main
from markovproj.experiment import compare_runs, load_run

LI = """name = "li"
seed = 7
n = 100
dt = 0.01
horizon = 1.0
[model]
kind = "li"
lam = 1.0
[tests]
oracle = "poisson"
fpke = true
"""

LSI = """name = "lsi"
seed = 7
n = 3000
dt = 0.01
horizon = 1.0
[model]
kind = "lsi"
lam = 1.0
[model.factor]
eta_lo = 0.5
eta_hi = 2.0
"""


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv("MARKOVPROJ_OUTPUT_ROOT", str(tmp_path / "runs"))
    return tmp_path


def write(root, name, text):
    p = root / name
    p.write_text(text)
    return str(p)


DATA = ["snapshots.csv", "events.csv", "characteristics_log.csv", "tests.csv", "fpke_residual.csv"]


def test_minimal_li_run(root):
    assert main(["simulate", write(root, "li.toml", LI)]) == 0
    run = root / "runs" / "li"
    for name in ["manifest.txt", "config.toml"] + DATA:
        assert (run / name).exists(), name
    man = io.read_manifest(run / "manifest.txt")
    assert man["run.seed"] == 7 and man["config.model.kind"] == "li"
    for name in DATA:
        assert man[f"files.{name}.sha256"] == io.sha256(run / name)


def test_missing_seed_exits_2(root, capsys):
    bad = "\n".join(l for l in LI.splitlines() if not l.startswith("seed"))
    assert main(["simulate", write(root, "bad.toml", bad)]) == 2
    assert "seed" in capsys.readouterr().err


def test_unreadable_config_exits_2(root):
    assert main(["simulate", str(root / "nope.toml")]) == 2


def test_rerun_is_bit_identical(root):
    cfg = write(root, "li.toml", LI)
    main(["simulate", cfg, "-o", str(root / "a")])
    main(["simulate", cfg, "-o", str(root / "b")])
    for name in DATA:
        assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes()
    ma, mb = io.read_manifest(root / "a" / "manifest.txt"), io.read_manifest(root / "b" / "manifest.txt")
    assert {k for k in ma if ma[k] != mb[k]} <= {"run.start", "run.end"}


def test_load_run_restores_snapshots(root):
    main(["simulate", write(root, "li.toml", LI)])
    cfg, ens = load_run(root / "runs" / "li")
    assert ens.states.shape == (101, 100, 1) and cfg.seed == 7


def test_compare_self(root, capsys):
    main(["simulate", write(root, "lsi.toml", LSI)])
    spec = write(root, "spec.toml", "times = [0.5, 1.0]\nalpha = 0.01\n")
    run = str(root / "runs" / "lsi")
    assert main(["compare", run, run, spec]) == 0
    rep = compare_runs(run, run, {"times": [0.5, 1.0]})
    assert all(r.statistic == 0 and r.passed for r in rep.rows)


def test_compare_li_vs_lsi(root):
    main(["simulate", write(root, "lsi.toml", LSI)])
    li = LSI.replace('"lsi"', '"li"').split("[model.factor]")[0]
    main(["simulate", write(root, "li.toml", li)])
    rep = compare_runs(root / "runs" / "li", root / "runs" / "lsi", {"times": [1.0]})
    (row,) = rep.rows
    assert row.test == "chi2_two_sample" and row.dof >= 3 and 0 <= row.pvalue <= 1


def test_lv_vs_degenerate_lsv(root):
    lv = "seed = 3\nn = 500\ndt = 0.01\nhorizon = 1.0\n[model]\nkind = \"lv\"\nsigma = 0.2\n"
    lsv = lv.replace('"lv"', '"lsv"') + "[model.factor]\neta_lo = 1.0\neta_hi = 1.0\n"
    main(["simulate", write(root, "lv.toml", lv)])
    main(["simulate", write(root, "lsv.toml", lsv)])
    a, b = root / "runs" / "lv", root / "runs" / "lsv"
    assert (a / "snapshots.csv").read_bytes() == (b / "snapshots.csv").read_bytes()
    assert all(r.statistic == 0 for r in compare_runs(a, b).rows)


def test_compare_missing_time(root, capsys):
    main(["simulate", write(root, "lsi.toml", LSI)])
    spec = write(root, "spec.toml", "times = [0.123]\n")
    run = str(root / "runs" / "lsi")
    assert main(["compare", run, run, spec]) == 2
    assert "0.123" in capsys.readouterr().err


def test_fpke_and_hypotheses_subcommands(root, capsys):
    main(["simulate", write(root, "lsi.toml", LSI)])
    run = str(root / "runs" / "lsi")
    assert main(["fpke-residual", run]) == 0
    assert main(["hypotheses", run]) == 0
    rec = io.read_manifest(root / "runs" / "lsi" / "hypotheses.txt")
    assert rec["integrability.finite"] and rec["growth.sup"] <= np.log(2) + 1e-6
    assert (root / "runs" / "lsi" / "probes.csv").exists()


def test_runtime_error_exits_1(root):
    assert main(["fpke-residual", str(root / "missing")]) == 1
