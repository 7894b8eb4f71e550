import csv
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from diracdyn.cli import bench_sizes, main

DOCS = Path(__file__).resolve().parents[1] / "docs"
PENDULUM = DOCS / "pendulum4.json"
CHAIN = DOCS / "chain5.json"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_two_kinds(tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(["simulate", PENDULUM, "--kinds", "dirac_full,lmm", "--t-end", "0.2",
                           "--out", out], capsys)
    assert code == 0
    assert sorted(os.listdir(out)) == ["dirac_full_seed0.csv", "lmm_seed0.csv", "summary.json"]
    summary = json.load(open(out / "summary.json"))
    assert set(summary["kinds"]) == {"dirac_full", "lmm"}
    assert summary["integrator"]["t_end"] == 0.2
    d = summary["kinds"]["dirac_full"]
    assert d["energy_drift_max"] <= 1e-8 and d["residual_max"] <= 1e-8
    rows = list(csv.reader(open(out / "lmm_seed0.csv")))
    # 200 steps with stride 10, plus t = 0
    assert len(rows) == 1 + 21
    assert float(rows[-1][0]) == pytest.approx(0.2)
    assert "dirac_full" in stdout and "lmm" in stdout


def test_simulate_overrides_dt_and_seed(tmp_path, capsys):
    out = tmp_path / "run"
    code, _, _ = run(["simulate", PENDULUM, "--kinds", "dirac_simplified", "--dt", "0.01",
                      "--t-end", "0.5", "--seed", "4", "--out", out], capsys)
    assert code == 0
    summary = json.load(open(out / "summary.json"))
    assert summary["seed"] == 4 and summary["integrator"]["dt"] == 0.01
    assert summary["kinds"]["dirac_simplified"]["steps"] == 50
    assert (out / "dirac_simplified_seed4.csv").exists()


def test_simulate_is_deterministic(tmp_path, capsys):
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["simulate", CHAIN, "--t-end", "0.3", "--out", out], capsys)[0] == 0
        texts.append(sorted((f, open(out / f).read()) for f in os.listdir(out)))
    assert texts[0] == texts[1]
    assert len(texts[0]) == 4


def test_missing_masses(tmp_path, capsys):
    doc = json.load(open(PENDULUM))
    del doc["masses"]
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "run"
    code, _, err = run(["simulate", cfg, "--out", out], capsys)
    assert code == 2
    assert "masses" in err
    assert not out.exists()


@pytest.mark.parametrize("patch,field", [
    ({"N": 0}, "N"),
    ({"masses": [1.0, 1.0]}, "masses"),
    ({"integrator": {"method": "euler"}}, "integrator.method"),
    ({"initial": {"seed": -1}}, "initial.seed"),
    ({"colour": "red"}, "colour"),
])
def test_schema_errors_name_the_field(tmp_path, capsys, patch, field):
    doc = json.load(open(PENDULUM))
    doc.update(patch)
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(doc))
    code, _, err = run(["simulate", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert f"config error at {field}" in err


def test_unknown_kind_is_config_error(tmp_path, capsys):
    code, _, err = run(["simulate", PENDULUM, "--kinds", "verlet", "--out", tmp_path / "o"],
                       capsys)
    assert code == 2 and "kinds" in err


def test_truncated_run_exits_1(tmp_path, capsys):
    doc = json.load(open(PENDULUM))
    doc["integrator"] = {"method": "rk45_adaptive", "t_end": 5.0, "tolerance": 1e-12,
                         "max_steps": 3}
    cfg = tmp_path / "short.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "o"
    code, _, err = run(["simulate", cfg, "--kinds", "lmm", "--out", out], capsys)
    assert code == 1
    assert "step limit" in err
    summary = json.load(open(out / "summary.json"))
    assert summary["kinds"]["lmm"]["truncated"]


def test_verify_deterministic(capsys):
    args = ["verify", "brackets", "--trials", "20", "--seed", "3", "--no-timing"]
    c1, o1, _ = run(args, capsys)
    c2, o2, _ = run(args, capsys)
    assert c1 == c2 == 0
    assert o1 == o2
    assert o1.splitlines()[-1].endswith("properties passed")
    assert all(line.startswith("PASS") for line in o1.splitlines()[:-1])


def test_verify_tridiag_and_dynamics(capsys):
    for suite in ("tridiag", "dynamics"):
        code, out, _ = run(["verify", suite, "--trials", "10", "--no-timing"], capsys)
        assert code == 0, out
        assert "FAIL" not in out


def test_bench_smoke(tmp_path, capsys):
    csv_path = tmp_path / "bench.csv"
    code, _, _ = run(["bench", "--max-k", "3000", "--reps", "1", "--out", csv_path], capsys)
    assert code == 0
    rows = list(csv.reader(open(csv_path)))
    assert rows[0] == ["K", "onepair_ns", "blockdiag_ns", "dense_ns"]
    assert [r[0] for r in rows[1:]] == ["1000", "3000"]
    assert rows[1][3] != "skipped" and rows[2][3] == "skipped"
    assert all(float(v) > 0 for v in rows[1][1:3])


def test_bench_sizes():
    assert bench_sizes(100_000) == [1000, 10_000, 100_000]
    assert bench_sizes(500) == [500]
    assert bench_sizes(20_000) == [1000, 10_000, 20_000]


def test_bad_numbers(capsys):
    assert run(["bench", "--reps", "0"], capsys)[0] == 2
    assert run(["verify", "--trials", "0"], capsys)[0] == 2


def test_table(capsys):
    code, out, _ = run(["table", CHAIN, "--point", "random"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split() == ["entry", "closed_form", "generic", "discrepancy"]
    worst = float(lines[-1].split()[-1])
    assert worst <= 1e-12
    # N=5 chain: 4 constraints
    names = [l.split()[0] for l in lines[1:-1]]
    assert names[:4] == ["c1", "c2", "c3", "c4"]
    assert "bD3" in names


def test_table_pinned(capsys):
    code, out, _ = run(["table", PENDULUM], capsys)
    assert code == 0
    first = out.splitlines()[1].split()
    assert first[0] == "c1" and float(first[1]) == pytest.approx(1.0)


@pytest.mark.skipif(shutil.which("diracdyn") is None, reason="console script not installed")
def test_console_script(tmp_path):
    res = subprocess.run(["diracdyn", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout


def test_module_entry():
    res = subprocess.run([sys.executable, "-m", "diracdyn", "table", str(PENDULUM)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "max discrepancy" in res.stdout
