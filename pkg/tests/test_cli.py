import json
import subprocess
import sys

import numpy as np
import pytest

from pairwise_ldp.cli import main
from pairwise_ldp.workload import factorization_residual, read_bundle


def write_config(tmp_path, **kw):
    cfg = {"statistic": "gini_diversity", "k": 8, "n": [100, 400], "epsilon": [1.0], "trials": 15,
           "master_seed": 4, "output": str(tmp_path / "out.csv")}
    cfg.update(kw)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_factorize_writes_bundle(tmp_path, capsys):
    out = tmp_path / "bundle.txt"
    assert main(["factorize", "prefix_tree", "--k", "16", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "residual 0.0" in text and "norm_product" in text
    F, W = read_bundle(out)
    assert factorization_residual(F, W) <= 1e-12


def test_simulate_prints_ledger_and_slope(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--dump-transcript", str(tmp_path / "t.txt")]) == 0
    out = capsys.readouterr().out
    assert out.count("spent=1.0") == 2
    assert "loglog_slope=" in out
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[0].startswith("statistic,protocol,k,n,epsilon")
    assert len(lines) == 3
    assert (tmp_path / "t.txt").read_text().startswith("1 ")


def test_simulate_seed_override(tmp_path):
    cfg = write_config(tmp_path)
    main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "a.csv")])
    main(["simulate", "--config", str(cfg), "--seed", "99", "--output", str(tmp_path / "b.csv")])
    a = (tmp_path / "a.csv").read_text()
    b = (tmp_path / "b.csv").read_text()
    assert a != b
    assert ",99\n" in b


def test_reduce(tmp_path, capsys):
    cfg = write_config(tmp_path, k=4, n=[60], output=None)
    assert main(["reduce", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("statistic,k,n,epsilon,trials,mmse")


def test_bench(capsys):
    assert main(["bench", "--n", "1000", "--d", "4", "--repeat", "1"]) == 0
    record = json.loads(capsys.readouterr().out)
    assert record["messages"] == 1000 and record["messages_per_second"] > 0


def test_errors_are_machine_readable(tmp_path, capsys):
    assert main(["factorize", "unknown_kernel", "--k", "3"]) == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ValueError"
    bad = write_config(tmp_path, trials=0)
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "trials" in json.loads(capsys.readouterr().err.strip())["message"]


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path, n=[50], trials=3)
    proc = subprocess.run([sys.executable, "-m", "pairwise_ldp.cli", "simulate", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "pairwise_ldp.cli", "simulate", "--config",
                           str(tmp_path / "missing.json")], capture_output=True, text=True)
    assert proc.returncode == 1
    assert json.loads(proc.stderr.strip().splitlines()[-1])["error"] == "FileNotFoundError"
