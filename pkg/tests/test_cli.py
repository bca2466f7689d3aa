import csv
import io
import json
import math
import os
import subprocess
import sys

import pytest

from gibbslab import __version__
from gibbslab.cli import main, parse, validate
from gibbslab.lattice import Configuration, config_to_text, make_box


def _csv_rows(text):
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def test_tm1d_closed_form(capsys):
    assert main(["tm1d", "--beta", "0.5", "--J", "1", "--h", "0"]) == 0
    out = capsys.readouterr().out
    assert out.startswith(f"# gibbslab {__version__} config=")
    row = _csv_rows(out)[0]
    assert float(row["free_energy"]) == math.log(2 * math.cosh(0.5))
    assert float(row["magnetization"]) == 0.0
    assert list(row) == ["beta", "J", "h", "free_energy", "magnetization", "correlation_length"]


def test_exact_check_passes(capsys):
    assert main(["exact-check", "--dim", "1", "--n", "3", "--beta", "1.0"]) == 0
    rec = json.loads(capsys.readouterr().out)
    checks = {r["check"]: r for r in rec["results"]}
    assert checks["consistency"]["value"] <= 1e-12
    assert all(r["passed"] for r in rec["results"])
    assert rec["version"] == __version__ and rec["config"]["n"] == 3


def test_exact_check_tolerance_breach_exits_2(tmp_path, capsys):
    # couplings of order 800 make flip probabilities underflow, so the sweep
    # chain is numerically reducible and cannot reach the Gibbs state
    pot = tmp_path / "pot.txt"
    pot.write_text("2 0 1 0 800 900 -700\n2 1 2 -3 0.5 11 2\n")
    code = main(["exact-check", "--dim", "1", "--n", "1", "--bc", "free", "--format", "csv",
                 "--potential", str(pot)])
    captured = capsys.readouterr()
    assert code == 2
    assert "stationary-tv" in captured.err
    rows = {r["check"]: r for r in _csv_rows(captured.out)}
    assert rows["flip-balance"]["passed"] == "True"
    assert rows["stationary-tv"]["passed"] == "False"


def test_validation_messages():
    cfg = parse(["tm1d", "--beta", "-1"])
    assert "beta must be ≥ 0" in validate(cfg)
    cfg = parse(["probe", "--R", "1"])
    assert "R ≥ 2 required" in validate(cfg)
    cfg = parse(["sample", "--sweeps", "10", "--batch-size", "20"])
    assert "batch_size must not exceed sweeps" in validate(cfg)
    assert validate(parse(["exact-check", "--bc", "periodic"]))


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["tm1d", "--beta", "abc"]) == 1
    assert main(["tm1d", "--beta", "-2"]) == 1
    assert main(["tm1d", "--out", "/nonexistent-dir/x.csv"]) == 1
    err = capsys.readouterr().err
    assert "beta must be ≥ 0" in err


def test_config_file_overrides_defaults(tmp_path, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# chain\nbeta = 0.25\nJ = 2\n")
    assert main(["tm1d", "--config", str(conf)]) == 0
    row = _csv_rows(capsys.readouterr().out)[0]
    assert float(row["beta"]) == 0.25 and float(row["J"]) == 2.0
    # explicit flags win over the file
    assert main(["tm1d", "--config", str(conf), "--beta", "0.75"]) == 0
    assert float(_csv_rows(capsys.readouterr().out)[0]["beta"]) == 0.75
    conf.write_text("gamma = 3\n")
    assert main(["tm1d", "--config", str(conf)]) == 1
    assert main(["tm1d", "--config", str(tmp_path / "missing.conf")]) == 1


def test_json_and_csv_agree(tmp_path):
    args = ["sample", "--beta", "0.3", "--size", "4", "--sweeps", "400", "--burnin", "20",
            "--seed", "5", "--bc", "alt"]
    assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    rec = json.loads((tmp_path / "a.json").read_text())["results"][0]
    row = _csv_rows((tmp_path / "a.csv").read_text())[0]
    assert float(row["mean"]) == rec["mean"] and float(row["stderr"]) == rec["stderr"]
    assert row["rng_algorithm"] == rec["rng_algorithm"]


def test_sample_reproducible_bit_exact(tmp_path):
    args = ["sample", "--beta", "0.4", "--size", "5", "--sweeps", "200", "--seed", "3",
            "--observable", "energy-per-site", "--method", "metropolis"]
    assert main(args + ["--out", str(tmp_path / "1.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "2.csv")]) == 0
    # the header embeds the out path; the data rows must match bit for bit
    a, b = ((tmp_path / f).read_text().splitlines()[1:] for f in ("1.csv", "2.csv"))
    assert a == b


def test_probe_schema(capsys):
    assert main(["probe", "--beta", "1.0", "--R", "2", "--box-factor", "2", "--outer", "both",
                 "--seed", "7", "--sweeps", "200", "--burnin", "10"]) == 0
    rec = json.loads(capsys.readouterr().out)
    for key in ("probe_plus", "probe_minus", "gap", "stderr"):
        assert key in rec
    assert rec["gap"] == pytest.approx(rec["probe_plus"] - rec["probe_minus"])


def test_rg_decimates_file(tmp_path, capsys):
    c = Configuration.from_index(make_box(2, 2), 2 ** 24 + 5)
    path = tmp_path / "c.txt"
    path.write_text(config_to_text(c))
    assert main(["rg", "--input", str(path), "--b", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "2 1 box" and len(lines) == 1 + 9
    assert main(["rg"]) == 1
    assert main(["rg", "--input", str(tmp_path / "none.txt")]) == 1


def test_pressure_and_entropy_columns(capsys):
    assert main(["pressure", "--dim", "1", "--beta", "0.5", "--n-max", "3"]) == 0
    rows = _csv_rows(capsys.readouterr().out)
    assert list(rows[0]) == ["n", "value", "bc", "gap"] and len(rows) == 9
    assert main(["entropy", "--measure", "product:0.5", "--n", "1,2"]) == 0
    rows = _csv_rows(capsys.readouterr().out)
    assert float(rows[0]["value"]) == pytest.approx(math.log(2), abs=1e-15)
    assert main(["entropy", "--measure", "product:2"]) == 1
    assert main(["pressure", "--dim", "3"]) == 1


def test_console_script_and_threads_env(tmp_path):
    env = dict(os.environ, GIBBSLAB_THREADS="2")
    out = subprocess.run([sys.executable, "-m", "gibbslab.cli", "tm1d", "--beta", "0.5"],
                         capture_output=True, text=True, env=env)
    assert out.returncode == 0 and "free_energy" in out.stdout
