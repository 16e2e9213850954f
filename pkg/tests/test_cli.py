import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from muskat3d.cli import ConfigError, RunConfig, main, parse_modes, read_config


def run_cli(*args, env=None):
    e = dict(os.environ)
    e.update(env or {})
    return subprocess.run([sys.executable, "-m", "muskat3d", *args], capture_output=True,
                          text=True, env=e)


def test_parse_modes():
    assert parse_modes("1,0,0.2,0.5; 2,-1,0.1") == ((1, 0, 0.2, 0.5), (2, -1, 0.1, 0.0))
    with pytest.raises(ConfigError):
        parse_modes("1,0")


def test_config_rejects_unknown_names(tmp_path):
    p = tmp_path / "a.ini"
    p.write_text("[grid]\nn = 16\n[kernel]\nfourier_cutof = 3\n")
    with pytest.raises(ConfigError):
        read_config(p)
    p.write_text("[grdi]\nn = 16\n")
    with pytest.raises(ConfigError):
        read_config(p)
    p.write_text("[grid]\nn = 16\n[initial]\nmodes = 1,0,0.1,0\n[evolve]\nkappa = 2\n")
    cfg = RunConfig(read_config(p))
    assert cfg.n == 16 and cfg.evolve().kappa == 2.0
    assert cfg.echo()["initial"]["modes"] == [[1, 0, 0.1, 0.0]]


def test_green_command(tmp_path):
    out = tmp_path / "g.csv"
    assert main(["green", "--point", "0.3", "0.3", "5", "--point", "0.001", "0", "0.001",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert float(rows[0]["value"]) == pytest.approx(2.5, abs=1e-12)
    assert float(rows[1]["ratio_free_space"]) == pytest.approx(1.0, abs=1e-2)
    assert len(rows[0]["value"].replace("-", "").replace(".", "").split("e")[0]) >= 16
    assert main(["green", "--point", "0", "0", "0"]) == 2


def test_dn_command_flat_oracle(tmp_path, capsys):
    assert main(["dn", "--n", "32", "--modes", "1,0,0,0", "--g-modes", "1,0,1,0",
                 "--out", str(tmp_path / "dn.csv")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["flat_oracle_rel_error"] < 1e-3 and rep["mean_abs"] < 1e-8
    side = json.loads((tmp_path / "dn.csv.json").read_text())
    assert side["config"]["grid"]["n"] == 32


def test_dn_constant_data(capsys):
    assert main(["dn", "--n", "16", "--kind", "random_bandlimited", "--lip", "0.5",
                 "--g-modes", "0,0,1,0"]) == 0
    assert json.loads(capsys.readouterr().out)["mean_abs"] < 1e-6


def test_theta_command(tmp_path, capsys):
    assert main(["theta", "--n", "16", "--kind", "random_bandlimited", "--lip", "0.5",
                 "--out", str(tmp_path / "th.csv")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["residual_norm"] <= 1e-8 and rep["tangency_sup"] < 1e-10
    assert (tmp_path / "th_w.csv").exists()


def test_evolve_and_compare_commands(tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["evolve", "--n", "16", "--kind", "random_bandlimited", "--lip", "0.5",
                 "--t-end", "0.03", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["run_config"]["grid"]["n"] == 16 and "modulus" in rep
    capsys.readouterr()
    assert main(["compare", "--n", "16", "--kind", "random_bandlimited", "--lip", "0.5",
                 "--t-end", "0.03", "--offset", "0.1", "--out", str(tmp_path / "cmp")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["max_ratio"] == pytest.approx(1.0, abs=1e-12)


def test_sphere_command(capsys):
    assert main(["sphere", "--l", "2", "--m", "1", "--count", "2"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert all(r["abs_error"] < 1e-6 for r in rep["results"])


def test_verify_exit_codes(tmp_path):
    ok = run_cli("verify", "kernel", "--out", str(tmp_path / "v.json"))
    assert ok.returncode == 0
    rep = json.loads((tmp_path / "v.json").read_text())
    assert rep["passed"] and all("margin" in c for c in rep["checks"])
    ini = tmp_path / "bad.ini"
    ini.write_text("[kernel]\nfourier_cutoff = 2\n")
    bad = run_cli("verify", "kernel", "--config", str(ini), "--tol", "1e-12")
    assert bad.returncode == 1
    assert json.loads(bad.stdout)["passed"] is False


def test_bad_config_exit_code(tmp_path):
    ini = tmp_path / "x.ini"
    ini.write_text("[bogus]\na = 1\n")
    assert main(["dn", "--config", str(ini)]) == 2


def test_output_is_identical_across_thread_counts(tmp_path):
    blobs = []
    for t in ("1", "4"):
        out = tmp_path / f"dn{t}.csv"
        r = run_cli("dn", "--n", "16", "--kind", "random_bandlimited", "--seed", "3", "--lip", "1",
                    "--out", str(out), env={"MUSKAT3D_THREADS": t})
        assert r.returncode == 0, r.stderr
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]
