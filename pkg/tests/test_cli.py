import csv
import io
import math
import subprocess
import sys

import numpy as np
import pytest

from qgraph.cli import main, parse_values

PI2 = math.pi**2


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def interval(tmp_path, c1="kirchhoff", c2="kirchhoff"):
    return write(tmp_path, "g.qg", f"[vertices]\nv1 {c1}\nv2 {c2}\n[edges]\ne1 v1 v2 length=1\n")


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_spectrum_interval(tmp_path, capsys):
    assert main(["spectrum", interval(tmp_path), "--k", "3"]) == 0
    lam = [float(r["lambda"]) for r in rows(capsys.readouterr().out)]
    assert abs(lam[0]) < 1e-8
    np.testing.assert_allclose(lam[1:], [PI2, 4 * PI2], rtol=1e-3)


def test_spectrum_errors(tmp_path, capsys):
    assert main(["spectrum", str(tmp_path / "missing.qg")]) == 2
    bad = write(tmp_path, "bad.qg", "[vertices]\nv1 kirchhoff\n[edges]\ne1 v1 v9 length=1\n")
    assert main(["spectrum", bad]) == 2
    assert "unknown vertex" in capsys.readouterr().err
    assert main(["spectrum", interval(tmp_path, "dirichlet", "dirichlet"), "--h", "0.5", "--k", "5"]) == 3


def test_spectrum_k_zero(tmp_path, capsys):
    assert main(["spectrum", interval(tmp_path), "--k", "0"]) == 0
    assert capsys.readouterr().out.strip() == "k,lambda,error_estimate,cluster"


def test_spectrum_output_is_deterministic(tmp_path):
    g = interval(tmp_path, "delta alpha=2", "type3b D=-1")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["spectrum", g, "--k", "6", "--out", str(a)]) == 0
    assert main(["spectrum", g, "--k", "6", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_surgery_lens_report(tmp_path, capsys):
    g = interval(tmp_path, "delta alpha=1", "kirchhoff")
    assert main(["surgery", g, "attach-edge v1 v2 length=0.1", "--k", "3"]) == 0
    out = capsys.readouterr()
    first = rows(out.out)[0]
    assert float(first["lambda_before"]) == pytest.approx(0.74017, abs=1e-5)
    assert float(first["lambda_after"]) == pytest.approx(0.83156, abs=1e-5)
    assert "no-guarantee" in out.err


def test_surgery_join_delta_path(tmp_path, capsys):
    g = write(tmp_path, "p.qg", "[vertices]\nv1 delta alpha=1\nm kirchhoff\nv2 delta alpha=2\n"
                                "[edges]\ne1 v1 m length=1\ne2 m v2 length=0.7\n")
    assert main(["surgery", g, "join v1 v2", "--k", "5"]) == 0
    err = capsys.readouterr().err
    assert "non-decreasing" in err and "pass" in err


def test_surgery_exit_codes(tmp_path):
    g = interval(tmp_path, "type3a C=2", "type3a C=3")
    assert main(["surgery", g, "join v1 v2"]) == 4
    assert main(["surgery", g, "join v1"]) == 2
    assert main(["surgery", g, "attach-edge v1 nowhere length=1"]) == 4
    anti = interval(tmp_path, "antikirchhoff", "antikirchhoff")
    assert main(["surgery", anti, "attach-edge v1 v2 length=1", "--k", "3", "--slack", "-1000"]) == 1


def test_verify_commands(tmp_path, capsys):
    assert main(["verify", "--seeds", "0"]) == 0
    capsys.readouterr()
    out = tmp_path / "s.csv"
    assert main(["verify", "--seeds", "60", "--pool", "join-II", "--k", "4", "--h", "0.1", "--out", str(out)]) == 0
    cases = {r["case"] for r in rows(out.read_text())}
    assert cases == {"i", "ii", "iii", "iv", "v", "vi"}
    assert main(["verify", "--pool", "nonsense"]) == 2


def test_sweep_kirchhoff_lens(tmp_path, capsys):
    g = interval(tmp_path)
    assert main(["sweep", g, "attach-edge v1 v2 length=1", "--values", "0.25:2.0:0.25", "--k", "3"]) == 0
    data = rows(capsys.readouterr().out)
    lam2 = {float(r["length"]): float(r["lambda"]) for r in data if r["k"] == "2"}
    assert len(lam2) == 8
    assert all((v > PI2 + 1e-6) == (ell < 1) for ell, v in lam2.items() if ell != 1.0)
    assert lam2[1.0] == pytest.approx(PI2, rel=1e-6)


def test_sweep_empty_and_gnuplot(tmp_path, capsys):
    g = interval(tmp_path)
    assert main(["sweep", g, "attach-edge v1 v2 length=1", "--values", ""]) == 0
    assert capsys.readouterr().out.strip() == "length,k,lambda"
    assert main(["sweep", g, "attach-edge v1 v2 length=1", "--values", "0.5,1", "--k", "2", "--gnuplot-friendly"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "# length lambda1 lambda2" and len(lines[1].split()) == 3
    assert main(["sweep", g, "join v1 v2", "--values", "1"]) == 2


def test_sweep_antikirchhoff_lens_below_dirichlet(tmp_path, capsys):
    g = interval(tmp_path, "antikirchhoff", "antikirchhoff")
    assert main(["sweep", g, "attach-edge v1 v2 length=1", "--values", "0.3,1.0,2.7", "--k", "4", "--jobs", "2"]) == 0
    for r in rows(capsys.readouterr().out):
        assert float(r["lambda"]) < PI2 * int(r["k"]) ** 2


def test_oracle_command(tmp_path, capsys):
    g = write(tmp_path, "lens.qg", "[vertices]\nv1 delta alpha=1\nv2 kirchhoff\n"
                                   "[edges]\ne1 v1 v2 length=1\ne2 v1 v2 length=0.1\n")
    assert main(["oracle", g, "--k", "2"]) == 0
    assert round(float(rows(capsys.readouterr().out)[0]["lambda"]), 5) == 0.83156


def test_parse_values():
    assert parse_values("1:2:0.5") == [1.0, 1.5, 2.0]
    assert parse_values("3,1") == [3.0, 1.0]
    assert parse_values("") == []
    assert parse_values("2:1:0.5") == []


def test_module_entry_and_logging(tmp_path):
    env = {"QGRAPH_LOG": "debug", "PATH": ""}
    res = subprocess.run([sys.executable, "-m", "qgraph", "spectrum", interval(tmp_path), "--k", "2", "--levels", "1"],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0
    assert "DEBUG" in res.stderr
