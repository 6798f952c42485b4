import os

import numpy as np
import pytest

from romaeh import cli, output

QUICK = """
[paths]
output = "out"
mesh = "out/cell.mesh"
coefficients = "out/cell.coeffs"

[cell]
elements_per_side = 8

[load]
max_strain = 0.02
steps = 20

[verify]
schemes = ["F1-M1", "F1-M8"]
programs = ["uniaxial"]

[macro]
n_cells = 2
max_displacement = 0.1
steps = 4
snapshot_every = 2

[strip]
elements = [1, 2]
steps = 100
"""


@pytest.fixture
def quick(tmp_path):
    p = tmp_path / "quick.toml"
    p.write_text(QUICK)
    return p


def run(*args):
    return cli.main([str(a) for a in args])


def test_preprocessing_chain(quick, tmp_path, capsys):
    assert run("gen-mesh", "--config", quick) == 0
    assert run("coefficients", "--config", quick) == 0
    out = capsys.readouterr().out
    assert "dvorak_S" in out
    assert run("calibrate", "--config", quick) == 0
    h, d = None, None
    assert (tmp_path / "out" / "calibration.csv").read_text().startswith("partition,")
    assert run("point-driver", "--config", quick) == 0
    h, d = output.read_csv(tmp_path / "out" / "point.csv")
    assert d.shape == (20, len(h)) and "omega_M8a-X" in h


def test_point_driver_program_file(quick, tmp_path):
    assert run("coefficients", "--config", quick) == 0
    prog = tmp_path / "prog.csv"
    prog.write_text("e11,e22,e12\n0.001,0,0\n0.002,0,0\n")
    assert run("point-driver", "--config", quick, "--program", prog) == 0
    _, d = output.read_csv(tmp_path / "out" / "point.csv")
    assert np.allclose(d[:, 1], [0.001, 0.002])
    prog.write_text("1,2\n")
    assert run("point-driver", "--config", quick, "--program", prog) == 2


def test_fiber_larger_than_cell(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[cell]\nfiber_diameter = 20.0\n")
    assert run("gen-mesh", "--config", p) == 2
    assert "fiber_diameter" in capsys.readouterr().err


def test_identity_failure_exit_code(quick, monkeypatch):
    monkeypatch.setattr(cli, "IDENTITY_TOL", -1.0)
    assert run("coefficients", "--config", quick) == 4


def test_run_macro_missing_coefficients(quick, tmp_path, capsys):
    assert run("run-macro", "--config", quick, "--coeffs", tmp_path / "missing.coeffs") == 2
    assert "not found" in capsys.readouterr().err


def test_run_macro_outputs(quick, tmp_path):
    assert run("coefficients", "--config", quick) == 0
    out = tmp_path / "macro"
    assert run("run-macro", "--config", quick, "--out", out) == 0
    files = sorted(os.listdir(out))
    assert {"fd.csv", "fd.svg", "config.toml", "fields_0002.vtk", "fields_0004.vtk"} <= set(files)
    h, d = output.read_csv(out / "fd.csv")
    assert h[:2] == ["displacement", "force"] and d.shape[0] == 4
    nodes, el, cells, _ = output.read_vtk(out / "fields_0004.vtk")
    assert el.shape[1] == 8 and set(cells) == {"omega", "kappa_p"}
    # identical inputs give identical bytes
    first = (out / "fields_0004.vtk").read_bytes()
    assert run("run-macro", "--config", quick, "--out", out) == 0
    assert (out / "fields_0004.vtk").read_bytes() == first


def test_with_dns_needs_small_plate(quick, tmp_path):
    assert run("coefficients", "--config", quick) == 0
    big = tmp_path / "big.toml"
    big.write_text(QUICK.replace("n_cells = 2", "n_cells = 10"))
    assert run("run-macro", "--config", big, "--with-dns") == 2


def test_run_macro_with_dns(quick, tmp_path):
    assert run("coefficients", "--config", quick) == 0
    out = tmp_path / "both"
    assert run("run-macro", "--config", quick, "--out", out, "--with-dns") == 0
    h, d = output.read_csv(out / "comparison.csv")
    assert "speedup" in h and d.shape == (1, len(h))
    assert (out / "fd_dns.csv").exists()


def test_solver_failure_exit_code(quick, tmp_path):
    assert run("coefficients", "--config", quick) == 0
    bad = tmp_path / "strict.toml"
    bad.write_text(QUICK + "\n[rom]\ntol = 1e-300\nmaxit = 1\nmin_substep = 1.0\n")
    assert run("point-driver", "--config", bad) == 3


def test_strip_and_verify(quick, tmp_path):
    assert run("strip-test", "--config", quick) == 0
    _, d = output.read_csv(tmp_path / "out" / "strip.csv")
    assert d.shape == (4, 4)
    assert run("verify-unitcell", "--config", quick) == 0
    h, d = output.read_csv(tmp_path / "out" / "unitcell_uniaxial.csv")
    assert h == ["strain", "DNS", "F1-M1", "F1-M8"]
    assert (tmp_path / "out" / "unitcell_metrics.csv").exists()


def test_threads(quick, monkeypatch):
    assert run("--threads", 1, "gen-mesh", "--config", quick) == 0
    monkeypatch.setenv("ROMAEH_THREADS", "many")
    assert run("gen-mesh", "--config", quick) == 2
    monkeypatch.setenv("ROMAEH_THREADS", "1")
    assert run("gen-mesh", "--config", quick) == 0
    assert run("--threads", 0, "gen-mesh", "--config", quick) == 2
