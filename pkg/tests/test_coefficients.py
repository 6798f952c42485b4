import numpy as np
import pytest

from romaeh import coefficients as co, constitutive as c, fem, geometry as g

FIB = c.PhaseMaterial(72000.0, 0.26)
MAT = c.PhaseMaterial(3500.0, 0.35)
I3 = np.eye(3)


@pytest.fixture(scope="module")
def cs_m4():
    mesh = g.assign_partitions(g.build_unit_cell(12.5, 10.0, 16), "F1-M4")
    return mesh, co.compute_coefficients(mesh, [FIB, MAT])


def test_identities(cs_m4):
    _, cs = cs_m4
    res = cs.identity_residuals()
    assert max(res.values()) < 1e-10


def test_lbar_spd_and_bounded(cs_m4):
    _, cs = cs_m4
    assert np.allclose(cs.Lbar, cs.Lbar.T, rtol=1e-8, atol=1e-8 * np.abs(cs.Lbar).max())
    assert np.linalg.eigvalsh(0.5 * (cs.Lbar + cs.Lbar.T)).min() > 0
    Lf, Lm = FIB.elastic_matrix(), MAT.elastic_matrix()
    vf = cs.c[0]
    voigt = vf * Lf + (1 - vf) * Lm
    reuss = np.linalg.inv(vf * np.linalg.inv(Lf) + (1 - vf) * np.linalg.inv(Lm))
    for i in range(3):
        assert reuss[i, i] - 1e-9 <= cs.Lbar[i, i] <= voigt[i, i] + 1e-9


def test_homogeneous_cell_concentration_is_identity():
    mesh = g.assign_partitions(g.build_unit_cell(1.0, 0.0, 8), "single")
    cs = co.compute_coefficients(mesh, [MAT, MAT])
    assert np.allclose(cs.E[0], I3, atol=1e-12)
    assert np.allclose(cs.Lbar, MAT.elastic_matrix(), rtol=1e-12)


def test_laminate_closed_form():
    mesh = g.assign_partitions(g.build_laminate_cell(1.0, 8), "F1-M1")
    mats = [c.PhaseMaterial(2.0, 0.0), c.PhaseMaterial(1.0, 0.0)]
    cs = co.compute_coefficients(mesh, mats)
    assert cs.E[0][1, 1] == pytest.approx(2 / 3, rel=1e-9)
    assert cs.E[1][1, 1] == pytest.approx(4 / 3, rel=1e-9)
    assert cs.S[0, 0][1, 1] == pytest.approx(2 / 3, rel=1e-9)
    assert cs.S[0, 1][1, 1] == pytest.approx(-2 / 3, rel=1e-9)
    assert cs.Lbar[1, 1] == pytest.approx(4 / 3, rel=1e-9)
    assert cs.Lbar[0, 0] == pytest.approx(3 / 2, rel=1e-9)


def test_file_round_trip_is_exact(tmp_path, cs_m4):
    _, cs = cs_m4
    p = tmp_path / "cell.coeffs"
    co.write_coefficients(cs, p)
    back = co.read_coefficients(p)
    for name in ("c", "E", "S", "L", "Lbar", "Mbar", "phase"):
        assert np.array_equal(getattr(back, name), getattr(cs, name)), name
    assert back.names == cs.names and back.scheme == cs.scheme
    co.write_coefficients(back, tmp_path / "again.coeffs")
    assert (tmp_path / "again.coeffs").read_bytes() == p.read_bytes()


def test_macro_stress_matches_fe_for_elastic_loading(cs_m4):
    mesh, cs = cs_m4
    cell = fem.PeriodicCell(mesh, co.phase_matrices([FIB, MAT]))
    eps = np.array([1e-3, 2e-4, -3e-4])
    u = cell.solve(eps)
    sig = np.einsum("eij,egj->egi", cell.C_elem, cell.gauss_strains(u))
    assert np.allclose(fem.volume_average(sig, cell.wdet), cs.Lbar @ eps, rtol=1e-9)


def test_two_partition_split_is_non_informative():
    base = g.build_unit_cell(12.5, 10.0, 16)
    m1 = g.assign_partitions(base, "F1-M1")
    m2 = g.assign_partitions(base, "F1-M2")
    m4 = g.assign_partitions(base, "F1-M4")
    assert co.partition_diagnostics(m1, m2, [FIB, MAT])["non_informative"] is True
    assert co.partition_diagnostics(m1, m4, [FIB, MAT])["non_informative"] is False
    r = co.partition_diagnostics(m4, m1, [FIB, MAT])
    assert r["comparable"] is False and r["non_informative"] is None
