import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from romaeh import fem, geometry as g

C_ISO = fem.plane_strain_matrix(1000.0, 0.3)


def _cell(n=8, d=0.0):
    return g.assign_partitions(g.build_unit_cell(1.0, d, n), "single" if d == 0 else "F1-M1")


def test_shape_functions_partition_of_unity():
    for xi, eta in [(0.1, -0.3), (0.7, 0.2), (-1, 1)]:
        N, dN = fem.q4_shape(xi, eta)
        assert N.sum() == pytest.approx(1.0)
        assert np.allclose(dN.sum(axis=0), 0.0)
        N8, dN8 = fem.q8_shape(xi, eta)
        assert N8.sum() == pytest.approx(1.0)
        assert np.allclose(dN8.sum(axis=0), 0.0)


@pytest.mark.parametrize("kind", ["q4", "q8"])
def test_b_matrix_reproduces_affine_strain(kind):
    if kind == "q4":
        X = np.array([[[0.0, 0.0], [2.0, 0.1], [2.2, 1.5], [-0.1, 1.2]]])
    else:
        c = np.array([[0.0, 0.0], [2.0, 0.1], [2.2, 1.5], [-0.1, 1.2]])
        mid = 0.5 * (c + np.roll(c, -1, axis=0))
        X = np.concatenate([c, mid])[None]
    eps = np.array([1e-3, -2e-3, 3e-3])
    u = fem.affine_displacement(X[0], eps)
    B, wdet = fem.b_matrices(X, kind)
    assert np.allclose(np.einsum("egij,j->egi", B, u), eps, atol=1e-15)
    p, q = X[0, 2] - X[0, 0], X[0, 3] - X[0, 1]
    area = 0.5 * abs(p[0] * q[1] - p[1] * q[0])
    assert wdet.sum() == pytest.approx(area)


def test_element_stiffness_rigid_modes():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    K = fem.element_stiffness(X, C_ISO)
    assert np.allclose(K, K.T)
    w = np.linalg.eigvalsh(K)
    assert np.sum(np.abs(w) < 1e-9 * w.max()) == 3


def test_zero_load_gives_zero_solution():
    cell = fem.PeriodicCell(_cell(), [C_ISO, C_ISO])
    u = cell.solve((0.0, 0.0, 0.0))
    assert np.abs(u).max() == 0.0


def test_patch_test_homogeneous_cell():
    cell = fem.PeriodicCell(_cell(), [C_ISO, C_ISO])
    eps = np.array([1e-3, 2e-3, -5e-4])
    u = cell.solve(eps)
    assert np.allclose(u, fem.affine_displacement(cell.mesh.nodes, eps), atol=1e-10 * 1e-3)


def test_singular_system_raises():
    K = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    with pytest.raises(fem.SolverError):
        fem.solve(K, np.array([1.0, -1.0]))


@given(hnp.arrays(float, 6, elements=st.floats(-1, 1)))
def test_random_spd_residual(v):
    rng = np.random.default_rng(abs(hash(v.tobytes())) % 2**32)
    A = rng.normal(size=(6, 6))
    K = sp.csr_matrix(A @ A.T + 6 * np.eye(6))
    x = fem.solve(K, v)
    assert np.linalg.norm(K @ x - v) <= 1e-10 * max(np.linalg.norm(v), 1e-300)


def test_strain_average_and_hill_mandel():
    mesh = g.assign_partitions(g.build_unit_cell(12.5, 10.0, 16), "F1-M4")
    Cs = [fem.plane_strain_matrix(72000.0, 0.26), fem.plane_strain_matrix(3500.0, 0.35)]
    cell = fem.PeriodicCell(mesh, Cs)
    eps_bar = np.array([1e-3, -4e-4, 7e-4])
    u = cell.solve(eps_bar)
    eps = cell.gauss_strains(u)
    assert np.allclose(fem.volume_average(eps, cell.wdet), eps_bar, rtol=1e-9, atol=1e-18)
    sig = np.einsum("eij,egj->egi", cell.C_elem, eps)
    energy = np.einsum("egi,egi,eg->", sig, eps, cell.wdet) / cell.wdet.sum()
    sig_bar = fem.volume_average(sig, cell.wdet)
    assert energy == pytest.approx(sig_bar @ eps_bar, rel=1e-8)
    # partition averages weighted by volume fraction give the macro strain
    c = g.partition_volume_fractions(mesh)
    assert np.allclose(c @ cell.partition_average_strain(u), eps_bar, rtol=1e-9, atol=1e-18)


def test_superposition():
    mesh = g.assign_partitions(g.build_unit_cell(12.5, 10.0, 16), "F1-M1")
    Cs = [fem.plane_strain_matrix(72000.0, 0.26), fem.plane_strain_matrix(3500.0, 0.35)]
    cell = fem.PeriodicCell(mesh, Cs)
    a, b = np.array([1e-3, 0, 0]), np.array([0, 2e-3, 1e-3])
    assert np.allclose(cell.solve(a + b), cell.solve(a) + cell.solve(b), atol=1e-14)


def test_eigenstrain_load_properties():
    mesh = _cell()
    cell = fem.PeriodicCell(mesh, [C_ISO, C_ISO])
    assert np.abs(cell.eigenstrain_load(0, np.zeros(3))).max() == 0.0
    # uniform eigenstrain over a homogeneous cell is stress free: no fluctuation
    mu = np.array([1e-3, -2e-3, 5e-4])
    u = cell.solve((0, 0, 0), cell.eigenstrain_load(0, mu))
    fluct = u - fem.affine_displacement(mesh.nodes, (0, 0, 0))
    eps = cell.gauss_strains(fluct)
    assert np.abs(eps).max() < 1e-12
    with pytest.raises(ValueError):
        cell.eigenstrain_load(3, mu)


def test_laminate_eigenstrain_closed_form():
    mesh = g.assign_partitions(g.build_laminate_cell(1.0, 8), "F1-M1")
    Cs = [fem.plane_strain_matrix(2.0, 0.0), fem.plane_strain_matrix(1.0, 0.0)]
    cell = fem.PeriodicCell(mesh, Cs)
    u = cell.solve((0, 0, 0), cell.eigenstrain_load(0, np.array([0.0, 1.0, 0.0])))
    avg = cell.partition_average_strain(u)
    assert avg[0, 1] == pytest.approx(2 / 3, rel=1e-10)
    assert avg[1, 1] == pytest.approx(-2 / 3, rel=1e-10)
