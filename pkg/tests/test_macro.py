import numpy as np
import pytest

from romaeh import coefficients as co, constitutive as c, crackband as cb, fem, geometry as g, macro, rom

FIB = c.PhaseMaterial(72000.0, 0.26)
MAT = c.PhaseMaterial(3500.0, 0.35, 60.0, 500.0, 0.01, 1.0, 3.0, True, True)


def test_plate_geometry():
    spec = macro.PlateSpec(4)
    assert spec.width == 50.0 and spec.radius == 10.0
    with pytest.raises(ValueError):
        macro.PlateSpec(3)
    nodes, el = macro.plate_mesh(spec)
    assert el.shape == (16, 8)
    B, wdet = fem.b_matrices(nodes[el], "q8")
    assert np.all(wdet > 0)
    assert wdet.sum() == pytest.approx(50.0 ** 2 - np.pi * 10.0 ** 2 / 4, rel=1e-3)
    r = np.hypot(nodes[:, 0], nodes[:, 1])
    assert r.min() == pytest.approx(10.0)
    assert nodes.max() == pytest.approx(50.0)


def test_dns_plate_mesh_excludes_hole():
    spec = macro.PlateSpec(2)
    cell = g.build_unit_cell(12.5, 10.0, 8)
    nodes, el, phase = macro.plate_dns_mesh(spec, cell)
    cent = nodes[el].mean(axis=1)
    assert np.all(np.hypot(cent[:, 0], cent[:, 1]) >= spec.radius)
    assert len(el) < 4 * 64 and len(phase) == len(el)


def test_constraints():
    spec = macro.PlateSpec(2)
    nodes, _ = macro.plate_mesh(spec)
    fixed, loaded = macro.plate_constraints(nodes, spec.width)
    sym = np.setdiff1d(fixed, loaded)
    assert np.all(nodes[sym[sym % 2 == 0] // 2, 0] == 0.0)
    assert np.all(nodes[sym[sym % 2 == 1] // 2, 1] == 0.0)
    assert np.allclose(nodes[loaded // 2, 0], spec.width)
    assert np.all(loaded % 2 == 0) and np.all(np.isin(loaded, fixed))


def test_elastic_rom_plate_equals_homogeneous_plate():
    mesh = g.assign_partitions(g.build_unit_cell(12.5, 10.0, 8), "F1-M4")
    mats = [FIB, MAT.elastic_only()]
    cs = co.compute_coefficients(mesh, mats)
    model = rom.RomModel(cs, [mats[p] for p in cs.phase])
    spec = macro.PlateSpec(2)
    r = macro.run_macro(spec, model, [0.01, 0.02])
    *_, force = macro.run_elastic_plate(spec, cs.Lbar, U=0.02)
    assert r.force[-1] == pytest.approx(force, rel=1e-8)
    assert r.force[0] == pytest.approx(0.5 * r.force[1], rel=1e-8)
    assert np.all(r.equilibrium <= 1e-6)


def test_kirsch_factor_on_isotropic_plate():
    C = fem.plane_strain_matrix(1000.0, 0.3)
    k = macro.kirsch_factor(macro.PlateSpec(16, hole_ratio=0.1), C)
    assert k == pytest.approx(3.0, rel=0.08)


def test_damage_location_rule():
    spec = macro.PlateSpec(4)
    nodes, el = macro.plate_mesh(spec)
    cent = nodes[el].mean(axis=1)
    om = np.zeros(len(el))
    assert not macro.damage_location_ok(nodes, el, om, spec)
    angle = np.degrees(np.arctan2(cent[:, 0], cent[:, 1]))
    gap = np.hypot(*cent.T) - spec.radius
    at_lig = int(np.argmin(angle + 100 * gap))
    om[at_lig] = 0.9
    assert macro.damage_location_ok(nodes, el, om, spec)
    om[:] = 0.0
    om[int(np.argmax(angle - 100 * gap))] = 0.9  # near the hole on the load axis
    assert not macro.damage_location_ok(nodes, el, om, spec)


def test_rom_plate_softens_and_damages_at_ligament():
    mesh = g.assign_partitions(g.build_unit_cell(12.5, 10.0, 8), "F1-M8")
    cs = co.compute_coefficients(mesh, [FIB, MAT])
    specs = cb.calibrate_partitions(mesh, cs, [FIB, MAT], clamp=True)
    model = rom.RomModel(cs, cb.partition_materials(cs.phase, [FIB, MAT], specs))
    spec = macro.PlateSpec(2)
    r = macro.run_macro(spec, model, np.linspace(0, 0.3, 16)[1:], snapshots=(-1,))
    k = int(np.argmax(r.force))
    assert 0 < k < len(r.force) - 1 and r.force[-1] < 0.5 * r.force[k]
    assert macro.damage_location_ok(r.nodes, r.elements, r.peak_omega, spec)
    assert r.fields[-1]["omega"].max() > 0.9
