import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from romaeh import coefficients as co, constitutive as c, crackband as cb, geometry as g

MAT = c.PhaseMaterial(3500.0, 0.35, kappa_df=0.01, m=1.0, G_F=3.0, damage=True)
SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_length_of_unit_square():
    assert cb.characteristic_length(SQUARE, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert abs(cb.characteristic_length(SQUARE, math.pi / 4) - math.sqrt(2.0)) < 1e-12


@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0), st.floats(-math.pi, math.pi), st.floats(0.1, 10.0))
def test_length_of_rectangle(a, b, theta, s):
    rect = SQUARE * [a, b]
    L = cb.characteristic_length(rect, theta)
    assert cb.characteristic_length(rect, 0.0) == pytest.approx(a, rel=1e-12)
    assert cb.characteristic_length(rect, 0.5 * math.pi) == pytest.approx(b, rel=1e-12)
    assert cb.characteristic_length(rect, -theta) == pytest.approx(L, rel=1e-12)
    assert cb.characteristic_length(rect, theta + math.pi) == pytest.approx(L, rel=1e-12)
    assert cb.characteristic_length(rect * s + 3.0, theta) == pytest.approx(s * L, rel=1e-12)


@given(st.floats(0.3, 4.0))
def test_closed_form_matches_quadrature(m):
    assert cb.dissipation_density_closed(MAT, m) == pytest.approx(cb.dissipation_density(MAT, m), rel=1e-8)


def test_linear_exponent_value():
    # m = 1: elastic triangle E k^2 / 2 plus the tail int_k^inf E x exp(1 - x/k) dx = 2 E k^2
    assert cb.dissipation_density_closed(MAT, 1.0) == pytest.approx(2.5 * 3500 * 1e-4, rel=1e-12)


@given(st.floats(1.0, 20.0))
def test_calibration_hits_fracture_energy(L):
    lo, hi = cb.admissible_length_interval(MAT)
    if not lo <= L <= hi:
        return
    m = cb.calibrate_m(MAT, L)
    assert L * cb.dissipation_density_closed(MAT, m) == pytest.approx(MAT.G_F, rel=1e-8)


def test_unattainable_length():
    lo, hi = cb.admissible_length_interval(MAT)
    with pytest.raises(cb.CalibrationError, match="L_c must lie"):
        cb.calibrate_m(MAT, 2 * hi)
    with pytest.warns(RuntimeWarning):
        assert cb.calibrate_m(MAT, 2 * hi, clamp=True) == cb.M_MAX
    with pytest.raises(cb.CalibrationError):
        cb.calibrate_m(c.PhaseMaterial(1.0, 0.0, kappa_df=1.0, damage=True), 1.0)


def test_crack_direction_is_principal():
    E = np.diag([2.0, 1.0, 1.0])
    assert cb.crack_direction(E) == pytest.approx(0.0, abs=1e-12)
    assert cb.crack_direction(E, override=0.3) == 0.3


def test_partition_calibration_m8():
    mesh = g.assign_partitions(g.build_unit_cell(12.5, 10.0, 16), "F1-M8")
    fib = c.PhaseMaterial(72000.0, 0.26)
    cs = co.compute_coefficients(mesh, [fib, MAT])
    specs = cb.calibrate_partitions(mesh, cs, [fib, MAT], clamp=True)
    assert [s.partition for s in specs] == list(range(1, 9))
    for s in specs:
        if cb.M_MIN < s.m < cb.M_MAX:
            assert s.energy == pytest.approx(MAT.G_F, rel=1e-8)
    mats = cb.partition_materials(cs.phase, [fib, MAT], specs)
    assert mats[0] == fib and mats[1].m == specs[0].m
    text = cb.calibration_csv(specs)
    assert text.splitlines()[0] == "partition,theta,L_c,m,g_f,L_c*g_f"
    assert len(text.splitlines()) == 9
