import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from romaeh import macro, output

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("nen", [4, 8])
def test_vtk_round_trip(tmp_path, nen):
    if nen == 4:
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [2.0, 0.0], [2.0, 1.0]])
        el = np.array([[0, 1, 2, 3], [1, 4, 5, 2]])
    else:
        nodes, el = macro.plate_mesh(macro.PlateSpec(2))
    rng = np.random.default_rng(0)
    cell = {"omega": rng.random(len(el)), "kappa_p": rng.random(len(el)) * 1e-3}
    point = {"u": rng.normal(size=(len(nodes), 2))}
    p = tmp_path / "f.vtk"
    output.write_vtk(p, nodes, el, cell, point)
    n2, e2, c2, p2 = output.read_vtk(p)
    assert np.array_equal(n2, nodes) and np.array_equal(e2, el)
    for k in cell:
        assert np.array_equal(c2[k], cell[k])
    assert np.array_equal(p2["u"][:, :2], point["u"])
    text = p.read_text()
    assert text.startswith("# vtk DataFile Version 3.0\n")
    assert f"\n{output.VTK_QUAD if nen == 4 else output.VTK_QUADRATIC_QUAD}\n" in text


@given(hnp.arrays(float, (5,), elements=finite))
def test_vtk_is_deterministic_and_exact(values):
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] + [[2.0 + i, 0.0] for i in range(2)])
    el = np.array([[0, 1, 2, 3]] * 5)
    a = output.vtk_text(nodes, el, {"w": values, "b": values[::-1]})
    b = output.vtk_text(nodes, el, {"b": values[::-1], "w": values})
    assert a == b
    assert a.index("SCALARS b") < a.index("SCALARS w")


def test_vtk_rejects_bad_fields():
    nodes = np.zeros((4, 2))
    el = np.array([[0, 1, 2, 3]])
    with pytest.raises(ValueError):
        output.vtk_text(nodes, el, {"w": np.zeros(2)})
    with pytest.raises(ValueError):
        output.vtk_text(nodes, el, {"a b": np.zeros(1)})
    with pytest.raises(ValueError):
        output.vtk_text(nodes, np.array([[0, 1, 2]]))


@given(hnp.arrays(float, (7,), elements=finite), hnp.arrays(float, (7,), elements=finite))
def test_csv_round_trip(x, y):
    text = output.csv_text(["x", "y"], [x, y])
    lines = text.splitlines()
    assert lines[0] == "x,y"
    back = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert np.array_equal(back[:, 0], x) and np.array_equal(back[:, 1], y)


def test_csv_file(tmp_path):
    p = tmp_path / "c.csv"
    output.write_csv(p, ["a", "b"], [np.arange(3.0), np.ones(3)])
    h, d = output.read_csv(p)
    assert h == ["a", "b"] and d.shape == (3, 2)


def test_svg_is_valid_xml():
    x = np.linspace(0, 1, 20)
    text = output.svg_text([("ROM <M8>", x, x ** 2), ("DNS", x, x)], "strain", "stress", "t & t")
    root = ET.fromstring(text)
    ns = "{http://www.w3.org/2000/svg}"
    assert len(root.findall(f"{ns}polyline")) == 2
    assert output.svg_text([("a", x, x)]) == output.svg_text([("a", x, x)])


def test_atomic_write_leaves_no_partial_file(tmp_path):
    p = tmp_path / "out.txt"
    output.atomic_write(p, "first")

    with pytest.raises(TypeError):
        output.atomic_write(p, object())
    assert p.read_text() == "first"
    assert os.listdir(tmp_path) == ["out.txt"]
