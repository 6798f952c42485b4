"""Wall-clock comparison of the numba and numpy kernels.

Both backends run in one process by flipping ``romaeh._accel.USE_NUMBA``;
each kernel is called once before timing so JIT compilation is excluded.

Usage::

    python3 benchmarks/bench_backends.py [--points 20000] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from romaeh import _accel, coefficients as co, constitutive as c, crackband as cb, fem, geometry as g, rom

FIBER = c.PhaseMaterial(72000.0, 0.26)
MATRIX = c.PhaseMaterial(3500.0, 0.35, 60.0, 500.0, 0.01, 1.0, 3.0, True, True)


def constitutive_case(n, rng):
    prm = np.tile(MATRIX.params(), (n, 1))
    eps = rng.normal(size=(n, 3)) * 0.015
    z = np.zeros
    return lambda: c.update_batch(eps, z((n, 4)), z(n), z(n), prm)


def rom_case(n, rng):
    mesh = g.assign_partitions(g.build_unit_cell(12.5, 10.0, 8), "F1-M8")
    cs = co.compute_coefficients(mesh, [FIBER, MATRIX])
    specs = cb.calibrate_partitions(mesh, cs, [FIBER, MATRIX], clamp=True)
    model = rom.RomModel(cs, cb.partition_materials(cs.phase, [FIBER, MATRIX], specs))
    state = model.new_state(n)
    # strains past the damage threshold so the local iterations are active
    target = rng.normal(size=(n, 3)) * 0.004 + np.array([0.008, 0.002, 0.0])
    return lambda: model.update(state, target)


def tangent_case(n, rng):
    nodes = rng.uniform(size=(n, 4, 2)) * 0.2 + np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    B, wdet = fem.b_matrices(nodes, "q4")
    D = np.broadcast_to(fem.plane_strain_matrix(3500.0, 0.35), B.shape[:2] + (3, 3)).copy()
    return lambda: fem.element_tangents(B, D, wdet)


def bench(make, n, repeat, seed=0):
    out = {}
    for backend in ("numba", "numpy"):
        _accel.USE_NUMBA = backend == "numba"
        run = make(n, np.random.default_rng(seed))
        run()
        out[backend] = min(timeit.repeat(run, number=1, repeat=repeat))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=20000, help="material points per call")
    p.add_argument("--repeat", type=int, default=5)
    a = p.parse_args(argv)
    saved = _accel.USE_NUMBA
    cases = [("constitutive update", constitutive_case, a.points),
             ("ROM F1-M8 update", rom_case, max(a.points // 20, 1)),
             ("Q4 element tangents", tangent_case, a.points)]
    print(f"{'kernel':22s} {'points':>7s} {'numba [s]':>10s} {'numpy [s]':>10s} {'ratio':>7s}")
    try:
        for name, make, n in cases:
            t = bench(make, n, a.repeat)
            print(f"{name:22s} {n:7d} {t['numba']:10.4f} {t['numpy']:10.4f} {t['numpy'] / t['numba']:7.1f}")
    finally:
        _accel.USE_NUMBA = saved


if __name__ == "__main__":
    main()
