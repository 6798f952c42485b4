"""Command line front end.

Preprocessing: ``gen-mesh``, ``coefficients``, ``calibrate``.
Solution: ``point-driver``, ``verify-unitcell``, ``run-macro``, ``strip-test``.

Exit codes: 0 success, 2 configuration or input error, 3 solver
non-convergence, 4 coefficient identity check failed.
"""
import argparse
import os
import sys
import time

import numpy as np

from . import _accel, coefficients, crackband, dns, geometry, macro, output, rom
from .compare import curve_l2, curve_metrics, project
from .config import PROGRAMS, ConfigError, dump_config, load_config
from .solver import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IDENTITY = 0, 2, 3, 4
IDENTITY_TOL = 1e-6
MAX_DNS_CELLS = 8


class SolverFailure(RuntimeError):
    """Non-convergence reported with exit code 3."""


def _log(msg):
    print(msg, flush=True)


def _out_dir(args, cfg):
    path = args.out or cfg.resolve(cfg.paths.output)
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# shared preprocessing


def _build_mesh(cfg, scheme=None):
    c = cfg.cell
    try:
        mesh = geometry.build_unit_cell(c.size, c.fiber_diameter, c.elements_per_side)
        return geometry.assign_partitions(mesh, geometry.PartitionScheme.builtin(scheme or c.scheme,
                                                                                   c.strip_width))
    except geometry.MeshError as exc:
        raise ConfigError(str(exc)) from exc


def _load_mesh(cfg, path=None):
    """Mesh file if it exists, otherwise the configured cell rebuilt."""
    path = path or cfg.resolve(cfg.paths.mesh)
    if os.path.exists(path):
        try:
            return geometry.read_mesh(path)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"cannot read mesh {path}: {exc}") from exc
    return _build_mesh(cfg)


def _load_coefficients(cfg, path=None):
    path = path or cfg.resolve(cfg.paths.coefficients)
    if not os.path.exists(path):
        raise ConfigError(f"coefficient file not found: {path}")
    try:
        cs = coefficients.read_coefficients(path)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"cannot read coefficients {path}: {exc}") from exc
    L = np.array(coefficients.phase_matrices(cfg.materials()))
    if not np.allclose(cs.L, L[cs.phase], rtol=1e-9, atol=0.0):
        raise ConfigError(f"{path} was computed with different phase moduli than [fiber]/[matrix]")
    return cs


def _calibrated_model(cfg, cs, mesh=None):
    materials = cfg.materials()
    specs = []
    if cfg.rom.calibration:
        mesh = mesh if mesh is not None else _load_mesh(cfg)
        if mesh.n_partitions != cs.n_partitions:
            raise ConfigError(f"mesh has {mesh.n_partitions} partitions, coefficients have {cs.n_partitions}")
        try:
            specs = crackband.calibrate_partitions(mesh, cs, materials, clamp=True)
        except crackband.CalibrationError as exc:
            raise ConfigError(str(exc)) from exc
    r = cfg.rom
    model = rom.RomModel(cs, crackband.partition_materials(cs.phase, materials, specs), r.tol, r.maxit,
                         r.single_pass, r.min_substep)
    return model, specs


def _program(cfg, direction=None):
    d = np.asarray(direction if direction is not None else cfg.load.direction, dtype=float)
    d = d / np.abs(d).max()
    t = np.linspace(0.0, cfg.load.max_strain, cfg.load.steps + 1)[1:]
    return t[:, None] * d


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_mesh(args, cfg):
    mesh = _build_mesh(cfg)
    path = args.out or cfg.resolve(cfg.paths.mesh)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    geometry.write_mesh(mesh, path)
    fr = geometry.partition_volume_fractions(mesh)
    _log(f"wrote {path}: {mesh.n_elements} elements, {mesh.n_partitions} partitions, "
         f"fiber fraction {geometry.fiber_fraction(mesh):.6f}")
    for name, c in zip(mesh.partition_names, fr):
        _log(f"  {name:>8s}  c = {c:.6f}")
    return EXIT_OK


def cmd_coefficients(args, cfg):
    mesh = _load_mesh(cfg, args.mesh)
    t0 = time.perf_counter()
    cs = coefficients.compute_coefficients(mesh, cfg.materials())
    path = args.out or cfg.resolve(cfg.paths.coefficients)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    coefficients.write_coefficients(cs, path)
    _log(f"wrote {path} ({cs.n_partitions} partitions, {time.perf_counter() - t0:.2f} s)")
    res = cs.identity_residuals()
    for k, v in res.items():
        _log(f"  identity {k:10s} residual {v:.3e}")
    if max(res.values()) > IDENTITY_TOL:
        _log(f"identity check failed (tolerance {IDENTITY_TOL:g})")
        return EXIT_IDENTITY
    return EXIT_OK


def cmd_calibrate(args, cfg):
    cs = _load_coefficients(cfg, args.coeffs)
    mesh = _load_mesh(cfg, args.mesh)
    if mesh.n_partitions != cs.n_partitions:
        raise ConfigError(f"mesh has {mesh.n_partitions} partitions, coefficients have {cs.n_partitions}")
    try:
        specs = crackband.calibrate_partitions(mesh, cs, cfg.materials(), clamp=args.clamp)
    except crackband.CalibrationError as exc:
        raise ConfigError(str(exc)) from exc
    text = crackband.calibration_csv(specs)
    path = os.path.join(_out_dir(args, cfg), "calibration.csv")
    output.atomic_write(path, text)
    sys.stdout.write(text)
    _log(f"wrote {path}")
    return EXIT_OK


def _read_program(path):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except ValueError:
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#", skiprows=1)
    except OSError as exc:
        raise ConfigError(f"cannot read load program {path}: {exc}") from exc
    if data.shape[1] != 3 or not np.all(np.isfinite(data)):
        raise ConfigError(f"{path}: load program needs three finite strain columns (11, 22, 12)")
    return data


def cmd_point_driver(args, cfg):
    cs = _load_coefficients(cfg, args.coeffs)
    model, _ = _calibrated_model(cfg, cs, _load_mesh(cfg, args.mesh) if cfg.rom.calibration else None)
    program = _read_program(args.program) if args.program else _program(cfg)
    state = model.new_state(1)
    rows = []
    failed = None
    for k, eb in enumerate(program):
        try:
            state, _, _ = model.update(state, eb[None])
        except rom.RomConvergenceError as exc:
            failed = f"ROM did not converge at step {k + 1}: {exc}"
            break
        rows.append(np.concatenate([[k + 1], eb, state.sigma_bar[0], state.omega[0], state.kappa_p[0]]))
    names = cs.names
    header = (["step", "eps11", "eps22", "eps12", "sig11", "sig22", "sig12"]
              + [f"omega_{n}" for n in names] + [f"kappa_p_{n}" for n in names])
    cols = np.array(rows).reshape(-1, len(header)).T
    path = os.path.join(_out_dir(args, cfg), "point.csv")
    output.write_csv(path, header, [cols[0].astype(int)] + list(cols[1:]))
    _log(f"wrote {path} ({len(rows)} steps)")
    if failed:
        raise SolverFailure(failed)
    return EXIT_OK


def cmd_verify_unitcell(args, cfg):
    out = _out_dir(args, cfg)
    materials = cfg.materials()
    meshes = {s: _build_mesh(cfg, s) for s in cfg.verify.schemes}
    models = {}
    for s, mesh in meshes.items():
        cs = coefficients.compute_coefficients(mesh, materials)
        models[s], _ = _calibrated_model(cfg, cs, mesh)
    base = next(iter(meshes.values()))
    rows = []
    failed = []
    for prog in cfg.verify.programs:
        direction = PROGRAMS[prog]
        program = _program(cfg, direction)
        t0 = time.perf_counter()
        d = cfg.dns
        try:
            res = dns.run_unitcell_dns(base, materials, program, cfg.rom.calibration, d.length, d.tol,
                                       d.maxit, d.min_substep, seed_factor=d.seed_factor)
        except dns.DnsDivergenceError as exc:
            res = exc.partial
            failed.append(f"DNS {prog}: {exc}")
        t_dns = time.perf_counter() - t0
        x_ref, y_ref = project(res.strain, res.stress, direction)
        series = [("DNS", x_ref, y_ref)]
        curves = [x_ref, y_ref]
        for s, model in models.items():
            t0 = time.perf_counter()
            try:
                sig, _ = model.drive(res.strain)
            except rom.RomConvergenceError as exc:
                failed.append(f"ROM {s} {prog}: {exc}")
                continue
            t_rom = time.perf_counter() - t0
            x, y = project(res.strain, sig, direction)
            m = curve_metrics(x_ref, y_ref, x, y)
            rows.append([s, prog, m.l2, m.peak_error, m.residual, m.residual_ref, t_rom, t_dns])
            series.append((s, x, y))
            curves.append(y)
            _log(f"{prog:9s} {s:6s} L2 {m.l2:.4f} peak {m.peak_error:+.4f} residual {m.residual:.4f} "
                 f"(DNS {m.residual_ref:.4f})")
        output.write_svg(os.path.join(out, f"unitcell_{prog}.svg"), series, "macro strain (projected)",
                         "macro stress (projected) [MPa]", f"unit cell, {prog}")
        output.write_csv(os.path.join(out, f"unitcell_{prog}.csv"), ["strain", "DNS"] + [s[0] for s in series[1:]],
                         curves)
    header = ["scheme", "program", "l2", "peak_error", "residual", "residual_dns", "rom_time_s", "dns_time_s"]
    output.write_csv(os.path.join(out, "unitcell_metrics.csv"), header,
                     [np.array([r[i] for r in rows], dtype=object if i < 2 else float) for i in range(len(header))])
    _log(f"wrote {os.path.join(out, 'unitcell_metrics.csv')}")
    if failed:
        raise SolverFailure("; ".join(failed))
    return EXIT_OK


def _write_macro(out, tag, res):
    output.write_csv(os.path.join(out, f"fd{tag}.csv"), ["displacement", "force", "iterations", "equilibrium"],
                     [res.displacement, res.force, res.iterations, res.equilibrium])
    for f in res.fields:
        output.write_vtk(os.path.join(out, f"fields{tag}_{f['step'] + 1:04d}.vtk"), res.nodes, res.elements,
                         cell_data={"omega": f["omega"], "kappa_p": f["kappa_p"]},
                         title=f"step {f['step'] + 1}")


def cmd_run_macro(args, cfg):
    mc = cfg.macro
    with_dns = args.with_dns or mc.with_dns
    if with_dns and mc.n_cells > MAX_DNS_CELLS:
        raise ConfigError(f"--with-dns needs n_cells <= {MAX_DNS_CELLS}, got {mc.n_cells}")
    cs = _load_coefficients(cfg, args.coeffs)
    model, _ = _calibrated_model(cfg, cs)
    out = _out_dir(args, cfg)
    output.atomic_write(os.path.join(out, "config.toml"), dump_config(cfg))
    spec = macro.PlateSpec(mc.n_cells, cfg.cell.size, mc.hole_ratio)
    program = np.linspace(0.0, mc.max_displacement, mc.steps + 1)[1:]
    snaps = sorted(set(range(mc.snapshot_every - 1, mc.steps, mc.snapshot_every)) | {mc.steps - 1})
    failed = []
    try:
        res = macro.run_macro(spec, model, program, tol=mc.tol, maxit=mc.maxit, min_substep=mc.min_substep,
                              snapshots=snaps, explicit_substep=mc.explicit_substep)
    except macro.MacroDivergenceError as exc:
        res = exc.partial
        failed.append(str(exc))
    _write_macro(out, "", res)
    series = [("ROM", res.displacement, res.force)]
    _log(f"ROM plate: {len(res.force)} steps, peak force {res.force.max(initial=0):.6g} N/mm, "
         f"{res.wall_time:.1f} s")
    if with_dns:
        c = cfg.cell
        cell = geometry.build_unit_cell(c.size, c.fiber_diameter, mc.dns_elements_per_cell)
        try:
            ref = macro.run_plate_dns(spec, cell, cfg.materials(), program, cfg.rom.calibration, mc.tol,
                                      cfg.dns.maxit, mc.min_substep, snapshots=snaps,
                                      explicit_substep=mc.explicit_substep)
        except macro.MacroDivergenceError as exc:
            ref = exc.partial
            failed.append("DNS: " + str(exc))
        _write_macro(out, "_dns", ref)
        series.append(("DNS", ref.displacement, ref.force))
        if len(ref.force) and len(res.force):
            k = int(np.argmax(ref.force))
            loc = lambda r: macro.damage_location_ok(r.nodes, r.elements, r.peak_omega, spec)
            header = ["peak_rom", "peak_dns", "peak_error", "l2", "speedup", "location_rom", "location_dns"]
            vals = [res.force.max(), ref.force[k], res.force.max() / ref.force[k] - 1.0,
                    curve_l2(ref.displacement, ref.force, res.displacement, res.force),
                    ref.wall_time / res.wall_time, float(loc(res)), float(loc(ref))]
            output.write_csv(os.path.join(out, "comparison.csv"), header, [np.array([v]) for v in vals])
            _log("  ".join(f"{h} {v:.4g}" for h, v in zip(header, vals)))
    output.write_svg(os.path.join(out, "fd.svg"), series, "edge displacement [mm]", "edge force [N/mm]",
                     "plate with hole")
    _log(f"wrote results to {out}")
    if failed:
        raise SolverFailure("; ".join(failed))
    return EXIT_OK


def cmd_strip_test(args, cfg):
    mat = cfg.strip_material.material()
    s = cfg.strip
    rows = []
    series = []
    for calibration in (True, False):
        for n in s.elements:
            try:
                r = dns.softening_strip_test(n, mat, calibration, s.length, n_steps=s.steps)
            except DivergenceError as exc:
                raise SolverFailure(f"strip test n={n} diverged: {exc}") from exc
            rows.append((n, int(calibration), r.energy_per_area, r.energy_per_area / mat.G_F - 1.0))
            series.append((f"n={n} {'cal' if calibration else 'raw'}", r.displacement, r.force))
            _log(f"n {n:3d} calibration {calibration!s:5s} G = {r.energy_per_area:.6g} N/mm "
                 f"({rows[-1][3]:+.2%} of G_F)")
    out = _out_dir(args, cfg)
    output.write_csv(os.path.join(out, "strip.csv"), ["elements", "calibration", "energy", "relative_error"],
                     [np.array([r[i] for r in rows]) for i in range(4)])
    output.write_svg(os.path.join(out, "strip.svg"), series, "end displacement [mm]", "force [N/mm]",
                     "softening strip")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="romaeh", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="numba worker threads (default: $ROMAEH_THREADS or all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="TOML configuration (defaults apply when omitted)")
        s.set_defaults(func=func)
        return s

    s = add("gen-mesh", cmd_gen_mesh, "build and partition the unit cell mesh")
    s.add_argument("--out", help="mesh file (default [paths] mesh)")
    s = add("coefficients", cmd_coefficients, "compute the coefficient tensors")
    s.add_argument("--mesh")
    s.add_argument("--out", help="coefficient file (default [paths] coefficients)")
    s = add("calibrate", cmd_calibrate, "crack-band calibration of the partitions")
    s.add_argument("--mesh")
    s.add_argument("--coeffs")
    s.add_argument("--no-clamp", dest="clamp", action="store_false",
                   help="fail instead of clamping the exponent to its admissible range")
    s.add_argument("--out", help="output directory")
    s = add("point-driver", cmd_point_driver, "drive the ROM at one material point")
    s.add_argument("--coeffs")
    s.add_argument("--mesh")
    s.add_argument("--program", help="CSV of macro strain rows (11, 22, 12)")
    s.add_argument("--out", help="output directory")
    s = add("verify-unitcell", cmd_verify_unitcell, "ROM versus DNS on the unit cell")
    s.add_argument("--out", help="output directory")
    s = add("run-macro", cmd_run_macro, "two-scale plate with a hole")
    s.add_argument("--coeffs")
    s.add_argument("--out", help="output directory")
    s.add_argument("--with-dns", action="store_true", help="also run the fully resolved plate")
    s = add("strip-test", cmd_strip_test, "crack-band objectivity strip test")
    s.add_argument("--out", help="output directory")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        threads = args.threads if args.threads is not None else _accel.threads_from_env()
    except ValueError:
        print("error: ROMAEH_THREADS must be an integer", file=sys.stderr)
        return EXIT_CONFIG
    if threads is not None:
        if threads < 1:
            print("error: thread count must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        _accel.set_threads(threads)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, DivergenceError, rom.RomConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
