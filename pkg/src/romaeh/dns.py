"""Direct numerical simulation of the unit cell and of a softening strip.

Every Gauss point carries the full damage-plasticity model. Softening is
regularized per element: the characteristic length of an element (square
root of its area, or the crack-direction length on request) sets its
softening exponent through the crack-band calibration.
"""
from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from . import fem
from .constitutive import N_PARAM, OMEGA_MAX, P_KDF, damage_equivalent_strain, free_energy_batch, update_batch
from .crackband import calibrate_m, characteristic_length, principal_angle
from .solver import DivergenceError, StaticSolver


class DnsDivergenceError(DivergenceError):
    """DNS aborted; ``partial`` holds the result up to the last converged step."""


# ---------------------------------------------------------------------------
# Gauss-point material


class GaussPointMaterial:
    """Constitutive history at ``n_elem x n_gp`` points.

    Parameters
    ----------
    params : ndarray (n_elem, 8)
        Parameter row of each element (all its Gauss points share it).
    n_gp : int
    """

    def __init__(self, params, n_gp):
        params = np.asarray(params, dtype=float)
        if params.ndim != 2 or params.shape[1] != N_PARAM:
            raise ValueError("params must have shape (n_elem, 8)")
        self.shape = (len(params), n_gp)
        n = len(params) * n_gp
        self.params = np.ascontiguousarray(np.repeat(params, n_gp, axis=0))
        self.eps_p = np.zeros((n, 4))
        self.kappa_p = np.zeros(n)
        self.kappa_d = np.zeros(n)
        self.omega = np.zeros(n)
        self._undamaged = self.params.copy()
        self._undamaged[:, 7] = 0.0
        self._trial = None
        self._kappa_prev = np.zeros(n)
        self._ratio = None

    def extrapolate(self, ratio):
        """Switch to explicit damage (``ratio`` = new over last step size) or back (None).

        In explicit mode ``omega`` follows ``kappa_n + ratio (kappa_n -
        kappa_{n-1})`` instead of the current strain, so the step problem
        keeps only the plastic nonlinearity. The committed history still
        takes the implicit ``kappa_D``.
        """
        self._ratio = None if ratio is None else float(ratio)

    def _explicit_omega(self):
        k = self.kappa_d + self._ratio * (self.kappa_d - self._kappa_prev)
        kdf, m = self.params[:, P_KDF], self.params[:, 5]
        x = np.maximum(k / kdf, 1.0)
        om = -np.expm1((1.0 - x ** m) / m)
        om = np.where(self.params[:, 7] > 0, np.minimum(om, OMEGA_MAX), 0.0)
        return np.maximum(om, self.omega)

    def evaluate(self, eps, secant=False):
        """Trial stresses and tangents; history is untouched until :meth:`commit`.

        With ``secant`` the tangent is ``(1 - omega) D_eff``, which drops the
        softening term and stays positive definite.
        """
        e = eps.reshape(-1, 3)
        sig, ep, kp, kd, om, D, _ = update_batch(e, self.eps_p, self.kappa_p, self.kappa_d, self.params)
        if self._ratio is not None:
            om = self._explicit_omega()
            sig_u, D_u = update_batch(e, self.eps_p, self.kappa_p, self.kappa_d, self._undamaged)[::5]
            sig = (1.0 - om)[:, None] * sig_u
            D = (1.0 - om)[:, None, None] * D_u
        elif secant:
            D = (1.0 - om)[:, None, None] * update_batch(
                e, self.eps_p, self.kappa_p, self.kappa_d, self._undamaged)[5]
        self._trial = (ep, kp, kd, om)
        ne, ng = self.shape
        return sig.reshape(ne, ng, 3), D.reshape(ne, ng, 3, 3)

    def commit(self):
        self._kappa_prev = self.kappa_d
        self.eps_p, self.kappa_p, self.kappa_d, self.omega = self._trial

    def loading(self):
        """Points whose damage grows in the last trial."""
        return self._trial[2] > self.kappa_d

    def stored_energy(self, eps, wdet):
        """``sum w (1 - omega) psi_e`` over all points."""
        psi = free_energy_batch(eps.reshape(-1, 3), self.eps_p, self.omega, self.params)
        return float(psi @ wdet.ravel())

    def field(self, name):
        """Committed history variable reshaped to (n_elem, n_gp)."""
        return getattr(self, name).reshape(self.shape)


def element_lengths(coords, mode="area", theta=None):
    """Characteristic length per element.

    Parameters
    ----------
    coords : ndarray (ne, 4, 2)
    mode : {"area", "oliver"}
        ``"area"`` is the square root of the element area; ``"oliver"`` the
        projection length for crack-normal angles ``theta`` (ne,).
    """
    if mode == "area":
        x, y = coords[..., 0], coords[..., 1]
        area = 0.5 * np.abs(np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1))
        return np.sqrt(area)
    if mode == "oliver":
        if theta is None:
            raise ValueError("oliver lengths need crack angles")
        return np.array([characteristic_length(c, t) for c, t in zip(coords, theta)])
    raise ValueError(f"unknown length mode {mode!r}")


def element_parameters(phase, materials, lengths=None, calibration=False, clamp=True):
    """Parameter rows per element with optional per-element calibrated ``m``.

    Elements of a damaging phase with ``G_F`` get ``m`` from
    ``calibrate_m(material, length_e)``. Calibration is cached per distinct
    (phase, length) pair.
    """
    rows = np.array([materials[int(p)].params() for p in phase])
    if not calibration:
        return rows
    cache = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for e, p in enumerate(phase):
            mat = materials[int(p)]
            if not mat.damage or mat.G_F is None:
                continue
            key = (int(p), round(float(lengths[e]), 12))
            if key not in cache:
                cache[key] = calibrate_m(mat, lengths[e], clamp=clamp)
            rows[e, 5] = cache[key]
    if caught:
        warnings.warn(f"{len(caught)} element calibration(s) clamped: {caught[0].message}",
                      RuntimeWarning, stacklevel=2)
    return rows


# ---------------------------------------------------------------------------
# unit cell


@dataclass
class DnsResult:
    """Macro response of a DNS run.

    Attributes
    ----------
    strain, stress : ndarray (k, 3)
        Macro strain and volume-average stress per converged program step.
    stress_reaction : ndarray (k, 3)
        Macro stress from boundary forces (periodic images).
    work, stored : ndarray (k,)
        External work and recoverable energy, per cell (N mm per mm thickness).
    iterations, substeps : ndarray (k,)
    explicit : ndarray (k,)
        Substeps per step that needed the explicit-damage fallback.
    fields : list of dict
        Snapshots (``omega``, ``kappa_p``, ``sigma`` per element) at the
        requested steps.
    """

    strain: np.ndarray
    stress: np.ndarray
    stress_reaction: np.ndarray
    work: np.ndarray
    stored: np.ndarray
    iterations: np.ndarray
    substeps: np.ndarray
    fields: list = field(default_factory=list)
    element_m: np.ndarray = None
    completed: bool = True
    explicit: np.ndarray = None

    @property
    def dissipated(self):
        """``W_ext - Psi_e`` at the last step."""
        return float(self.work[-1] - self.stored[-1]) if len(self.work) else 0.0


def _reaction_stress(f, offset, area):
    """``1/|cell| sum_i sym(f_i x (x_i - x_rep(i)))`` in Voigt order."""
    F = f.reshape(-1, 2)
    t = F.T @ offset / area
    return np.array([t[0, 0], t[1, 1], 0.5 * (t[0, 1] + t[1, 0])])


def _element_snapshot(step, mat, sig, wdet):
    w = wdet / wdet.sum(axis=1, keepdims=True)
    return {"step": step,
            "omega": mat.field("omega").max(axis=1),
            "kappa_p": mat.field("kappa_p").max(axis=1),
            "sigma": np.einsum("egi,eg->ei", sig, w)}


def crack_angles(mesh, materials, direction):
    """Crack-normal angle per element from the elastic strain under ``direction``."""
    cell = fem.PeriodicCell(mesh, [m.elastic_matrix() for m in materials])
    eps = cell.gauss_strains(cell.solve(direction)).mean(axis=1)
    return np.array([principal_angle(e) for e in eps])


def seed_element(mesh, materials, direction):
    """Damaging element with the largest elastic equivalent strain (None if none damages)."""
    damaging = np.array([materials[int(p)].damage for p in mesh.phase])
    if not damaging.any():
        return None
    cell = fem.PeriodicCell(mesh, [m.elastic_matrix() for m in materials])
    eps = cell.gauss_strains(cell.solve(direction)).mean(axis=1)
    eD = np.array([damage_equivalent_strain(e)[0] for e in eps])
    eD[~damaging] = -np.inf
    # round so that mirror-image elements tie exactly and the lowest index wins
    eD = np.round(eD / np.abs(eD[damaging]).max(), 9)
    return int(np.argmax(eD))


def run_unitcell_dns(mesh, materials, program, calibration=False, length_mode="area",
                     tol=1e-6, maxit=100, min_substep=1.0 / 64, snapshots=(), clamp=True,
                     seed_factor=0.98):
    """Strain-controlled nonlinear analysis of a periodic cell.

    Parameters
    ----------
    mesh : RveMesh
    materials : sequence of PhaseMaterial
        Indexed by phase.
    program : array_like (k, 3)
        Macro strain after each step (the start is zero strain).
    calibration : bool
        Per-element crack-band exponent.
    length_mode : {"area", "oliver"}
    snapshots : iterable of int
        Step indices whose element fields are stored (-1 means last).
    seed_factor : float
        Damage threshold factor of one seed element, the damaging element
        with the largest elastic equivalent strain along the load path
        (lowest index on ties). It breaks the mirror symmetry of the cell so
        that softening localizes in one element column. Use 1 for none.

    Returns
    -------
    DnsResult

    Raises
    ------
    DnsDivergenceError
        With ``partial`` set to the result up to the last converged step.
    """
    program = np.atleast_2d(np.asarray(program, dtype=float))
    coords = mesh.element_coords()
    B, wdet = fem.b_matrices(coords, "q4")
    nz = program[np.abs(program).max(axis=1) > 0]
    direction = nz[0] / np.abs(nz[0]).max() if len(nz) else np.array([1.0, 0.0, 0.0])
    theta = None
    if calibration and length_mode == "oliver":
        theta = crack_angles(mesh, materials, direction)
    lengths = element_lengths(coords, length_mode, theta) if calibration else None
    params = element_parameters(mesh.phase, materials, lengths, calibration, clamp)
    if seed_factor != 1.0:
        seed = seed_element(mesh, materials, direction)
        if seed is not None:
            params[seed, P_KDF] *= seed_factor
    mat = GaussPointMaterial(params, B.shape[1])
    assembler = fem.Assembler(mesh.elements, mesh.n_nodes)
    dofmap = fem.DofMap.periodic(mesh)
    solver = StaticSolver(B, wdet, assembler, dofmap, mat, tol, maxit, min_substep, secant_fallback=True)
    area = wdet.sum()
    snaps = {s if s >= 0 else len(program) + s for s in snapshots}

    out = {k: [] for k in ("stress", "reaction", "work", "stored", "its", "subs", "expl")}
    fields = []

    def result(completed):
        k = len(out["stress"])
        return DnsResult(program[:k].copy(), np.array(out["stress"]).reshape(-1, 3),
                         np.array(out["reaction"]).reshape(-1, 3), np.array(out["work"]),
                         np.array(out["stored"]), np.array(out["its"], dtype=int),
                         np.array(out["subs"], dtype=int), fields, params[:, 5].copy(), completed,
                         np.array(out["expl"], dtype=int))

    for k, eb in enumerate(program):
        try:
            info = solver.advance(fem.affine_displacement(mesh.nodes, eb))
        except DivergenceError as exc:
            raise DnsDivergenceError(f"DNS diverged at step {k + 1}: {exc}", result(False)) from exc
        out["stress"].append(fem.volume_average(solver.sig, wdet))
        out["reaction"].append(_reaction_stress(solver.f, dofmap.offset, area))
        out["work"].append(solver.work)
        out["stored"].append(mat.stored_energy(solver.eps, wdet))
        out["its"].append(info.iterations)
        out["subs"].append(info.substeps)
        out["expl"].append(info.explicit)
        if k in snaps:
            fields.append(_element_snapshot(k, mat, solver.sig, wdet))
    return result(True)


# ---------------------------------------------------------------------------
# strip test


@dataclass
class StripResult:
    displacement: np.ndarray
    force: np.ndarray
    work: float
    stored: float
    section: float
    element_m: np.ndarray

    @property
    def dissipated(self):
        return self.work - self.stored

    @property
    def energy_per_area(self):
        """Dissipated energy per unit cross-section [N/mm]."""
        return self.dissipated / self.section


def strip_mesh(n_elements, length):
    """``n`` square Q4 elements in a row; returns (nodes, elements)."""
    h = length / n_elements
    xs = np.linspace(0.0, length, n_elements + 1)
    nodes = np.concatenate([np.column_stack([xs, np.zeros_like(xs)]),
                            np.column_stack([xs, np.full_like(xs, h)])])
    n1 = n_elements + 1
    i = np.arange(n_elements)
    elements = np.column_stack([i, i + 1, n1 + i + 1, n1 + i])
    return nodes, elements


def strip_program(params, material, length, h, final_strain=None, n_steps=400):
    """End displacements of the strip steps.

    Uniform steps up to 1.5 times the threshold displacement, then
    geometric steps to the end so the long softening tail is cheap.
    """
    if material.damage:
        kd = material.kappa_df
        m = params[:, 5].min()
        # equivalent strain at which omega = 1 - 1e-6
        k_end = kd * (1.0 + m * math.log(1e6)) ** (1.0 / m)
        U_end = k_end * h + kd * (length - h) if final_strain is None else final_strain * length
        U0 = 1.5 * kd * length
    else:
        U_end = (final_strain or 1e-2) * length
        U0 = U_end
    if U_end <= U0:
        return np.linspace(0.0, U_end, n_steps + 1)[1:]
    n1 = n_steps // 2
    return np.concatenate([np.linspace(0.0, U0, n1 + 1)[1:],
                           np.geomspace(U0, U_end, n_steps - n1 + 1)[1:]])


def softening_strip_test(n_elements, material, calibration=True, length=1.0, weak_factor=0.98,
                         weak_element=None, m=None, final_strain=None, n_steps=400,
                         tol=1e-8, maxit=40, min_substep=1.0 / 64):
    """Uniaxial tension of a strip to failure.

    The strip has ``n_elements`` square elements of side ``length / n``
    along the load. Left end is held in ``x``, the right end pulled; one
    node is held in ``y``. Element ``weak_element`` (default: middle) has its
    damage threshold scaled by ``weak_factor`` to seed localization.

    Parameters
    ----------
    material : PhaseMaterial
        Use ``nu = 0`` for a one-dimensional stress state.
    calibration : bool
        Calibrate ``m`` per element from its size; otherwise every element
        uses ``m`` (default ``material.m``).
    final_strain : float
        End displacement over strip length; by default the band element is
        driven until ``omega`` reaches ``1 - 1e-6``.

    Returns
    -------
    StripResult
    """
    if n_elements < 1:
        raise ValueError("need at least one element")
    nodes, elements = strip_mesh(n_elements, length)
    h = length / n_elements
    coords = nodes[elements]
    B, wdet = fem.b_matrices(coords, "q4")
    row = material.params()
    if m is not None:
        row[5] = m
    if calibration and material.damage:
        row[5] = calibrate_m(material, h)
    params = np.tile(row, (n_elements, 1))
    weak = n_elements // 2 if weak_element is None else weak_element
    params[weak, P_KDF] *= weak_factor
    mat = GaussPointMaterial(params, B.shape[1])
    assembler = fem.Assembler(elements, len(nodes))
    n1 = n_elements + 1
    left = [0, n1]
    right = [n_elements, n1 + n_elements]
    fixed = [2 * i for i in left] + [2 * i for i in right] + [1]
    dofmap = fem.DofMap.dirichlet(2 * len(nodes), fixed)
    solver = StaticSolver(B, wdet, assembler, dofmap, mat, tol, maxit, min_substep)
    U = strip_program(params, material, length, h, final_strain, n_steps)
    disp, force = [0.0], [0.0]
    for Uk in U:
        u_p = np.zeros(2 * len(nodes))
        u_p[[2 * i for i in right]] = Uk
        solver.advance(u_p)
        disp.append(Uk)
        force.append(float(solver.f[[2 * i for i in right]].sum()))
    stored = mat.stored_energy(solver.eps, wdet)
    return StripResult(np.array(disp), np.array(force), solver.work, stored, h, params[:, 5].copy())
