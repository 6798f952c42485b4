"""Macroscale plate with a hole: two-scale ROM model and fully resolved DNS.

The quarter plate occupies ``[0, W]^2`` minus a hole of radius ``R`` at the
origin. The edges ``x = 0`` and ``y = 0`` are symmetry lines (zero normal
displacement) and the edge ``x = W`` is pulled by a prescribed ``u_x = U``.
The two-scale model meshes the plate with Q8 elements, about one per unit
cell, and runs the reduced-order cell law at each of their 3x3 Gauss points.
The DNS reference meshes every cell with Q4 elements and both phases.
"""
from dataclasses import dataclass, field
import math
import time

import numpy as np

from . import fem
from .dns import GaussPointMaterial, element_lengths, element_parameters
from .geometry import FIBER, MATRIX
from .rom import RomConvergenceError
from .solver import DivergenceError, MaterialFailure, StaticSolver


class MacroDivergenceError(DivergenceError):
    """Macro run aborted; ``partial`` is the :class:`MacroResult` so far."""


@dataclass(frozen=True)
class PlateSpec:
    """Quarter plate made of ``n_cells x n_cells`` unit cells.

    Attributes
    ----------
    n_cells : int
    cell_size : float
        Unit cell edge [mm].
    hole_ratio : float
        Hole radius over plate width.
    """

    n_cells: int = 8
    cell_size: float = 12.5
    hole_ratio: float = 0.2

    def __post_init__(self):
        if self.n_cells < 2 or self.n_cells % 2:
            raise ValueError("n_cells must be an even integer >= 2")
        if not 0 < self.hole_ratio < 0.5:
            raise ValueError("hole_ratio must lie in (0, 0.5)")

    @property
    def width(self):
        return self.n_cells * self.cell_size

    @property
    def radius(self):
        return self.hole_ratio * self.width


# ---------------------------------------------------------------------------
# meshes


def plate_mesh(spec, n_radial=None, n_theta=None):
    """Mapped Q8 mesh of the quarter plate.

    Rays from the hole to the outer boundary: the angular parameter runs
    along the hole arc and, on the outside, up the edge ``x = W`` and then
    along ``y = W``. Straight-line blending between the two gives
    ``n_radial x n_theta`` elements; both default to ``n_cells`` so the
    element count matches the cell count.

    Returns
    -------
    nodes : ndarray (n, 2)
    elements : ndarray (ne, 8)
        Corners counter-clockwise, then mid-sides.
    """
    nr = int(n_radial or spec.n_cells)
    nt = int(n_theta or spec.n_cells)
    if nt % 2:
        raise ValueError("n_theta must be even so the plate corner is a node")
    W, R = spec.width, spec.radius
    s = np.linspace(0.0, 1.0, 2 * nr + 1)
    t = np.linspace(0.0, 1.0, 2 * nt + 1)
    theta = 0.5 * math.pi * t
    inner = R * np.column_stack([np.cos(theta), np.sin(theta)])
    outer = np.where((t <= 0.5)[:, None],
                     np.column_stack([np.full_like(t, W), 2.0 * W * t]),
                     np.column_stack([W * (2.0 - 2.0 * t), np.full_like(t, W)]))
    grid = (1.0 - s[None, :, None]) * inner[:, None, :] + s[None, :, None] * outer[:, None, :]
    # grid[j, i]: j along t, i along s; drop the element-centre points
    keep = ~((np.arange(2 * nt + 1)[:, None] % 2 == 1) & (np.arange(2 * nr + 1)[None, :] % 2 == 1))
    index = np.full(keep.shape, -1, dtype=np.int64)
    index[keep] = np.arange(keep.sum())
    nodes = grid[keep]
    # exact boundary coordinates
    nodes[np.abs(nodes[:, 0]) < 1e-12 * W, 0] = 0.0
    nodes[np.abs(nodes[:, 1]) < 1e-12 * W, 1] = 0.0
    elements = []
    for j in range(nt):
        for i in range(nr):
            J, I = 2 * j, 2 * i
            # local xi along s, eta along t; counter-clockwise in (x, y)
            elements.append([index[J, I], index[J, I + 2], index[J + 2, I + 2], index[J + 2, I],
                             index[J, I + 1], index[J + 1, I + 2], index[J + 2, I + 1], index[J + 1, I]])
    return nodes, np.array(elements, dtype=np.int64)


def plate_dns_mesh(spec, cell_mesh):
    """Q4 mesh of the plate with every cell resolved like ``cell_mesh``.

    The cells' structured grids are merged into one grid of
    ``n_cells * n`` elements per side; elements whose centroid falls inside
    the hole are removed (staircase hole edge).

    Returns
    -------
    nodes, elements, phase
    """
    n = int(round(math.sqrt(cell_mesh.n_elements)))
    if n * n != cell_mesh.n_elements:
        raise ValueError("cell mesh must be a structured n x n grid")
    N = spec.n_cells
    L = spec.cell_size
    h = L / n
    # phase of each cell element by its (i, j) grid slot
    cen = cell_mesh.element_centroids()
    slot = np.floor(cen / (cell_mesh.cell_size / n)).astype(int)
    cell_phase = np.empty((n, n), dtype=int)
    cell_phase[slot[:, 1], slot[:, 0]] = cell_mesh.phase
    m = N * n
    xs = np.linspace(0.0, N * L, m + 1)
    X, Y = np.meshgrid(xs, xs)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    n0 = (j * (m + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + m + 2, n0 + m + 1])
    phase = cell_phase[(j % n).ravel(), (i % n).ravel()]
    cx = (i.ravel() + 0.5) * h
    cy = (j.ravel() + 0.5) * h
    keep = np.hypot(cx, cy) >= spec.radius
    elements, phase = elements[keep], phase[keep]
    used = np.unique(elements)
    renumber = np.full(len(nodes), -1, dtype=np.int64)
    renumber[used] = np.arange(len(used))
    return nodes[used], renumber[elements], phase


def plate_constraints(nodes, width):
    """Symmetry and load dofs.

    Returns
    -------
    fixed : ndarray
        All constrained dofs (symmetry plus loaded).
    loaded : ndarray
        ``x`` dofs of the nodes on ``x = W``.
    """
    tol = 1e-9 * width
    left = np.flatnonzero(np.abs(nodes[:, 0]) <= tol)
    bottom = np.flatnonzero(np.abs(nodes[:, 1]) <= tol)
    right = np.flatnonzero(np.abs(nodes[:, 0] - width) <= tol)
    loaded = 2 * right
    fixed = np.unique(np.concatenate([2 * left, 2 * bottom + 1, loaded]))
    return fixed, loaded


# ---------------------------------------------------------------------------
# material adapters for the static solver


class ElasticMaterial:
    """Linear material with one 3x3 matrix per element."""

    def __init__(self, C, shape):
        self.C = np.broadcast_to(np.asarray(C, dtype=float), shape + (3, 3))

    def evaluate(self, eps):
        return np.einsum("egij,egj->egi", self.C, eps), np.array(self.C)

    def commit(self):
        pass


class RomMaterial:
    """Reduced-order cell law at every macro Gauss point.

    Parameters
    ----------
    model : RomModel
    shape : tuple
        ``(n_elem, n_gp)``.
    """

    def __init__(self, model, shape):
        self.model = model
        self.shape = tuple(shape)
        self.state = model.new_state(shape[0] * shape[1])
        self._trial = None
        self._ratio = None
        self._last_inc = np.zeros(self.state.n_points)

    def evaluate(self, eps):
        ebar = eps.reshape(-1, 3)
        ratio = None
        if self._ratio is not None:
            # scale to each point's last ROM (sub)step
            ratio = self._ratio * np.divide(self._last_inc, self.state.step,
                                            out=np.zeros_like(self._last_inc), where=self.state.step > 0)
        try:
            new, C, _ = self.model.update(self.state, ebar, explicit_ratio=ratio)
        except RomConvergenceError as exc:
            raise MaterialFailure(str(exc)) from exc
        self._trial = new
        ne, ng = self.shape
        return new.sigma_bar.reshape(ne, ng, 3), C.reshape(ne, ng, 3, 3)

    def extrapolate(self, ratio):
        """Explicit-damage mode for the next evaluations (None switches it off)."""
        self._ratio = None if ratio is None else float(ratio)

    def commit(self):
        self._last_inc = np.linalg.norm(self._trial.eps_bar - self.state.eps_bar, axis=1)
        self.state = self._trial

    def field(self, name):
        """Per-element maximum of a partition field (``omega`` or ``kappa_p``)."""
        v = getattr(self.state, name).reshape(self.shape + (-1,))
        return v.max(axis=(1, 2))


# ---------------------------------------------------------------------------
# runs


@dataclass
class MacroResult:
    """Force-displacement response and element field snapshots.

    Attributes
    ----------
    displacement, force : ndarray (k,)
        Applied edge displacement and total edge reaction per step
        (per unit thickness).
    fields : list of dict
        ``step``, ``omega`` and ``kappa_p`` per element.
    nodes, elements : ndarray
        Mesh for exporting the fields.
    equilibrium : ndarray (k,)
        Residual of the free dofs relative to the reference force.
    peak_omega : ndarray
        Element damage at the step of maximum force.
    """

    displacement: np.ndarray
    force: np.ndarray
    iterations: np.ndarray
    equilibrium: np.ndarray
    nodes: np.ndarray
    elements: np.ndarray
    fields: list = field(default_factory=list)
    wall_time: float = 0.0
    completed: bool = True
    explicit: np.ndarray = None
    peak_omega: np.ndarray = None

    def peak(self):
        k = int(np.argmax(self.force))
        return float(self.displacement[k]), float(self.force[k])


def _drive(nodes, elements, kind, material, program, spec, tol, maxit, min_substep, snapshots,
           secant=False, explicit_substep=None):
    t0 = time.perf_counter()
    program = np.asarray(program, dtype=float).ravel()
    B, wdet = fem.b_matrices(nodes[elements], kind)
    if hasattr(material, "shape") and tuple(material.shape) != B.shape[:2]:
        raise ValueError("material shape does not match the mesh")
    n_dof = 2 * len(nodes)
    fixed, loaded = plate_constraints(nodes, spec.width)
    dofmap = fem.DofMap.dirichlet(n_dof, fixed)
    solver = StaticSolver(B, wdet, fem.Assembler(elements, len(nodes)), dofmap, material, tol, maxit,
                          min_substep, secant_fallback=secant, explicit_substep=explicit_substep)
    snaps = {s if s >= 0 else len(program) + s for s in snapshots}
    out = {k: [] for k in ("u", "f", "its", "eq", "expl")}
    fields = []
    peak = {"f": -np.inf, "omega": None}

    def result(done):
        return MacroResult(np.array(out["u"]), np.array(out["f"]), np.array(out["its"], dtype=int),
                           np.array(out["eq"]), nodes, elements, fields, time.perf_counter() - t0, done,
                           np.array(out["expl"], dtype=int), peak["omega"])

    for k, U in enumerate(program):
        u_p = np.zeros(n_dof)
        u_p[loaded] = U
        try:
            info = solver.advance(u_p)
        except DivergenceError as exc:
            raise MacroDivergenceError(f"macro run diverged at step {k + 1}: {exc}", result(False)) from exc
        f = solver.reaction()
        out["u"].append(U)
        out["f"].append(float(f[loaded].sum()))
        out["its"].append(info.iterations)
        out["eq"].append(float(np.linalg.norm(dofmap.reduce_vector(f)) / max(solver.f_ref, 1e-300)))
        out["expl"].append(info.explicit)
        if out["f"][-1] > peak["f"]:
            peak.update(f=out["f"][-1], omega=material.field("omega"))
        if k in snaps:
            fields.append({"step": k, "omega": material.field("omega"),
                           "kappa_p": material.field("kappa_p")})
    return result(True)


def run_macro(spec, model, program, n_radial=None, n_theta=None, tol=1e-6, maxit=30,
              min_substep=1.0 / 64, snapshots=(-1,), explicit_substep=0.25):
    """Two-scale run: Q8 plate with the ROM cell law at every Gauss point.

    Parameters
    ----------
    spec : PlateSpec
    model : RomModel
    program : array_like (k,)
        Edge displacements [mm].
    explicit_substep : float
        Substep fraction from which failed substeps are retried with
        explicit damage (see :class:`StaticSolver`).

    Returns
    -------
    MacroResult

    Raises
    ------
    MacroDivergenceError
    """
    nodes, elements = plate_mesh(spec, n_radial, n_theta)
    material = RomMaterial(model, (len(elements), 9))
    return _drive(nodes, elements, "q8", material, program, spec, tol, maxit, min_substep, snapshots,
                  explicit_substep=explicit_substep)


def run_plate_dns(spec, cell_mesh, materials, program, calibration=True, tol=1e-6, maxit=100,
                  min_substep=1.0 / 64, snapshots=(-1,), clamp=True, explicit_substep=0.25):
    """Fully resolved plate: every cell meshed like ``cell_mesh``.

    Softening is regularized per element as in the unit-cell DNS.
    """
    nodes, elements, phase = plate_dns_mesh(spec, cell_mesh)
    coords = nodes[elements]
    lengths = element_lengths(coords) if calibration else None
    params = element_parameters(phase, materials, lengths, calibration, clamp)
    material = _FieldGaussMaterial(params, 4)
    return _drive(nodes, elements, "q4", material, program, spec, tol, maxit, min_substep, snapshots,
                  secant=True, explicit_substep=explicit_substep)


class _FieldGaussMaterial(GaussPointMaterial):
    def field(self, name):
        return super().field(name).max(axis=1)


def run_elastic_plate(spec, C, U=1.0, n_radial=None, n_theta=None):
    """Linear Q8 plate with a homogeneous stiffness ``C``.

    Returns
    -------
    nodes, elements, u, force
    """
    nodes, elements = plate_mesh(spec, n_radial, n_theta)
    B, wdet = fem.b_matrices(nodes[elements], "q8")
    fixed, loaded = plate_constraints(nodes, spec.width)
    asm = fem.Assembler(elements, len(nodes))
    K = asm.matrix(fem.element_tangents(B, np.broadcast_to(C, B.shape[:2] + (3, 3)), wdet))
    dm = fem.DofMap.dirichlet(2 * len(nodes), fixed)
    u_p = np.zeros(2 * len(nodes))
    u_p[loaded] = U
    a = fem.solve(dm.reduce_matrix(K), -dm.reduce_vector(K @ u_p))
    u = dm.expand(a, u_p)
    return nodes, elements, u, float((K @ u)[loaded].sum())


def hole_edge_stress(nodes, elements, u, C, point):
    """Stress at a mesh node, averaged over the Q8 elements sharing it.

    Each element's strain is evaluated at the node's natural coordinates.
    """
    point = np.asarray(point, dtype=float)
    node = int(np.argmin(np.linalg.norm(nodes - point, axis=1)))
    corners = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1), (0, -1), (1, 0), (0, 1), (-1, 0)], dtype=float)
    out = []
    for e in np.flatnonzero((elements == node).any(axis=1)):
        a = int(np.flatnonzero(elements[e] == node)[0])
        _, dN = fem.q8_shape(*corners[a])
        X = nodes[elements[e]]
        dNdx = dN @ np.linalg.inv(dN.T @ X).T
        ue = u.reshape(-1, 2)[elements[e]]
        grad = ue.T @ dNdx  # du_i/dx_j
        eps = np.array([grad[0, 0], grad[1, 1], grad[0, 1] + grad[1, 0]])
        out.append(C @ eps)
    return np.mean(out, axis=0)


def kirsch_factor(spec, C, n_radial=None, n_theta=None):
    """``sigma_xx`` at the hole edge on ``x = 0`` over the remote mean stress ``F / W``."""
    nodes, elements, u, F = run_elastic_plate(spec, C, 1.0, n_radial, n_theta)
    s = hole_edge_stress(nodes, elements, u, C, (0.0, spec.radius))
    return float(s[0] / (F / spec.width))


# ---------------------------------------------------------------------------
# comparison metrics


def damage_location_ok(nodes, elements, omega, spec, max_angle=30.0):
    """Whether the most damaged element sits at the hole edge on the transverse ligament.

    The ligament is the symmetry line ``x = 0`` through the hole edge point
    ``(0, R)``. An element qualifies when its centroid lies within
    ``max_angle`` degrees of that line and within one unit cell of the hole
    edge, the resolution of the two-scale model. Ties at the maximum pass
    if any tied element qualifies; without any damage the answer is False.
    """
    omega = np.asarray(omega, dtype=float)
    if omega.max() <= 0.0:
        return False
    top = np.flatnonzero(omega >= omega.max() * (1.0 - 1e-9))
    cent = nodes[elements[top, :4]].mean(axis=1)
    angle = np.degrees(np.arctan2(cent[:, 0], cent[:, 1]))
    gap = np.hypot(cent[:, 0], cent[:, 1]) - spec.radius
    return bool(np.any((angle <= max_angle) & (gap <= spec.cell_size)))


__all__ = ["PlateSpec", "plate_mesh", "plate_dns_mesh", "plate_constraints", "RomMaterial",
           "ElasticMaterial", "MacroResult", "MacroDivergenceError", "run_macro", "run_plate_dns",
           "run_elastic_plate", "kirsch_factor", "hole_edge_stress", "damage_location_ok",
           "FIBER", "MATRIX"]
