"""Coefficient tensors of the reduced-order model.

Two families of periodic cell problems are solved against one factorized
stiffness:

* ``E[b]``: column ``j`` is the partition-``b`` average strain under unit
  macro strain ``j`` and zero eigenstrain.
* ``S[a, b]``: column ``j`` is the partition-``b`` average total strain
  under zero macro strain and unit eigenstrain ``j`` applied in partition
  ``a`` (source ``a``, receiver ``b``).

From those, ``Lbar = sum_b c_b L_b E_b`` and
``Mbar[a] = sum_b c_b L_b (S[a, b] - delta_ab I)`` so that

    sigma_bar = Lbar eps_bar + sum_a Mbar[a] mu_a
              = sum_b c_b L_b (eps_b - mu_b).
"""
from dataclasses import dataclass, field
import os
import tempfile

import numpy as np

from . import fem
from .geometry import partition_volume_fractions

I3 = np.eye(3)


def phase_matrices(materials):
    """Elastic 3x3 per phase from materials or raw matrices."""
    out = []
    for m in materials:
        if hasattr(m, "elastic_matrix"):
            out.append(m.elastic_matrix())
        else:
            out.append(np.asarray(m, dtype=float).reshape(3, 3))
    return out


@dataclass
class CoefficientSet:
    """Per-partition coefficient tensors of one partitioned cell.

    Attributes
    ----------
    scheme : str
    c : ndarray (M,)
        Volume fractions.
    E : ndarray (M, 3, 3)
    S : ndarray (M, M, 3, 3)
        ``S[a, b]``: source partition ``a``, receiver ``b``.
    L : ndarray (M, 3, 3)
        Elastic matrix of each partition's phase.
    phase : ndarray (M,)
    names : tuple of str
    Lbar, Mbar : ndarray
        Filled in by :func:`homogenized_moduli` if not given.
    """

    scheme: str
    c: np.ndarray
    E: np.ndarray
    S: np.ndarray
    L: np.ndarray
    phase: np.ndarray
    names: tuple = ()
    Lbar: np.ndarray = None
    Mbar: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.Lbar is None or self.Mbar is None:
            self.Lbar, self.Mbar = homogenized_moduli(self.c, self.E, self.S, self.L)
        if not self.names:
            self.names = tuple(f"P{b + 1}" for b in range(self.n_partitions))

    @property
    def n_partitions(self):
        return len(self.c)

    def macro_stress(self, eps_bar, mu):
        """``Lbar eps_bar + sum_a Mbar[a] mu[a]``."""
        return self.Lbar @ eps_bar + np.einsum("aij,aj->i", self.Mbar, mu)

    def macro_stress_average(self, eps, mu):
        """Volume-average form ``sum_b c_b L_b (eps_b - mu_b)``."""
        return np.einsum("b,bij,bj->i", self.c, self.L, eps - mu)

    def partition_strains(self, eps_bar, mu):
        """Partition strains from macro strain and eigenstrains (linear superposition)."""
        return np.einsum("bij,j->bi", self.E, eps_bar) + np.einsum("abij,aj->bi", self.S, mu)

    def identity_residuals(self):
        """Max entrywise residuals of the three exact identities."""
        r_e = np.abs(np.einsum("b,bij->ij", self.c, self.E) - I3).max()
        r_s = np.abs(self.S.sum(axis=0) - (I3 - self.E)).max()
        r_m = np.abs(self.Mbar.sum(axis=0) + self.Lbar).max()
        scale = max(np.abs(self.Lbar).max(), 1.0)
        return {"average_E": float(r_e), "dvorak_S": float(r_s), "sum_Mbar": float(r_m / scale)}


def homogenized_moduli(c, E, S, L):
    c = np.asarray(c)
    Lbar = np.einsum("b,bij,bjk->ik", c, L, E)
    M = len(c)
    Mbar = np.empty((M, 3, 3))
    for a in range(M):
        Mbar[a] = np.einsum("b,bij,bjk->ik", c, L, S[a] - I3 * (np.arange(M) == a)[:, None, None])
    return Lbar, Mbar


def compute_elastic_coefficients(mesh, materials, cell=None):
    """``E[b]`` (M, 3, 3) from three unit macro-strain cases."""
    cell = cell or fem.PeriodicCell(mesh, phase_matrices(materials))
    E = np.empty((mesh.n_partitions, 3, 3))
    for j in range(3):
        u = cell.solve(I3[j])
        E[:, :, j] = cell.partition_average_strain(u)
    return E


def compute_eigenstrain_coefficients(mesh, materials, cell=None):
    """``S[a, b]`` (M, M, 3, 3) from ``3 M`` unit eigenstrain cases.

    The eigenstrain enters as the nodal load ``int B^T C mu`` over the source
    partition; the reported strain is the total strain (no eigenstrain
    subtracted).
    """
    cell = cell or fem.PeriodicCell(mesh, phase_matrices(materials))
    M = mesh.n_partitions
    loads = np.column_stack([
        cell.dofmap.reduce_vector(cell.eigenstrain_load(a, I3[j]))
        for a in range(M) for j in range(3)
    ])
    A = cell.lu.solve(loads)
    res = np.linalg.norm(cell.Kr @ A - loads, axis=0)
    scale = np.linalg.norm(loads, axis=0)
    if (res > 1e-10 * np.maximum(scale, 1e-300)).any():
        raise fem.SolverError("eigenstrain load cases failed the residual check")
    S = np.empty((M, M, 3, 3))
    for k in range(3 * M):
        a, j = divmod(k, 3)
        u = cell.dofmap.expand(A[:, k])
        S[a, :, :, j] = cell.partition_average_strain(u)
    return S


def compute_coefficients(mesh, materials):
    """Full :class:`CoefficientSet` of a partitioned cell."""
    Cs = phase_matrices(materials)
    cell = fem.PeriodicCell(mesh, Cs)
    E = compute_elastic_coefficients(mesh, Cs, cell)
    S = compute_eigenstrain_coefficients(mesh, Cs, cell)
    c = partition_volume_fractions(mesh)
    phase = mesh.partition_phase()
    L = np.array([Cs[p] for p in phase])
    return CoefficientSet(mesh.scheme, c, E, S, L, phase, tuple(mesh.partition_names))


# ---------------------------------------------------------------------------
# text artifact


def _block(label, A):
    rows = [" ".join(f"{v:.17g}" for v in r) for r in A]
    return [label] + rows


def write_coefficients(cs, path):
    """Write a coefficient file; every float at 17 significant digits."""
    M = cs.n_partitions
    lines = ["# romaeh coefficient set", f"SCHEME {cs.scheme}", f"M {M}",
             "C " + " ".join(f"{v:.17g}" for v in cs.c),
             "PHASE " + " ".join(str(int(p)) for p in cs.phase),
             "NAMES " + " ".join(cs.names)]
    for b in range(M):
        lines += _block(f"L {b + 1}", cs.L[b])
    for b in range(M):
        lines += _block(f"E {b + 1}", cs.E[b])
    for a in range(M):
        for b in range(M):
            lines += _block(f"S {a + 1} {b + 1}", cs.S[a, b])
    lines += _block("LBAR", cs.Lbar)
    for a in range(M):
        lines += _block(f"MBAR {a + 1}", cs.Mbar[a])
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_coefficients(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    head = {}
    i = 0
    while i < len(lines) and lines[i].split()[0] in ("SCHEME", "M", "C", "PHASE", "NAMES"):
        key, _, rest = lines[i].partition(" ")
        head[key] = rest
        i += 1
    try:
        M = int(head["M"])
        c = np.array(head["C"].split(), dtype=float)
        phase = np.array(head["PHASE"].split(), dtype=int)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed coefficient header") from exc
    blocks = {}
    while i < len(lines):
        label = tuple(lines[i].split())
        try:
            blocks[label] = np.array([lines[i + k].split() for k in (1, 2, 3)], dtype=float)
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}: malformed block {' '.join(label)}") from exc
        i += 4

    def get(*label):
        key = tuple(str(x) for x in label)
        if key not in blocks:
            raise ValueError(f"{path}: missing block {' '.join(key)}")
        return blocks[key]

    L = np.array([get("L", b + 1) for b in range(M)])
    E = np.array([get("E", b + 1) for b in range(M)])
    S = np.array([[get("S", a + 1, b + 1) for b in range(M)] for a in range(M)])
    Lbar = get("LBAR")
    Mbar = np.array([get("MBAR", a + 1) for a in range(M)])
    names = tuple(head.get("NAMES", "").split())
    return CoefficientSet(head.get("SCHEME", "custom"), c, E, S, L, phase, names, Lbar, Mbar)


def atomic_write_text(path, text):
    """Write through a temporary file so a failure never leaves a partial file."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# partition diagnostics


def partition_average_stress(mesh, materials, macro_strain):
    """Per-partition average stress of the elastic cell under a macro strain."""
    Cs = phase_matrices(materials)
    cell = fem.PeriodicCell(mesh, Cs)
    eps = cell.gauss_strains(cell.solve(macro_strain))
    sig = np.einsum("eij,egj->egi", cell.C_elem, eps)
    return fem.partition_average(mesh, sig, cell.wdet)


def partition_diagnostics(mesh_a, mesh_b, materials, rtol=1e-6):
    """Compare partition-average stresses of two nested schemes.

    Scheme B is non-informative when each of its partitions reproduces the
    average of its parent partition in scheme A for both unit tension and
    unit shear.

    Returns
    -------
    dict
        ``averages_a``/``averages_b`` per load case, ``parent`` map (or
        None), ``comparable`` flag, ``max_deviation`` and
        ``non_informative`` (None when not comparable).
    """
    from .geometry import parent_map

    cases = {"tension": np.array([1.0, 0.0, 0.0]), "shear": np.array([0.0, 0.0, 1.0])}
    avg_a = {k: partition_average_stress(mesh_a, materials, v) for k, v in cases.items()}
    avg_b = {k: partition_average_stress(mesh_b, materials, v) for k, v in cases.items()}
    parent = parent_map(mesh_a, mesh_b)
    report = {"averages_a": avg_a, "averages_b": avg_b, "parent": parent,
              "comparable": parent is not None, "max_deviation": None, "non_informative": None}
    if parent is None:
        return report
    dev = 0.0
    for k in cases:
        ref = avg_a[k][parent]
        scale = np.abs(avg_a[k]).max()
        dev = max(dev, float(np.abs(avg_b[k] - ref).max() / scale))
    report["max_deviation"] = dev
    report["non_informative"] = dev <= rtol
    return report
