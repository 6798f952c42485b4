"""Plane-strain linear finite elements on periodic cells.

Voigt order is (11, 22, 12). Strain vectors carry engineering shear
``gamma_12 = 2 eps_12``; stress vectors carry ``sigma_12``. The elastic
matrix therefore has ``G`` (not ``2G``) in its shear slot.
"""
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _accel
from ._accel import njit
from .geometry import resolve_periodic

GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)
GAUSS3 = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
GAUSS3_W = np.array([5.0, 8.0, 5.0]) / 9.0


class SolverError(RuntimeError):
    """Singular or non-convergent system."""


def plane_strain_matrix(E, nu):
    """3x3 plane-strain stiffness in engineering-shear Voigt notation."""
    if E <= 0 or not -1.0 < nu < 0.5:
        raise ValueError(f"inadmissible elastic constants E={E}, nu={nu}")
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    G = E / (2 * (1 + nu))
    return np.array([[lam + 2 * G, lam, 0.0], [lam, lam + 2 * G, 0.0], [0.0, 0.0, G]])


def strain_tensor(v):
    """Voigt strain (engineering shear) -> 2x2 tensor."""
    return np.array([[v[0], 0.5 * v[2]], [0.5 * v[2], v[1]]])


# ---------------------------------------------------------------------------
# shape functions


def q4_gauss():
    xi, eta = np.meshgrid(GAUSS2, GAUSS2, indexing="xy")
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    return pts, np.ones(4)


def q4_shape(xi, eta):
    """Bilinear shape functions and natural derivatives, shape (4,), (4, 2)."""
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    N = 0.25 * (1 + sx * xi) * (1 + sy * eta)
    dN = np.column_stack([0.25 * sx * (1 + sy * eta), 0.25 * sy * (1 + sx * xi)])
    return N, dN


def q8_gauss():
    xi, eta = np.meshgrid(GAUSS3, GAUSS3, indexing="xy")
    wx, wy = np.meshgrid(GAUSS3_W, GAUSS3_W, indexing="xy")
    return np.column_stack([xi.ravel(), eta.ravel()]), (wx * wy).ravel()


def q8_shape(xi, eta):
    """Serendipity Q8: corners 0-3 counter-clockwise, then mid-sides 4-7."""
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    N = np.empty(8)
    dN = np.empty((8, 2))
    N[:4] = 0.25 * (1 + sx * xi) * (1 + sy * eta) * (sx * xi + sy * eta - 1)
    dN[:4, 0] = 0.25 * sx * (1 + sy * eta) * (2 * sx * xi + sy * eta)
    dN[:4, 1] = 0.25 * sy * (1 + sx * xi) * (sx * xi + 2 * sy * eta)
    # mid-sides: 4 (eta=-1), 5 (xi=+1), 6 (eta=+1), 7 (xi=-1)
    N[4] = 0.5 * (1 - xi ** 2) * (1 - eta)
    N[6] = 0.5 * (1 - xi ** 2) * (1 + eta)
    N[5] = 0.5 * (1 + xi) * (1 - eta ** 2)
    N[7] = 0.5 * (1 - xi) * (1 - eta ** 2)
    dN[4] = (-xi * (1 - eta), -0.5 * (1 - xi ** 2))
    dN[6] = (-xi * (1 + eta), 0.5 * (1 - xi ** 2))
    dN[5] = (0.5 * (1 - eta ** 2), -eta * (1 + xi))
    dN[7] = (-0.5 * (1 - eta ** 2), -eta * (1 - xi))
    return N, dN


def b_matrices(coords, kind="q4"):
    """Strain-displacement matrices for a batch of elements.

    Parameters
    ----------
    coords : ndarray (n_elem, n_en, 2)
    kind : {"q4", "q8"}

    Returns
    -------
    B : ndarray (n_elem, n_gp, 3, 2 * n_en)
    wdet : ndarray (n_elem, n_gp)
        Quadrature weight times Jacobian determinant.
    """
    coords = np.asarray(coords, dtype=float)
    if kind == "q4":
        pts, w = q4_gauss()
        shape = q4_shape
    else:
        pts, w = q8_gauss()
        shape = q8_shape
    dN_nat = np.array([shape(x, e)[1] for x, e in pts])  # (ngp, nen, 2)
    J = np.einsum("gai,eaj->egij", dN_nat, coords)  # J[i, j] = d x_j / d xi_i
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if (det <= 0).any():
        bad = np.unique(np.nonzero(det <= 0)[0])
        raise ValueError(f"non-positive Jacobian in element(s) {bad[:10].tolist()}")
    Jinv = np.empty_like(J)
    Jinv[..., 0, 0] = J[..., 1, 1] / det
    Jinv[..., 1, 1] = J[..., 0, 0] / det
    Jinv[..., 0, 1] = -J[..., 0, 1] / det
    Jinv[..., 1, 0] = -J[..., 1, 0] / det
    dNdx = np.einsum("egij,gaj->egai", Jinv, dN_nat)  # (ne, ngp, nen, 2)
    ne, ngp, nen, _ = dNdx.shape
    B = np.zeros((ne, ngp, 3, 2 * nen))
    B[:, :, 0, 0::2] = dNdx[..., 0]
    B[:, :, 1, 1::2] = dNdx[..., 1]
    B[:, :, 2, 0::2] = dNdx[..., 1]
    B[:, :, 2, 1::2] = dNdx[..., 0]
    return B, det * w


def element_stiffness(coords, C, kind="q4"):
    """Stiffness of one element (2*n_en square) for a constant material matrix."""
    B, wdet = b_matrices(np.asarray(coords, dtype=float)[None], kind)
    return np.einsum("gki,kl,glj,g->ij", B[0], C, B[0], wdet[0])


# ---------------------------------------------------------------------------
# batched element tangents (hot path of the nonlinear solvers)


def _tangents_numpy(B, D, wdet):
    return np.einsum("egki,egkl,eglj,eg->eij", B, D, B, wdet, optimize=True)


@njit
def _tangents_numba(B, D, wdet):
    ne, ngp, _, nd = B.shape
    K = np.zeros((ne, nd, nd))
    DB = np.empty((3, nd))
    for e in range(ne):
        for g in range(ngp):
            w = wdet[e, g]
            for k in range(3):
                for j in range(nd):
                    s = 0.0
                    for l in range(3):
                        s += D[e, g, k, l] * B[e, g, l, j]
                    DB[k, j] = s * w
            for i in range(nd):
                for j in range(i, nd):
                    s = 0.0
                    for k in range(3):
                        s += B[e, g, k, i] * DB[k, j]
                    K[e, i, j] += s
        for i in range(nd):
            for j in range(i):
                K[e, i, j] = K[e, j, i]
    return K


def _internal_numpy(B, sig, wdet):
    return np.einsum("egki,egk,eg->ei", B, sig, wdet)


@njit
def _internal_numba(B, sig, wdet):
    ne, ngp, _, nd = B.shape
    f = np.zeros((ne, nd))
    for e in range(ne):
        for g in range(ngp):
            w = wdet[e, g]
            for i in range(nd):
                f[e, i] += (B[e, g, 0, i] * sig[e, g, 0] + B[e, g, 1, i] * sig[e, g, 1]
                            + B[e, g, 2, i] * sig[e, g, 2]) * w
    return f


def element_tangents(B, D, wdet):
    """``K_e = sum_g B^T D B w`` for per-Gauss-point ``D`` (ne, ngp, 3, 3)."""
    if _accel.USE_NUMBA:
        return _tangents_numba(B, np.ascontiguousarray(D), wdet)
    return _tangents_numpy(B, D, wdet)


def element_forces(B, sig, wdet):
    """``f_e = sum_g B^T sigma w`` for per-Gauss-point stress (ne, ngp, 3)."""
    if _accel.USE_NUMBA:
        return _internal_numba(B, np.ascontiguousarray(sig), wdet)
    return _internal_numpy(B, sig, wdet)


def element_dofs(elements):
    elements = np.asarray(elements)
    dofs = np.empty((len(elements), 2 * elements.shape[1]), dtype=np.int64)
    dofs[:, 0::2] = 2 * elements
    dofs[:, 1::2] = 2 * elements + 1
    return dofs


class Assembler:
    """Sparse assembly with a fixed connectivity pattern."""

    def __init__(self, elements, n_nodes):
        self.dofs = element_dofs(elements)
        self.n_dof = 2 * n_nodes
        nd = self.dofs.shape[1]
        rows = np.repeat(self.dofs, nd, axis=1).ravel()
        cols = np.tile(self.dofs, (1, nd)).ravel()
        # CSR pattern and the scatter map from element entries into it
        keys, self._slot = np.unique(rows * self.n_dof + cols, return_inverse=True)
        r, c = np.divmod(keys, self.n_dof)
        self._indices = c.astype(np.int32)
        self._indptr = np.searchsorted(r, np.arange(self.n_dof + 1)).astype(np.int32)
        self._nnz = len(keys)

    def matrix(self, Ke):
        data = np.bincount(self._slot, weights=Ke.ravel(), minlength=self._nnz)
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(self.n_dof, self.n_dof))

    def vector(self, fe):
        return np.bincount(self.dofs.ravel(), weights=fe.ravel(), minlength=self.n_dof)

    def gather(self, u):
        return u[self.dofs]


# ---------------------------------------------------------------------------
# constraint handling by elimination


class DofMap:
    """``u = u_prescribed + T a`` with ``a`` the independent dofs.

    Built either from periodic ties (fluctuation shares its representative's
    value, one representative anchored) or from Dirichlet dofs.
    """

    def __init__(self, T, n_dof):
        self.T = T.tocsr()
        self.Tt = self.T.T.tocsr()
        self.n_dof = n_dof
        self.n_free = T.shape[1]

    @classmethod
    def periodic(cls, mesh, anchor=0):
        rep, offset = resolve_periodic(mesh)
        reps = np.unique(rep)
        anchor_rep = rep[anchor]
        reps = reps[reps != anchor_rep]
        col_of = np.full(mesh.n_nodes, -1, dtype=np.int64)
        col_of[reps] = np.arange(len(reps))
        node_col = col_of[rep]
        keep = node_col >= 0
        nodes = np.flatnonzero(keep)
        rows = np.concatenate([2 * nodes, 2 * nodes + 1])
        cols = np.concatenate([2 * node_col[nodes], 2 * node_col[nodes] + 1])
        T = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(2 * mesh.n_nodes, 2 * len(reps)))
        dm = cls(T, 2 * mesh.n_nodes)
        dm.rep = rep
        dm.offset = offset
        return dm

    @classmethod
    def dirichlet(cls, n_dof, fixed):
        fixed = np.unique(np.asarray(fixed, dtype=np.int64))
        free = np.setdiff1d(np.arange(n_dof), fixed)
        T = sp.csr_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(n_dof, len(free)))
        dm = cls(T, n_dof)
        dm.free = free
        dm.fixed = fixed
        return dm

    def expand(self, a, u_prescribed=None):
        u = self.T @ a
        if u_prescribed is not None:
            u = u + u_prescribed
        return u

    def reduce_matrix(self, K):
        return (self.Tt @ K @ self.T).tocsc()

    def reduce_vector(self, f):
        return self.Tt @ f


def affine_displacement(nodes, macro_strain):
    """``u = eps_bar . y`` for a Voigt macro strain, flattened (2 n_nodes,)."""
    eps = strain_tensor(macro_strain)
    return (np.asarray(nodes) @ eps.T).ravel()


def factorize(Kr):
    """Sparse LU of the reduced (SPD) matrix; raises on singularity."""
    try:
        lu = spla.splu(sp.csc_matrix(Kr))
    except RuntimeError as exc:
        raise SolverError(f"singular system: {exc}") from exc
    diag = np.abs(lu.U.diagonal())
    if diag.min() <= 1e-13 * diag.max():
        raise SolverError("singular system (insufficient constraints)")
    return lu


def solve(Kr, rhs, lu=None):
    """Direct solve of the reduced system with a residual check."""
    lu = lu if lu is not None else factorize(Kr)
    x = lu.solve(np.asarray(rhs, dtype=float))
    res = np.linalg.norm(Kr @ x - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and res > 1e-10 * scale:
        raise SolverError(f"residual {res:.3e} exceeds 1e-10 of load norm {scale:.3e}")
    return x


# ---------------------------------------------------------------------------
# linear periodic cell


class PeriodicCell:
    """Linear elastic periodic cell with a factorized reduced stiffness.

    Parameters
    ----------
    mesh : RveMesh
    C_phase : sequence of 3x3
        Elastic matrix per phase index.
    """

    def __init__(self, mesh, C_phase):
        self.mesh = mesh
        self.C_elem = np.asarray([C_phase[p] for p in mesh.phase], dtype=float)
        self.B, self.wdet = b_matrices(mesh.element_coords(), "q4")
        self.assembler = Assembler(mesh.elements, mesh.n_nodes)
        D = np.broadcast_to(self.C_elem[:, None], self.B.shape[:2] + (3, 3))
        self.K = self.assembler.matrix(element_tangents(self.B, D, self.wdet))
        self.dofmap = DofMap.periodic(mesh)
        self.Kr = self.dofmap.reduce_matrix(self.K)
        self.lu = factorize(self.Kr)

    def solve(self, macro_strain=(0.0, 0.0, 0.0), f_extra=None):
        """Total displacement for a macro strain plus optional nodal load."""
        u_aff = affine_displacement(self.mesh.nodes, macro_strain)
        rhs = -self.dofmap.reduce_vector(self.K @ u_aff)
        if f_extra is not None:
            rhs = rhs + self.dofmap.reduce_vector(f_extra)
        a = solve(self.Kr, rhs, self.lu)
        return self.dofmap.expand(a, u_aff)

    def gauss_strains(self, u):
        ue = self.assembler.gather(u)
        return np.einsum("egij,ej->egi", self.B, ue)

    def eigenstrain_load(self, beta, mu):
        return eigenstrain_load(self.mesh, beta, mu, self.C_elem, self.B, self.wdet, self.assembler)

    def partition_average_strain(self, u):
        return partition_average(self.mesh, self.gauss_strains(u), self.wdet)


def eigenstrain_load(mesh, beta, mu, C_elem, B=None, wdet=None, assembler=None):
    """Nodal load ``sum_{e in beta} int B^T C mu`` of a uniform partition eigenstrain."""
    if beta < 0 or beta >= mesh.n_partitions:
        raise ValueError(f"partition {beta} does not exist")
    if B is None:
        B, wdet = b_matrices(mesh.element_coords(), "q4")
    if assembler is None:
        assembler = Assembler(mesh.elements, mesh.n_nodes)
    sel = mesh.partition == beta
    sig = np.einsum("eij,j->ei", C_elem, np.asarray(mu, dtype=float))
    fe = np.einsum("egki,ek,eg->ei", B, sig, wdet) * sel[:, None]
    return assembler.vector(fe)


def partition_average(mesh, field, wdet):
    """Volume average per partition of a Gauss-point field (ne, ngp, k)."""
    vol = np.bincount(mesh.partition, weights=wdet.sum(axis=1), minlength=mesh.n_partitions)
    elem = np.einsum("egi,eg->ei", field, wdet)
    out = np.zeros((mesh.n_partitions, field.shape[-1]))
    np.add.at(out, mesh.partition, elem)
    return out / vol[:, None]


def volume_average(field, wdet):
    return np.einsum("egi,eg->i", field, wdet) / wdet.sum()
