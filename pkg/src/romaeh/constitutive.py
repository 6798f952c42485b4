"""Coupled damage-plasticity point model.

Effective-stress von Mises plasticity with linear isotropic hardening is
resolved first (3D return map with ``eps_33 = 0``), then an exponential
damage law driven by the maximum principal strain scales the effective
stress: ``sigma = (1 - omega) sigma_eff``.

Plastic strain is carried as four components ``(11, 22, 33, gamma_12)``
with engineering shear.

The hot path is :func:`update_batch`, which advances many points at once
with either a numba kernel or a vectorized numpy implementation.
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import _accel
from ._accel import njit
from .fem import plane_strain_matrix

OMEGA_MAX = 1.0 - 1e-9

# parameter vector layout shared by the kernels
P_E, P_NU, P_SY, P_H, P_KDF, P_M, P_PLAST, P_DAMAGE = range(8)
N_PARAM = 8


@dataclass(frozen=True)
class PhaseMaterial:
    """Elastic, plastic and damage constants of one phase.

    Parameters
    ----------
    E : float
        Young's modulus [MPa].
    nu : float
        Poisson ratio.
    sigma_y0 : float
        Initial yield stress [MPa].
    H : float
        Linear hardening modulus [MPa].
    kappa_df : float
        Damage initiation strain.
    m : float
        Softening exponent.
    G_F : float or None
        Fracture energy [N/mm], used by crack-band calibration.
    plasticity, damage : bool
    """

    E: float
    nu: float
    sigma_y0: float = 1e30
    H: float = 0.0
    kappa_df: float = 1e30
    m: float = 1.0
    G_F: float = None
    plasticity: bool = False
    damage: bool = False

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"E must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"nu must lie in (-1, 0.5), got {self.nu}")
        if self.plasticity and not self.sigma_y0 > 0:
            raise ValueError("sigma_y0 must be positive when plasticity is enabled")
        if self.H < 0:
            raise ValueError("hardening modulus must be non-negative")
        if self.damage and not (self.kappa_df > 0 and self.m > 0):
            raise ValueError("kappa_df and m must be positive when damage is enabled")
        if self.G_F is not None and not self.G_F > 0:
            raise ValueError("G_F must be positive")

    @property
    def G(self):
        return self.E / (2 * (1 + self.nu))

    @property
    def K(self):
        return self.E / (3 * (1 - 2 * self.nu))

    def elastic_matrix(self):
        return plane_strain_matrix(self.E, self.nu)

    def params(self):
        return np.array([self.E, self.nu, self.sigma_y0, self.H, self.kappa_df, self.m,
                         float(self.plasticity), float(self.damage)])

    def with_m(self, m):
        return replace(self, m=float(m))

    def elastic_only(self):
        return replace(self, plasticity=False, damage=False)


@dataclass
class PhaseState:
    """History variables of one material point."""

    eps_p: np.ndarray = field(default_factory=lambda: np.zeros(4))
    kappa_p: float = 0.0
    omega: float = 0.0
    kappa_d: float = 0.0

    def copy(self):
        return PhaseState(self.eps_p.copy(), self.kappa_p, self.omega, self.kappa_d)


# ---------------------------------------------------------------------------
# scalar building blocks


def damage_equivalent_strain(eps):
    """Macaulay-bracketed maximum principal strain and its gradient.

    The out-of-plane principal strain is zero in plane strain, so
    ``eps_D = max(e1, 0)`` with ``e1`` the larger in-plane eigenvalue.
    """
    a, b, g = (float(v) for v in eps)
    c = 0.5 * (a + b)
    d = 0.5 * (a - b)
    R = math.hypot(d, 0.5 * g)
    e1 = c + R
    if R > 0:
        phi = 0.5 * math.atan2(g, a - b)
        n1, n2 = math.cos(phi), math.sin(phi)
    else:
        n1 = n2 = math.sqrt(0.5)
    grad = np.array([n1 * n1, n2 * n2, n1 * n2]) if e1 > 0 else np.zeros(3)
    return max(e1, 0.0), grad


def damage_from_kappa(kappa, kappa_df, m):
    """Exponential damage law, zero up to the threshold, capped below one."""
    if kappa <= kappa_df:
        return 0.0
    w = 1.0 - math.exp((1.0 - (kappa / kappa_df) ** m) / m)
    return min(w, OMEGA_MAX)


def damage_rate(kappa, kappa_df, m):
    """``d omega / d kappa`` of :func:`damage_from_kappa`."""
    if kappa <= kappa_df:
        return 0.0
    w = 1.0 - math.exp((1.0 - (kappa / kappa_df) ** m) / m)
    if w >= OMEGA_MAX:
        return 0.0
    return (1.0 - w) * (kappa / kappa_df) ** (m - 1.0) / kappa_df


def damage_update(kappa_old, eps_d, material):
    """Return ``(omega, kappa_new)`` for an equivalent strain ``eps_d``."""
    if not material.damage:
        return 0.0, kappa_old
    kappa = max(kappa_old, eps_d, material.kappa_df)
    return damage_from_kappa(kappa, material.kappa_df, material.m), kappa


def plastic_return_map(eps, eps_p, kappa_p, material):
    """Radial return in effective-stress space.

    Returns
    -------
    sig_eff : ndarray (4,)
        ``(11, 22, 33, 12)`` effective stress.
    eps_p_new : ndarray (4,)
    kappa_p_new : float
    D : ndarray (3, 3)
        In-plane algorithmic tangent.
    """
    out = _point_numpy(np.asarray(eps, float)[None], np.asarray(eps_p, float)[None],
                       np.array([kappa_p]), np.zeros(1),
                       replace(material, damage=False).params()[None])
    return out[6][0], out[1][0], float(out[2][0]), out[5][0]


def integrate_point(eps, state, material):
    """Advance one point to total strain ``eps``.

    Returns
    -------
    sigma : ndarray (3,)
    new_state : PhaseState
    tangent : ndarray (3, 3)
        ``d sigma / d eps`` (algorithmic).
    """
    sig, ep, kp, kd, om, D, _ = update_batch(
        np.asarray(eps, float)[None], state.eps_p[None], np.array([state.kappa_p]),
        np.array([state.kappa_d]), material.params()[None])
    return sig[0], PhaseState(ep[0], float(kp[0]), float(om[0]), float(kd[0])), D[0]


def free_energy(eps, eps_p, omega, material):
    """``1/2 (1 - omega) eps_e : L : eps_e`` with the 3D elastic strain."""
    ee = np.array([eps[0], eps[1], 0.0, eps[2]]) - eps_p
    lam = material.E * material.nu / ((1 + material.nu) * (1 - 2 * material.nu))
    G = material.G
    tr = ee[0] + ee[1] + ee[2]
    w = 0.5 * lam * tr * tr + G * (ee[0] ** 2 + ee[1] ** 2 + ee[2] ** 2) + 0.5 * G * ee[3] ** 2
    return (1.0 - omega) * w


def free_energy_batch(eps, eps_p, omega, params):
    """Vectorized :func:`free_energy` over ``n`` points with parameter rows."""
    eps = np.asarray(eps, dtype=float)
    ee = np.stack([eps[:, 0], eps[:, 1], np.zeros(len(eps)), eps[:, 2]], axis=1) - eps_p
    E, nu = params[:, P_E], params[:, P_NU]
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    G = E / (2 * (1 + nu))
    tr = ee[:, 0] + ee[:, 1] + ee[:, 2]
    w = 0.5 * lam * tr * tr + G * (ee[:, 0] ** 2 + ee[:, 1] ** 2 + ee[:, 2] ** 2) + 0.5 * G * ee[:, 3] ** 2
    return (1.0 - omega) * w


# ---------------------------------------------------------------------------
# kernels


@njit
def _point_kernel(eps, ep_old, kp_old, kd_old, prm, sig, ep_new, state, D, sig_eff):
    E = prm[0]
    nu = prm[1]
    sy0 = prm[2]
    H = prm[3]
    kdf = prm[4]
    m = prm[5]
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    G = E / (2.0 * (1.0 + nu))
    K = lam + 2.0 * G / 3.0

    # effective stress from the trial elastic strain
    e0 = eps[0] - ep_old[0]
    e1 = eps[1] - ep_old[1]
    e2 = -ep_old[2]
    e3 = eps[2] - ep_old[3]
    tr = e0 + e1 + e2
    p = K * tr
    s0 = 2.0 * G * (e0 - tr / 3.0)
    s1 = 2.0 * G * (e1 - tr / 3.0)
    s2 = 2.0 * G * (e2 - tr / 3.0)
    s3 = G * e3
    snorm = math.sqrt(s0 * s0 + s1 * s1 + s2 * s2 + 2.0 * s3 * s3)
    q = math.sqrt(1.5) * snorm
    kp = kp_old
    for i in range(4):
        ep_new[i] = ep_old[i]
    dgam = 0.0
    if prm[6] > 0.5 and q > 0.0:
        f = q - (sy0 + H * kp_old)
        if f > 0.0:
            dgam = f / (3.0 * G + H)
            c = 1.5 * dgam / q
            ep_new[0] += c * s0
            ep_new[1] += c * s1
            ep_new[2] += c * s2
            ep_new[3] += c * 2.0 * s3
            kp = kp_old + dgam
    # in-plane tangent from the 4-component form, rows/cols (0, 1, 3)
    Iv = (1.0, 1.0, 1.0, 0.5)
    one = (1.0, 1.0, 1.0, 0.0)
    if dgam > 0.0:
        theta = 1.0 - 3.0 * G * dgam / q
        thetab = 1.0 / (1.0 + H / (3.0 * G)) - (1.0 - theta)
        N = (s0 / snorm, s1 / snorm, s2 / snorm, s3 / snorm)
        s0 *= theta
        s1 *= theta
        s2 *= theta
        s3 *= theta
    else:
        theta = 1.0
        thetab = 0.0
        N = (0.0, 0.0, 0.0, 0.0)
    sig_eff[0] = s0 + p
    sig_eff[1] = s1 + p
    sig_eff[2] = s2 + p
    sig_eff[3] = s3
    rows = (0, 1, 3)
    for a in range(3):
        i = rows[a]
        for b in range(3):
            j = rows[b]
            d = K * one[i] * one[j] - 2.0 * G * theta * one[i] * one[j] / 3.0
            if i == j:
                d += 2.0 * G * theta * Iv[i]
            d -= 2.0 * G * thetab * N[i] * N[j]
            D[a, b] = d
    state[0] = kp

    # damage from the total in-plane strain
    omega = 0.0
    kd = kd_old
    g0 = 0.0
    g1 = 0.0
    g2 = 0.0
    if prm[7] > 0.5:
        a_ = eps[0]
        b_ = eps[1]
        g_ = eps[2]
        R = math.sqrt((0.5 * (a_ - b_)) ** 2 + (0.5 * g_) ** 2)
        eD = 0.5 * (a_ + b_) + R
        if eD < 0.0:
            eD = 0.0
        kd = kd_old
        if eD > kd:
            kd = eD
        if kdf > kd:
            kd = kdf
        if kd > kdf:
            omega = 1.0 - math.exp((1.0 - (kd / kdf) ** m) / m)
            if omega >= 1.0 - 1e-9:
                omega = 1.0 - 1e-9
            elif eD > kd_old and eD > kdf:
                dw = (1.0 - omega) * (kd / kdf) ** (m - 1.0) / kdf
                if R > 0.0:
                    phi = 0.5 * math.atan2(g_, a_ - b_)
                    n1 = math.cos(phi)
                    n2 = math.sin(phi)
                else:
                    n1 = math.sqrt(0.5)
                    n2 = n1
                g0 = dw * n1 * n1
                g1 = dw * n2 * n2
                g2 = dw * n1 * n2
    state[1] = kd
    state[2] = omega
    se = (sig_eff[0], sig_eff[1], sig_eff[3])
    gw = (g0, g1, g2)
    for a in range(3):
        sig[a] = (1.0 - omega) * se[a]
        for b in range(3):
            D[a, b] = (1.0 - omega) * D[a, b] - se[a] * gw[b]


@njit
def _update_numba(eps, ep, kp, kd, prm):
    n = eps.shape[0]
    sig = np.empty((n, 3))
    ep_new = np.empty((n, 4))
    state = np.empty((n, 3))
    D = np.empty((n, 3, 3))
    sig_eff = np.empty((n, 4))
    for k in range(n):
        _point_kernel(eps[k], ep[k], kp[k], kd[k], prm[k], sig[k], ep_new[k], state[k], D[k], sig_eff[k])
    return sig, ep_new, state[:, 0].copy(), state[:, 1].copy(), state[:, 2].copy(), D, sig_eff


def _point_numpy(eps, ep_old, kp_old, kd_old, prm):
    """Vectorized twin of the numba kernel; returns the same tuple plus ``sig_eff``."""
    E, nu, sy0, H, kdf, m = (prm[:, i] for i in range(6))
    plast = prm[:, P_PLAST] > 0.5
    dmg = prm[:, P_DAMAGE] > 0.5
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    G = E / (2 * (1 + nu))
    K = lam + 2 * G / 3
    n = len(eps)
    ee = np.column_stack([eps[:, 0], eps[:, 1], np.zeros(n), eps[:, 2]]) - ep_old
    tr = ee[:, :3].sum(axis=1)
    p = K * tr
    s = np.empty((n, 4))
    s[:, :3] = 2 * G[:, None] * (ee[:, :3] - tr[:, None] / 3)
    s[:, 3] = G * ee[:, 3]
    snorm = np.sqrt((s[:, :3] ** 2).sum(axis=1) + 2 * s[:, 3] ** 2)
    q = np.sqrt(1.5) * snorm
    f = q - (sy0 + H * kp_old)
    yld = plast & (q > 0) & (f > 0)
    dgam = np.where(yld, f / (3 * G + H), 0.0)
    qs = np.where(q > 0, q, 1.0)
    c = 1.5 * dgam / qs
    ep_new = ep_old + c[:, None] * s * np.array([1.0, 1.0, 1.0, 2.0])
    kp = kp_old + dgam
    theta = np.where(yld, 1 - 3 * G * dgam / qs, 1.0)
    thetab = np.where(yld, 1 / (1 + H / (3 * G)) - (1 - theta), 0.0)
    N = np.where(yld[:, None], s / np.where(snorm > 0, snorm, 1.0)[:, None], 0.0)
    s = s * theta[:, None]
    sig_eff = s.copy()
    sig_eff[:, :3] += p[:, None]
    sel = [0, 1, 3]
    one = np.array([1.0, 1.0, 0.0])
    Iv = np.diag([1.0, 1.0, 0.5])
    Nr = N[:, sel]
    D = (K[:, None, None] - 2 * G[:, None, None] * theta[:, None, None] / 3) * np.outer(one, one)
    D = D + 2 * (G * theta)[:, None, None] * Iv
    D = D - 2 * (G * thetab)[:, None, None] * np.einsum("ni,nj->nij", Nr, Nr)

    a, b, g = eps[:, 0], eps[:, 1], eps[:, 2]
    R = np.sqrt((0.5 * (a - b)) ** 2 + (0.5 * g) ** 2)
    eD = np.maximum(0.5 * (a + b) + R, 0.0)
    kd = np.where(dmg, np.maximum(np.maximum(kd_old, eD), kdf), kd_old)
    ratio = np.where(dmg, kd / np.where(dmg, kdf, 1.0), 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        omega = np.where(dmg & (kd > kdf), 1 - np.exp((1 - ratio ** m) / m), 0.0)
    capped = omega >= OMEGA_MAX
    omega = np.minimum(omega, OMEGA_MAX)
    loading = dmg & (kd > kdf) & ~capped & (eD > kd_old) & (eD > kdf)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        dw = np.where(loading, (1 - omega) * ratio ** (m - 1) / np.where(dmg, kdf, 1.0), 0.0)
    phi = 0.5 * np.arctan2(g, a - b)
    n1 = np.where(R > 0, np.cos(phi), np.sqrt(0.5))
    n2 = np.where(R > 0, np.sin(phi), np.sqrt(0.5))
    gw = dw[:, None] * np.column_stack([n1 * n1, n2 * n2, n1 * n2])
    se = sig_eff[:, sel]
    sig = (1 - omega)[:, None] * se
    D = (1 - omega)[:, None, None] * D - np.einsum("ni,nj->nij", se, gw)
    return sig, ep_new, kp, kd, omega, D, sig_eff


def update_batch(eps, eps_p, kappa_p, kappa_d, params):
    """Advance ``n`` points to total strains ``eps``.

    Parameters
    ----------
    eps : ndarray (n, 3)
    eps_p : ndarray (n, 4)
    kappa_p, kappa_d : ndarray (n,)
    params : ndarray (n, 8)
        Rows of :meth:`PhaseMaterial.params`.

    Returns
    -------
    sig (n, 3), eps_p (n, 4), kappa_p (n,), kappa_d (n,), omega (n,),
    D (n, 3, 3), sig_eff (n, 4)
    """
    args = [np.ascontiguousarray(x, dtype=float) for x in (eps, eps_p, kappa_p, kappa_d, params)]
    if _accel.USE_NUMBA:
        return _update_numba(*args)
    return _point_numpy(*args)
