"""Reduced-order material law at a macroscale integration point.

For a new macro strain the partition strains ``eps_b`` solve

    Psi_b = eps_b - E_b eps_bar - sum_a S[a, b] mu_a(eps_a) = 0,

with the eigenstrain ``mu = eps - L^-1 sigma(eps)`` taken from the point
constitutive update. Newton iterations use the block Jacobian
``J[b, g] = delta_bg I - S[g, b] A_g`` with ``A = I - L^-1 D``. The macro
stress is ``Lbar eps_bar + sum_a Mbar[a] mu_a`` and the macro tangent
follows from the converged Jacobian, ``d eps / d eps_bar = J^-1 [E]``.

Many points are advanced together by :meth:`RomModel.update`; the numba
kernel loops over points, the numpy fallback vectorizes across them.
"""
from dataclasses import dataclass, fields
import math

import numpy as np

from . import _accel
from ._accel import njit, prange
from .constitutive import OMEGA_MAX, _point_kernel, _point_numpy

I3 = np.eye(3)


class RomConvergenceError(RuntimeError):
    """Partition strain solve failed even at the smallest substep."""

    def __init__(self, msg, points=()):
        super().__init__(msg)
        self.points = tuple(points)


@dataclass
class RomState:
    """State of ``n`` integration points with ``M`` partitions each."""

    eps_bar: np.ndarray  # (n, 3)
    eps: np.ndarray  # (n, M, 3)
    mu: np.ndarray  # (n, M, 3)
    eps_p: np.ndarray  # (n, M, 4)
    kappa_p: np.ndarray  # (n, M)
    kappa_d: np.ndarray  # (n, M)
    omega: np.ndarray  # (n, M)
    sigma: np.ndarray  # (n, M, 3)
    sigma_bar: np.ndarray  # (n, 3)
    kappa_d_prev: np.ndarray  # (n, M), damage history one step back
    step: np.ndarray  # (n,), size of the last macro strain step

    @classmethod
    def zeros(cls, n, M):
        z = np.zeros
        return cls(z((n, 3)), z((n, M, 3)), z((n, M, 3)), z((n, M, 4)), z((n, M)), z((n, M)),
                   z((n, M)), z((n, M, 3)), z((n, 3)), z((n, M)), z(n))

    @property
    def n_points(self):
        return self.eps_bar.shape[0]

    def copy(self):
        return RomState(*(getattr(self, f.name).copy() for f in fields(self)))

    def take(self, idx):
        return RomState(*(getattr(self, f.name)[idx].copy() for f in fields(self)))

    def put(self, idx, other):
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)


@dataclass
class SolveReport:
    iterations: np.ndarray
    residual: np.ndarray
    substeps: np.ndarray
    converged: np.ndarray

    @property
    def ok(self):
        return bool(np.all(self.converged))


# ---------------------------------------------------------------------------
# kernels


@njit
def _explicit_damage(x, kd0, prm, om, sig, st, D):
    """Scale an undamaged update by a prescribed ``1 - om``; ``kappa_D`` stays implicit."""
    if prm[7] > 0.5:
        R = math.sqrt((0.5 * (x[0] - x[1])) ** 2 + (0.5 * x[2]) ** 2)
        st[1] = max(kd0, 0.5 * (x[0] + x[1]) + R, prm[4])
    else:
        st[1] = kd0
    st[2] = om
    for a in range(3):
        sig[a] *= 1.0 - om
        for b in range(3):
            D[a, b] *= 1.0 - om


@njit
def _rom_eval(x, ebar, ep0, kp0, kd0, S, E, Linv, prm, omx, sig, ep, st, D, mu, psi, sig_eff):
    M = x.shape[0]
    prm_u = np.empty(prm.shape[1])
    for b in range(M):
        if omx[b] >= 0.0:
            prm_u[:] = prm[b]
            prm_u[7] = 0.0
            _point_kernel(x[b], ep0[b], kp0[b], kd0[b], prm_u, sig[b], ep[b], st[b], D[b], sig_eff)
            _explicit_damage(x[b], kd0[b], prm[b], omx[b], sig[b], st[b], D[b])
        else:
            _point_kernel(x[b], ep0[b], kp0[b], kd0[b], prm[b], sig[b], ep[b], st[b], D[b], sig_eff)
        for i in range(3):
            s = x[b, i]
            for j in range(3):
                s -= Linv[b, i, j] * sig[b, j]
            mu[b, i] = s
    res = 0.0
    for b in range(M):
        for i in range(3):
            s = x[b, i]
            for j in range(3):
                s -= E[b, i, j] * ebar[j]
            for a in range(M):
                for j in range(3):
                    s -= S[a, b, i, j] * mu[a, j]
            psi[3 * b + i] = -s
            if abs(s) > res:
                res = abs(s)
    return res


@njit
def _rom_jacobian(S, Linv, D, A, J):
    M = D.shape[0]
    for g in range(M):
        for i in range(3):
            for j in range(3):
                s = -Linv[g, i, 0] * D[g, 0, j] - Linv[g, i, 1] * D[g, 1, j] - Linv[g, i, 2] * D[g, 2, j]
                if i == j:
                    s += 1.0
                A[g, i, j] = s
    for b in range(M):
        for g in range(M):
            for i in range(3):
                for j in range(3):
                    s = -(S[g, b, i, 0] * A[g, 0, j] + S[g, b, i, 1] * A[g, 1, j] + S[g, b, i, 2] * A[g, 2, j])
                    if b == g and i == j:
                        s += 1.0
                    J[3 * b + i, 3 * g + j] = s


@njit
def _rom_point(ebar, debar, eps0, ep0, kp0, kd0, S, E, Linv, prm, omx, c, tol, maxit, single,
               x, sig, ep, st, D, mu, Cbar, info):
    M = eps0.shape[0]
    n = 3 * M
    sig_eff = np.empty(4)
    psi = np.empty(n)
    J = np.empty((n, n))
    A = np.empty((M, 3, 3))
    # trial copies for the line search
    xt = np.empty((M, 3))
    sigt = np.empty((M, 3))
    ept = np.empty((M, 4))
    stt = np.empty((M, 3))
    Dt = np.empty((M, 3, 3))
    mut = np.empty((M, 3))
    psit = np.empty(n)
    for b in range(M):
        for i in range(3):
            s = eps0[b, i]
            if not single:
                for j in range(3):
                    s += E[b, i, j] * debar[j]
            x[b, i] = s
    info[0] = 0.0
    res = _rom_eval(x, ebar, ep0, kp0, kd0, S, E, Linv, prm, omx, sig, ep, st, D, mu, psi, sig_eff)
    it = 0
    while True:
        if res <= tol or (single and it == 1):
            info[0] = 1.0
        if info[0] > 0.5 or it >= maxit:
            break
        _rom_jacobian(S, Linv, D, A, J)
        dx = np.linalg.solve(J, psi)
        if not np.all(np.isfinite(dx)):
            break
        alpha = 1.0
        for ls in range(12):
            for b in range(M):
                for i in range(3):
                    xt[b, i] = x[b, i] + alpha * dx[3 * b + i]
            rt = _rom_eval(xt, ebar, ep0, kp0, kd0, S, E, Linv, prm, omx, sigt, ept, stt, Dt, mut, psit, sig_eff)
            if single or rt < (1.0 - 1e-4 * alpha) * res or rt <= tol:
                break
            alpha *= 0.5
        x[:] = xt
        sig[:] = sigt
        ep[:] = ept
        st[:] = stt
        D[:] = Dt
        mu[:] = mut
        psi[:] = psit
        res = rt
        it += 1
    info[1] = it
    info[2] = res
    # macro tangent from the Jacobian at the accepted state
    _rom_jacobian(S, Linv, D, A, J)
    rhs = np.empty((n, 3))
    for b in range(M):
        for i in range(3):
            for j in range(3):
                rhs[3 * b + i, j] = E[b, i, j]
    dx3 = np.linalg.solve(J, rhs)
    for i in range(3):
        for j in range(3):
            s = 0.0
            for b in range(M):
                for k in range(3):
                    s += c[b] * D[b, i, k] * dx3[3 * b + k, j]
            Cbar[i, j] = s


@njit(parallel=True)
def _rom_batch(ebar, debar, eps0, ep0, kp0, kd0, S, E, Linv, prm, omx, c, tol, maxit, single):
    npt, M = eps0.shape[0], eps0.shape[1]
    x = np.empty((npt, M, 3))
    sig = np.empty((npt, M, 3))
    ep = np.empty((npt, M, 4))
    st = np.empty((npt, M, 3))
    D = np.empty((npt, M, 3, 3))
    mu = np.empty((npt, M, 3))
    Cbar = np.empty((npt, 3, 3))
    info = np.empty((npt, 3))
    for p in prange(npt):
        _rom_point(ebar[p], debar[p], eps0[p], ep0[p], kp0[p], kd0[p], S, E, Linv, prm, omx[p], c,
                   tol[p], maxit, single, x[p], sig[p], ep[p], st[p], D[p], mu[p], Cbar[p], info[p])
    return x, sig, ep, st, D, mu, Cbar, info


def _jacobian_numpy(S, Linv, D):
    """``J[p] (3M, 3M)`` for per-point tangents ``D (n, M, 3, 3)``."""
    npt, M = D.shape[:2]
    A = I3 - np.einsum("gij,pgjk->pgik", Linv, D)
    blocks = -np.einsum("gbij,pgjk->pbgik", S, A)
    blocks[:, np.arange(M), np.arange(M)] += I3
    return blocks.transpose(0, 1, 3, 2, 4).reshape(npt, 3 * M, 3 * M)


def _rom_eval_numpy(x, ebar, ep0, kp0, kd0, S, E, Linv, prm, omx):
    npt, M = x.shape[:2]
    prm_all = np.array(np.broadcast_to(prm, (npt, M, prm.shape[-1])))
    expl = omx >= 0.0
    prm_all[expl, 7] = 0.0
    sig, ep, kp, kd, om, D, _ = _point_numpy(x.reshape(-1, 3), ep0.reshape(-1, 4), kp0.ravel(),
                                             kd0.ravel(), prm_all.reshape(-1, prm.shape[-1]))
    sig = sig.reshape(npt, M, 3)
    D = D.reshape(npt, M, 3, 3)
    kd = kd.reshape(npt, M)
    om = om.reshape(npt, M)
    if expl.any():
        # prescribed damage; kappa_D still follows the current strain
        damaging = expl & (np.broadcast_to(prm[:, 7], (npt, M)) > 0.5)
        eD = 0.5 * (x[..., 0] + x[..., 1]) + np.hypot(0.5 * (x[..., 0] - x[..., 1]), 0.5 * x[..., 2])
        kd = np.where(damaging, np.maximum(np.maximum(kd0, eD), prm[:, 4]), kd)
        om = np.where(expl, omx, om)
        f = np.where(expl, 1.0 - omx, 1.0)
        sig = sig * f[..., None]
        D = D * f[..., None, None]
    mu = x - np.einsum("bij,pbj->pbi", Linv, sig)
    psi = x - np.einsum("bij,pj->pbi", E, ebar) - np.einsum("abij,paj->pbi", S, mu)
    res = np.abs(psi).reshape(npt, -1).max(axis=1) if npt else np.zeros(0)
    st = np.stack([kp.reshape(npt, M), kd, om], axis=-1)
    return [x, sig, ep.reshape(npt, M, 4), st, D, mu, -psi.reshape(npt, -1)], res


def _rom_batch_numpy(ebar, debar, eps0, ep0, kp0, kd0, S, E, Linv, prm, omx, c, tol, maxit, single):
    npt, M = eps0.shape[:2]
    x = eps0.copy() if single else eps0 + np.einsum("bij,pj->pbi", E, debar)
    cur, res = _rom_eval_numpy(x, ebar, ep0, kp0, kd0, S, E, Linv, prm, omx)
    info = np.zeros((npt, 3))
    active = np.ones(npt, dtype=bool)
    it = 0
    while True:
        done = (res <= tol) | (single and it == 1)
        info[active & done, 0] = 1.0
        active &= ~done
        if not active.any() or it >= maxit:
            break
        idx = np.flatnonzero(active)
        J = _jacobian_numpy(S, Linv, cur[4][idx])
        dx = np.linalg.solve(J, cur[6][idx][..., None])[..., 0].reshape(-1, M, 3)
        finite = np.isfinite(dx).all(axis=(1, 2))
        idx, dx = idx[finite], dx[finite]
        active[np.flatnonzero(active)[~finite]] = False
        alpha = np.ones(len(idx))
        pending = np.arange(len(idx))
        for _ in range(12):
            sel = idx[pending]
            xt = cur[0][sel] + alpha[pending, None, None] * dx[pending]
            trial, rt = _rom_eval_numpy(xt, ebar[sel], ep0[sel], kp0[sel], kd0[sel], S, E, Linv, prm, omx[sel])
            ok = (rt < (1.0 - 1e-4 * alpha[pending]) * res[sel]) | (rt <= tol[sel])
            if single or _ == 11:
                ok[:] = True
            for k in range(7):
                cur[k][sel[ok]] = trial[k][ok]
            res[sel[ok]] = rt[ok]
            pending = pending[~ok]
            alpha[pending] *= 0.5
            if not len(pending):
                break
        it += 1
        info[idx, 1] = it
    info[:, 2] = res
    x, sig, ep, st, D, mu, _ = cur
    J = _jacobian_numpy(S, Linv, D)
    rhs = np.broadcast_to(E.reshape(3 * M, 3), (npt, 3 * M, 3))
    dedeb = np.linalg.solve(J, rhs).reshape(npt, M, 3, 3)
    Cbar = np.einsum("b,pbik,pbkj->pij", c, D, dedeb)
    return x, sig, ep, st, D, mu, Cbar, info


# ---------------------------------------------------------------------------
# model


class RomModel:
    """Reduced-order material law of one partitioned cell.

    Parameters
    ----------
    coeffs : CoefficientSet
    materials : sequence of PhaseMaterial
        One per partition (calibrated exponents already substituted).
    tol : float
        Residual tolerance relative to the increment norm.
    maxit : int
    single_pass : bool
        One linear predictor-corrector per step using start-of-step
        tangents, as in the printed step sequence, with no residual loop.
    min_substep : float
        Smallest substep as a fraction of the increment.
    """

    def __init__(self, coeffs, materials, tol=1e-8, maxit=25, single_pass=False, min_substep=1.0 / 64):
        if len(materials) != coeffs.n_partitions:
            raise ValueError("need one material per partition")
        if not tol > 0:
            raise ValueError("tolerance must be positive")
        self.coeffs = coeffs
        self.materials = list(materials)
        self.tol = float(tol)
        self.maxit = int(maxit)
        self.single_pass = bool(single_pass)
        self.min_substep = float(min_substep)
        self.M = coeffs.n_partitions
        self.S = np.ascontiguousarray(coeffs.S)
        self.E = np.ascontiguousarray(coeffs.E)
        self.Linv = np.linalg.inv(coeffs.L)
        self.prm = np.array([m.params() for m in self.materials])
        self.c = np.ascontiguousarray(coeffs.c, dtype=float)

    def new_state(self, n=1):
        return RomState.zeros(n, self.M)

    def _kernel(self, *args):
        if _accel.USE_NUMBA:
            return _rom_batch(*args)
        return _rom_batch_numpy(*args)

    def _try(self, state, ebar, ratio=None):
        debar = ebar - state.eps_bar
        scale = np.abs(debar).max(axis=1)
        tol = np.maximum(self.tol * scale, 1e-15 * np.maximum(np.abs(ebar).max(axis=1), 1e-300))
        omx = np.full(state.omega.shape, -1.0) if ratio is None else self._explicit_omega(state, ratio)
        x, sig, ep, st, D, mu, Cbar, info = self._kernel(
            np.ascontiguousarray(ebar), np.ascontiguousarray(debar), state.eps, state.eps_p,
            state.kappa_p, state.kappa_d, self.S, self.E, self.Linv, self.prm, omx, self.c, tol,
            self.maxit, self.single_pass)
        new = RomState(ebar.copy(), x, mu, ep, st[..., 0], st[..., 1], st[..., 2], sig,
                       ebar @ self.coeffs.Lbar.T + np.einsum("aij,paj->pi", self.coeffs.Mbar, mu),
                       state.kappa_d.copy(), np.linalg.norm(debar, axis=1))
        return new, Cbar, info

    def _explicit_omega(self, state, ratio):
        """Damage from ``kappa_D`` extrapolated over ``ratio`` times the last step."""
        ratio = np.broadcast_to(np.asarray(ratio, dtype=float), (state.n_points,))
        k = state.kappa_d + ratio[:, None] * (state.kappa_d - state.kappa_d_prev)
        kdf, m = self.prm[:, 4], self.prm[:, 5]
        om = -np.expm1((1.0 - np.maximum(k / kdf, 1.0) ** m) / m)
        om = np.maximum(np.minimum(om, OMEGA_MAX), state.omega)
        return np.ascontiguousarray(np.where(self.prm[:, 7] > 0.5, om, 0.0))

    def update(self, state, eps_bar_new, explicit_ratio=None):
        """Advance all points of ``state`` to ``eps_bar_new`` (n, 3).

        Points that fail are retried with 2, 4, ... substeps down to
        ``min_substep``. At that floor a substep with no implicit solution
        (a local snap-back between partitions) is taken with damage
        extrapolated from the previous step.

        Parameters
        ----------
        explicit_ratio : float, optional
            Take the whole step with damage extrapolated from the previous
            step, scaled by this ratio of step sizes (no substepping).

        Returns
        -------
        new_state : RomState
        tangent : ndarray (n, 3, 3)
        report : SolveReport

        Raises
        ------
        RomConvergenceError
            When some point fails at the substep floor.
        """
        ebar = np.atleast_2d(np.asarray(eps_bar_new, dtype=float))
        new, C, info = self._try(state, ebar, explicit_ratio)
        if explicit_ratio is not None:
            failed = np.flatnonzero(info[:, 0] < 0.5)
            if len(failed):
                raise RomConvergenceError(
                    f"explicit-damage solve failed at {len(failed)} point(s); worst residual "
                    f"{info[failed, 2].max():.3e}", failed)
            return new, C, SolveReport(info[:, 1].astype(int), info[:, 2], np.ones(len(ebar), dtype=int),
                                       np.ones(len(ebar), dtype=bool))
        subs = np.ones(len(ebar), dtype=int)
        failed = np.flatnonzero(info[:, 0] < 0.5)
        nsub = 2
        floor = round(1.0 / self.min_substep)
        while len(failed) and nsub <= floor:
            sub_state = state.take(failed)
            start = sub_state.eps_bar.copy()
            target = ebar[failed]
            ok = np.ones(len(failed), dtype=bool)
            its = np.zeros(len(failed))
            Ck = np.zeros((len(failed), 3, 3))
            for k in range(1, nsub + 1):
                step = start + (target - start) * (k / nsub)
                trial, Cs, ik = self._try(sub_state, step)
                if nsub == floor and not self.single_pass:
                    bad = np.flatnonzero(ik[:, 0] < 0.5)
                    if len(bad):
                        sub_bad = sub_state.take(bad)
                        h = np.linalg.norm(step[bad] - sub_bad.eps_bar, axis=1)
                        ratio = np.divide(h, sub_bad.step, out=np.zeros_like(h), where=sub_bad.step > 0)
                        t2, C2, i2 = self._try(sub_bad, step[bad], ratio)
                        trial.put(bad, t2)
                        Cs[bad], ik[bad] = C2, i2
                ok &= ik[:, 0] > 0.5
                its += ik[:, 1]
                Ck = Cs
                sub_state = trial
            # keep only points that converged in every substep
            good = failed[ok]
            if len(good):
                new.put(good, sub_state.take(np.flatnonzero(ok)))
                C[good] = Ck[ok]
                info[good, 0] = 1.0
                info[good, 1] = its[ok]
                info[good, 2] = ik[ok, 2]
                subs[good] = nsub
            failed = failed[~ok]
            nsub *= 2
        report = SolveReport(info[:, 1].astype(int), info[:, 2], subs, info[:, 0] > 0.5)
        if len(failed):
            raise RomConvergenceError(
                f"partition strain solve failed at {len(failed)} point(s) after substepping "
                f"to 1/{floor}; worst residual {info[failed, 2].max():.3e}",
                failed)
        if self.single_pass:
            report.converged[:] = True
        return new, C, report

    def material_update(self, d_eps_bar, state):
        """Single-point convenience wrapper: ``(sigma_bar, new_state, tangent, report)``."""
        new, C, rep = self.update(state, state.eps_bar + np.atleast_2d(d_eps_bar))
        return new.sigma_bar[0], new, C[0], rep

    def residual(self, state):
        """Max-norm of ``Psi`` for each point of a state (for diagnostics)."""
        psi = (state.eps - np.einsum("bij,pj->pbi", self.E, state.eps_bar)
               - np.einsum("abij,paj->pbi", self.S, state.mu))
        return np.abs(psi).reshape(state.n_points, -1).max(axis=1)

    def average_stress(self, state):
        """Volume-average form ``sum_b c_b sigma_b``."""
        return np.einsum("b,pbi->pi", self.c, state.sigma)

    def drive(self, program, state=None):
        """Run a strain program (k, 3) at one point; returns stresses and states."""
        state = state or self.new_state(1)
        sig = []
        hist = []
        for eb in np.asarray(program, dtype=float):
            state, _, _ = self.update(state, eb[None])
            sig.append(state.sigma_bar[0].copy())
            hist.append(state)
        return np.array(sig), hist


def eigenstrain_increment_tangent(D, L):
    """``I - L^-1 D``: sensitivity of the eigenstrain increment to the strain increment."""
    return I3 - np.linalg.solve(L, D)


def damage_onset_strain(coeffs, materials, direction):
    """Macro strain magnitude along ``direction`` at which the first partition starts to damage.

    In the elastic range ``eps_b = E_b eps_bar``, so partition ``b`` reaches
    its threshold at ``kappa_Df / eps_D(E_b d)``.
    """
    from .constitutive import damage_equivalent_strain

    d = np.asarray(direction, dtype=float)
    best = math.inf
    for b, mat in enumerate(materials):
        if not mat.damage:
            continue
        eD = damage_equivalent_strain(coeffs.E[b] @ d)[0]
        if eD > 0:
            best = min(best, mat.kappa_df / eD)
    return best
