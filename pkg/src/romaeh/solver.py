"""Incremental Newton solver for quasi-static small-strain FE problems.

The solver is material-agnostic: anything exposing ``evaluate(eps)`` (trial
stresses and tangents at all Gauss points, without touching history) and
``commit()`` (accept the last trial) can be driven. The unit-cell DNS, the
DNS plate and the two-scale macro model all use it.
"""
from dataclasses import dataclass, field

import numpy as np

from . import fem


class MaterialFailure(RuntimeError):
    """A material evaluation could not be completed for the given strains."""


class DivergenceError(RuntimeError):
    """Newton failed even at the smallest allowed substep.

    Attributes
    ----------
    partial : object
        Whatever the caller attached describing the last converged state.
    """

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


@dataclass
class StepInfo:
    iterations: int = 0
    substeps: int = 0
    explicit: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


class StaticSolver:
    """Displacement-driven Newton solver with line search and substepping.

    Materials that offer ``extrapolate(ratio)`` get an explicit-damage
    fallback: a substep at or below ``explicit_substep`` that fails
    implicitly is redone with damage extrapolated from the previous step.
    Once that happened, later substeps go explicit directly, and each new
    increment first tries the implicit solve with a few iterations only.

    Parameters
    ----------
    B, wdet : ndarray
        Strain-displacement matrices and quadrature weights from
        :func:`fem.b_matrices`.
    assembler : fem.Assembler
    dofmap : fem.DofMap
        ``u = u_p + T a``; ``u_p`` is the prescribed part supplied per step.
    material : object
        ``evaluate(eps) -> (sig, D)`` and ``commit()``.
    tol : float
        Accept when ``|T^T f_int| <= tol * f_ref`` with ``f_ref`` the largest
        internal-force norm met so far.
    maxit : int
    min_substep : float
        Smallest substep as a fraction of a requested increment.
    secant_fallback : bool
        When a consistent-tangent step fails to reduce the residual, finish
        the increment with the material's secant tangent
        (``evaluate(eps, secant=True)``).
    explicit_substep : float, optional
        Substep fraction at or below which a failed substep is retried with
        explicit damage, for materials with ``extrapolate(ratio)``.
        Defaults to ``min_substep``.
    """

    PROBE_ITERATIONS = 8

    def __init__(self, B, wdet, assembler, dofmap, material, tol=1e-6, maxit=30, min_substep=1.0 / 64,
                 secant_fallback=False, explicit_substep=None):
        if not tol > 0:
            raise ValueError("tolerance must be positive")
        self.B, self.wdet = B, wdet
        self.assembler = assembler
        self.dofmap = dofmap
        self.material = material
        self.tol = float(tol)
        self.maxit = int(maxit)
        self.min_substep = float(min_substep)
        self.secant_fallback = bool(secant_fallback)
        self.explicit_substep = self.min_substep if explicit_substep is None else float(explicit_substep)
        n = dofmap.n_dof
        self.u_p = np.zeros(n)
        self.a = np.zeros(dofmap.n_free)
        self.u = np.zeros(n)
        self.f = np.zeros(n)
        self.f_ref = 0.0
        self.work = 0.0
        self._u_prev = self.u_p.copy()
        self._dt = 0.0
        self._sticky = False
        self.eps = None
        self.sig = None
        ev = self._evaluate(self.u)
        self.eps, self.sig = ev[0], ev[1]
        self.material.commit()
        self._tangent(ev[2])

    # -- pieces -------------------------------------------------------------

    def strains(self, u):
        return np.einsum("egij,ej->egi", self.B, self.assembler.gather(u))

    def _evaluate(self, u, secant=False):
        eps = self.strains(u)
        if secant:
            sig, D = self.material.evaluate(eps, secant=True)
        else:
            sig, D = self.material.evaluate(eps)
        f = self.assembler.vector(fem.element_forces(self.B, sig, self.wdet))
        return eps, sig, D, f

    def _tangent(self, D):
        self.K = self.assembler.matrix(fem.element_tangents(self.B, D, self.wdet))
        self.lu = fem.factorize(self.dofmap.reduce_matrix(self.K))

    def _newton(self, u_p, maxit=None):
        """Solve for ``a`` at prescribed ``u_p``; returns (ok, iterations, residual)."""
        K0, lu0 = self.K, self.lu
        ok, it, res = self._iterate(u_p, self.maxit if maxit is None else maxit)
        if not ok:
            self.K, self.lu = K0, lu0
        return ok, it, res

    def _iterate(self, u_p, maxit):
        T, Tt = self.dofmap.T, self.dofmap.Tt
        du_p = u_p - self.u_p
        a = self.a - self.lu.solve(Tt @ (self.K @ du_p)) if np.any(du_p) else self.a.copy()
        secant = False
        hist = []
        active = None
        try:
            ev = self._evaluate(T @ a + u_p)
        except MaterialFailure:
            return False, 0, np.inf
        f_ref = max(self.f_ref, np.linalg.norm(ev[3]))
        R = Tt @ ev[3]
        rn = np.linalg.norm(R)
        it = 0
        while not rn <= self.tol * f_ref or (f_ref == 0 and rn > 0):
            if it == maxit:
                return False, it, rn / max(f_ref, 1e-300)
            it += 1
            try:
                self._tangent(ev[2])
            except fem.SolverError:
                if secant or not self.secant_fallback:
                    return False, it, np.inf
                secant = True
                ev = self._evaluate(T @ a + u_p, secant=True)
                continue
            da = -self.lu.solve(R)
            if secant:
                # Anderson-accelerated fixed point on a -> a - K_s^-1 R(a); the
                # history restarts whenever the set of softening points changes
                act = self.material.loading() if hasattr(self.material, "loading") else None
                if act is not None and (active is None or not np.array_equal(act, active)):
                    hist = []
                active = act
                hist.append((a.copy(), da.copy()))
                if len(hist) > 8:
                    hist.pop(0)
                if len(hist) > 1:
                    dX = np.column_stack([hist[i + 1][0] - hist[i][0] for i in range(len(hist) - 1)])
                    dG = np.column_stack([hist[i + 1][1] - hist[i][1] for i in range(len(hist) - 1)])
                    gamma = np.linalg.lstsq(dG, da, rcond=None)[0]
                    da = da - (dX + dG) @ gamma
            step = 1.0
            while True:
                try:
                    trial = self._evaluate(T @ (a + step * da) + u_p, secant)
                    Rt = Tt @ trial[3]
                    rt = np.linalg.norm(Rt)
                except MaterialFailure:
                    rt = np.inf
                # secant steps are fixed-point updates: the residual need not drop monotonically
                if secant or rt <= (1.0 - 1e-4 * step) * rn or step < 1.0 / 32:
                    break
                step *= 0.5
            if not np.isfinite(rt):
                return False, it, np.inf
            if rt > rn and not secant and self.secant_fallback:
                # the consistent tangent points uphill: continue with secant stiffness
                secant = True
                ev = self._evaluate(T @ a + u_p, secant=True)
                continue
            a = a + step * da
            ev, R, rn = trial, Rt, rt
            f_ref = max(f_ref, np.linalg.norm(ev[3]))
        u = T @ a + u_p
        # external work: trapezoid of the internal force over the displacement increment
        self.work += 0.5 * float((self.f + ev[3]) @ (u - self.u))
        self.a, self.u_p, self.u, self.f = a, u_p.copy(), u, ev[3]
        self.eps, self.sig = ev[0], ev[1]
        self.f_ref = f_ref
        self.material.commit()
        return True, it, rn / max(f_ref, 1e-300)

    # -- public -------------------------------------------------------------

    def advance(self, u_p_target):
        """Move the prescribed displacement to ``u_p_target``.

        Failing increments are halved down to ``min_substep``; after a
        success the substep grows again.

        Returns
        -------
        StepInfo

        Raises
        ------
        DivergenceError
        """
        start = self.u_p.copy()
        target = np.asarray(u_p_target, dtype=float)
        done, h = 0.0, 1.0
        info = StepInfo()
        can_explicit = hasattr(self.material, "extrapolate")
        # after explicit substeps, probe the implicit solve cheaply first
        probe = self.PROBE_ITERATIONS if self._sticky else None
        while done < 1.0 - 1e-12:
            h = min(h, 1.0 - done)
            if self._sticky:
                h = min(h, self.explicit_substep)
            u_next = start + (done + h) * (target - start)
            ok, explicit_ok = False, False
            if probe is not None or not self._sticky:
                ok, it, res = self._newton(u_next, probe)
                info.iterations += it
                info.history.append((done + h, it, res, ok))
                if ok and probe is not None:
                    self._sticky = False
                probe = None
            if (not ok and can_explicit and self._dt > 0
                    and (self._sticky or h <= self.explicit_substep * (1.0 + 1e-12))):
                # no implicit equilibrium nearby (local snap-back): take this
                # substep with damage extrapolated from the last step
                self.material.extrapolate(np.linalg.norm(u_next - self.u_p) / self._dt)
                try:
                    ok, it, res = self._newton(u_next)
                finally:
                    self.material.extrapolate(None)
                info.iterations += it
                info.history.append((done + h, it, res, ok))
                explicit_ok = ok
            if ok:
                info.explicit += int(explicit_ok)
                self._sticky = explicit_ok
                self._dt = np.linalg.norm(u_next - self._u_prev)
                self._u_prev = u_next
                done += h
                info.substeps += 1
                info.residual = res
                h = min(2.0 * h, 1.0)
            else:
                h *= 0.5
                if h < self.min_substep * (1.0 - 1e-12):
                    raise DivergenceError(
                        f"Newton failed at substep fraction {2 * h:.4g} of the increment "
                        f"(relative residual {res:.3e})")
        return info

    def reaction(self):
        """Full internal force vector at the last converged state."""
        return self.f
