"""Crack-band regularization of the softening law.

The softening exponent ``m`` of each damaging partition is chosen so that
``L_c * g_f(m) = G_F``, where ``g_f`` is the area under the uniaxial
damage-only stress-strain curve and ``L_c`` the characteristic length of
the partition footprint across the crack plane.
"""
from dataclasses import dataclass
import csv
import io
import math
import warnings

import numpy as np
from scipy import integrate, special

from .fem import q4_shape
from .geometry import partition_footprint

M_MIN = 0.05
M_MAX = 50.0


class CalibrationError(ValueError):
    """Target fracture energy not attainable for the given length."""


# ---------------------------------------------------------------------------
# dissipation density


def _check_m(m):
    if not m >= M_MIN:
        raise ValueError(f"softening exponent m={m} is below the supported minimum {M_MIN}")


def dissipation_density(material, m=None):
    """``g_f = int_0^inf (1 - omega(k)) E k dk`` by adaptive quadrature.

    The post-threshold branch is integrated in the variable ``t = (k/k_Df)^m``
    where the integrand is a smooth gamma-type density.
    """
    m = material.m if m is None else float(m)
    _check_m(m)
    E, k = material.E, material.kappa_df
    a = 2.0 / m - 1.0

    def f(t):
        return math.exp(a * math.log(t) + (1.0 - t) / m - math.log(m))

    t_peak = max(2.0 - m, 1.0)
    tail, err1 = integrate.quad(f, 1.0, t_peak + 1.0, limit=200, epsabs=0, epsrel=1e-12)
    rest, err2 = integrate.quad(f, t_peak + 1.0, np.inf, limit=200, epsabs=0, epsrel=1e-12)
    total = tail + rest
    if not np.isfinite(total) or err1 + err2 > 1e-6 * total:
        raise ArithmeticError(f"quadrature did not converge for m={m}")
    return E * k * k * (0.5 + total)


def dissipation_density_closed(material, m=None):
    """Closed form ``E k^2 [1/2 + e^(1/m) m^(2/m-1) Gamma(2/m, 1/m)]``.

    ``Gamma(a, x)`` is the upper incomplete gamma function; the first term
    is the elastic triangle below the threshold.
    """
    m = material.m if m is None else float(m)
    _check_m(m)
    a = 2.0 / m
    log_tail = 1.0 / m + (a - 1.0) * math.log(m) + special.gammaln(a) + math.log(special.gammaincc(a, 1.0 / m))
    return material.E * material.kappa_df ** 2 * (0.5 + math.exp(log_tail))


def admissible_length_interval(material, m_range=(M_MIN, M_MAX)):
    """Range of ``L_c`` for which ``G_F`` can be matched with ``m`` in range."""
    g_lo = dissipation_density_closed(material, m_range[1])
    g_hi = dissipation_density_closed(material, m_range[0])
    return material.G_F / g_hi, material.G_F / g_lo


def calibrate_m(material, length, m_range=(M_MIN, M_MAX), clamp=False):
    """Softening exponent with ``length * g_f(m) = G_F``.

    Parameters
    ----------
    material : PhaseMaterial
        Needs ``G_F``.
    length : float
        Characteristic length [mm].
    clamp : bool
        Return the nearest end of ``m_range`` (with a warning) instead of
        raising when the target is unattainable.
    """
    if material.G_F is None:
        raise CalibrationError("material has no fracture energy G_F")
    if not length > 0:
        raise CalibrationError(f"characteristic length must be positive, got {length}")
    target = material.G_F / length
    lo, hi = m_range
    g_lo_m = dissipation_density_closed(material, lo)  # largest g_f
    g_hi_m = dissipation_density_closed(material, hi)  # smallest g_f
    if not g_hi_m <= target <= g_lo_m:
        lmin, lmax = admissible_length_interval(material, m_range)
        msg = (f"G_F/L_c = {target:.6g} is outside the attainable range; "
               f"L_c must lie in [{lmin:.6g}, {lmax:.6g}] mm, got {length:.6g}")
        if not clamp:
            raise CalibrationError(msg)
        warnings.warn(msg + " (clamped)", RuntimeWarning, stacklevel=2)
        return hi if target < g_hi_m else lo
    # bisection in log m on the decreasing map m -> g_f(m)
    a, b = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (a + b)
        g = dissipation_density_closed(material, math.exp(mid))
        if abs(g - target) <= 1e-9 * target:
            break
        if g > target:
            a = mid
        else:
            b = mid
    return math.exp(mid)


# ---------------------------------------------------------------------------
# characteristic length and crack direction


def characteristic_length(corners, theta):
    """Oliver's length of a quadrilateral for crack-normal angle ``theta``.

    ``L_c = (sum_i Phi_i (dN_i/dx cos t + dN_i/dy sin t))^-1`` with the
    bilinear shape-function derivatives at the isoparametric centre and
    ``Phi_i = 1`` for corners on the positive side of the crack line through
    the centroid (ties go to the positive side).
    """
    X = np.asarray(corners, dtype=float)
    if X.shape != (4, 2):
        raise ValueError("characteristic_length needs four corners")
    area = 0.5 * np.sum(X[:, 0] * np.roll(X[:, 1], -1) - np.roll(X[:, 0], -1) * X[:, 1])
    if area < 0:
        X = X[::-1]
        area = -area
    if area <= 1e-14 * max(np.ptp(X[:, 0]), np.ptp(X[:, 1])) ** 2:
        raise ValueError("degenerate footprint polygon")
    _, dN = q4_shape(0.0, 0.0)
    J = dN.T @ X
    dNdx = dN @ np.linalg.inv(J).T
    n = np.array([math.cos(theta), math.sin(theta)])
    side = (X - X.mean(axis=0)) @ n
    scale = np.abs(X - X.mean(axis=0)).max()
    phi = side >= -1e-12 * scale
    s = float(np.sum(phi * (dNdx @ n)))
    if s <= 0:
        raise ValueError("crack line does not separate the footprint")
    return 1.0 / s


def principal_angle(eps):
    """Angle of the maximum principal strain direction in (-pi/2, pi/2]."""
    a, b, g = eps
    t = 0.5 * math.atan2(g, a - b)
    if t <= -0.5 * math.pi:
        t += math.pi
    return t


def crack_direction(E_beta, override=None, tol=1e-12):
    """Crack-normal angle of a partition from its elastic coefficient tensor.

    Among the unit macro load cases, the one giving the largest damage
    equivalent strain of the partition average (columns of ``E_beta``) sets
    the direction of maximum principal strain.
    """
    if override is not None:
        return float(override)
    from .constitutive import damage_equivalent_strain

    E_beta = np.asarray(E_beta, dtype=float)
    eD = [damage_equivalent_strain(E_beta[:, j])[0] for j in range(3)]
    j = int(np.argmax(eD))
    a, b, g = E_beta[:, j]
    if math.hypot(0.5 * (a - b), 0.5 * g) <= tol * max(abs(a), abs(b), abs(g), 1e-300):
        warnings.warn("isotropic partition strain; crack direction set to 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return principal_angle((a, b, g))


# ---------------------------------------------------------------------------
# per-partition calibration


@dataclass
class CrackBandSpec:
    partition: int
    name: str
    theta: float
    length: float
    m: float
    g_f: float
    corners: np.ndarray

    @property
    def energy(self):
        return self.length * self.g_f


def calibrate_partitions(mesh, coeffs, materials, clamp=False, theta_override=None):
    """Crack-band data for every damaging partition of a cell.

    Parameters
    ----------
    materials : sequence of PhaseMaterial
        Indexed by phase.
    theta_override : dict, optional
        Partition index -> angle.

    Returns
    -------
    list of CrackBandSpec
    """
    specs = []
    theta_override = theta_override or {}
    for b in range(coeffs.n_partitions):
        mat = materials[int(coeffs.phase[b])]
        if not mat.damage or mat.G_F is None:
            continue
        theta = crack_direction(coeffs.E[b], theta_override.get(b))
        corners = partition_footprint(mesh, b)
        length = characteristic_length(corners, theta)
        m = calibrate_m(mat, length, clamp=clamp)
        specs.append(CrackBandSpec(b, coeffs.names[b], theta, length, m,
                                   dissipation_density_closed(mat, m), corners))
    return specs


def partition_materials(phase, materials, specs=()):
    """One material per partition, with calibrated exponents substituted."""
    out = [materials[int(p)] for p in phase]
    for s in specs:
        out[s.partition] = out[s.partition].with_m(s.m)
    return out


def calibration_csv(specs):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["partition", "theta", "L_c", "m", "g_f", "L_c*g_f"])
    for s in specs:
        w.writerow([s.name, f"{s.theta:.17g}", f"{s.length:.17g}", f"{s.m:.17g}",
                    f"{s.g_f:.17g}", f"{s.energy:.17g}"])
    return buf.getvalue()
