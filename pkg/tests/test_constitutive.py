import numpy as np
import pytest
from hypothesis import given, strategies as st

from romaeh import _accel, constitutive as c

MAT = c.PhaseMaterial(3500.0, 0.35, 60.0, 500.0, 0.01, 1.0, 3.0, True, True)


def random_states(rng, n):
    """Admissible material rows, histories and strains (not filtered)."""
    prm = np.column_stack([rng.uniform(1e3, 8e4, n), rng.uniform(0.0, 0.45, n), rng.uniform(20, 200, n),
                           rng.uniform(0, 2e3, n), rng.uniform(2e-3, 2e-2, n), rng.uniform(0.3, 3.0, n),
                           rng.integers(0, 2, n), rng.integers(0, 2, n)]).astype(float)
    kdf = prm[:, 4]
    dev = rng.normal(size=(n, 3)) * 2e-3
    ep = np.column_stack([dev[:, 0], dev[:, 1], -dev[:, 0] - dev[:, 1], dev[:, 2]]) * prm[:, 6:7]
    kp = np.abs(rng.normal(size=n)) * 3e-3 * prm[:, 6]
    kd = kdf * rng.uniform(0.0, 3.0, n) * prm[:, 7]
    eps = rng.normal(size=(n, 3)) * kdf[:, None] * rng.uniform(0.2, 3.0, (n, 1))
    return prm, ep, kp, kd, eps


def regime(eps, ep, kp, kd, prm):
    """Active-set flags: yielding and damage loading."""
    _, _, kp1, kd1, om, _, _ = c.update_batch(eps, ep, kp, kd, prm)
    return np.column_stack([kp1 > kp, kd1 > np.maximum(kd, prm[:, 4]), om >= c.OMEGA_MAX])


def far_from_switching(eps, ep, kp, kd, prm, h):
    """Same regime under all perturbations of size ``10 h``."""
    base = regime(eps, ep, kp, kd, prm)
    ok = np.ones(len(eps), bool)
    for j in range(3):
        for s in (-10.0, 10.0):
            e = eps.copy()
            e[:, j] += s * h
            ok &= np.all(regime(e, ep, kp, kd, prm) == base, axis=1)
    return ok


def fd_tangent(eps, ep, kp, kd, prm, h):
    D = np.empty((len(eps), 3, 3))
    for j in range(3):
        ep_, em_ = eps.copy(), eps.copy()
        ep_[:, j] += h
        em_[:, j] -= h
        sp = c.update_batch(ep_, ep, kp, kd, prm)[0]
        sm = c.update_batch(em_, ep, kp, kd, prm)[0]
        D[:, :, j] = (sp - sm) / (2 * h[:, None])
    return D


def admissible_sample(seed, count):
    """``count`` states whose active set is stable under perturbation.

    States with ``omega > 0.99`` are excluded: they lie next to the damage
    cap and the stress there is a difference of nearly equal numbers.
    """
    rng = np.random.default_rng(seed)
    prm, ep, kp, kd, eps = random_states(rng, 4 * count)
    h = 1e-7 * np.abs(eps).max(axis=1)
    omega = c.update_batch(eps, ep, kp, kd, prm)[4]
    ok = far_from_switching(eps, ep, kp, kd, prm, h) & (omega <= 0.99)
    idx = np.flatnonzero(ok)[:count]
    assert len(idx) == count
    return tuple(a[idx] for a in (prm, ep, kp, kd, eps)) + (h[idx],)


def tangent_errors(seed=0, count=100):
    prm, ep, kp, kd, eps, h = admissible_sample(seed, count)
    D = c.update_batch(eps, ep, kp, kd, prm)[5]
    Dfd = fd_tangent(eps, ep, kp, kd, prm, h)
    return np.linalg.norm(D - Dfd, axis=(1, 2)) / np.linalg.norm(D, axis=(1, 2))


def test_tangent_matches_finite_differences():
    err = tangent_errors()
    assert err.max() < 1e-5


def test_sample_covers_every_regime():
    prm, ep, kp, kd, eps, h = admissible_sample(0, 100)
    flags = regime(eps, ep, kp, kd, prm)
    assert flags[:, 0].any() and flags[:, 1].any() and (flags[:, 0] & flags[:, 1]).any()
    assert (~flags[:, 0] & ~flags[:, 1]).any()


def plastic_work(sig_eff, dep):
    return np.einsum("ni,ni->n", sig_eff, dep)


@given(st.integers(0, 2**31 - 1))
def test_dissipation_non_negative(seed):
    rng = np.random.default_rng(seed)
    prm, ep, kp, kd, eps = random_states(rng, 50)
    sig, ep1, kp1, kd1, om1, _, se = c.update_batch(eps, ep, kp, kd, prm)
    om0 = np.array([c.damage_from_kappa(k, a, m) if d > 0.5 else 0.0
                    for k, a, m, d in zip(kd, prm[:, 4], prm[:, 5], prm[:, 7])])
    assert np.all(om1 >= om0 - 1e-15)
    assert np.all(kp1 >= kp) and np.all(kd1 >= kd)
    # damage: Y d(omega) with Y the undamaged energy; plasticity: sig_eff : d(eps_p)
    Y = c.free_energy_batch(eps, ep1, np.zeros(len(eps)), prm)
    assert np.all(Y * (om1 - om0) >= 0)
    assert np.all(plastic_work(se, ep1 - ep) >= -1e-12 * np.abs(se).max() * np.abs(ep1 - ep).max())


def test_elastic_response():
    m = c.PhaseMaterial(1000.0, 0.25)
    sig, st_, D = c.integrate_point([1e-3, 0, 0], c.PhaseState(), m)
    assert np.allclose(D, m.elastic_matrix())
    assert np.allclose(sig, m.elastic_matrix() @ [1e-3, 0, 0])


def test_uniaxial_damage_law():
    m = c.PhaseMaterial(1000.0, 0.0, kappa_df=1e-3, m=1.0, damage=True)
    assert c.damage_from_kappa(1e-3, 1e-3, 1.0) == 0.0
    w = c.damage_from_kappa(2e-3, 1e-3, 1.0)
    assert w == pytest.approx(1 - np.exp(-1.0))
    assert c.damage_from_kappa(1.0, 1e-3, 1.0) == c.OMEGA_MAX
    om, k = c.damage_update(0.0, 2e-3, m)
    assert om == pytest.approx(w) and k == 2e-3
    # unloading keeps the history
    om2, k2 = c.damage_update(k, 1e-3, m)
    assert om2 == om and k2 == k


def test_damage_equivalent_strain():
    assert c.damage_equivalent_strain([-1e-3, -2e-3, 0.0])[0] == 0.0
    assert c.damage_equivalent_strain([1e-3, 0.0, 0.0])[0] == pytest.approx(1e-3)
    # pure shear gamma: principal strain gamma / 2
    assert c.damage_equivalent_strain([0.0, 0.0, 2e-3])[0] == pytest.approx(1e-3)


def test_radial_return_stays_on_yield_surface():
    m = c.PhaseMaterial(200000.0, 0.3, 250.0, 1000.0, plasticity=True)
    s, ep, kp, _ = c.plastic_return_map([5e-3, -1e-3, 2e-3], np.zeros(4), 0.0, m)
    dev = s.copy()
    dev[:3] -= s[:3].mean()
    q = np.sqrt(1.5 * (dev[:3] @ dev[:3] + 2 * dev[3] ** 2))
    assert kp > 0
    assert q == pytest.approx(250.0 + 1000.0 * kp, rel=1e-10)
    assert abs(ep[:3].sum()) < 1e-15


def test_invalid_parameters():
    with pytest.raises(ValueError):
        c.PhaseMaterial(-1.0, 0.3)
    with pytest.raises(ValueError):
        c.PhaseMaterial(1.0, 0.5)
    with pytest.raises(ValueError):
        c.PhaseMaterial(1.0, 0.3, kappa_df=0.0, damage=True)


def test_backends_agree(monkeypatch):
    if _accel.numba is None:
        pytest.skip("numba not installed")
    rng = np.random.default_rng(3)
    args = random_states(rng, 500)
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    a = c.update_batch(args[4], *args[1:4], args[0])
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    b = c.update_batch(args[4], *args[1:4], args[0])
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-10, atol=1e-13 * max(np.abs(y).max(), 1.0))
