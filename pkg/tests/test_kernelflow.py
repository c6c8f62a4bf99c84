import numpy as np
import pytest

from advpinn import kernelflow as kf


def random_spd(n, rng):
    B = rng.standard_normal((n, n))
    return B @ B.T + 0.5 * np.eye(n)


# -- support and discriminator flows ------------------------------------------

def test_support_weights_and_targets():
    ker = kf.make_support([1.0, 2.0, 3.0, 4.0])
    assert ker.points.tolist() == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert ker.weights.tolist() == [0.5, 0.125, 0.125, 0.125, 0.125]
    assert ker.rho.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]
    assert np.allclose(ker.K, ker.K.T)
    assert np.linalg.eigvalsh(ker.K)[0] > -1e-12


def test_coincident_fake_point_merges_into_real_point():
    ker = kf.make_support([0.0, 2.0])
    assert ker.points.tolist() == [0.0, 2.0]
    # real mass 1/2, fake mass 1/4 at zero
    assert ker.rho[0] == pytest.approx(0.5 / 0.75)
    assert ker.weights[0] == 0.75


def test_lsgan_stationary_at_rho():
    ker = kf.make_support(np.linspace(0.5, 3.0, 5))
    st = kf.integrate_disc_flow("lsgan", ker, ker.rho, 2.0, 0.01)
    assert np.max(np.abs(st.values - ker.rho)) < 1e-12


def test_ipm_flow_linear_in_time():
    fake = [1.3]
    ker = kf.make_support(fake)
    f0 = np.array([0.2, -0.1])
    st = kf.integrate_disc_flow("ipm", ker, f0, 3.0, 0.1)
    wit = kf.ipm_witness(fake, ker.points)
    assert np.allclose(st.values, f0 + np.outer(st.times, wit), atol=1e-13)


def test_ipm_witness_examples():
    q = np.linspace(-3, 3, 13)
    assert np.all(kf.ipm_witness([0.0, 0.0], q) == 0)
    assert np.allclose(kf.ipm_witness([1.5], q), kf.rbf([0.0], q)[0] - kf.rbf([1.5], q)[0], atol=0)
    # fake set symmetric about 0: the witness is even in r
    w = kf.ipm_witness([-2.0, -1.0, 1.0, 2.0], q)
    assert np.allclose(w, w[::-1], atol=1e-15)


def test_gan_flow_reaches_rho():
    ker = kf.make_support([1.0, 2.0, 3.0])
    lam = ker.operator_spectrum()
    T = 200.0 / lam[0]
    st = kf.integrate_disc_flow("gan", ker, np.zeros(4), T, 1.0 / lam[-1], store_every=10_000)
    sig = 1.0 / (1.0 + np.exp(-st.final))
    assert np.max(np.abs(sig - ker.rho)) < 1e-3


def test_lsgan_closed_form():
    ker = kf.make_support(np.linspace(0.5, 4.5, 9))
    f0 = np.random.default_rng(0).standard_normal(10)
    assert np.allclose(kf.lsgan_closed_form(ker, ker.rho, f0, 0.0), f0, rtol=0, atol=1e-15)
    st = kf.integrate_disc_flow("lsgan", ker, f0, 1.0, 0.01)
    assert np.max(np.abs(st.final - kf.lsgan_closed_form(ker, ker.rho, f0, 1.0))) < 1e-4
    small = kf.make_support([1.0, 2.5])
    lam = small.operator_spectrum()
    far = kf.lsgan_closed_form(small, small.rho, np.zeros(3), 50.0 / lam[0])
    assert np.max(np.abs(far - small.rho)) < 1e-8


def test_lsgan_decay_rate_matches_spectrum():
    ker = kf.make_support([1.0, 2.0])
    lam = ker.operator_spectrum()
    gap = lam[1] - lam[0]
    t1 = 10.0 / gap
    st = kf.integrate_disc_flow("lsgan", ker, np.zeros(3), t1 + 1.0 / lam[0], 0.05 / lam[-1])
    dist = np.linalg.norm(st.values - ker.rho, axis=1)
    i1 = np.searchsorted(st.times, t1)
    rate = -(np.log(dist[-1]) - np.log(dist[i1])) / (st.times[-1] - st.times[i1])
    assert rate == pytest.approx(2 * lam[0], rel=0.05)


def test_blowup_raises():
    ker = kf.make_support([1.0])
    bad = lambda t, f: f * 1e6
    with pytest.raises(kf.FlowInstabilityError):
        kf.rk4(bad, np.ones(2), 10.0, 1.0)


def test_expm_against_series():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]]) * 2.0
    E = kf.expm(A)
    assert np.allclose(E, [[np.cos(2), np.sin(2)], [-np.sin(2), np.cos(2)]], atol=1e-14)
    D = np.diag([-30.0, 0.5])
    assert np.allclose(kf.expm(D), np.diag(np.exp([-30.0, 0.5])), rtol=1e-13, atol=0)


# -- residual-space dynamics ---------------------------------------------------

def test_linear_dynamics_examples():
    r0 = np.array([1.0, -2.0])
    tr = kf.integrate_linear_dyn(np.eye(2), np.eye(2), r0, 1.0, 0.01)
    assert np.allclose(tr.states[-1], np.exp(-1.0) * r0, rtol=1e-9)
    tr = kf.integrate_linear_dyn(np.eye(2), np.zeros((2, 2)), r0, 1.0, 0.1)
    assert np.all(tr.states == r0)
    tr = kf.integrate_linear_dyn(np.diag([2.0, 1.0]), np.diag([3.0, 4.0]), r0, 0.5, 0.001)
    assert np.allclose(tr.states[-1], r0 * np.exp(-np.array([6.0, 4.0]) * 0.5), rtol=1e-9)


def test_rk4_order():
    K, A = np.diag([2.0, 1.0]), np.diag([3.0, 4.0])
    r0 = np.array([1.0, 1.0])
    exact = r0 * np.exp(-np.array([6.0, 4.0]))
    err = [np.max(np.abs(kf.integrate_linear_dyn(K, A, r0, 1.0, h).states[-1] - exact)) for h in (0.02, 0.01)]
    assert 12 <= err[0] / err[1] <= 20


def test_energy_law_on_trajectories():
    rng = np.random.default_rng(3)
    K = random_spd(4, rng)
    A = random_spd(4, rng) * 0.2
    G = -rng.uniform(0.1, 1.0, 4)
    r0 = rng.standard_normal(4)
    dt = 1e-4
    for traj, M in ((kf.integrate_linear_dyn(K, A, r0, 0.02, dt), -K @ A),
                    (kf.integrate_multiplicative_dyn(K, G, r0, 0.02, dt), K @ np.diag(G))):
        for i in (20, 100, 180):
            dE = (traj.energy[i + 1] - traj.energy[i - 1]) / (2 * dt)
            r = traj.states[i]
            assert dE == pytest.approx(r @ M @ r, rel=1e-5)


def test_spectral_factor_examples():
    rep = kf.spectral_factor_check(np.diag([2.0, 1.0]), np.diag([3.0, 4.0]))
    assert np.allclose(rep.eig_KA, [4.0, 6.0]) and np.allclose(rep.eig_H, [4.0, 6.0])
    rng = np.random.default_rng(0)
    for _ in range(5):
        K = random_spd(6, rng)
        B = rng.standard_normal((6, 3))
        rep = kf.spectral_factor_check(K, B @ B.T)
        assert rep.max_deviation < 1e-8
        assert rep.inertia_match
    A = np.diag([2.0, -1.0, 0.0, -3.0])
    rep = kf.spectral_factor_check(random_spd(4, rng), A)
    assert rep.inertia_H == rep.inertia_A == (1, 1, 2)


def test_multiplicative_zero_state_is_equilibrium():
    tr = kf.integrate_multiplicative_dyn(np.eye(3), [-1.0, 2.0, 0.5], np.zeros(3), 1.0, 0.1)
    assert np.all(tr.states == 0)


def test_multiplicative_bounds():
    rng = np.random.default_rng(1)
    K = random_spd(5, rng)
    r0 = rng.standard_normal(5)
    for sign in (-1.0, 1.0):
        G = sign * rng.uniform(0.2, 1.0, 5)
        tr = kf.integrate_multiplicative_dyn(K, G, r0, 0.5, 1e-3)
        lo, hi = kf.multiplicative_bounds(K, G, tr.energy[0], tr.times)
        assert np.all(tr.energy <= hi * (1 + 1e-6))
        assert np.all(tr.energy >= lo * (1 - 1e-6))


def test_modal_decay_constant_rate_is_tight():
    rng = np.random.default_rng(2)
    K = random_spd(4, rng)
    r0 = rng.standard_normal(4)
    rep = kf.modal_decay_check(K, lambda t: np.full(4, 0.7), 0.7, r0, 1.0, 1e-3)
    assert np.max(np.abs(rep.modal - rep.envelope)) < 1e-6


def test_modal_decay_time_varying_within_envelope():
    rng = np.random.default_rng(4)
    K = random_spd(4, rng)
    r0 = rng.standard_normal(4)
    a = lambda t: 0.5 + np.array([0.1, 0.4, 0.0, 0.2]) * (1 + np.sin(3 * t + np.arange(4)))
    rep = kf.modal_decay_check(K, a, 0.5, r0, 2.0, 1e-3)
    assert rep.max_violation < 1e-6


def test_modal_decay_null_mode_constant():
    K = np.diag([0.0, 1.0])
    rep = kf.modal_decay_check(K, lambda t: np.ones(2), 1.0, np.array([0.3, 1.0]), 1.0, 0.01)
    col = 0 if rep.modal[0, 0] == pytest.approx(0.3) else 1
    assert np.allclose(rep.modal[:, col], 0.3, atol=1e-15)


def test_scenarios_run():
    for name in ("lsgan", "ipm"):
        d = kf.scenario(name)
        assert d["flow"].shape == d["closed_form"].shape
        assert np.max(np.abs(d["flow"] - d["closed_form"])) < 1e-4
