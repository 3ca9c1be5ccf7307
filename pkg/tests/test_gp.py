import time

import numpy as np
import pytest

from rollbo import gp, kernels
from rollbo.errors import DegenerateVarianceError
from rollbo.kernels import KernelParams


def make_params(d, amp=1.3, ls=0.7):
    return KernelParams(amplitude=amp, lengthscales=np.full(d, ls))


def random_state(rng, m=5, d=2, noise=1e-4, prior_mean=0.0, fantasies=0):
    p = KernelParams(amplitude=float(rng.uniform(0.5, 2.0)),
                     lengthscales=rng.uniform(0.4, 1.2, size=d))
    X = rng.uniform(-1.0, 1.0, size=(m, d))
    y = rng.normal(size=m)
    st = gp.fit(X, y, p, noise=noise, prior_mean=prior_mean)
    for _ in range(fantasies):
        st = gp.condition(st, rng.uniform(-1, 1, size=d), float(rng.normal()),
                          fantasy=True)
    return st


# --- fit / posterior ---------------------------------------------------------


def test_empty_fit_returns_prior():
    p = make_params(2, amp=2.25)
    st = gp.fit(np.zeros((0, 2)), np.zeros(0), p, noise=0.0, prior_mean=0.5)
    mom = gp.posterior(st, np.array([0.3, -0.4]), order=2)
    assert mom.mean == 0.5
    assert mom.sd == pytest.approx(1.5)
    assert np.all(mom.grad_mean == 0.0) and np.all(mom.grad_sd == 0.0)
    assert np.all(mom.hess_mean == 0.0) and np.all(mom.hess_sd == 0.0)


def test_single_point_interpolation_at_zero_noise():
    p = make_params(1)
    st = gp.fit(np.array([[0.4]]), np.array([1.7]), p, noise=0.0)
    mom = gp.posterior(st, np.array([0.4]), order=0)
    assert mom.mean == pytest.approx(1.7, abs=1e-9)
    assert mom.sd == pytest.approx(0.0, abs=1e-5)


def test_posterior_matches_dense_solve_oracle():
    rng = np.random.default_rng(0)
    p = make_params(2, amp=1.8, ls=0.9)
    X = rng.uniform(-1, 1, size=(5, 2))
    y = rng.normal(size=5)
    st = gp.fit(X, y, p, noise=0.01, prior_mean=0.2)
    A = kernels.gram(X, p) + 0.01 * np.eye(5)
    for _ in range(10):
        xq = rng.uniform(-1, 1, size=2)
        kv = kernels.value_row(xq, X, p)
        mu = 0.2 + kv @ np.linalg.solve(A, y - 0.2)
        var = p.amplitude - kv @ np.linalg.solve(A, kv)
        mom = gp.posterior(st, xq, order=0)
        assert mom.mean == pytest.approx(mu, abs=1e-10)
        assert mom.sd == pytest.approx(np.sqrt(var), abs=1e-10)


def test_chol_invariant_reconstructs_covariance():
    rng = np.random.default_rng(1)
    st = random_state(rng, m=8, d=2, noise=0.05)
    A = kernels.gram(st.data.X, st.params) + np.diag(st.noise_diag)
    rec = st.L @ st.L.T
    assert np.linalg.norm(rec - A) / np.linalg.norm(A) <= 1e-10
    resid = A @ st.c - (st.data.y - st.prior_mean)
    assert np.linalg.norm(resid) <= 1e-10


@pytest.mark.parametrize("d", [1, 2])
def test_posterior_derivatives_match_finite_differences(d):
    rng = np.random.default_rng(30 + d)
    for _ in range(25):
        st = random_state(rng, m=5, d=d, noise=1e-3)
        xq = rng.uniform(-1, 1, size=d)
        mom = gp.posterior(st, xq, order=2)
        h = 1e-5
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            mp = gp.posterior(st, xq + e, order=1)
            mm = gp.posterior(st, xq - e, order=1)
            fd_mean = (mp.mean - mm.mean) / (2 * h)
            fd_sd = (mp.sd - mm.sd) / (2 * h)
            assert mom.grad_mean[i] == pytest.approx(fd_mean, rel=1e-5, abs=1e-8)
            assert mom.grad_sd[i] == pytest.approx(fd_sd, rel=1e-5, abs=1e-8)
            fd_gm = (mp.grad_mean - mm.grad_mean) / (2 * h)
            fd_gs = (mp.grad_sd - mm.grad_sd) / (2 * h)
            assert np.allclose(fd_gm, mom.hess_mean[i], rtol=1e-4, atol=1e-6)
            assert np.allclose(fd_gs, mom.hess_sd[i], rtol=1e-4, atol=1e-6)


def test_posterior_rejects_degenerate_sd_for_derivatives():
    p = make_params(1)
    st = gp.fit(np.array([[0.0]]), np.array([1.0]), p, noise=0.0)
    with pytest.raises(DegenerateVarianceError):
        gp.posterior(st, np.array([0.0]), order=1)


def test_hess_sd_symmetric_to_machine_precision():
    rng = np.random.default_rng(2)
    for _ in range(10):
        st = random_state(rng, m=6, d=3, noise=1e-3)
        mom = gp.posterior(st, rng.uniform(-1, 1, size=3), order=2)
        assert np.array_equal(mom.hess_sd, mom.hess_sd.T)


def test_posterior_variance_never_exceeds_prior():
    rng = np.random.default_rng(3)
    st = random_state(rng, m=10, d=2, noise=1e-2)
    for _ in range(50):
        mom = gp.posterior(st, rng.uniform(-2, 2, size=2), order=0)
        assert mom.sd**2 <= st.params.amplitude + 1e-12


# --- incremental conditioning -------------------------------------------------


def test_condition_base_case_equals_fit():
    p = make_params(1)
    st0 = gp.fit(np.zeros((0, 1)), np.zeros(0), p, noise=1e-3)
    st1 = gp.condition(st0, np.array([0.2]), 0.7)
    st1b = gp.fit(np.array([[0.2]]), np.array([0.7]), p, noise=1e-3)
    for xq in np.linspace(-1, 1, 10):
        a = gp.posterior(st1, np.array([xq]), order=0)
        b = gp.posterior(st1b, np.array([xq]), order=0)
        assert a.mean == pytest.approx(b.mean, abs=1e-12)
        assert a.sd == pytest.approx(b.sd, abs=1e-12)


def test_ten_sequential_conditions_match_batch_fit():
    rng = np.random.default_rng(4)
    p = make_params(2)
    st = gp.fit(np.zeros((0, 2)), np.zeros(0), p, noise=1e-3)
    X, y = [], []
    for _ in range(10):
        x_new = rng.uniform(-1, 1, size=2)
        y_new = float(rng.normal())
        st = gp.condition(st, x_new, y_new)
        X.append(x_new)
        y.append(y_new)
    batch = gp.fit(np.array(X), np.array(y), p, noise=1e-3)
    for _ in range(10):
        xq = rng.uniform(-1, 1, size=2)
        a = gp.posterior(st, xq, order=0)
        b = gp.posterior(batch, xq, order=0)
        assert a.mean == pytest.approx(b.mean, abs=1e-10)
        assert a.sd == pytest.approx(b.sd, abs=1e-10)


def test_sequential_conditioning_cheaper_than_refits():
    rng = np.random.default_rng(5)
    p = make_params(1, ls=0.3)
    pts = rng.uniform(-3, 3, size=(200, 1))
    vals = rng.normal(size=200)

    t0 = time.perf_counter()
    st = gp.fit(np.zeros((0, 1)), np.zeros(0), p, noise=1e-2)
    for k in range(200):
        st = gp.condition(st, pts[k], vals[k])
    t_inc = time.perf_counter() - t0

    t0 = time.perf_counter()
    for k in range(1, 201):
        gp.fit(pts[:k], vals[:k], p, noise=1e-2)
    t_refit = time.perf_counter() - t0
    assert t_inc < t_refit


def test_condition_immutable_after_fantasy_rejected():
    rng = np.random.default_rng(6)
    st = random_state(rng, m=3, d=1, fantasies=1)
    with pytest.raises(ValueError):
        gp.condition(st, np.array([0.0]), 0.0, fantasy=False)


def test_condition_shares_no_buffers_with_parent():
    rng = np.random.default_rng(7)
    st = random_state(rng, m=4, d=1)
    st2 = gp.condition(st, np.array([0.1]), 0.3)
    assert st2.chol_buf is not st.chol_buf
    assert st2.c is not st.c


def test_condition_duplicate_point_falls_back_to_refit():
    # a noiseless duplicate drives the Schur pivot to zero
    p = make_params(1)
    st = gp.fit(np.array([[0.5]]), np.array([1.0]), p, noise=0.0)
    st2 = gp.condition(st, np.array([0.5]), 1.0, fantasy=True)
    assert st2.m == 2  # refit path succeeded with jitter


# --- fantasy (value, gradient) conditioning -----------------------------------


def test_condition_with_gradient_reproduces_pair():
    rng = np.random.default_rng(8)
    st = random_state(rng, m=4, d=2, noise=1e-4)
    x = np.array([0.3, -0.2])
    fgp = gp.condition_with_gradient(st, x, 0.9, np.array([0.5, -1.0]))
    mean, cov = gp.joint_moments(fgp, x)
    assert mean[0] == pytest.approx(0.9, abs=1e-6)
    assert np.allclose(mean[1:], [0.5, -1.0], atol=1e-6)
    assert np.sqrt(max(np.diag(cov).max(), 0.0)) <= 1e-6
    f, g = gp.sample_joint(fgp, x, rng.normal(size=3))
    assert f == pytest.approx(0.9, abs=1e-5)
    assert np.allclose(g, [0.5, -1.0], atol=1e-5)


def test_joint_covariance_psd_on_random_states():
    rng = np.random.default_rng(9)
    for _ in range(50):
        st = random_state(rng, m=3, d=1, noise=1e-4)
        fgp = gp.condition_with_gradient(
            st, rng.uniform(-1, 1, size=1), float(rng.normal()), rng.normal(size=1)
        )
        _, cov = gp.joint_moments(fgp, rng.uniform(-1, 1, size=1))
        assert np.linalg.eigvalsh(cov).min() >= -1e-9


def test_sample_joint_zero_draw_returns_mean():
    rng = np.random.default_rng(10)
    st = random_state(rng, m=4, d=1)
    fgp = gp.fantasy_from_state(st)
    xq = np.array([0.2])
    mean, _ = gp.joint_moments(fgp, xq)
    f, g = gp.sample_joint(fgp, xq, np.zeros(2))
    assert f == pytest.approx(mean[0], abs=1e-13)
    assert g[0] == pytest.approx(mean[1], abs=1e-13)


def test_sample_joint_deterministic():
    rng = np.random.default_rng(11)
    st = random_state(rng, m=4, d=1)
    fgp = gp.fantasy_from_state(st)
    z = rng.normal(size=2)
    out1 = gp.sample_joint(fgp, np.array([0.1]), z)
    out2 = gp.sample_joint(fgp, np.array([0.1]), z)
    assert out1[0] == out2[0]
    assert np.array_equal(out1[1], out2[1])


def test_sample_joint_monte_carlo_mean():
    rng = np.random.default_rng(12)
    st = random_state(rng, m=4, d=1, noise=1e-3)
    fgp = gp.condition_with_gradient(st, np.array([0.5]), 0.3, np.array([-0.4]))
    xq = np.array([-0.3])
    mean, cov = gp.joint_moments(fgp, xq)
    n = 100_000
    Z = rng.normal(size=(n, 2))
    L = np.linalg.cholesky(cov + 1e-14 * np.eye(2))
    draws = mean[None, :] + Z @ L.T
    # the sampler applies the same affine map, so spot-check a batch
    got = np.array([gp.sample_joint(fgp, xq, z) [0] for z in Z[:2000]])
    se = np.sqrt(cov[0, 0] / 2000)
    assert abs(got.mean() - mean[0]) <= 4 * se
    assert abs(draws[:, 0].mean() - mean[0]) <= 4 * np.sqrt(cov[0, 0] / n)


def test_fantasy_reduces_to_state_behavior():
    rng = np.random.default_rng(13)
    st = random_state(rng, m=5, d=1, noise=1e-3)
    fgp = gp.fantasy_from_state(st)
    for _ in range(5):
        xq = rng.uniform(-1, 1, size=1)
        mom = gp.posterior(st, xq, order=1)
        mean, cov = gp.joint_moments(fgp, xq)
        assert mean[0] == pytest.approx(mom.mean, abs=1e-12)
        assert np.sqrt(max(cov[0, 0], 0.0)) == pytest.approx(mom.sd, abs=1e-10)
        assert mean[1] == pytest.approx(mom.grad_mean[0], abs=1e-10)


# --- data derivatives ----------------------------------------------------------


@pytest.mark.parametrize("d", [1, 2])
def test_data_derivatives_match_finite_differences(d):
    rng = np.random.default_rng(40 + d)
    p = KernelParams(amplitude=1.2, lengthscales=np.full(d, 0.8))
    for _ in range(10):
        Xb = rng.uniform(-1, 1, size=(4, d))
        yb = rng.normal(size=4)
        x_f = rng.uniform(-1, 1, size=d)
        y_f = float(rng.normal())
        xq = rng.uniform(-1, 1, size=d)
        base = gp.fit(Xb, yb, p, noise=1e-3)
        st = gp.condition(base, x_f, y_f, fantasy=True)
        dd = gp.posterior_data_derivatives(st, xq, 4)
        eps = 1e-6

        def moments_with(dy=0.0, t=None, dx=0.0):
            xf = x_f.copy()
            if t is not None:
                xf[t] += dx
            b = gp.fit(Xb, yb, p, noise=1e-3)
            s = gp.condition(b, xf, y_f + dy, fantasy=True)
            return gp.posterior(s, xq, order=1)

        mp, mm = moments_with(dy=eps), moments_with(dy=-eps)
        assert dd.value.mu_dot == pytest.approx(
            (mp.mean - mm.mean) / (2 * eps), rel=1e-5, abs=1e-7)
        assert abs((mp.sd - mm.sd) / (2 * eps)) <= 1e-7  # sd free of y
        assert np.allclose(dd.value.grad_mu_dot,
                           (mp.grad_mean - mm.grad_mean) / (2 * eps),
                           rtol=1e-4, atol=1e-6)
        for t in range(d):
            mp = moments_with(t=t, dx=eps)
            mm = moments_with(t=t, dx=-eps)
            s = dd.location[t]
            assert s.mu_dot == pytest.approx(
                (mp.mean - mm.mean) / (2 * eps), rel=1e-5, abs=1e-6)
            assert s.sd_dot == pytest.approx(
                (mp.sd - mm.sd) / (2 * eps), rel=1e-5, abs=1e-6)
            assert np.allclose(s.grad_mu_dot,
                               (mp.grad_mean - mm.grad_mean) / (2 * eps),
                               rtol=1e-4, atol=1e-5)
            assert np.allclose(s.grad_sd_dot,
                               (mp.grad_sd - mm.grad_sd) / (2 * eps),
                               rtol=1e-4, atol=1e-5)


def test_data_derivatives_vanish_far_from_data():
    p = make_params(1, ls=0.2)
    base = gp.fit(np.array([[0.0]]), np.array([0.5]), p, noise=1e-4)
    st = gp.condition(base, np.array([0.5]), 0.1, fantasy=True)
    dd = gp.posterior_data_derivatives(st, np.array([30.0]), 1)
    assert abs(dd.value.mu_dot) <= 1e-8
    assert np.all(np.abs(dd.value.grad_mu_dot) <= 1e-8)
    for s in dd.location:
        assert abs(s.mu_dot) <= 1e-8 and abs(s.sd_dot) <= 1e-8


def test_data_derivatives_reject_immutable_index():
    rng = np.random.default_rng(14)
    st = random_state(rng, m=3, d=1, fantasies=1)
    with pytest.raises(ValueError):
        gp.posterior_data_derivatives(st, np.array([0.0]), 0)


# --- forward tangents of the joint draw ----------------------------------------


def test_sample_joint_tangent_matches_plain_draw():
    rng = np.random.default_rng(15)
    st = random_state(rng, m=4, d=2, noise=1e-3)
    fgp = gp.condition_with_gradient(st, np.array([0.2, 0.1]), 0.4,
                                     np.array([0.3, -0.2]))
    xq = np.array([-0.5, 0.6])
    z = rng.normal(size=3)
    tang = [(np.eye(2), np.zeros(2), np.zeros((2, 2)))]
    f1, g1 = gp.sample_joint(fgp, xq, z)
    f2, g2, _, _ = gp.sample_joint_tangent(fgp, xq, z, np.zeros((2, 2)), tang)
    assert f1 == f2
    assert np.array_equal(g1, g2)


def test_sample_joint_tangent_query_movement_fd():
    # moving only the query point: tangents vs finite differences
    rng = np.random.default_rng(16)
    st = random_state(rng, m=5, d=1, noise=1e-3)
    fgp = gp.condition_with_gradient(st, np.array([0.4]), 0.2, np.array([0.8]))
    z = rng.normal(size=2)
    tangents = [(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))]
    xq = np.array([-0.2])
    _, _, v, W = gp.sample_joint_tangent(fgp, xq, z, np.eye(1), tangents)
    h = 1e-6
    fp, gps = gp.sample_joint(fgp, xq + h, z)
    fm, gms = gp.sample_joint(fgp, xq - h, z)
    assert v[0] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-7)
    assert W[0, 0] == pytest.approx((gps[0] - gms[0]) / (2 * h), rel=1e-5, abs=1e-6)


def test_sample_joint_tangent_data_movement_fd():
    # moving the fantasy observation along a prescribed tangent
    rng = np.random.default_rng(17)
    st = random_state(rng, m=4, d=1, noise=1e-3)
    x_f = np.array([0.3])
    f_f, g_f = 0.5, np.array([-0.7])
    z = rng.normal(size=2)
    xq = np.array([-0.4])
    J_f = np.array([[0.6]])
    v_f = np.array([0.9])
    W_f = np.array([[-0.3]])

    fgp = gp.condition_with_gradient(st, x_f, f_f, g_f)
    _, _, v, W = gp.sample_joint_tangent(fgp, xq, z, np.zeros((1, 1)),
                                         [(J_f, v_f, W_f)])
    h = 1e-6

    def draw(eps):
        fgp_eps = gp.condition_with_gradient(
            st, x_f + J_f[0] * eps, f_f + v_f[0] * eps, g_f + W_f[:, 0] * eps)
        return gp.sample_joint(fgp_eps, xq, z)

    fp, gps = draw(h)
    fm, gms = draw(-h)
    assert v[0] == pytest.approx((fp - fm) / (2 * h), rel=1e-4, abs=1e-6)
    assert W[0, 0] == pytest.approx((gps[0] - gms[0]) / (2 * h), rel=1e-4, abs=1e-5)


# --- hyperparameter fitting -----------------------------------------------------


def test_fit_hypers_recovers_synthetic_lengthscale():
    rng = np.random.default_rng(18)
    true = KernelParams(amplitude=1.0, lengthscales=np.array([0.5]))
    X = rng.uniform(-2, 2, size=(40, 1))
    K = kernels.gram(X, true) + 1e-8 * np.eye(40)
    y = np.linalg.cholesky(K) @ rng.normal(size=40)
    fitted = gp.fit_hypers(X, y, noise_floor=1e-6, seed=0)
    assert 0.25 <= fitted.lengthscales[0] <= 1.0


def test_fit_hypers_constant_y_drives_amplitude_to_floor():
    X = np.linspace(-1, 1, 8)[:, None]
    y = np.full(8, 3.3)
    fitted = gp.fit_hypers(X, y, noise_floor=1e-6, seed=0)
    assert fitted.amplitude == pytest.approx(1e-3, rel=1e-6)


def test_fit_hypers_scale_equivariance():
    rng = np.random.default_rng(19)
    X = rng.uniform(-2, 2, size=(25, 1))
    y = np.sin(2.0 * X[:, 0]) + 0.05 * rng.normal(size=25)
    a1 = gp.fit_hypers(X, y, noise_floor=1e-8, seed=0).amplitude
    a2 = gp.fit_hypers(X, 2.0 * y, noise_floor=4e-8, seed=0).amplitude
    assert a2 == pytest.approx(4.0 * a1, rel=0.1)


def test_fit_hypers_requires_two_points():
    with pytest.raises(ValueError):
        gp.fit_hypers(np.array([[0.0]]), np.array([1.0]), noise_floor=1e-6)


def test_fit_duplicate_points_records_jitter():
    # exact duplicates at zero noise are only factorable with the escalated
    # diagonal jitter, which the state records
    p = make_params(1)
    X = np.array([[0.3], [0.3], [0.3]])
    y = np.array([1.0, 1.0, 1.0])
    st = gp.fit(X, y, p, noise=0.0)
    assert st.jitter > 0.0
    mom = gp.posterior(st, np.array([0.3]), order=0)
    assert mom.mean == pytest.approx(1.0, abs=1e-4)
