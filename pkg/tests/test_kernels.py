import numpy as np
import pytest

from rollbo import kernels
from rollbo.kernels import KernelParams, RHO_EPS


def random_params(rng, d):
    return KernelParams(
        amplitude=float(rng.uniform(0.3, 3.0)),
        lengthscales=rng.uniform(0.3, 2.0, size=d),
    )


def test_scaled_distance_identity():
    p = KernelParams(amplitude=1.0, lengthscales=np.array([1.0, 2.0]))
    x = np.array([0.3, -0.7])
    rho, r = kernels.scaled_distance(x, x, p)
    assert rho == 0.0
    assert np.all(r == 0.0)


def test_scaled_distance_direct_arithmetic():
    p = KernelParams(amplitude=1.0, lengthscales=np.array([2.0]))
    rho, r = kernels.scaled_distance(np.array([3.0]), np.array([1.0]), p)
    assert r[0] == pytest.approx(1.0)
    assert rho == pytest.approx(1.0)


def test_scaled_distance_matches_norm_oracle():
    rng = np.random.default_rng(0)
    p = random_params(rng, 3)
    for _ in range(20):
        x, y = rng.normal(size=3), rng.normal(size=3)
        rho, _ = kernels.scaled_distance(x, y, p)
        # independently coded norm
        acc = 0.0
        for k in range(3):
            acc += ((x[k] - y[k]) / p.lengthscales[k]) ** 2
        assert rho == pytest.approx(acc**0.5, rel=1e-12)


def test_scaled_distance_dimension_mismatch():
    p = KernelParams(amplitude=1.0, lengthscales=np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        kernels.scaled_distance(np.array([1.0]), np.array([0.0, 0.0]), p)


def test_value_at_coincident_points_is_amplitude():
    rng = np.random.default_rng(1)
    for d in (1, 2, 4):
        p = random_params(rng, d)
        x = rng.normal(size=d)
        assert kernels.value(x, x, p) == pytest.approx(p.amplitude, rel=1e-14)


def test_value_decays_monotonically():
    p = KernelParams(amplitude=1.0, lengthscales=np.array([1.0]))
    vals = [kernels.value(np.array([t]), np.array([0.0]), p)
            for t in np.linspace(0.0, 10.0, 50)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-7


def test_value_matches_scalar_formula_oracle():
    # independent scalar implementation of the closed form at rho = 1
    import math

    amp = 1.0
    rho = 1.0
    expected = amp * (1 + math.sqrt(5) * rho + 5 * rho**2 / 3) * math.exp(-math.sqrt(5) * rho)
    p = KernelParams(amplitude=amp, lengthscales=np.array([1.0]))
    got = kernels.value(np.array([1.0]), np.array([0.0]), p)
    assert got == pytest.approx(expected, rel=1e-14)


def test_value_bounded_and_symmetric():
    rng = np.random.default_rng(2)
    p = random_params(rng, 2)
    for _ in range(50):
        x, y = rng.normal(size=2), rng.normal(size=2)
        kxy = kernels.value(x, y, p)
        assert abs(kxy) <= p.amplitude + 1e-15
        assert kxy == pytest.approx(kernels.value(y, x, p), rel=1e-14)


def test_grad_zero_at_coincident_points():
    p = KernelParams(amplitude=2.0, lengthscales=np.array([0.5, 1.5]))
    x = np.array([0.1, 0.2])
    assert np.all(kernels.grad(x, x, p) == 0.0)


def test_grad_sign_in_one_dimension():
    p = KernelParams(amplitude=1.0, lengthscales=np.array([1.0]))
    for dx in (-1.3, -0.2, 0.4, 2.0):
        g = kernels.grad(np.array([dx]), np.array([0.0]), p)
        assert np.sign(g[0]) == -np.sign(dx)


def test_grad_antisymmetric():
    rng = np.random.default_rng(3)
    p = random_params(rng, 3)
    x, y = rng.normal(size=3), rng.normal(size=3)
    assert np.allclose(kernels.grad(x, y, p), -kernels.grad(y, x, p), rtol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_grad_matches_finite_differences(d):
    rng = np.random.default_rng(10 + d)
    h = 1e-5
    for _ in range(100):
        p = random_params(rng, d)
        x, y = rng.normal(size=d), rng.normal(size=d)
        g = kernels.grad(x, y, p)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd = (kernels.value(x + e, y, p) - kernels.value(x - e, y, p)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-10)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_hess_matches_finite_differences(d):
    rng = np.random.default_rng(20 + d)
    h = 1e-5
    for _ in range(100):
        p = random_params(rng, d)
        x, y = rng.normal(size=d), rng.normal(size=d)
        H = kernels.hess(x, y, p)
        assert np.allclose(H, H.T, rtol=1e-13)
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            fd = (kernels.grad(x + e, y, p) - kernels.grad(x - e, y, p)) / (2 * h)
            assert np.allclose(fd, H[i], rtol=1e-5, atol=1e-8)


def test_hess_swap_invariance():
    rng = np.random.default_rng(4)
    p = random_params(rng, 2)
    x, y = rng.normal(size=2), rng.normal(size=2)
    assert np.allclose(kernels.hess(x, y, p), kernels.hess(y, x, p), rtol=1e-14)


def test_hess_limit_matches_taylor_oracle():
    # series oracle: psi = a (1 - (5/6) rho^2 + O(rho^4)) around 0, so the
    # second x-derivative at x == y is psi''(0)/l^2 = -(5/3) a / l^2
    def psi_series(r):
        return 1.0 - (5.0 / 6.0) * r * r

    rho = 1e-4
    taylor_second = (psi_series(2 * rho) - 2 * psi_series(rho) + psi_series(0.0)) / rho**2
    p = KernelParams(amplitude=1.0, lengthscales=np.array([1.0]))
    H = kernels.hess(np.array([0.4]), np.array([0.4]), p)
    assert H[0, 0] == pytest.approx(-5.0 / 3.0, rel=1e-12)
    assert H[0, 0] == pytest.approx(taylor_second, rel=1e-6)


def test_hess_negative_definite_at_center():
    rng = np.random.default_rng(5)
    for d in (1, 2, 4):
        p = random_params(rng, d)
        x = rng.normal(size=d)
        w = np.linalg.eigvalsh(kernels.hess(x, x, p))
        assert np.all(w < 0.0)


def test_branches_agree_at_threshold():
    # the general psi'(rho)/rho route and the closed-form limit route hand
    # over smoothly at each branch threshold
    p = KernelParams(amplitude=1.7, lengthscales=np.array([1.0]))
    rho = RHO_EPS
    psi = kernels.radial_profile(rho, p)
    assert abs(psi.dpsi / rho - kernels._dpsi_over_rho(rho, p.amplitude)) <= 1e-8
    rho_h = kernels.RHO_EPS_HESS
    psi_h = kernels.radial_profile(rho_h, p)
    general_cross = (psi_h.ddpsi - psi_h.dpsi / rho_h) / (rho_h * rho_h)
    limit_cross = kernels._radial_hess_coeff(rho_h, p.amplitude)
    assert abs(general_cross - limit_cross) <= 1e-8
    # the public functions are continuous across their branches
    for scale in (0.5, 2.0):
        x = np.array([RHO_EPS * scale])
        g = kernels.grad(x, np.array([0.0]), p)
        assert abs(g[0] - kernels._dpsi_over_rho(x[0], p.amplitude) * x[0]) <= 1e-8
        xh = np.array([rho_h * scale])
        H = kernels.hess(xh, np.array([0.0]), p)
        H_limit = (kernels._radial_hess_coeff(xh[0], p.amplitude) * xh[0] ** 2
                   + kernels._dpsi_over_rho(xh[0], p.amplitude))
        assert abs(H[0, 0] - H_limit) <= 1e-8


def test_third_rows_match_hess_finite_differences():
    rng = np.random.default_rng(6)
    for d in (1, 2):
        p = random_params(rng, d)
        x = rng.normal(size=d)
        Y = rng.normal(size=(4, d))
        T = kernels.third_rows(x, Y, p)
        h = 1e-5
        for l in range(d):
            e = np.zeros(d)
            e[l] = h
            _, _, Hp = kernels.rows_upto(x + e, Y, p, 2)
            _, _, Hm = kernels.rows_upto(x - e, Y, p, 2)
            assert np.allclose((Hp - Hm) / (2 * h), T[:, :, :, l], rtol=1e-4, atol=1e-7)
    # continuous zero limit at coincident points
    assert np.all(kernels.third_rows(x, x[None, :], p) == 0.0)


def test_rows_vectorization_matches_scalar_api():
    rng = np.random.default_rng(7)
    p = random_params(rng, 3)
    x = rng.normal(size=3)
    Y = rng.normal(size=(6, 3))
    k, G, H = kernels.rows_upto(x, Y, p, 2)
    for q in range(6):
        assert k[q] == pytest.approx(kernels.value(x, Y[q], p), rel=1e-13)
        assert np.allclose(G[q], kernels.grad(x, Y[q], p), rtol=1e-12, atol=1e-15)
        assert np.allclose(H[q], kernels.hess(x, Y[q], p), rtol=1e-12, atol=1e-13)


def test_params_validation():
    with pytest.raises(ValueError):
        KernelParams(amplitude=0.0, lengthscales=np.array([1.0]))
    with pytest.raises(ValueError):
        KernelParams(amplitude=1.0, lengthscales=np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        KernelParams(amplitude=1.0, lengthscales=np.array([1.0]), kind="rbf")
