import numpy as np
import pytest

from labelmeasure.glmm import design_from_arrays, glm_loglik, pdev_gradient_fd, pirls
from labelmeasure.glmm.pirls import penalized_deviance
from oracles import irls_logistic, logistic_loglik


def crossed_data(seed, n_a=8, n_b=6, reps=3, sd=(0.8, 0.5)):
    rng = np.random.default_rng(seed)
    a = np.repeat(np.arange(n_a), n_b * reps)
    b = np.tile(np.repeat(np.arange(n_b), reps), n_a)
    x = rng.normal(size=a.size)
    eta = -0.3 + 0.6 * x + sd[0] * rng.normal(size=n_a)[a] + sd[1] * rng.normal(size=n_b)[b]
    y = (rng.uniform(size=a.size) < 1 / (1 + np.exp(-eta))).astype(float)
    X = np.column_stack([np.ones_like(x), x])
    return design_from_arrays(y, X, [a, b])


def test_intercept_only_is_sample_logit():
    y = np.array([1, 0, 0, 1, 0, 0, 0, 1, 0, 0], float)
    dm = design_from_arrays(y, groups=[[0, 0, 1, 1, 2, 2, 3, 3, 4, 4]])
    res = pirls(dm, [0.0])
    assert res.beta[0] == pytest.approx(np.log(0.3 / 0.7), abs=1e-10)


def test_theta_zero_matches_irls_oracle():
    dm = crossed_data(0)
    res = pirls(dm, [0.0, 0.0])
    beta, cov = irls_logistic(dm.X, dm.y)
    np.testing.assert_allclose(res.beta, beta, atol=1e-8)
    np.testing.assert_allclose(res.fixed_cov, cov, rtol=1e-6)
    assert res.laplace_loglik == pytest.approx(logistic_loglik(dm.X, dm.y, beta), abs=1e-8)
    assert res.laplace_loglik == pytest.approx(glm_loglik(dm, res.beta), abs=1e-10)


@pytest.mark.parametrize("theta", [(0.7, 0.4), (2.0, 0.0), (0.05, 1.5)])
def test_gradient_vanishes_at_mode(theta):
    dm = crossed_data(1)
    res = pirls(dm, theta)
    assert res.converged
    g = pdev_gradient_fd(dm, theta, res)
    assert np.linalg.norm(g) / max(1.0, abs(res.pdev)) < 1e-5


def test_mode_minimizes_penalized_deviance():
    dm = crossed_data(2)
    theta = (0.9, 0.6)
    res = pirls(dm, theta)
    base = penalized_deviance(dm, theta, res.beta, res.u)
    rng = np.random.default_rng(0)
    for _ in range(20):
        du = rng.normal(scale=1e-3, size=res.u.size)
        db = rng.normal(scale=1e-3, size=res.beta.size)
        assert penalized_deviance(dm, theta, res.beta + db, res.u + du) >= base - 1e-12


def test_logdet_matches_dense_computation():
    dm = crossed_data(3)
    theta = np.array([0.8, 0.5])
    res = pirls(dm, theta)
    lam = dm.expand_theta(theta)
    Z = dm.Z.toarray() * lam
    mu = 1 / (1 + np.exp(-(dm.X @ res.beta + Z @ res.u)))
    W = mu * (1 - mu)
    sign, ld = np.linalg.slogdet(np.eye(dm.q) + Z.T @ (Z * W[:, None]))
    assert sign > 0
    assert res.logdet == pytest.approx(ld, abs=1e-8)


def test_fixed_cov_is_schur_complement_inverse():
    dm = crossed_data(4)
    theta = np.array([0.8, 0.5])
    res = pirls(dm, theta)
    lam = dm.expand_theta(theta)
    Z = dm.Z.toarray() * lam
    mu = 1 / (1 + np.exp(-(dm.X @ res.beta + Z @ res.u)))
    W = mu * (1 - mu)
    A = np.block([[np.eye(dm.q) + Z.T @ (Z * W[:, None]), Z.T @ (dm.X * W[:, None])],
                  [dm.X.T @ (Z * W[:, None]), dm.X.T @ (dm.X * W[:, None])]])
    cov = np.linalg.inv(A)[dm.q:, dm.q:]
    np.testing.assert_allclose(res.fixed_cov, cov, rtol=1e-7)


def test_probit_link_converges():
    dm = crossed_data(5)
    dm = design_from_arrays(dm.y, dm.X, [dm.level_index[:, 0], dm.level_index[:, 1]], link="probit")
    res = pirls(dm, (0.5, 0.3))
    assert res.converged
    assert np.linalg.norm(pdev_gradient_fd(dm, (0.5, 0.3), res)) / abs(res.pdev) < 1e-5
