"""Brute-force marginal likelihood by adaptive Gauss-Hermite quadrature.

A validation oracle only: it finds its own conditional modes (plain dense
Newton) and shares nothing with the PIRLS path beyond the design matrices
and the Bernoulli log-likelihood.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import logsumexp

from ..core import bernoulli_loglik
from ..errors import CapabilityError, NumericalError
from .design import DesignMatrices

MAX_EXACT_DIM = 6
MAX_GRID_POINTS = 4_000_000


def _newton_mode(h, grad, hess, u0, max_iter=200):
    u = u0.copy()
    for _ in range(max_iter):
        g = grad(u)
        H = hess(u)
        step = np.linalg.solve(H, g)
        t = 1.0
        f0 = h(u)
        while h(u + t * step) < f0 - 1e-12 and t > 1e-10:
            t *= 0.5
        u = u + t * step
        if np.max(np.abs(t * step)) < 1e-8:
            break
    return u


def _fd_derivs(f, eps=1e-5):
    def grad(u):
        g = np.empty_like(u)
        for k in range(u.size):
            e = np.zeros_like(u)
            e[k] = eps
            g[k] = (f(u + e) - f(u - e)) / (2 * eps)
        return g

    def hess(u):
        d = u.size
        H = np.empty((d, d))
        for a in range(d):
            for b in range(a, d):
                ea = np.zeros(d)
                eb = np.zeros(d)
                ea[a] = eps * 10
                eb[b] = eps * 10
                val = (f(u + ea + eb) - f(u + ea - eb) - f(u - ea + eb) + f(u - ea - eb)) / (4 * 100 * eps * eps)
                H[a, b] = H[b, a] = val
        return -H  # Newton on maximization: solve(-H'') g

    return grad, hess


def _group_integral(y, eta0, theta, link, nodes):
    """log of  int prod_r p(y_r | eta0_r + theta u) phi(u) du  by adaptive GH."""

    def h(u):
        return float(bernoulli_loglik(link, y, eta0 + theta * u).sum()) - 0.5 * u * u

    # 1-D Newton with analytic-free derivatives via central differences
    u = 0.0
    for _ in range(200):
        e = 1e-4
        f0, fp, fm = h(u), h(u + e), h(u - e)
        g = (fp - fm) / (2 * e)
        c = (fp - 2 * f0 + fm) / (e * e)
        if c >= 0:
            c = -1.0
        step = -g / c
        t = 1.0
        while h(u + t * step) < f0 - 1e-13 and t > 1e-10:
            t *= 0.5
        u += t * step
        if abs(t * step) < 1e-9:
            break
    e = 1e-4
    curv = -(h(u + e) - 2 * h(u) + h(u - e)) / (e * e)
    if not curv > 0:
        raise NumericalError("non-positive curvature at group mode")
    s = 1.0 / math.sqrt(curv)
    x, w = hermgauss(nodes)
    pts = u + math.sqrt(2.0) * s * x
    vals = np.array([h(pt) for pt in pts]) + x * x
    return float(logsumexp(vals, b=w)) + math.log(math.sqrt(2.0) * s) - 0.5 * math.log(2 * math.pi)


def _single_factor(dm, theta, beta, nodes):
    eta0 = dm.X @ beta
    f = dm.factors[0]
    codes = dm.level_index[:, 0]
    total = 0.0
    for g in range(f.n_levels):
        rows = codes == g
        total += _group_integral(dm.y[rows], eta0[rows], float(theta[0]), dm.link, nodes)
    return total


def _tensor_grid(dm, theta, beta, nodes):
    lam = dm.expand_theta(theta)
    active = lam > 0
    Zd = dm.Z.toarray()[:, active] * lam[active]
    d = Zd.shape[1]
    eta0 = dm.X @ beta
    if d == 0:
        return float(bernoulli_loglik(dm.link, dm.y, eta0).sum())
    if nodes ** d > MAX_GRID_POINTS:
        raise CapabilityError(f"{nodes}^{d} grid points exceed oracle budget")

    def h(u):
        return float(bernoulli_loglik(dm.link, dm.y, eta0 + Zd @ u).sum()) - 0.5 * float(u @ u)

    grad, hess = _fd_derivs(h)
    u_hat = _newton_mode(h, grad, lambda u: hess(u), np.zeros(d))
    H = hess(u_hat)  # negative Hessian of h
    H = 0.5 * (H + H.T)
    cov = np.linalg.inv(H)
    R = np.linalg.cholesky(cov)
    x, w = hermgauss(nodes)
    logw = np.log(w)
    chunks = []
    total = nodes ** d
    batch = 200_000
    for lo in range(0, total, batch):
        flat = np.arange(lo, min(lo + batch, total))
        idx = np.stack(np.unravel_index(flat, (nodes,) * d), axis=1)
        z = x[idx]
        u = u_hat + math.sqrt(2.0) * z @ R.T
        eta = eta0[None, :] + u @ Zd.T
        ll = bernoulli_loglik(dm.link, dm.y[None, :], eta).sum(axis=1)
        vals = ll - 0.5 * np.sum(u * u, axis=1) + np.sum(z * z, axis=1) + logw[idx].sum(axis=1)
        chunks.append(logsumexp(vals))
    log_jac = d * 0.5 * math.log(2.0) + float(np.sum(np.log(np.diag(R))))
    return float(logsumexp(chunks)) + log_jac - 0.5 * d * math.log(2 * math.pi)


def quadrature_oracle(dm: DesignMatrices, theta, beta, nodes: int = None,
                      tol: float = 1e-6, max_nodes: int = None) -> float:
    """Marginal log-likelihood at ``(theta, beta)`` by numerical integration.

    A single factor uses per-group 1-D adaptive Gauss-Hermite; otherwise a
    dense adaptive tensor grid over all random effects (at most
    ``MAX_EXACT_DIM`` of them). Node counts double until successive results
    agree to ``tol``.
    """
    theta = np.asarray(theta, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not dm.factors or np.all(theta == 0):
        return float(bernoulli_loglik(dm.link, dm.y, dm.X @ beta).sum())

    if len(dm.factors) == 1:
        run = _single_factor
        n = nodes or 16
        limit = max_nodes or 256
    else:
        dim = int(np.sum(dm.expand_theta(theta) > 0))
        if dim > MAX_EXACT_DIM:
            raise CapabilityError(
                f"tensor-grid oracle limited to {MAX_EXACT_DIM} random effects, got {dim}")
        run = _tensor_grid
        n = nodes or 4
        limit = max_nodes or int(MAX_GRID_POINTS ** (1.0 / max(dim, 1)))

    prev = run(dm, theta, beta, n)
    while True:
        n_next = 2 * n
        if n_next > limit:
            raise NumericalError(
                f"quadrature did not settle to {tol:g} within {limit} nodes")
        cur = run(dm, theta, beta, n_next)
        if abs(cur - prev) < tol:
            return cur
        prev, n = cur, n_next
