"""Penalized IRLS and the Laplace approximation for binomial GLMMs.

Random effects are handled in the spherical parameterization
``b = Lambda(theta) u`` with ``u ~ N(0, I)``, so the penalty is ``u'u`` and
a zero SD simply decouples its block (the conditional mode is then 0).

The working system has the form

    [ Lambda Z'WZ Lambda + I    Lambda Z'WX ]
    [ X'WZ Lambda               X'WX        ]

Z is one-hot per factor, so every block is a weighted co-occurrence count
and is assembled with ``bincount`` on the level codes. The block of the
factor with most levels is diagonal; it is eliminated first and the
remaining Schur complement is factorized densely with Cholesky.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from ..core import bernoulli_loglik, link_derivative_array, link_inverse_array
from ..errors import NumericalError
from .design import DesignMatrices

_PROB_EPS = 1e-15


@dataclass
class PirlsResult:
    beta: np.ndarray
    u: np.ndarray
    b: np.ndarray
    weights: np.ndarray
    pdev: float
    cond_loglik: float
    logdet: float
    fixed_cov: np.ndarray
    converged: bool
    n_iter: int

    @property
    def laplace_loglik(self) -> float:
        return self.cond_loglik - 0.5 * float(self.u @ self.u) - 0.5 * self.logdet


class WorkingStructure:
    """Theta- and weight-independent bookkeeping for one design."""

    def __init__(self, dm: DesignMatrices):
        self.dm = dm
        self.codes = [dm.level_index[:, k] for k in range(len(dm.factors))]
        self.sizes = [f.n_levels for f in dm.factors]
        self.offsets = [f.start for f in dm.factors]
        nf = len(dm.factors)
        self.big = int(np.argmax(self.sizes)) if nf else None
        self.rest = [k for k in range(nf) if k != self.big]
        # positions of the remaining random blocks inside the reduced system
        pos, self.rest_offsets = 0, {}
        for k in self.rest:
            self.rest_offsets[k] = pos
            pos += self.sizes[k]
        self.q_rest = pos
        self.n_reduced = pos + dm.p
        self.d_idx = (np.arange(self.offsets[self.big], self.offsets[self.big] + self.sizes[self.big])
                      if nf else np.arange(0))
        mask = np.ones(dm.q + dm.p, dtype=bool)
        mask[self.d_idx] = False
        self.r_idx = np.flatnonzero(mask)
        if nf:
            self._build_coupling_pattern()

    def _build_coupling_pattern(self):
        """Sparse pattern of the (reduced x eliminated) coupling block."""
        n = self.dm.n_obs
        nD = self.sizes[self.big]
        cD = self.codes[self.big]
        rows, cols, slot_of_obs = [], [], []
        nnz = 0
        for k in self.rest:
            key = self.codes[k] * nD + cD
            uniq, inv = np.unique(key, return_inverse=True)
            rows.append(self.rest_offsets[k] + uniq // nD)
            cols.append(uniq % nD)
            slot_of_obs.append(nnz + inv)
            nnz += uniq.size
        present = np.unique(cD)
        where = np.full(nD, -1)
        where[present] = np.arange(present.size)
        for j in range(self.dm.p):
            rows.append(np.full(present.size, self.q_rest + j))
            cols.append(present)
            slot_of_obs.append(nnz + where[cD])
            nnz += present.size
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        ids = np.arange(1, nnz + 1, dtype=float)
        pattern = sp.csr_matrix((ids, (rows, cols)), shape=(self.n_reduced, nD))
        self.coupling = pattern
        self.perm = pattern.data.astype(np.int64) - 1
        self.slots = slot_of_obs
        self.nnz = nnz
        self.n = n
        self.dense_coupling = nnz > 0.05 * self.n_reduced * nD

    def eta(self, x: np.ndarray, lam: np.ndarray) -> np.ndarray:
        dm = self.dm
        eta = dm.X @ x[dm.q:]
        for k, f in enumerate(dm.factors):
            if lam[f.start] != 0:
                eta = eta + lam[f.start] * x[f.start:f.stop][self.codes[k]]
        return eta

    def gradient(self, score: np.ndarray, x: np.ndarray, lam: np.ndarray) -> np.ndarray:
        dm = self.dm
        g = np.empty(dm.q + dm.p)
        for k, f in enumerate(dm.factors):
            t = lam[f.start]
            g[f.start:f.stop] = t * np.bincount(self.codes[k], weights=score, minlength=f.n_levels)
        g[dm.q:] = dm.X.T @ score
        g[: dm.q] -= x[: dm.q]
        return g

    def factorize(self, w: np.ndarray, theta: np.ndarray) -> "_WorkingSystem":
        return _WorkingSystem(self, w, np.asarray(theta, dtype=float))


class _WorkingSystem:
    def __init__(self, st: WorkingStructure, w: np.ndarray, theta: np.ndarray):
        dm = st.dm
        self.st = st
        nR = st.n_reduced
        X = dm.X
        M = np.zeros((nR, nR))
        Xw = X * w[:, None]
        M[st.q_rest:, st.q_rest:] = X.T @ Xw
        for a in st.rest:
            oa, na, ta = st.rest_offsets[a], st.sizes[a], theta[a]
            ca = st.codes[a]
            cnt = np.bincount(ca, weights=w, minlength=na)
            M[oa:oa + na, oa:oa + na] = np.diag(ta * ta * cnt + 1.0)
            for j in range(dm.p):
                col = ta * np.bincount(ca, weights=Xw[:, j], minlength=na)
                M[oa:oa + na, st.q_rest + j] = col
                M[st.q_rest + j, oa:oa + na] = col
            for b in st.rest:
                if b <= a:
                    continue
                ob, nb, tb = st.rest_offsets[b], st.sizes[b], theta[b]
                blk = np.bincount(ca * nb + st.codes[b], weights=w, minlength=na * nb)
                blk = (ta * tb) * blk.reshape(na, nb)
                M[oa:oa + na, ob:ob + nb] = blk
                M[ob:ob + nb, oa:oa + na] = blk.T
        if st.big is not None:
            tD = theta[st.big]
            nD = st.sizes[st.big]
            self.dd = tD * tD * np.bincount(st.codes[st.big], weights=w, minlength=nD) + 1.0
            if tD != 0:
                vals = np.zeros(st.nnz)
                for k, slot in zip(st.rest, st.slots):
                    vals += np.bincount(slot, weights=(theta[k] * tD) * w, minlength=st.nnz)
                for j in range(dm.p):
                    vals += np.bincount(st.slots[len(st.rest) + j], weights=tD * Xw[:, j],
                                        minlength=st.nnz)
                C = st.coupling.copy()
                C.data = vals[st.perm]
                if st.dense_coupling:
                    C = C.toarray()
                    M -= (C / self.dd) @ C.T
                else:
                    M -= (C @ sp.diags(1.0 / self.dd) @ C.T).toarray()
                self.C = C
            else:
                self.C = None
        else:
            self.dd = np.zeros(0)
            self.C = None
        M = 0.5 * (M + M.T)
        try:
            self.L = la.cholesky(M, lower=True, check_finite=True)
        except (la.LinAlgError, ValueError) as exc:
            try:
                cond = np.linalg.cond(M)
            except np.linalg.LinAlgError:
                cond = np.inf
            raise NumericalError(
                f"working system not positive definite (size {M.shape[0]}, "
                f"condition number {cond:.3g}, min weight {w.min():.3g})"
            ) from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        st = self.st
        out = np.empty_like(rhs)
        r_d = rhs[st.d_idx]
        r_r = rhs[st.r_idx]
        if self.C is not None:
            r_r = r_r - self.C @ (r_d / self.dd)
        x_r = la.cho_solve((self.L, True), r_r)
        out[st.r_idx] = x_r
        if st.d_idx.size:
            out[st.d_idx] = r_d / self.dd if self.C is None else (r_d - self.C.T @ x_r) / self.dd
        return out

    def logdet_random(self) -> float:
        """log det(Lambda Z'WZ Lambda + I)."""
        diag = np.diag(self.L)[: self.st.q_rest]
        return float(np.sum(np.log(self.dd)) + 2.0 * np.sum(np.log(diag)))

    def fixed_cov(self) -> np.ndarray:
        q = self.st.q_rest
        L22 = self.L[q:, q:]
        Linv = la.solve_triangular(L22, np.eye(L22.shape[0]), lower=True)
        return Linv.T @ Linv


def _weights(dm: DesignMatrices, eta: np.ndarray):
    mu = np.clip(link_inverse_array(dm.link, eta), _PROB_EPS, 1 - _PROB_EPS)
    dmu = link_derivative_array(dm.link, eta)
    var = mu * (1.0 - mu)
    w = dmu * dmu / var
    score = (dm.y - mu) * dmu / var
    return w, score


def pirls(dm: DesignMatrices, theta, start=None, *, tol: float = 1e-12,
          max_iter: int = 100, structure: WorkingStructure = None) -> PirlsResult:
    """Conditional modes and fixed effects at fixed random-effect SDs.

    Newton (Fisher scoring for non-canonical links) on the penalized
    deviance ``-2 l(y | beta, b) + u'u`` with step halving. Converged when the
    relative change in penalized deviance drops below ``tol``.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != len(dm.factors):
        raise ValueError(f"theta must have length {len(dm.factors)}")
    if np.any(theta < 0):
        raise ValueError("theta must be non-negative")
    st = structure if structure is not None else WorkingStructure(dm)
    q, p = dm.q, dm.p
    lam = dm.expand_theta(theta) if dm.factors else np.zeros(0)
    if start is not None:
        beta, u = (np.asarray(a, dtype=float).copy() for a in start)
    else:
        beta, u = np.zeros(p), np.zeros(q)
    u[lam == 0] = 0.0
    x = np.r_[u, beta]

    def pdev_of(x_):
        return float(-2.0 * bernoulli_loglik(dm.link, dm.y, st.eta(x_, lam)).sum() + x_[:q] @ x_[:q])

    pdev = pdev_of(x)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        w, score = _weights(dm, st.eta(x, lam))
        grad = st.gradient(score, x, lam)
        step = st.factorize(w, theta).solve(grad)
        factor = 1.0
        for _ in range(30):
            x_new = x + factor * step
            pdev_new = pdev_of(x_new)
            if pdev_new <= pdev + 1e-10 * abs(pdev):
                break
            factor *= 0.5
        else:
            break
        change = abs(pdev - pdev_new) / (abs(pdev_new) + 0.1)
        x, pdev = x_new, pdev_new
        if change < tol:
            converged = True
            break

    eta = st.eta(x, lam)
    w, _ = _weights(dm, eta)
    system = st.factorize(w, theta)
    u, beta = x[:q].copy(), x[q:].copy()
    return PirlsResult(
        beta=beta,
        u=u,
        b=lam * u,
        weights=w,
        pdev=pdev,
        cond_loglik=float(bernoulli_loglik(dm.link, dm.y, eta).sum()),
        logdet=system.logdet_random(),
        fixed_cov=system.fixed_cov(),
        converged=converged,
        n_iter=n_iter,
    )


def laplace_loglik(dm: DesignMatrices, theta, start=None) -> float:
    """Laplace-approximated marginal log-likelihood at ``theta``."""
    return pirls(dm, theta, start).laplace_loglik


def glm_loglik(dm: DesignMatrices, beta) -> float:
    """Log-likelihood with all random effects at zero."""
    return float(bernoulli_loglik(dm.link, dm.y, dm.X @ np.asarray(beta)).sum())


def penalized_deviance(dm: DesignMatrices, theta, beta, u) -> float:
    lam = dm.expand_theta(theta) if dm.factors else np.zeros(0)
    eta = dm.X @ np.asarray(beta) + dm.Z @ (lam * np.asarray(u))
    return float(-2.0 * bernoulli_loglik(dm.link, dm.y, eta).sum() + np.dot(u, u))


def pdev_gradient_fd(dm: DesignMatrices, theta, res: PirlsResult, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of the penalized deviance in (u, beta).

    Coordinates of zero-SD blocks are left at 0 (they are pinned there).
    """
    lam = dm.expand_theta(theta) if dm.factors else np.zeros(0)
    x0 = np.r_[res.u, res.beta]
    active = np.r_[lam > 0, np.ones(dm.p, dtype=bool)]
    g = np.zeros_like(x0)
    q = dm.q

    def f(x_):
        return penalized_deviance(dm, theta, x_[q:], x_[:q])

    for k in np.flatnonzero(active):
        step = h * max(1.0, abs(x0[k]))
        xp, xm = x0.copy(), x0.copy()
        xp[k] += step
        xm[k] -= step
        g[k] = (f(xp) - f(xm)) / (2 * step)
    return g
