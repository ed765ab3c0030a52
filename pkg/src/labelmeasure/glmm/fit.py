"""Maximum-likelihood fitting of crossed random-intercept binomial GLMMs."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from ..core import norm_cdf, odds_ratio
from ..errors import NumericalError
from .design import DesignMatrices, ModelSpec, build_design
from .pirls import PirlsResult, WorkingStructure, pirls

log = logging.getLogger(__name__)

LOG_SD_BOUNDS = (math.log(1e-4), math.log(50.0))
BOUNDARY_SD = 1e-3
SEPARATION_LIMIT = 15.0


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    se: float
    z: float
    p: float
    odds_ratio: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class VarianceComponent:
    factor: str
    variance: float
    sd: float
    n_groups: int
    boundary: bool = False


@dataclass(frozen=True)
class FitResult:
    model: str
    outcome: str
    coefficients: List[Coefficient]
    variance_components: List[VarianceComponent]
    loglik: float
    aic: float
    n_obs: int
    converged: bool
    n_outer_iters: int
    theta: List[float]
    link: str = "logit"
    n_dropped: int = 0
    level: float = 0.95
    warnings: List[str] = field(default_factory=list)
    labels: dict = field(default_factory=dict)

    @property
    def n_groups(self) -> dict:
        return {vc.factor: vc.n_groups for vc in self.variance_components}

    @property
    def n_params(self) -> int:
        return len(self.coefficients) + len(self.theta)

    def coef(self, name: str) -> Coefficient:
        for c in self.coefficients:
            if c.name == name:
                return c
        raise KeyError(name)

    def component(self, factor: str) -> VarianceComponent:
        for vc in self.variance_components:
            if vc.factor == factor:
                return vc
        raise KeyError(factor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_groups"] = self.n_groups
        d["schema"] = "labelmeasure.fit/1"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        d = dict(d)
        d.pop("n_groups", None)
        d.pop("schema", None)
        d["coefficients"] = [Coefficient(**c) for c in d["coefficients"]]
        d["variance_components"] = [VarianceComponent(**v) for v in d["variance_components"]]
        return cls(**d)


class _Objective:
    """Negative Laplace log-likelihood over free log-SDs, with warm starts."""

    def __init__(self, dm: DesignMatrices, pinned: np.ndarray):
        self.dm = dm
        self.pinned = pinned
        self.structure = WorkingStructure(dm)
        self.start = None
        self.best = -np.inf
        self.best_theta = None
        self.history = []
        self.n_eval = 0

    def theta(self, x) -> np.ndarray:
        th = np.zeros(len(self.dm.factors))
        th[~self.pinned] = np.exp(np.clip(x, *LOG_SD_BOUNDS))
        return th

    def loglik(self, theta) -> float:
        start = None
        if self.start is not None:
            beta, b = self.start
            lam = self.dm.expand_theta(theta)
            u = np.divide(b, lam, out=np.zeros_like(b), where=lam > 0)
            start = (beta, u)
        res = pirls(self.dm, theta, start, structure=self.structure)
        self.start = (res.beta, res.b)
        ll = res.laplace_loglik
        self.n_eval += 1
        if ll > self.best:
            self.best, self.best_theta = ll, np.array(theta)
        self.history.append((np.array(theta), ll))
        return ll

    def __call__(self, x) -> float:
        try:
            ll = self.loglik(self.theta(x))
        except NumericalError:
            return np.inf
        return -ll if np.isfinite(ll) else np.inf


def _simplex(x0, step):
    k = x0.size
    pts = [x0]
    for i in range(k):
        e = np.zeros(k)
        e[i] = step
        pts.append(x0 + e)
    sim = np.array(pts)
    return np.clip(sim, *LOG_SD_BOUNDS)


def _nelder_mead(obj: _Objective, x0: np.ndarray, step: float, max_fev: int):
    bounds = [LOG_SD_BOUNDS] * x0.size
    opts = dict(xatol=1e-4, fatol=1e-6, maxfev=max_fev, adaptive=False,
                initial_simplex=_simplex(x0, step))
    return minimize(obj, x0, method="Nelder-Mead", bounds=bounds, options=opts)


def _newton_polish(obj: _Objective, x: np.ndarray, h: float = 1e-4, max_iter: int = 8):
    """Finite-difference Newton refinement so the optimum does not depend on the
    simplex path (matters for row-order and relabel invariance)."""
    k = x.size
    f = lambda z: obj(z)
    fx = f(x)
    for _ in range(max_iter):
        if not np.isfinite(fx):
            return x, fx
        g = np.empty(k)
        H = np.empty((k, k))
        fp = np.empty(k)
        fm = np.empty(k)
        for i in range(k):
            e = np.zeros(k)
            e[i] = h
            fp[i], fm[i] = f(x + e), f(x - e)
            g[i] = (fp[i] - fm[i]) / (2 * h)
            H[i, i] = (fp[i] - 2 * fx + fm[i]) / (h * h)
        if not (np.isfinite(fp).all() and np.isfinite(fm).all()):
            return x, fx
        for i in range(k):
            for j in range(i + 1, k):
                e = np.zeros(k)
                e[i] = e[j] = h
                H[i, j] = H[j, i] = (f(x + e) - fp[i] - fp[j] + fx) / (h * h)
        if not np.isfinite(H).all():
            return x, fx
        try:
            np.linalg.cholesky(H)
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return x, fx
        t = 1.0
        while t > 1e-6:
            x_new = np.clip(x + t * step, *LOG_SD_BOUNDS)
            f_new = f(x_new)
            if f_new <= fx + 1e-12:
                break
            t *= 0.5
        else:
            return x, fx
        done = np.max(np.abs(x_new - x)) < 1e-6
        x, fx = x_new, f_new
        if done:
            break
    return x, fx


def optimize_theta(dm: DesignMatrices, theta0=None, max_fev: int = 2000):
    """Maximize the Laplace log-likelihood over random-effect SDs.

    Nelder-Mead on log-SDs, then a restart from a fresh simplex at the
    optimum, then a finite-difference Newton polish. Components whose SD
    falls below ``BOUNDARY_SD`` after a simplex run are pinned to exactly 0
    and the remaining ones re-optimized.

    Returns ``(theta, boundary_mask, converged, n_outer_iters, history)``;
    ``history`` lists every ``(theta, loglik)`` evaluated.
    """
    nf = len(dm.factors)
    pinned = np.zeros(nf, dtype=bool)
    x = np.log(np.full(nf, 0.5) if theta0 is None
               else np.maximum(np.asarray(theta0, float), BOUNDARY_SD))
    history = []
    n_iter = 0
    fun_prev = None
    converged = False
    steps = [0.7] + [-0.25] * (nf + 1)
    for k, step in enumerate(steps):
        obj = _Objective(dm, pinned)
        free = x[~pinned]
        if free.size:
            r = _nelder_mead(obj, free, step, max_fev)
            n_iter += int(r.nit)
            x[~pinned] = r.x
            fun, ok = float(r.fun), bool(r.success)
        else:
            fun, ok = -obj.loglik(obj.theta(free)), True
        history.extend(obj.history)
        theta = obj.theta(x[~pinned])
        newly = (~pinned) & (theta < BOUNDARY_SD)
        if newly.any():
            pinned |= newly
            fun_prev = None
            continue
        if k >= 1 and fun_prev is not None:
            converged = ok and abs(fun - fun_prev) < 1e-3
            break
        fun_prev = fun
    obj = _Objective(dm, pinned)
    free = x[~pinned]
    if free.size:
        x_free, _ = _newton_polish(obj, free)
        x[~pinned] = x_free
    theta = obj.theta(x[~pinned])
    history.extend(obj.history)
    log.debug("outer search: %d evaluations, %d simplex iterations", len(history), n_iter)
    theta[pinned] = 0.0
    return theta, pinned, converged, n_iter, history


def _coefficients(dm: DesignMatrices, res: PirlsResult, level: float):
    se = np.sqrt(np.maximum(np.diag(res.fixed_cov), 0.0))
    out = []
    for name, est, s in zip(dm.fixed_names, res.beta, se):
        z = est / s if s > 0 else math.copysign(math.inf, est)
        p = 2.0 * norm_cdf(-abs(z))
        orat, lo, hi = odds_ratio(float(est), float(s), level)
        out.append(Coefficient(name, float(est), float(s), float(z), float(p), orat, lo, hi))
    return out


def fit_design(dm: DesignMatrices, *, name: str = "model", outcome: str = "y",
               level: float = 0.95, theta0=None, labels: Optional[dict] = None) -> FitResult:
    notes = []
    rank = np.linalg.matrix_rank(dm.X)
    if rank < dm.p:
        raise NumericalError(f"{name}: fixed-effect design is rank deficient (rank {rank} of {dm.p} columns, "
                             f"condition number {np.linalg.cond(dm.X):.3g})")
    if dm.factors:
        theta, boundary, converged, n_iter, _ = optimize_theta(dm, theta0)
    else:
        theta, boundary, converged, n_iter = np.zeros(0), np.zeros(0, bool), True, 0
    res = pirls(dm, theta)
    if not res.converged:
        notes.append("inner PIRLS did not converge at the final theta")
        converged = False
    loglik = res.laplace_loglik
    k = dm.p + len(dm.factors)
    coefs = _coefficients(dm, res, level)
    if np.any(np.abs(res.beta) > SEPARATION_LIMIT):
        notes.append("possible separation: |coefficient| > 15")
        warnings.warn(f"{name}: possible complete separation", ConvergenceWarning)
    if not converged:
        warnings.warn(f"{name}: outer optimization did not converge", ConvergenceWarning)
    vcs = [
        VarianceComponent(f.name, float(t * t), float(t), f.n_levels, bool(b))
        for f, t, b in zip(dm.factors, theta, boundary)
    ]
    return FitResult(
        model=name,
        outcome=outcome,
        coefficients=coefs,
        variance_components=vcs,
        loglik=float(loglik),
        aic=float(-2.0 * loglik + 2.0 * k),
        n_obs=dm.n_obs,
        converged=bool(converged),
        n_outer_iters=int(n_iter),
        theta=[float(t) for t in theta],
        link=dm.link.value,
        n_dropped=dm.n_dropped,
        level=level,
        warnings=notes,
        labels=dict(labels or {}),
    )


def fit(data: pd.DataFrame, spec: ModelSpec, *, level: float = 0.95, theta0=None) -> FitResult:
    """Build the design for ``spec`` and fit it by Laplace maximum likelihood."""
    dm = build_design(data, spec)
    log.info("fitting %s: n=%d, p=%d, factors=%s", spec.name, dm.n_obs, dm.p,
             {f.name: f.n_levels for f in dm.factors})
    return fit_design(dm, name=spec.name, outcome=spec.outcome, level=level,
                      theta0=theta0, labels=dict(spec.labels))
