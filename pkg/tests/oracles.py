"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def irls_logistic(X, y, tol=1e-12, max_iter=100):
    """Textbook iteratively reweighted least squares for logistic regression."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1 - mu)
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        if np.max(np.abs(new - beta)) < tol:
            beta = new
            break
        beta = new
    mu = 1.0 / (1.0 + np.exp(-(X @ beta)))
    cov = np.linalg.inv(X.T @ (X * (mu * (1 - mu))[:, None]))
    return beta, cov


def logistic_loglik(X, y, beta):
    eta = np.asarray(X) @ beta
    return float(np.sum(y * eta - np.log1p(np.exp(eta))))


def random_logistic_data(rng, n, p):
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))]) if p > 1 else np.ones((n, 1))
    beta = rng.normal(scale=0.7, size=p)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-(X @ beta)))).astype(float)
    return X, y


def consensus_by_hand(validations, labels):
    """Label with most "yes" verdicts per item, ties to first-declared label."""
    counts = {}
    for r in validations:
        if r["verdict"] != "yes":
            continue
        counts.setdefault(r["item_id"], {}).setdefault(r["label"], 0)
        counts[r["item_id"]][r["label"]] += 1
    out = {}
    for item, c in counts.items():
        best = max(c.values())
        out[item] = next(l for l in labels if c.get(l, 0) == best)
    return out


def normal_quantile_bisect(p):
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
