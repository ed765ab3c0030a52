"""Text renderings of fitted models."""
from __future__ import annotations

import json
from typing import Sequence

from .design import INTERCEPT
from .fit import FitResult


def stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.10:
        return "†"
    return ""


def format_or(c) -> str:
    return f"{c.odds_ratio:.2f} [{c.ci_low:.2f}, {c.ci_high:.2f}]{stars(c.p)}"


def _label(fit: FitResult, name: str) -> str:
    if name == INTERCEPT:
        return "Intercept"
    return fit.labels.get(name, name)


def models_table(fits: Sequence[FitResult], titles: Sequence[str] = None) -> str:
    """Side-by-side markdown table of several fits (rows aligned by term)."""
    titles = list(titles or [f.model for f in fits])
    terms, factors = [], []
    for f in fits:
        for c in f.coefficients:
            if c.name not in terms:
                terms.append(c.name)
        for vc in f.variance_components:
            if vc.factor not in factors:
                factors.append(vc.factor)
    labels = {}
    for f in fits:
        for key in terms + factors:
            labels.setdefault(key, _label(f, key))

    def row(cells):
        return "| " + " | ".join(cells) + " |"

    blank = [""] * len(fits)
    lines = [row([""] + [f"**{t}**" for t in titles]),
             row(["---"] + [":---:"] * len(fits)),
             row([f"**Fixed Effects (OR [{int(round(fits[0].level * 100))}% CI])**"] + blank)]
    for term in terms:
        cells = []
        for f in fits:
            try:
                cells.append(format_or(f.coef(term)))
            except KeyError:
                cells.append("---")
        lines.append(row([labels[term]] + cells))
    lines.append(row(["**Random Effects (Var / SD)**"] + blank))
    for fac in factors:
        cells = []
        for f in fits:
            try:
                vc = f.component(fac)
                cells.append(f"{vc.variance:.2f} / {vc.sd:.2f}" + (" (boundary)" if vc.boundary else ""))
            except KeyError:
                cells.append("---")
        lines.append(row([labels[fac]] + cells))
    lines.append(row(["**Model Fit**"] + blank))
    lines.append(row(["Log-Likelihood"] + [f"{f.loglik:.2f}" for f in fits]))
    lines.append(row(["AIC"] + [f"{f.aic:.1f}" for f in fits]))
    lines.append(row(["*N*"] + [str(f.n_obs) for f in fits]))
    lines.append(row(["Groups"] + [
        "; ".join(f"{labels.get(k, k)} = {v}" for k, v in f.n_groups.items()) or "---"
        for f in fits
    ]))
    if any(not f.converged for f in fits):
        lines.append(row(["Converged"] + ["yes" if f.converged else "NO" for f in fits]))
    return "\n".join(lines)


NOTE = ("ORs are odds ratios with {pct}% Wald confidence intervals. Continuous predictors "
        "standardized (per 1 SD). Significance: † p<.10, * p<.05, ** p<.01, *** p<.001.")


def summarize(fit: FitResult, style: str = "markdown") -> str:
    """Render one fit as JSON or as a markdown table."""
    if style == "json":
        return json.dumps(fit.to_dict(), indent=2)
    if style != "markdown":
        raise ValueError(f"unknown style {style!r}")
    out = [f"### {fit.model}", "", models_table([fit], ["Estimate"]), "",
           NOTE.format(pct=int(round(fit.level * 100)))]
    if fit.warnings:
        out += [""] + [f"- warning: {w}" for w in fit.warnings]
    return "\n".join(out) + "\n"
