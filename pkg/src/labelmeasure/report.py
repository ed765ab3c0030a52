"""Assemble fits, comparisons, the regime diagnosis and exclusion counts into one document."""
from __future__ import annotations

import json
from typing import Dict, List, Optional, Sequence

from .diagnostic import RegimeDiagnosis, compare_models, diagnosis_markdown
from .glmm.fit import FitResult
from .glmm.summary import NOTE, models_table


def group_fits(fits: Sequence[FitResult]) -> List[List[FitResult]]:
    """Fits sharing outcome and N, in first-seen order."""
    groups: Dict[tuple, List[FitResult]] = {}
    for f in fits:
        groups.setdefault((f.outcome, f.n_obs), []).append(f)
    return list(groups.values())


def _comparison_rows(group):
    if len(group) < 2:
        return None
    return compare_models(group)


def _ledger_markdown(ledger: dict) -> List[str]:
    lines = ["## Exclusions", "", "| Stage | Rows in | Rows out | Excluded |", "|---|---:|---:|---|"]
    for stage, d in ledger.items():
        if "rows_in" not in d:
            continue
        reasons = ", ".join(f"{k}: {v}" for k, v in d["excluded"].items() if v) or "none"
        lines.append(f"| {stage} | {d['rows_in']} | {d['rows_out']} | {reasons} |")
    cons = ledger.get("consensus")
    if cons:
        lines += ["", f"Consensus defined for {cons['defined']} of {cons['items']} items "
                      f"({cons['excluded_no_valid_judgment']} without any valid judgment, "
                      f"{cons['ties']} ties broken by label order)."]
    return lines


def render_report(fits: Sequence[FitResult], diagnosis: Optional[RegimeDiagnosis] = None,
                  style: str = "markdown", ledger: Optional[dict] = None,
                  titles: Optional[Dict[str, str]] = None) -> str:
    """One document with every fit, AIC comparisons within each outcome, the
    regime diagnosis and the exclusion ledger.

    ``titles`` maps model names to column headings.
    """
    if not fits:
        raise ValueError("render_report needs at least one fit")
    titles = titles or {}
    groups = group_fits(fits)
    if style == "json":
        doc = {
            "schema": "labelmeasure.report/1",
            "fits": [f.to_dict() for f in fits],
            "comparisons": [
                [c.__dict__ for c in _comparison_rows(g)] for g in groups if len(g) > 1
            ],
            "diagnosis": diagnosis.to_dict() if diagnosis else None,
            "exclusions": ledger,
        }
        return json.dumps(doc, indent=2)
    if style != "markdown":
        raise ValueError(f"unknown style {style!r}")

    out = ["# Annotation error models", ""]
    for g in groups:
        out += [f"## Outcome `{g[0].outcome}` (N = {g[0].n_obs})", "",
                models_table(g, [titles.get(f.model, f.model) for f in g]), "",
                NOTE.format(pct=int(round(g[0].level * 100))), ""]
        cmp = _comparison_rows(g)
        if cmp:
            out += ["| Model | k | Log-Likelihood | AIC | ΔAIC |", "|---|---:|---:|---:|---:|"]
            out += [f"| {c.model} | {c.n_params} | {c.loglik:.2f} | {c.aic:.1f} | {c.delta_aic:.1f} |"
                    for c in cmp]
            out.append("")
        for f in g:
            for w in f.warnings:
                out.append(f"- {f.model}: {w}")
        if any(f.warnings for f in g):
            out.append("")
    if diagnosis is not None:
        out += [diagnosis_markdown(diagnosis).rstrip(), ""]
    if ledger:
        out += _ledger_markdown(ledger) + [""]
    return "\n".join(out)
