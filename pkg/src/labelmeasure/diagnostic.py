"""Measurement-regime diagnosis from fitted variance components.

The dominance threshold is artifact policy: it turns "one source is much
larger than the other" into a falsifiable ratio rule. Anything that is
neither clearly item-dominated nor clearly annotator-dominated is Hybrid.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from .errors import DataError
from .glmm.fit import FitResult

ROLES = ("item", "labeler", "judge", "interaction", "other")

# default roles for factor names produced by the pipeline and the simulator
DEFAULT_ROLES = {
    "item_id": "item",
    "annotator_id": "labeler",
    "labeler_id": "labeler",
    "judge_id": "judge",
    "labeler_id:judge_id": "interaction",
    "pair": "interaction",
    "item_id:annotator_id": "interaction",
    "annotator_id:item_id": "interaction",
    "trial": "other",
    "session": "other",
}


def infer_role(factor: str) -> str:
    if factor in DEFAULT_ROLES:
        return DEFAULT_ROLES[factor]
    parts = factor.split(":")
    if len(parts) > 1:
        return "interaction"
    name = factor.lower()
    for key, role in (("judge", "judge"), ("labeler", "labeler"), ("annotator", "labeler"),
                      ("item", "item"), ("doc", "item")):
        if key in name:
            return role
    return "other"


@dataclass(frozen=True)
class ComponentShare:
    factor: str
    role: str
    variance: float
    share: Optional[float]


@dataclass(frozen=True)
class VarianceProfile:
    components: List[ComponentShare]
    source: str = ""
    degenerate: bool = False

    def total(self, role: str) -> float:
        return sum(c.variance for c in self.components if c.role == role)

    @property
    def shares(self) -> Dict[str, Optional[float]]:
        return {c.factor: c.share for c in self.components}

    def to_dict(self) -> dict:
        return {"source": self.source, "degenerate": self.degenerate,
                "components": [c.__dict__ for c in self.components]}


def variance_profile(fit: FitResult, roles: Optional[Mapping[str, str]] = None) -> VarianceProfile:
    """Share of total random-effect variance per component (boundary components count as 0)."""
    if not fit.variance_components:
        raise DataError(f"fit {fit.model!r} has no variance components")
    roles = dict(roles or {})
    comps = []
    total = sum(vc.variance for vc in fit.variance_components)
    for vc in fit.variance_components:
        role = roles.get(vc.factor, infer_role(vc.factor))
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r} for {vc.factor}")
        share = vc.variance / total if total > 0 else None
        comps.append(ComponentShare(vc.factor, role, float(vc.variance), share))
    return VarianceProfile(comps, source=fit.model, degenerate=not total > 0)


class Regime(str, enum.Enum):
    GLOBAL = "Global"
    INDIVIDUAL = "Individual"
    HYBRID = "Hybrid"


@dataclass(frozen=True)
class RegimeDiagnosis:
    regime: Regime
    dominance_ratio: float
    leaning: Optional[str]
    evidence: Dict[str, dict]
    thresholds: Dict[str, object]
    profile: VarianceProfile = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime.value,
            "leaning": self.leaning,
            "dominance_ratio": self.dominance_ratio,
            "evidence": self.evidence,
            "thresholds": self.thresholds,
            "profile": self.profile.to_dict() if self.profile else None,
            "policy_note": "numeric thresholds are artifact policy, not estimates",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeDiagnosis":
        prof = d.get("profile")
        if prof is not None:
            prof = VarianceProfile([ComponentShare(**c) for c in prof["components"]],
                                   prof.get("source", ""), prof.get("degenerate", False))
        return cls(Regime(d["regime"]), d["dominance_ratio"], d.get("leaning"), d["evidence"],
                   d["thresholds"], prof)


def classify_regime(profile: VarianceProfile, dominance: float = 2.0,
                    judge_in_individual: bool = False) -> RegimeDiagnosis:
    """Global, Individual or Hybrid.

    Global when item variance is at least ``dominance`` times the summed
    labeler, judge and interaction variances. Individual when labeler plus
    interaction variance (plus judge, if ``judge_in_individual``) is at least
    ``dominance`` times the item variance. Otherwise Hybrid, leaning toward
    whichever of item and annotator-side (labeler + judge + interaction)
    variance is larger.
    """
    if profile.degenerate:
        raise DataError("variance profile is degenerate (all components zero)")
    if not dominance > 0:
        raise ValueError("dominance must be positive")
    item = profile.total("item")
    lab, judge, inter = profile.total("labeler"), profile.total("judge"), profile.total("interaction")
    annot_side = lab + judge + inter
    indiv_num = lab + inter + (judge if judge_in_individual else 0.0)

    g_rhs = dominance * annot_side
    i_rhs = dominance * item
    is_global = item >= g_rhs
    is_indiv = indiv_num >= i_rhs
    evidence = {
        "global": {"lhs": item, "rhs": g_rhs, "holds": bool(is_global),
                   "rule": "item >= dominance * (labeler + judge + interaction)"},
        "individual": {"lhs": indiv_num, "rhs": i_rhs, "holds": bool(is_indiv),
                       "rule": "labeler + interaction%s >= dominance * item"
                               % (" + judge" if judge_in_individual else "")},
        "sides": {"item": item, "annotator": annot_side},
    }
    big, small = max(item, annot_side), min(item, annot_side)
    ratio = big / small if small > 0 else float("inf")
    if is_global and not is_indiv:
        regime, leaning = Regime.GLOBAL, None
    elif is_indiv and not is_global:
        regime, leaning = Regime.INDIVIDUAL, None
    else:
        # both rules hold only when item and annotator-side variance are both zero
        regime = Regime.HYBRID
        leaning = "Individual" if annot_side > item else "Global" if item > annot_side else None
    return RegimeDiagnosis(regime, ratio, leaning, evidence,
                           {"dominance": dominance, "judge_in_individual": judge_in_individual},
                           profile)


@dataclass(frozen=True)
class ModelComparison:
    model: str
    n_obs: int
    n_params: int
    loglik: float
    aic: float
    delta_aic: float


def compare_models(fits: Sequence[FitResult]) -> List[ModelComparison]:
    """AIC differences relative to the best fit, in input order."""
    if len(fits) < 2:
        raise ValueError("need at least two fits to compare")
    ns = {f.n_obs for f in fits}
    if len(ns) != 1:
        raise DataError(f"cannot compare fits on different data (N = {sorted(ns)})")
    best = min(f.aic for f in fits)
    return [ModelComparison(f.model, f.n_obs, f.n_params, f.loglik, f.aic, f.aic - best) for f in fits]


def diagnosis_markdown(diag: RegimeDiagnosis) -> str:
    """One-page summary with a text bar per variance component."""
    lines = [f"## Measurement regime: {diag.regime.value}"
             + (f" (leaning {diag.leaning})" if diag.leaning else ""), ""]
    if diag.profile is not None:
        lines += [f"Source fit: `{diag.profile.source}`", "",
                  "| Component | Role | Variance | Share | |", "|---|---|---:|---:|---|"]
        for c in diag.profile.components:
            share = c.share or 0.0
            lines.append(f"| {c.factor} | {c.role} | {c.variance:.3f} | {share:.2f} | "
                         f"{'#' * int(round(share * 40))} |")
        lines.append("")
    ev = diag.evidence
    lines += [
        f"- Global rule: {ev['global']['rule']}: {ev['global']['lhs']:.4f} >= {ev['global']['rhs']:.4f} "
        f"is {str(ev['global']['holds']).lower()}",
        f"- Individual rule: {ev['individual']['rule']}: {ev['individual']['lhs']:.4f} >= "
        f"{ev['individual']['rhs']:.4f} is {str(ev['individual']['holds']).lower()}",
        f"- Item vs annotator-side variance: {ev['sides']['item']:.4f} vs {ev['sides']['annotator']:.4f} "
        f"(ratio {diag.dominance_ratio:.2f})",
        f"- Dominance threshold {diag.thresholds['dominance']} (artifact policy, not an estimate)",
    ]
    return "\n".join(lines) + "\n"
