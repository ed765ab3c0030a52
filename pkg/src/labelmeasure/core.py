"""Measurement-model primitives shared by the simulator, the GLMM engine and
the diagnostics.

Effects live on the latent (link) scale; probabilities only appear at the
link boundary.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

IDK = "idk"


class MakesSense(str, enum.Enum):
    """Verdict given by a judge on a (label, explanation) pair."""

    YES = "yes"
    NO = "no"
    IDK = "idk"

    @classmethod
    def parse(cls, value) -> "MakesSense":
        if isinstance(value, MakesSense):
            return value
        key = str(value).strip().lower()
        aliases = {
            "yes": cls.YES, "makessense": cls.YES, "true": cls.YES, "1": cls.YES,
            "no": cls.NO, "doesnotmakesense": cls.NO, "false": cls.NO, "0": cls.NO,
            "idk": cls.IDK, "i don't know": cls.IDK,
        }
        if key not in aliases:
            raise ValueError(f"unrecognised verdict {value!r}")
        return aliases[key]


class LinkKind(str, enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"

    @classmethod
    def parse(cls, value) -> "LinkKind":
        if isinstance(value, LinkKind):
            return value
        return cls(str(value).strip().lower())


class LabelSet:
    """Ordered set of task labels. Declaration order is the tie-break order."""

    def __init__(self, labels):
        labels = tuple(str(l) for l in labels)
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate labels in label set")
        if IDK in labels:
            raise ValueError("'idk' is a sentinel, not a label class")
        self.labels = labels
        self._rank = {l: k for k, l in enumerate(labels)}

    def __contains__(self, label) -> bool:
        return label in self._rank

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def rank(self, label: str) -> int:
        return self._rank[label]

    def validate(self, label: str) -> str:
        if label != IDK and label not in self._rank:
            raise ValueError(f"label {label!r} not in label set {self.labels}")
        return label

    def __repr__(self) -> str:
        return f"LabelSet({list(self.labels)!r})"


NLI_LABELS = LabelSet(["entailment", "neutral", "contradiction"])


@dataclass(frozen=True)
class AnnotationRecord:
    item_id: str
    annotator_id: str
    label: str
    trial: int = 1
    explanation: Optional[str] = None

    def __post_init__(self):
        if int(self.trial) < 1:
            raise ValueError("trial index must be >= 1")

    @property
    def key(self):
        return (self.item_id, self.annotator_id, self.trial)


@dataclass(frozen=True)
class ValidationRecord:
    item_id: str
    labeler_id: str
    judge_id: str
    label: str
    verdict: MakesSense

    @property
    def key(self):
        return (self.item_id, self.labeler_id, self.judge_id, self.label)

    @property
    def is_self(self) -> bool:
        return self.labeler_id == self.judge_id


@dataclass(frozen=True)
class GenerativeParams:
    """Latent parameter set driving simulation.

    ``mu`` is the item truth offset on the link scale (held constant across
    items); the remaining fields are standard deviations of independent
    zero-mean normal effects.
    """

    mu: float = 0.0
    beta_item_sd: float = 0.0
    rho_annotator_sd: float = 0.0
    sigma_trial_sd: float = 0.0
    delta_interp_sd: float = 0.0
    link: LinkKind = LinkKind.LOGIT

    def __post_init__(self):
        object.__setattr__(self, "link", LinkKind.parse(self.link))
        for name in ("beta_item_sd", "rho_annotator_sd", "sigma_trial_sd", "delta_interp_sd"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite value >= 0, got {v}")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "beta_item_sd": self.beta_item_sd,
            "rho_annotator_sd": self.rho_annotator_sd,
            "sigma_trial_sd": self.sigma_trial_sd,
            "delta_interp_sd": self.delta_interp_sd,
            "link": self.link.value,
        }


@dataclass(frozen=True)
class RealizedEffects:
    """Realized effect draws, keyed by entity index."""

    beta: Mapping[int, float] = field(default_factory=dict)
    rho: Mapping[int, float] = field(default_factory=dict)
    sigma: Mapping[tuple, float] = field(default_factory=dict)
    delta: Optional[Mapping[tuple, float]] = None


# --------------------------------------------------------------------------
# normal quantile (Wichura AS241, PPND16)

_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _poly(coefs, x):
    out = np.zeros_like(x)
    for c in reversed(coefs):
        out = out * x + c
    return out


def norm_ppf(p):
    """Inverse standard normal CDF (AS241; relative error about 1e-16).

    Accepts scalars or arrays; values outside (0, 1) map to -inf/inf/nan.
    """
    p_arr = np.asarray(p, dtype=float)
    q = p_arr - 0.5
    out = np.empty_like(q)
    central = np.abs(q) <= 0.425
    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _poly(_A, r) / _poly(_B, r)
    tail = ~central
    if np.any(tail):
        qt = q[tail]
        pt = p_arr[tail]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(qt < 0, pt, 1.0 - pt)
            r = np.sqrt(-np.log(r))
            near = r <= 5.0
            val = np.where(
                near,
                _poly(_C, r - 1.6) / _poly(_D, r - 1.6),
                _poly(_E, r - 5.0) / _poly(_F, r - 5.0),
            )
        val = np.where(qt < 0, -val, val)
        val = np.where(pt == 0, -np.inf, np.where(pt == 1, np.inf, val))
        val = np.where((pt < 0) | (pt > 1) | np.isnan(pt), np.nan, val)
        out[tail] = val
    if np.ndim(p) == 0:
        return float(out)
    return out


def norm_cdf(x):
    x_arr = np.asarray(x, dtype=float)
    out = ndtr(x_arr)
    return float(out) if np.ndim(x) == 0 else out


def z_value(level: float) -> float:
    """Two-sided critical value for a confidence ``level``."""
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    return norm_ppf(0.5 + level / 2.0)


# --------------------------------------------------------------------------
# links

def link_apply(kind: LinkKind, eta: float) -> float:
    """Map a latent propensity to a probability through the link CDF."""
    kind = LinkKind.parse(kind)
    eta = float(eta)
    if not math.isfinite(eta):
        raise ValueError(f"latent propensity must be finite, got {eta}")
    if kind is LinkKind.LOGIT:
        if eta >= 0:
            return 1.0 / (1.0 + math.exp(-eta))
        e = math.exp(eta)
        return e / (1.0 + e)
    return 0.5 * math.erfc(-eta / math.sqrt(2.0))


def link_inverse_array(kind: LinkKind, eta: np.ndarray) -> np.ndarray:
    kind = LinkKind.parse(kind)
    return expit(eta) if kind is LinkKind.LOGIT else ndtr(eta)


def link_derivative_array(kind: LinkKind, eta: np.ndarray) -> np.ndarray:
    """d mu / d eta."""
    kind = LinkKind.parse(kind)
    if kind is LinkKind.LOGIT:
        p = expit(eta)
        return p * (1.0 - p)
    return np.exp(-0.5 * eta * eta) / math.sqrt(2.0 * math.pi)


def bernoulli_loglik(kind: LinkKind, y: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Per-observation Bernoulli log-likelihood, stable in the tails."""
    kind = LinkKind.parse(kind)
    if kind is LinkKind.LOGIT:
        return y * eta - np.logaddexp(0.0, eta)
    return y * log_ndtr(eta) + (1.0 - y) * log_ndtr(-eta)


def latent_propensity(params: GenerativeParams, realized: RealizedEffects,
                      i: int, j: int, t: int, *, hlv: bool = False) -> float:
    """Latent propensity of annotator ``i`` on item ``j`` at trial ``t``.

    Under ``hlv`` the annotator-specific interpretive deviation is added to
    the item truth.
    """
    try:
        beta = realized.beta[j]
        rho = realized.rho[i]
        sigma = realized.sigma[(i, j, t)]
    except KeyError as exc:
        raise LookupError(f"missing effect draw for {exc.args[0]!r}") from None
    truth = params.mu
    if hlv:
        if realized.delta is None or (i, j) not in realized.delta:
            raise LookupError(f"missing interpretive deviation for {(i, j)!r}")
        truth = truth + realized.delta[(i, j)]
    return truth + beta + rho + sigma


def odds_ratio(coef: float, se: float, level: float = 0.95):
    """Odds ratio with a Wald interval, ``(or, lo, hi)``."""
    if not (math.isfinite(se) and se >= 0):
        raise ValueError("standard error must be finite and >= 0")
    z = z_value(level)
    return _exp(coef), _exp(coef - z * se), _exp(coef + z * se)


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf
