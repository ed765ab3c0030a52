"""Synthetic annotation data from the latent-propensity model.

Every random quantity is derived from a counter-based hash of
``(seed, entity kind, entity ids)``, so enlarging a design never perturbs
the draws of entities that already existed.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from .core import GenerativeParams, LinkKind, link_inverse_array, norm_ppf
from .errors import ConfigError


class Regime(str, enum.Enum):
    GLOBAL = "global"
    HLV = "hlv"


class TrialEffect(str, enum.Enum):
    """How within-person noise is indexed.

    ``session``: one draw per (annotator, trial) occasion;
    ``trial``: one draw per trial index shared by everyone;
    ``cell``: one draw per (annotator, item, trial) observation.
    """

    SESSION = "session"
    TRIAL = "trial"
    CELL = "cell"


# entity-kind tags mixed into the hash
_ITEM, _ANNOT, _NOISE, _DELTA, _OUTCOME = 1, 2, 3, 4, 5
_P_LABELER, _P_JUDGE, _P_ITEM, _P_PAIR, _P_OUTCOME = 11, 12, 13, 14, 15

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def hash_uniform(seed: int, kind: int, *ids) -> np.ndarray:
    """Uniform(0, 1) variates keyed by ``(seed, kind, ids...)`` (broadcasting)."""
    arrays = np.broadcast_arrays(*[np.asarray(i, dtype=np.uint64) for i in ids]) if ids else []
    shape = arrays[0].shape if arrays else ()
    h = _splitmix(np.full(shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64))
    h = _splitmix(h ^ np.uint64(kind))
    for a in arrays:
        h = _splitmix(h ^ a)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def hash_normal(seed: int, kind: int, *ids) -> np.ndarray:
    return norm_ppf(hash_uniform(seed, kind, *ids))


@dataclass(frozen=True)
class SimDesign:
    n_items: int
    n_annotators: int
    n_trials: int = 1
    regime: Regime = Regime.GLOBAL
    seed: int = 0
    trial_effect: TrialEffect = TrialEffect.SESSION

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        object.__setattr__(self, "trial_effect", TrialEffect(self.trial_effect))
        for name in ("n_items", "n_annotators", "n_trials"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def n_rows(self) -> int:
        return self.n_items * self.n_annotators * self.n_trials

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "n_annotators": self.n_annotators,
            "n_trials": self.n_trials,
            "regime": self.regime.value,
            "seed": self.seed,
            "trial_effect": self.trial_effect.value,
        }


@dataclass(frozen=True)
class SimOutput:
    records: pd.DataFrame
    true_effects: Dict[str, Dict[str, float]]
    params: GenerativeParams
    design: SimDesign

    def truth_json(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "params": self.params.to_dict(),
            "effects": self.true_effects,
        }


def item_id(j) -> str:
    return f"item{j:05d}"


def annotator_id(i) -> str:
    return f"ann{i:03d}"


def simulate_correctness(design: SimDesign, params: GenerativeParams) -> SimOutput:
    """Fully crossed correctness data.

    Each row carries its latent propensity, the implied probability of a
    correct label, the Bernoulli draw ``correct`` and the error indicator
    ``z = 1 - correct``.
    """
    if params.delta_interp_sd > 0 and design.regime is not Regime.HLV:
        raise ConfigError("delta_interp_sd > 0 requires the HLV regime")
    s = int(design.seed)
    J, I, T = design.n_items, design.n_annotators, design.n_trials
    jj = np.arange(J, dtype=np.uint64)
    ii = np.arange(I, dtype=np.uint64)
    tt = np.arange(1, T + 1, dtype=np.uint64)

    beta = params.beta_item_sd * hash_normal(s, _ITEM, jj)
    rho = params.rho_annotator_sd * hash_normal(s, _ANNOT, ii)

    # row order: item-major, then annotator, then trial
    J_idx, I_idx, T_idx = np.meshgrid(jj, ii, tt, indexing="ij")
    J_idx, I_idx, T_idx = J_idx.ravel(), I_idx.ravel(), T_idx.ravel()

    if design.trial_effect is TrialEffect.SESSION:
        sess = params.sigma_trial_sd * hash_normal(s, _NOISE, ii[:, None], tt[None, :])
        sigma = sess[I_idx.astype(int), (T_idx - 1).astype(int)]
    elif design.trial_effect is TrialEffect.TRIAL:
        tr = params.sigma_trial_sd * hash_normal(s, _NOISE, tt)
        sigma = tr[(T_idx - 1).astype(int)]
    else:
        sigma = params.sigma_trial_sd * hash_normal(s, _NOISE, I_idx, J_idx, T_idx)

    delta_tab = params.delta_interp_sd * hash_normal(s, _DELTA, ii[:, None], jj[None, :])
    delta = delta_tab[I_idx.astype(int), J_idx.astype(int)]

    eta = params.mu + beta[J_idx.astype(int)] + rho[I_idx.astype(int)] + sigma
    if design.regime is Regime.HLV:
        eta = eta + delta
    prob = link_inverse_array(params.link, eta)
    correct = (hash_uniform(s, _OUTCOME, I_idx, J_idx, T_idx) < prob).astype(np.int64)

    a_ids = np.array([annotator_id(i) for i in range(I)])
    j_ids = np.array([item_id(j) for j in range(J)])
    records = pd.DataFrame({
        "item_id": j_ids[J_idx.astype(int)],
        "annotator_id": a_ids[I_idx.astype(int)],
        "trial": T_idx.astype(np.int64),
    })
    records["session"] = records["annotator_id"] + ":" + records["trial"].astype(str)
    records["propensity"] = eta
    records["p_correct"] = prob
    records["correct"] = correct
    records["z"] = 1 - correct

    effects = {
        "item": {j_ids[j]: float(beta[j]) for j in range(J)},
        "annotator": {a_ids[i]: float(rho[i]) for i in range(I)},
    }
    if design.trial_effect is TrialEffect.SESSION:
        effects["session"] = {f"{a_ids[i]}:{t + 1}": float(sess[i, t]) for i in range(I) for t in range(T)}
    elif design.trial_effect is TrialEffect.TRIAL:
        effects["trial"] = {str(t + 1): float(tr[t]) for t in range(T)}
    else:
        effects["cell"] = {
            f"{a_ids[i]}:{j_ids[j]}:{t}": float(v)
            for i, j, t, v in zip(I_idx.astype(int), J_idx.astype(int), T_idx.astype(int), sigma)
        }
    if design.regime is Regime.HLV:
        effects["interpretive"] = {
            f"{a_ids[i]}:{j_ids[j]}": float(delta_tab[i, j]) for i in range(I) for j in range(J)
        }
    return SimOutput(records=records, true_effects=effects, params=params, design=design)


PAIRWISE_COMPONENTS = ("labeler", "judge", "item", "interaction")


def simulate_pairwise(design: SimDesign, alpha: float, sds: Dict[str, float]) -> pd.DataFrame:
    """Validation outcomes for every (judge, labeler, item), self-pairs included.

    ``v`` is Bernoulli with logit ``alpha + u_labeler + u_judge + u_item +
    u_labeler:judge``. The realized effects ride along as columns prefixed
    ``u_``.
    """
    if design.n_annotators < 2:
        raise ConfigError("pairwise simulation needs at least two annotators")
    unknown = set(sds) - set(PAIRWISE_COMPONENTS)
    if unknown:
        raise ConfigError(f"unknown pairwise components: {sorted(unknown)}")
    sd = {k: float(sds.get(k, 0.0)) for k in PAIRWISE_COMPONENTS}
    if any(v < 0 for v in sd.values()):
        raise ConfigError("pairwise SDs must be >= 0")
    s = int(design.seed)
    A, J = design.n_annotators, design.n_items
    aa = np.arange(A, dtype=np.uint64)
    jj = np.arange(J, dtype=np.uint64)
    u_l = sd["labeler"] * hash_normal(s, _P_LABELER, aa)
    u_k = sd["judge"] * hash_normal(s, _P_JUDGE, aa)
    u_t = sd["item"] * hash_normal(s, _P_ITEM, jj)
    u_lk = sd["interaction"] * hash_normal(s, _P_PAIR, aa[:, None], aa[None, :])

    K_idx, L_idx, J_idx = (g.ravel().astype(int) for g in np.meshgrid(
        np.arange(A), np.arange(A), np.arange(J), indexing="ij"))
    eta = alpha + u_l[L_idx] + u_k[K_idx] + u_t[J_idx] + u_lk[L_idx, K_idx]
    v = (hash_uniform(s, _P_OUTCOME, K_idx.astype(np.uint64), L_idx.astype(np.uint64),
                      J_idx.astype(np.uint64)) < link_inverse_array(LinkKind.LOGIT, eta))
    a_ids = np.array([annotator_id(i) for i in range(A)])
    j_ids = np.array([item_id(j) for j in range(J)])
    out = pd.DataFrame({
        "item_id": j_ids[J_idx],
        "labeler_id": a_ids[L_idx],
        "judge_id": a_ids[K_idx],
        "v": v.astype(np.int64),
    })
    out["pair"] = out["labeler_id"] + ":" + out["judge_id"]
    out["u_labeler"] = u_l[L_idx]
    out["u_judge"] = u_k[K_idx]
    out["u_item"] = u_t[J_idx]
    out["u_interaction"] = u_lk[L_idx, K_idx]
    return out


PRESETS = ("instance_error", "between_person", "within_person", "interpretive")
PRESET_DESIGN = dict(n_items=200, n_annotators=30, n_trials=5)
DOMINANT_SD = 1.0
MINOR_SD = 0.05


def preset(name: str, seed: int = 0) -> Tuple[SimDesign, GenerativeParams]:
    """Canned configuration in which exactly one variance component dominates."""
    fields = {
        "instance_error": "beta_item_sd",
        "between_person": "rho_annotator_sd",
        "within_person": "sigma_trial_sd",
        "interpretive": "delta_interp_sd",
    }
    if name not in fields:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    sds = dict(beta_item_sd=MINOR_SD, rho_annotator_sd=MINOR_SD, sigma_trial_sd=MINOR_SD,
               delta_interp_sd=MINOR_SD)
    sds[fields[name]] = DOMINANT_SD
    # every preset keeps the HLV interpretive term so all four are comparable
    design = SimDesign(**PRESET_DESIGN, regime=Regime.HLV, seed=seed)
    return design, GenerativeParams(mu=0.0, **sds)
