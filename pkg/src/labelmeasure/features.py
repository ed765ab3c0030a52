"""Instance-level covariates of premise/hypothesis pairs.

Everything here is a rule-based heuristic so that results are deterministic
across platforms. Known limitations:

* sentences split on ``.!?`` followed by whitespace, so "Dr. Smith left."
  counts as two sentences;
* entities are capitalised tokens that do not open a sentence, plus
  numbers; a name at the start of a sentence is missed unless the next
  token is also capitalised.
"""
from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass
from decimal import Decimal, InvalidOperation
from typing import FrozenSet, List, Optional, Tuple

import numpy as np
import pandas as pd

from .core import IDK, MakesSense
from .errors import DataError

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)*")
_WORD = re.compile(r"[A-Za-z0-9]+(?:'[A-Za-z0-9]+)*")
_SENT_BREAK = re.compile(r"[.!?]+\s+")
_VOWELS = re.compile(r"[aeiouy]+")
_NUMBER = re.compile(r"\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?")

NEGATION_CUES = frozenset(["not", "no", "never", "none", "nobody", "nothing", "neither", "nor", "cannot"])
SPELLED_NUMBERS = {w: k for k, w in enumerate(
    "zero one two three four five six seven eight nine ten eleven twelve thirteen "
    "fourteen fifteen sixteen seventeen eighteen nineteen twenty".split())}

TEXT_FEATURES = ("lexical_overlap", "avg_toks_per_sent", "fk_grade", "neg_presence_flip",
                 "entity_jaccard", "num_norm_overlap")


class FeatureError(DataError):
    """Text that cannot be featurized (empty, or without any word token)."""


def sentences(text: str) -> List[str]:
    text = text.strip()
    return [s for s in _SENT_BREAK.split(text) if s.strip()]


def tokenize(text: str) -> Tuple[List[str], int]:
    """Lowercased word tokens and the sentence count."""
    if text is None or not str(text).strip():
        raise FeatureError("empty text")
    text = str(text)
    toks = _TOKEN.findall(text.lower())
    if not toks:
        raise FeatureError(f"no word tokens in {text!r}")
    return toks, len(sentences(text))


def syllables(word: str) -> int:
    w = word.lower()
    if len(w) > 3 and w.endswith("e"):
        w = w[:-1]
    return max(1, len(_VOWELS.findall(w)))


def jaccard(a: FrozenSet, b: FrozenSet) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def has_negation(tokens) -> bool:
    return any(t in NEGATION_CUES or t.endswith("n't") for t in tokens)


def entities(text: str) -> FrozenSet[str]:
    """Capitalised non-initial token runs plus normalized numbers."""
    found = set()
    for sent in sentences(text):
        words = _WORD.findall(sent)
        run = []
        for k, w in enumerate(words):
            cap = k > 0 and w[0].isupper() and w != "I"
            if cap:
                run.append(w.lower())
            elif run:
                found.add(" ".join(run))
                run = []
        if run:
            found.add(" ".join(run))
    found |= {f"#{n}" for n in _digit_numbers(text)}
    return frozenset(found)


def _normalize_number(s: str) -> str:
    try:
        d = Decimal(s.replace(",", ""))
    except InvalidOperation:  # pragma: no cover - regex only admits numerals
        return s
    d = d.normalize()
    return format(d.quantize(Decimal(1)) if d == d.to_integral() else d, "f")


def _digit_numbers(text: str):
    return {_normalize_number(m) for m in _NUMBER.findall(text)}


def numbers(text: str) -> FrozenSet[str]:
    """Numeric values mentioned as digits or as the words zero to twenty."""
    vals = set(_digit_numbers(text))
    vals |= {str(SPELLED_NUMBERS[t]) for t in _TOKEN.findall(text.lower()) if t in SPELLED_NUMBERS}
    return frozenset(vals)


@dataclass(frozen=True)
class FeatureVector:
    lexical_overlap: float
    avg_toks_per_sent: float
    fk_grade: float
    neg_presence_flip: int
    entity_jaccard: float
    num_norm_overlap: float
    ambiguity: Optional[bool] = None
    similarity: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def pair_features(premise: str, hypothesis: str, scope: str = "both") -> FeatureVector:
    """Text-derived features of one pair.

    ``scope`` selects the text(s) used for ``avg_toks_per_sent``:
    ``"both"`` (default), ``"premise"`` or ``"hypothesis"``.
    """
    tp, sp = tokenize(premise)
    th, sh = tokenize(hypothesis)
    words, sents = len(tp) + len(th), sp + sh
    syl = sum(syllables(t) for t in tp + th)
    fk = 0.39 * words / sents + 11.8 * syl / words - 15.59
    if scope == "both":
        avg = words / sents
    elif scope == "premise":
        avg = len(tp) / sp
    elif scope == "hypothesis":
        avg = len(th) / sh
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return FeatureVector(
        lexical_overlap=jaccard(frozenset(tp), frozenset(th)),
        avg_toks_per_sent=avg,
        fk_grade=fk,
        neg_presence_flip=int(has_negation(tp) != has_negation(th)),
        entity_jaccard=jaccard(entities(premise), entities(hypothesis)),
        num_norm_overlap=jaccard(numbers(premise), numbers(hypothesis)),
    )


def single_text_fk(text: str) -> float:
    toks, sents = tokenize(text)
    return 0.39 * len(toks) / sents + 11.8 * sum(map(syllables, toks)) / len(toks) - 15.59


def ambiguity_flag(validations: pd.DataFrame, item_id: str) -> Optional[bool]:
    """True iff at least two labels got a "makes sense" verdict; None if none did."""
    rows = validations[validations["item_id"] == item_id]
    valid = set(rows.loc[(rows["verdict"] == MakesSense.YES.value) & (rows["label"] != IDK), "label"])
    if not valid:
        return None
    return len(valid) >= 2


def ambiguity_table(validations: pd.DataFrame) -> pd.Series:
    """Vectorized :func:`ambiguity_flag` for every item in ``validations``."""
    ok = validations[(validations["verdict"] == MakesSense.YES.value) & (validations["label"] != IDK)]
    n = ok.groupby("item_id", sort=False)["label"].nunique()
    out = pd.Series(pd.NA, index=pd.unique(validations["item_id"]), dtype="object")
    out.loc[n.index] = (n >= 2).to_numpy()
    return out


def features_table(items: pd.DataFrame, validations: Optional[pd.DataFrame] = None,
                   scope: str = "both") -> Tuple[pd.DataFrame, dict]:
    """One feature row per item.

    Items whose text cannot be featurized keep their row with missing text
    features; items without any valid judgment get a missing ambiguity.
    The returned dict counts both.
    """
    amb = ambiguity_table(validations) if validations is not None else None
    rows, n_text_missing = [], 0
    for r in items.itertuples(index=False):
        rec = {"item_id": r.item_id}
        try:
            fv = pair_features(r.premise, r.hypothesis, scope)
            rec.update({k: getattr(fv, k) for k in TEXT_FEATURES})
        except FeatureError as exc:
            log.warning("features missing for %s: %s", r.item_id, exc)
            n_text_missing += 1
            rec.update({k: None for k in TEXT_FEATURES})
        a = None
        if amb is not None and r.item_id in amb.index and not pd.isna(amb[r.item_id]):
            a = bool(amb[r.item_id])
        rec["ambiguity"] = a
        sim = getattr(r, "similarity", None)
        rec["similarity"] = None if sim is None or pd.isna(sim) else float(sim)
        rows.append(rec)
    df = pd.DataFrame(rows, columns=["item_id", *TEXT_FEATURES, "ambiguity", "similarity"])
    counts = {"items": len(df), "text_missing": n_text_missing,
              "ambiguity_missing": int(df["ambiguity"].isna().sum())}
    return df, counts


def model_ready(features: pd.DataFrame) -> pd.DataFrame:
    """Cast feature columns for modelling (ambiguity as 0/1, NaN for missing)."""
    out = features.copy()
    for c in TEXT_FEATURES + ("similarity",):
        if c in out:
            out[c] = pd.to_numeric(out[c], errors="coerce").astype(float)
    if "ambiguity" in out:
        out["ambiguity"] = out["ambiguity"].map(lambda v: np.nan if v is None or pd.isna(v) else float(bool(v)))
    return out
