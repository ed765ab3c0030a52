"""From raw annotation and validation records to modelled outcome tables.

All inputs and outputs are newline-delimited JSON, one object per record.

items        {item_id, premise, hypothesis, ...extra columns}
annotations  {item_id, annotator_id, label, trial?, explanation?}
validations  {item_id, labeler_id, judge_id, label, verdict: yes|no|idk}

A labeler who gave several labels for one item keeps one outcome row per
distinct ``(item, annotator, label)``; distinct annotation records for the
same annotator and item therefore need distinct ``trial`` numbers.
"""
from __future__ import annotations

import json
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .core import IDK, NLI_LABELS, LabelSet, MakesSense
from .errors import IntegrityError, ParseError

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

ITEM_FIELDS = ("item_id", "premise", "hypothesis")
ANNOTATION_FIELDS = ("item_id", "annotator_id", "label")
VALIDATION_FIELDS = ("item_id", "labeler_id", "judge_id", "label", "verdict")


# ---------------------------------------------------------------- ndjson io

def read_ndjson(path: PathLike) -> List[Tuple[int, dict]]:
    """Return ``(line_number, record)`` pairs; blank lines are skipped."""
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path=str(path), line=lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not a JSON object", path=str(path), line=lineno)
            out.append((lineno, rec))
    return out


def _clean(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return None if np.isnan(v) else v
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_ndjson(df: pd.DataFrame, path: PathLike) -> Path:
    """Write rows as compact JSON lines in column order (deterministic bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(df.columns)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in df.itertuples(index=False, name=None):
            rec = {c: _clean(v) for c, v in zip(cols, row)}
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")
    return path


def load_table(path: PathLike) -> pd.DataFrame:
    """Read an NDJSON table written by :func:`write_ndjson`."""
    path = Path(path)
    if not path.exists():
        raise IntegrityError(f"missing input file: {path}")
    rows = [rec for _, rec in read_ndjson(path)]
    return pd.DataFrame(rows)


# ------------------------------------------------------------------ parsing

@dataclass(frozen=True)
class Dataset:
    """Parsed, integrity-checked inputs."""

    items: pd.DataFrame
    annotations: pd.DataFrame
    validations: pd.DataFrame
    label_set: LabelSet = NLI_LABELS

    def counts(self) -> Dict[str, int]:
        return {"items": len(self.items), "annotations": len(self.annotations),
                "validations": len(self.validations)}


def _require(rec: dict, fields, path, line):
    for f in fields:
        if f not in rec or rec[f] is None:
            raise ParseError(f"missing field {f!r}", path=str(path), line=line)
        if not isinstance(rec[f], str) or not rec[f].strip():
            raise ParseError(f"field {f!r} must be a non-empty string", path=str(path), line=line)


def _label(value, labels: LabelSet, path, line) -> str:
    v = str(value).strip().lower()
    try:
        return labels.validate(v)
    except ValueError as exc:
        raise ParseError(str(exc), path=str(path), line=line) from None


def _parse_items(path) -> pd.DataFrame:
    rows, seen = [], {}
    for line, rec in read_ndjson(path):
        _require(rec, ITEM_FIELDS, path, line)
        if rec["item_id"] in seen:
            raise IntegrityError(
                f"{path}:{line}: duplicate item_id {rec['item_id']!r} (first at line {seen[rec['item_id']]})")
        seen[rec["item_id"]] = line
        rows.append(rec)
    if not rows:
        raise IntegrityError(f"{path}: no records")
    return pd.DataFrame(rows)


def _parse_annotations(path, labels, known) -> pd.DataFrame:
    rows, seen = [], {}
    for line, rec in read_ndjson(path):
        _require(rec, ANNOTATION_FIELDS, path, line)
        trial = rec.get("trial", 1)
        if isinstance(trial, bool) or not isinstance(trial, int) or trial < 1:
            raise ParseError("field 'trial' must be a positive integer", path=str(path), line=line)
        expl = rec.get("explanation")
        if expl is not None and not isinstance(expl, str):
            raise ParseError("field 'explanation' must be a string", path=str(path), line=line)
        if rec["item_id"] not in known:
            raise IntegrityError(f"{path}:{line}: unknown item_id {rec['item_id']!r}")
        key = (rec["item_id"], rec["annotator_id"], trial)
        if key in seen:
            raise IntegrityError(
                f"{path}:{line}: duplicate (item_id, annotator_id, trial) = {key} (first at line {seen[key]})")
        seen[key] = line
        rows.append({"item_id": rec["item_id"], "annotator_id": rec["annotator_id"], "trial": trial,
                     "label": _label(rec["label"], labels, path, line), "explanation": expl})
    if not rows:
        raise IntegrityError(f"{path}: no records")
    return pd.DataFrame(rows, columns=["item_id", "annotator_id", "trial", "label", "explanation"])


def _parse_validations(path, labels, known) -> pd.DataFrame:
    rows, seen = [], {}
    for line, rec in read_ndjson(path):
        _require(rec, VALIDATION_FIELDS, path, line)
        try:
            verdict = MakesSense.parse(rec["verdict"])
        except ValueError as exc:
            raise ParseError(str(exc), path=str(path), line=line) from None
        if rec["item_id"] not in known:
            raise IntegrityError(f"{path}:{line}: unknown item_id {rec['item_id']!r}")
        label = _label(rec["label"], labels, path, line)
        key = (rec["item_id"], rec["labeler_id"], rec["judge_id"], label)
        if key in seen:
            raise IntegrityError(
                f"{path}:{line}: duplicate (item_id, labeler_id, judge_id, label) = {key} "
                f"(first at line {seen[key]})")
        seen[key] = line
        rows.append({"item_id": rec["item_id"], "labeler_id": rec["labeler_id"],
                     "judge_id": rec["judge_id"], "label": label, "verdict": verdict.value})
    if not rows:
        raise IntegrityError(f"{path}: no records")
    return pd.DataFrame(rows, columns=list(VALIDATION_FIELDS))


def parse_inputs(items_file: PathLike, annotations_file: PathLike, validations_file: PathLike,
                 label_set: LabelSet = NLI_LABELS) -> Dataset:
    """Parse and cross-check the three canonical input files.

    Raises
    ------
    ParseError
        Malformed JSON, missing or mistyped fields, unknown labels or
        verdicts; the message carries ``path:line``.
    IntegrityError
        Empty files, duplicate keys, or references to unknown items.
    """
    items = _parse_items(items_file)
    known = set(items["item_id"])
    ann = _parse_annotations(annotations_file, label_set, known)
    val = _parse_validations(validations_file, label_set, known)
    ds = Dataset(items, ann, val, label_set)
    log.info("parsed %s", ds.counts())
    return ds


# ---------------------------------------------------------------- ledger

@dataclass
class ExclusionLedger:
    """Row accounting for one outcome build: ``rows_in == rows_out + sum(excluded)``."""

    stage: str
    rows_in: int = 0
    rows_out: int = 0
    excluded: Dict[str, int] = field(default_factory=OrderedDict)

    def drop(self, reason: str, n: int = 1):
        self.excluded[reason] = self.excluded.get(reason, 0) + int(n)

    @property
    def balanced(self) -> bool:
        return self.rows_in == self.rows_out + sum(self.excluded.values())

    def to_dict(self) -> dict:
        return {"stage": self.stage, "rows_in": self.rows_in, "rows_out": self.rows_out,
                "excluded": dict(self.excluded)}


# ---------------------------------------------------------------- consensus

@dataclass(frozen=True)
class Consensus:
    mu_label: str
    valid_counts: Dict[str, int]
    tie: bool


@dataclass(frozen=True)
class ConsensusMap:
    """Per-item consensus label; ``excluded`` lists items with no valid judgment."""

    items: Dict[str, Consensus]
    excluded: Tuple[str, ...] = ()

    def __getitem__(self, item_id: str) -> Consensus:
        return self.items[item_id]

    def __contains__(self, item_id) -> bool:
        return item_id in self.items

    def __len__(self) -> int:
        return len(self.items)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"item_id": k, "mu_label": c.mu_label, "tie": c.tie, **{f"n_{l}": n for l, n in c.valid_counts.items()}}
            for k, c in self.items.items()
        ])


def infer_consensus(validations: pd.DataFrame, label_set: LabelSet = NLI_LABELS,
                    items: Optional[Iterable[str]] = None) -> ConsensusMap:
    """The label with the most "makes sense" verdicts, per item.

    IDK verdicts and IDK labels are dropped. Ties go to the label declared
    first in ``label_set`` and are flagged. Items in ``items`` (default: all
    items seen in ``validations``) that end up with no valid judgment are
    listed in ``excluded``.
    """
    order = list(dict.fromkeys(items if items is not None else validations["item_id"]))
    ok = validations[(validations["verdict"] == MakesSense.YES.value) & (validations["label"] != IDK)]
    tallies = ok.groupby(["item_id", "label"], sort=False).size()
    per_item: Dict[str, Dict[str, int]] = {}
    for (item, label), n in tallies.items():
        per_item.setdefault(item, {})[label] = int(n)
    out, excluded = {}, []
    for item in order:
        counts = per_item.get(item)
        if not counts:
            excluded.append(item)
            continue
        full = {l: counts.get(l, 0) for l in label_set}
        top = max(full.values())
        winners = [l for l in label_set if full[l] == top]
        out[item] = Consensus(winners[0], full, len(winners) > 1)
    if excluded:
        log.info("consensus undefined for %d item(s)", len(excluded))
    return ConsensusMap(out, tuple(excluded))


# ----------------------------------------------------------------- outcomes

GLOBAL_COLUMNS = ["item_id", "annotator_id", "label", "trial", "z"]
INDIVIDUAL_COLUMNS = ["item_id", "annotator_id", "label", "z"]
PAIRWISE_COLUMNS = ["item_id", "labeler_id", "judge_id", "label", "v", "pair"]


def self_validations(validations: pd.DataFrame) -> pd.DataFrame:
    return validations[validations["labeler_id"] == validations["judge_id"]]


def trial2_error(match: bool, sense: bool) -> int:
    """Explanation-adjusted error: wrong iff exactly one of label and explanation is off."""
    return int(match != sense)


def build_global_outcomes(annotations: pd.DataFrame, consensus: ConsensusMap,
                          validations: pd.DataFrame) -> Tuple[pd.DataFrame, ExclusionLedger]:
    """Two error trials per retained (item, annotator, label).

    Trial 1 flags a label that differs from consensus. Trial 2 also looks
    at the annotator's own verdict on their explanation: a matching label
    with a self-rejected explanation, or a non-matching label with a
    self-endorsed one, counts as an error.
    """
    ledger = ExclusionLedger("global", rows_in=len(annotations))
    selfv = self_validations(validations)
    verdict = {(r.item_id, r.labeler_id, r.label): r.verdict for r in selfv.itertuples(index=False)}
    rows, seen = [], set()
    for r in annotations.itertuples(index=False):
        key = (r.item_id, r.annotator_id, r.label)
        if r.label == IDK:
            ledger.drop("idk_label")
            continue
        if r.item_id not in consensus:
            ledger.drop("no_consensus")
            continue
        if key in seen:
            ledger.drop("repeated_label")
            continue
        v = verdict.get(key)
        if v is None:
            ledger.drop("missing_self_validation")
            continue
        if v == MakesSense.IDK.value:
            ledger.drop("idk_self_validation")
            continue
        seen.add(key)
        match = r.label == consensus[r.item_id].mu_label
        sense = v == MakesSense.YES.value
        rows.append((r.item_id, r.annotator_id, r.label, 1, int(not match)))
        rows.append((r.item_id, r.annotator_id, r.label, 2, trial2_error(match, sense)))
    ledger.rows_out = len(rows) // 2
    return pd.DataFrame(rows, columns=GLOBAL_COLUMNS), ledger


def build_individual_outcomes(validations: pd.DataFrame) -> Tuple[pd.DataFrame, ExclusionLedger]:
    """One row per self-validated (item, annotator, label); ``z = 1`` iff self-rejected."""
    selfv = self_validations(validations)
    ledger = ExclusionLedger("individual", rows_in=len(selfv))
    keep = selfv[(selfv["verdict"] != MakesSense.IDK.value) & (selfv["label"] != IDK)]
    ledger.drop("idk_verdict", int((selfv["verdict"] == MakesSense.IDK.value).sum()))
    ledger.drop("idk_label", int(((selfv["verdict"] != MakesSense.IDK.value) & (selfv["label"] == IDK)).sum()))
    out = pd.DataFrame({
        "item_id": keep["item_id"].to_numpy(),
        "annotator_id": keep["labeler_id"].to_numpy(),
        "label": keep["label"].to_numpy(),
        "z": (keep["verdict"] == MakesSense.NO.value).astype(np.int64).to_numpy(),
    }, columns=INDIVIDUAL_COLUMNS)
    ledger.rows_out = len(out)
    return out, ledger


def build_pairwise_table(validations: pd.DataFrame) -> Tuple[pd.DataFrame, ExclusionLedger]:
    """Every non-IDK validation event, self-pairs included; ``v = 1`` iff endorsed."""
    ledger = ExclusionLedger("pairwise", rows_in=len(validations))
    is_idk = validations["verdict"] == MakesSense.IDK.value
    idk_label = (~is_idk) & (validations["label"] == IDK)
    ledger.drop("idk_verdict", int(is_idk.sum()))
    ledger.drop("idk_label", int(idk_label.sum()))
    keep = validations[~is_idk & ~idk_label]
    out = pd.DataFrame({
        "item_id": keep["item_id"].to_numpy(),
        "labeler_id": keep["labeler_id"].to_numpy(),
        "judge_id": keep["judge_id"].to_numpy(),
        "label": keep["label"].to_numpy(),
        "v": (keep["verdict"] == MakesSense.YES.value).astype(np.int64).to_numpy(),
    })
    out["pair"] = out["labeler_id"] + ":" + out["judge_id"]
    ledger.rows_out = len(out)
    return out[PAIRWISE_COLUMNS], ledger


def join_features(outcomes: pd.DataFrame, features: pd.DataFrame) -> pd.DataFrame:
    """Left-join item-level feature columns onto an outcome table."""
    cols = [c for c in features.columns if c == "item_id" or c not in outcomes.columns]
    return outcomes.merge(features[cols], on="item_id", how="left", sort=False)


@dataclass(frozen=True)
class Outcomes:
    global_: pd.DataFrame
    individual: pd.DataFrame
    pairwise: pd.DataFrame
    consensus: ConsensusMap
    ledgers: Tuple[ExclusionLedger, ...]

    def ledger_dict(self) -> dict:
        d = {led.stage: led.to_dict() for led in self.ledgers}
        d["consensus"] = {
            "items": len(self.consensus) + len(self.consensus.excluded),
            "defined": len(self.consensus),
            "excluded_no_valid_judgment": len(self.consensus.excluded),
            "ties": sum(c.tie for c in self.consensus.items.values()),
        }
        return d


def build_outcomes(ds: Dataset) -> Outcomes:
    """Run all three outcome builders on a parsed dataset."""
    cons = infer_consensus(ds.validations, ds.label_set, items=ds.items["item_id"])
    g, lg = build_global_outcomes(ds.annotations, cons, ds.validations)
    i, li = build_individual_outcomes(ds.validations)
    p, lp = build_pairwise_table(ds.validations)
    for led in (lg, li, lp):
        log.info("%s outcomes: %d in, %d out, excluded %s", led.stage, led.rows_in, led.rows_out,
                 dict(led.excluded) or "none")
    return Outcomes(g, i, p, cons, (lg, li, lp))


def error_rate_by_trial(global_rows: pd.DataFrame) -> Dict[int, float]:
    return {int(t): float(g["z"].mean()) for t, g in global_rows.groupby("trial")}


def label_disagreement_tally(rows: pd.DataFrame, consensus: ConsensusMap) -> Counter:
    """Independent count of (retained label == consensus) used to cross-check trial 1."""
    c = Counter()
    for r in rows[rows["trial"] == 1].itertuples(index=False):
        c["match" if r.label == consensus[r.item_id].mu_label else "differ"] += 1
    return c
