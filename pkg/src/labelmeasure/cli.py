"""Command-line entry point: simulate -> features -> outcomes -> fit -> diagnose -> report.

Every stage reads and writes flat files in the output directory and records
them, with SHA-256 hashes, in ``manifest.json``. Timestamps live only in the
manifest, so all other artifacts are byte-identical across reruns.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

import pandas as pd

from . import __version__
from .core import GenerativeParams, LabelSet, LinkKind, NLI_LABELS
from .diagnostic import RegimeDiagnosis, classify_regime, diagnosis_markdown, variance_profile
from .errors import ConfigError, DataError, LabelMeasureError
from .features import TEXT_FEATURES, features_table, model_ready
from .glmm.design import ModelSpec, factor_columns
from .glmm.fit import FitResult, fit
from .glmm.summary import summarize
from .pipeline import build_outcomes, load_table, parse_inputs, write_ndjson
from .report import render_report
from .simulate import PRESETS, Regime, SimDesign, TrialEffect, preset, simulate_correctness, simulate_pairwise

log = logging.getLogger("labelmeasure")

STAGES = ("simulate", "features", "outcomes", "fit", "diagnose", "report")
FORMATS = ("markdown", "json")

FEATURE_LABELS = {
    "ambiguity": "Ambiguity (TRUE)",
    "lexical_overlap": "Lexical Overlap (1 SD)",
    "avg_toks_per_sent": "Avg. Toks/Sent (1 SD)",
    "neg_presence_flip": "Neg. Presence Flip",
    "entity_jaccard": "Entity Jaccard (1 SD)",
    "num_norm_overlap": "Norm. Overlap (1 SD)",
    "fk_grade": "FK Grade (1 SD)",
    "similarity": "Similarity (1 SD)",
}
GLOBAL_LABELS = {"item_id": "Document (Intercept)", "annotator_id": "Labeler (Intercept)",
                 "trial": "Trial (Intercept)"}
PAIRWISE_LABELS = {"item_id": "Document", "judge_id": "Judge", "labeler_id": "Labeler",
                   "pair": "Labeler–Judge (Interaction)"}
BASELINE = ["lexical_overlap", "avg_toks_per_sent", "neg_presence_flip", "entity_jaccard", "num_norm_overlap"]
CONTINUOUS = ["lexical_overlap", "avg_toks_per_sent", "entity_jaccard", "num_norm_overlap"]


# ------------------------------------------------------------------ config

@dataclass
class ModelBlock:
    name: str
    table: str
    spec: ModelSpec
    title: str = ""


@dataclass
class RunConfig:
    out: Path
    seed: int = 0
    formats: List[str] = field(default_factory=lambda: ["markdown", "json"])
    input: Optional[dict] = None
    simulation: Optional[dict] = None
    features: dict = field(default_factory=lambda: {"enabled": True, "scope": "both"})
    models: List[ModelBlock] = field(default_factory=list)
    diagnostic: dict = field(default_factory=dict)
    level: float = 0.95
    base_dir: Path = Path(".")

    @property
    def mode(self) -> str:
        return "input" if self.input is not None else "simulation"

    def model(self, name: str) -> ModelBlock:
        for m in self.models:
            if m.name == name:
                return m
        raise ConfigError(f"diagnostic.model: no model named {name!r}")

    def input_path(self, key: str) -> Path:
        p = Path(self.input[key])
        return p if p.is_absolute() else self.base_dir / p


def _spec(name: str, table: str, fixed=(), random=(), standardize=(), labels=None,
          outcome: str = "z") -> ModelBlock:
    labs = dict(labels or {})
    labs.update({k: v for k, v in FEATURE_LABELS.items() if k in fixed})
    return ModelBlock(name, table, ModelSpec(outcome, tuple(fixed), tuple(random), LinkKind.LOGIT,
                                             tuple(standardize), name, labs))


def default_models(mode: str, simulation: Optional[dict] = None) -> List[ModelBlock]:
    if mode == "input":
        g_rand = ["annotator_id", "trial"]
        return [
            _spec("global_random", "global", random=["item_id"] + g_rand, labels=GLOBAL_LABELS),
            _spec("global_features", "global", BASELINE, g_rand, CONTINUOUS, GLOBAL_LABELS),
            _spec("global_ambiguity", "global", ["ambiguity"] + BASELINE, g_rand, CONTINUOUS, GLOBAL_LABELS),
            _spec("individual_random", "individual", random=["item_id", "annotator_id"], labels=GLOBAL_LABELS),
            _spec("individual_features", "individual", BASELINE, ["annotator_id"], CONTINUOUS, GLOBAL_LABELS),
            _spec("individual_ambiguity", "individual", ["ambiguity"] + BASELINE, ["annotator_id"],
                  CONTINUOUS, GLOBAL_LABELS),
            _spec("pairwise", "pairwise", random=["item_id", "judge_id", "labeler_id", "pair"],
                  labels=PAIRWISE_LABELS, outcome="v"),
        ]
    trial_effect = TrialEffect((simulation or {}).get("trial_effect", "session"))
    noise = {TrialEffect.SESSION: ["session"], TrialEffect.TRIAL: ["trial"], TrialEffect.CELL: []}[trial_effect]
    models = [_spec("correctness", "correctness",
                    random=["item_id", "annotator_id", "item_id:annotator_id"] + noise,
                    labels={"item_id": "Item", "annotator_id": "Annotator",
                            "item_id:annotator_id": "Annotator × Item", "session": "Session",
                            "trial": "Trial"})]
    if (simulation or {}).get("pairwise"):
        models.append(_spec("pairwise", "pairwise", random=["item_id", "judge_id", "labeler_id", "pair"],
                            labels=PAIRWISE_LABELS, outcome="v"))
    return models


def _model_block(name: str, d: dict) -> ModelBlock:
    allowed = {"table", "outcome", "fixed", "random", "standardize", "link", "labels", "title"}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"models.{name}: unknown field(s) {sorted(extra)}")
    if "table" not in d:
        raise ConfigError(f"models.{name}.table is required")
    try:
        spec = ModelSpec(d.get("outcome", "z"), tuple(d.get("fixed", ())), tuple(d.get("random", ())),
                         LinkKind.parse(d.get("link", "logit")), tuple(d.get("standardize", ())), name,
                         {**FEATURE_LABELS, **dict(d.get("labels", {}))})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"models.{name}: {exc}") from None
    return ModelBlock(name, str(d["table"]), spec, str(d.get("title", "")))


def parse_config(raw: dict, base_dir: Path = Path("."), out: Optional[str] = None,
                 seed: Optional[int] = None) -> RunConfig:
    known = {"seed", "out", "formats", "input", "simulation", "features", "models", "diagnostic", "fit"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown top-level field(s) {sorted(extra)}")
    has_in, has_sim = "input" in raw, "simulation" in raw
    if has_in == has_sim:
        raise ConfigError("config must contain exactly one of [input] or [simulation]")
    if has_in:
        for key in ("items", "annotations", "validations"):
            if key not in raw["input"]:
                raise ConfigError(f"input.{key} is required")
    out_dir = out or raw.get("out")
    if not out_dir:
        raise ConfigError("out: output directory not given (config 'out' or --out)")
    seed = int(raw.get("seed", 0) if seed is None else seed)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be a non-negative 64-bit integer")
    formats = list(raw.get("formats", ["markdown", "json"]))
    for f in formats:
        if f not in FORMATS:
            raise ConfigError(f"formats: unknown format {f!r}")
    level = float(raw.get("fit", {}).get("level", 0.95))
    if not 0 < level < 1:
        raise ConfigError("fit.level must be in (0, 1)")
    mode = "input" if has_in else "simulation"
    if "models" in raw:
        models = [_model_block(n, d) for n, d in raw["models"].items()]
    else:
        models = default_models(mode, raw.get("simulation"))
    if not models:
        raise ConfigError("models: at least one model is required")
    out_path = Path(out_dir)
    if not out_path.is_absolute() and out is None:
        out_path = base_dir / out_path
    cfg = RunConfig(out=out_path, seed=seed, formats=formats, input=raw.get("input"),
                    simulation=raw.get("simulation"),
                    features={"enabled": True, "scope": "both", **raw.get("features", {})},
                    models=models, diagnostic=dict(raw.get("diagnostic", {})), level=level,
                    base_dir=base_dir)
    if cfg.features["scope"] not in ("both", "premise", "hypothesis"):
        raise ConfigError("features.scope must be one of both, premise, hypothesis")
    diag_model = cfg.diagnostic.get("model")
    if diag_model is not None:
        cfg.model(diag_model)
    return cfg


def load_config(path: Optional[str], out: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    try:
        with p.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return parse_config(raw, p.parent, out, seed)


def example_config() -> str:
    """Annotated example configuration listing every field and its default."""
    return """\
# labelmeasure run configuration (TOML).
# Exactly one of [input] or [simulation] must be present.

seed = 0                         # overridden by --seed
out = "runs/example"             # overridden by --out; relative to this file
formats = ["markdown", "json"]   # report formats; --format picks one

# --- real data: three newline-delimited JSON files -----------------------
# [input]
# items = "data/items.ndjson"              # {item_id, premise, hypothesis, similarity?}
# annotations = "data/annotations.ndjson"  # {item_id, annotator_id, label, trial?, explanation?}
# validations = "data/validations.ndjson"  # {item_id, labeler_id, judge_id, label, verdict}
# labels = ["entailment", "neutral", "contradiction"]  # declaration order breaks consensus ties

# --- synthetic data --------------------------------------------------------
[simulation]
preset = "instance_error"        # instance_error | between_person | within_person | interpretive
# any preset field can be overridden; without a preset all of these are required
# n_items = 200
# n_annotators = 30
# n_trials = 5
# regime = "hlv"                 # global | hlv
# trial_effect = "session"       # session | trial | cell
# mu = 0.0
# beta_item_sd = 1.0
# rho_annotator_sd = 0.05
# sigma_trial_sd = 0.05
# delta_interp_sd = 0.05
# link = "logit"                 # logit | probit

# optional pairwise validation data on the same items and annotators
# [simulation.pairwise]
# alpha = 2.26
# labeler = 0.13
# judge = 1.08
# item = 0.97
# interaction = 0.48

[features]
enabled = true
scope = "both"                   # text used for avg_toks_per_sent: both | premise | hypothesis

[fit]
level = 0.95                     # Wald interval level

[diagnostic]
# model = "correctness"          # default: "pairwise" if configured, else the first model
dominance = 2.0                  # ratio rule; artifact policy, not an estimate
judge_in_individual = false      # add judge variance to the Individual numerator

# Without a [models] table a default suite is used: for [input] the global,
# individual and pairwise models (random-only, baseline features,
# + ambiguity); for [simulation] a crossed model on the correctness data.
# [models.global_random]
# table = "global"               # global | individual | pairwise | correctness
# outcome = "z"
# fixed = []
# random = ["item_id", "annotator_id", "trial"]
# standardize = []
# link = "logit"
# title = "Random-only"
"""


# ---------------------------------------------------------------- manifest

def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """``manifest.json``: one entry per output file, keyed by stage."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.path = cfg.out / "manifest.json"
        if self.path.exists():
            try:
                self.data = json.loads(self.path.read_text())
            except json.JSONDecodeError:
                self.data = {}
        else:
            self.data = {}
        self.data.update({"tool": "labelmeasure", "version": __version__, "seed": cfg.seed,
                          "mode": cfg.mode})
        self.data.setdefault("stages", {})
        if cfg.input is not None:
            self.data["inputs"] = {
                k: {"path": str(cfg.input_path(k)), "sha256": sha256(cfg.input_path(k))}
                for k in ("items", "annotations", "validations") if cfg.input_path(k).exists()
            }

    def record(self, stage: str, status: str, outputs: Sequence[Path], started: str,
               error: Optional[str] = None, extra: Optional[dict] = None):
        rels = [str(Path(p).relative_to(self.cfg.out)) for p in outputs]
        for other, entry in self.data["stages"].items():
            if other != stage:
                entry["outputs"] = [o for o in entry.get("outputs", []) if o["path"] not in rels]
        entry = {"status": status, "started": started, "finished": _now(),
                 "outputs": [{"path": r, "sha256": sha256(p)} for r, p in zip(rels, outputs) if Path(p).exists()]}
        if error:
            entry["error"] = error
        if extra:
            entry.update(extra)
        self.data["stages"][stage] = entry
        self.cfg.out.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2) + "\n")


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text if text.endswith("\n") else text + "\n")
    return path


def _write_json(path: Path, obj) -> Path:
    return _write_text(path, json.dumps(obj, indent=2))


def _need(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing dependency: {path} (run the stage that produces it first)")
    return path


# ------------------------------------------------------------------ stages

def _sim_setup(cfg: RunConfig):
    sim = dict(cfg.simulation)
    design_keys = ("n_items", "n_annotators", "n_trials", "regime", "trial_effect")
    param_keys = ("mu", "beta_item_sd", "rho_annotator_sd", "sigma_trial_sd", "delta_interp_sd", "link")
    extra = set(sim) - set(design_keys) - set(param_keys) - {"preset", "pairwise"}
    if extra:
        raise ConfigError(f"simulation: unknown field(s) {sorted(extra)}")
    if "preset" in sim:
        if sim["preset"] not in PRESETS:
            raise ConfigError(f"simulation.preset: unknown preset {sim['preset']!r}")
        d0, p0 = preset(sim["preset"], cfg.seed)
        design = dict(d0.to_dict())
        params = p0.to_dict()
    else:
        design, params = {"seed": cfg.seed}, {}
        missing = [k for k in ("n_items", "n_annotators", "beta_item_sd", "rho_annotator_sd",
                               "sigma_trial_sd") if k not in sim]
        if missing:
            raise ConfigError(f"simulation: missing field(s) {missing} (or give a preset)")
    design.update({k: sim[k] for k in design_keys if k in sim})
    params.update({k: sim[k] for k in param_keys if k in sim})
    design["seed"] = cfg.seed
    try:
        d = SimDesign(**design)
        p = GenerativeParams(**{k: params.get(k, 0.0) for k in param_keys[:-1]},
                             link=LinkKind.parse(params.get("link", "logit")))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"simulation: {exc}") from None
    return d, p, sim.get("pairwise")


def stage_simulate(cfg: RunConfig) -> List[Path]:
    if cfg.simulation is None:
        raise ConfigError("simulate needs a [simulation] block")
    design, params, pairwise = _sim_setup(cfg)
    out = simulate_correctness(design, params)
    files = [write_ndjson(out.records, cfg.out / "simulated.ndjson"),
             _write_json(cfg.out / "truth.json", out.truth_json())]
    if pairwise:
        pw = dict(pairwise)
        alpha = float(pw.pop("alpha", 0.0))
        try:
            table = simulate_pairwise(design, alpha, pw)
        except ConfigError as exc:
            raise ConfigError(f"simulation.pairwise: {exc}") from None
        files.append(write_ndjson(table, cfg.out / "simulated_pairwise.ndjson"))
    return files


def _dataset(cfg: RunConfig):
    labels = LabelSet(cfg.input["labels"]) if "labels" in cfg.input else NLI_LABELS
    return parse_inputs(cfg.input_path("items"), cfg.input_path("annotations"),
                        cfg.input_path("validations"), labels)


def stage_features(cfg: RunConfig) -> List[Path]:
    if cfg.input is None:
        raise ConfigError("features needs an [input] block (simulated data carries no text)")
    ds = _dataset(cfg)
    table, counts = features_table(ds.items, ds.validations, cfg.features["scope"])
    return [write_ndjson(table, cfg.out / "features.ndjson"),
            _write_json(cfg.out / "features_counts.json", counts)]


def stage_outcomes(cfg: RunConfig) -> List[Path]:
    if cfg.input is not None:
        oc = build_outcomes(_dataset(cfg))
        return [
            write_ndjson(oc.global_, cfg.out / "outcomes_global.ndjson"),
            write_ndjson(oc.individual, cfg.out / "outcomes_individual.ndjson"),
            write_ndjson(oc.pairwise, cfg.out / "outcomes_pairwise.ndjson"),
            write_ndjson(oc.consensus.to_frame(), cfg.out / "consensus.ndjson"),
            _write_json(cfg.out / "exclusions.json", oc.ledger_dict()),
        ]
    sim = load_table(_need(cfg.out / "simulated.ndjson"))
    cols = ["item_id", "annotator_id", "trial", "session", "z"]
    files = [write_ndjson(sim[cols], cfg.out / "outcomes_correctness.ndjson")]
    ledger = {"correctness": {"stage": "correctness", "rows_in": len(sim), "rows_out": len(sim), "excluded": {}}}
    pw_path = cfg.out / "simulated_pairwise.ndjson"
    if cfg.simulation.get("pairwise"):
        pw = load_table(_need(pw_path))
        files.append(write_ndjson(pw[["item_id", "labeler_id", "judge_id", "v", "pair"]],
                                  cfg.out / "outcomes_pairwise.ndjson"))
        ledger["pairwise"] = {"stage": "pairwise", "rows_in": len(pw), "rows_out": len(pw), "excluded": {}}
    files.append(_write_json(cfg.out / "exclusions.json", ledger))
    return files


def _model_data(cfg: RunConfig, block: ModelBlock) -> pd.DataFrame:
    data = load_table(_need(cfg.out / f"outcomes_{block.table}.ndjson"))
    needed = set(block.spec.fixed) - set(data.columns)
    if needed:
        feats = model_ready(load_table(_need(cfg.out / "features.ndjson")))
        missing = needed - set(feats.columns)
        if missing:
            raise ConfigError(f"models.{block.name}: unknown column(s) {sorted(missing)}")
        data = data.merge(feats, on="item_id", how="left", sort=False)
    return data


def stage_fit(cfg: RunConfig, formats: Sequence[str]) -> List[Path]:
    files = []
    for block in cfg.models:
        data = _model_data(cfg, block)
        res = fit(data, block.spec, level=cfg.level)
        files.append(_write_text(cfg.out / f"fit_{block.name}.json", res.to_json()))
        if "markdown" in formats:
            files.append(_write_text(cfg.out / f"fit_{block.name}.md", summarize(res, "markdown")))
    return files


def _diagnostic_model(cfg: RunConfig) -> str:
    if "model" in cfg.diagnostic:
        return cfg.diagnostic["model"]
    names = [m.name for m in cfg.models]
    return "pairwise" if "pairwise" in names else names[0]


def _load_fit(cfg: RunConfig, name: str) -> FitResult:
    return FitResult.from_dict(json.loads(_need(cfg.out / f"fit_{name}.json").read_text()))


def stage_diagnose(cfg: RunConfig) -> List[Path]:
    res = _load_fit(cfg, _diagnostic_model(cfg))
    roles = cfg.diagnostic.get("roles")
    diag = classify_regime(variance_profile(res, roles), float(cfg.diagnostic.get("dominance", 2.0)),
                           bool(cfg.diagnostic.get("judge_in_individual", False)))
    return [_write_text(cfg.out / "diagnosis.json", diag.to_json()),
            _write_text(cfg.out / "diagnosis.md", diagnosis_markdown(diag))]


def stage_report(cfg: RunConfig, formats: Sequence[str]) -> List[Path]:
    fits = [_load_fit(cfg, m.name) for m in cfg.models]
    diag_path = cfg.out / "diagnosis.json"
    diag = RegimeDiagnosis.from_dict(json.loads(diag_path.read_text())) if diag_path.exists() else None
    ex_path = cfg.out / "exclusions.json"
    ledger = json.loads(ex_path.read_text()) if ex_path.exists() else None
    titles = {m.name: m.title for m in cfg.models if m.title}
    files = []
    for style in formats:
        ext = "md" if style == "markdown" else "json"
        files.append(_write_text(cfg.out / f"report.{ext}", render_report(fits, diag, style, ledger, titles)))
    return files


def plan(cfg: RunConfig, command: str) -> List[str]:
    if command != "all":
        return [command]
    if cfg.mode == "input":
        stages = ["features", "outcomes", "fit", "diagnose", "report"]
        if not cfg.features.get("enabled", True):
            stages.remove("features")
        return stages
    return ["simulate", "outcomes", "fit", "diagnose", "report"]


def run(command: str, cfg: RunConfig, formats: Optional[Sequence[str]] = None) -> int:
    """Run one stage (or ``all``); returns the process exit code."""
    formats = list(formats or cfg.formats)
    cfg.out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(cfg)
    for stage in plan(cfg, command):
        started = _now()
        log.info("stage %s", stage)
        try:
            if stage == "simulate":
                files = stage_simulate(cfg)
            elif stage == "features":
                files = stage_features(cfg)
            elif stage == "outcomes":
                files = stage_outcomes(cfg)
            elif stage == "fit":
                files = stage_fit(cfg, formats)
            elif stage == "diagnose":
                files = stage_diagnose(cfg)
            else:
                files = stage_report(cfg, formats)
        except LabelMeasureError as exc:
            manifest.record(stage, "failed", [], started, error=str(exc))
            raise
        manifest.record(stage, "ok", files, started)
    return 0


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelmeasure", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--example-config", action="store_true",
                        help="print an annotated example configuration and exit")
    sub = parser.add_subparsers(dest="command")
    for name in STAGES + ("all",):
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "all" else "run every stage")
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, metavar="N", help="random seed (overrides config)")
        p.add_argument("--format", choices=FORMATS, help="report/summary format (default: config formats)")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.example_config:
        sys.stdout.write(example_config())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.out, args.seed)
        return run(args.command, cfg, [args.format] if args.format else None)
    except LabelMeasureError as exc:
        print(f"labelmeasure: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
