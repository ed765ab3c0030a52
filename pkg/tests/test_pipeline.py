import json
import random

import pandas as pd
import pytest

from labelmeasure.core import NLI_LABELS
from labelmeasure.errors import IntegrityError, ParseError
from labelmeasure.pipeline import (
    build_global_outcomes, build_individual_outcomes, build_outcomes, build_pairwise_table,
    error_rate_by_trial, infer_consensus, label_disagreement_tally, parse_inputs, read_ndjson,
    trial2_error, write_ndjson,
)
from conftest import FIXTURE, GOLDEN
from oracles import consensus_by_hand


def _write(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def test_fixture_counts(dataset):
    assert dataset.counts() == {"items": 6, "annotations": 18, "validations": 50}


@pytest.mark.parametrize("match,sense,z", [(True, True, 0), (True, False, 1), (False, True, 1), (False, False, 0)])
def test_trial2_case_table(match, sense, z):
    assert trial2_error(match, sense) == z


@pytest.mark.parametrize("name", ["global", "individual", "pairwise"])
def test_outcomes_match_goldens(dataset, tmp_path, name):
    oc = build_outcomes(dataset)
    table = {"global": oc.global_, "individual": oc.individual, "pairwise": oc.pairwise}[name]
    out = write_ndjson(table, tmp_path / f"{name}.ndjson")
    assert out.read_bytes() == (GOLDEN / f"{name}.ndjson").read_bytes()


def test_exclusion_ledger_matches_hand_count(dataset):
    expected = json.loads((GOLDEN / "exclusions.json").read_text())
    oc = build_outcomes(dataset)
    for led in oc.ledgers:
        want = expected[led.stage]
        assert (led.rows_in, led.rows_out) == (want["rows_in"], want["rows_out"])
        assert dict(led.excluded) == want["excluded"]
        assert led.balanced


def test_consensus_matches_hand_values(dataset):
    expected = json.loads((GOLDEN / "exclusions.json").read_text())["consensus"]
    cons = infer_consensus(dataset.validations, NLI_LABELS, items=dataset.items["item_id"])
    assert list(cons.excluded) == expected.pop("excluded")
    for item, (label, tie) in expected.items():
        assert (cons[item].mu_label, cons[item].tie) == (label, tie)


def test_consensus_against_independent_tally(dataset):
    rows = [r for _, r in read_ndjson(FIXTURE / "validations.ndjson")]
    cons = infer_consensus(dataset.validations)
    assert {k: c.mu_label for k, c in cons.items.items()} == consensus_by_hand(rows, list(NLI_LABELS))


def test_consensus_tie_breaks_by_declaration_order():
    v = pd.DataFrame([
        {"item_id": "x", "labeler_id": "a", "judge_id": "b", "label": "neutral", "verdict": "yes"},
        {"item_id": "x", "labeler_id": "b", "judge_id": "a", "label": "entailment", "verdict": "yes"},
    ])
    c = infer_consensus(v)["x"]
    assert c.mu_label == "entailment" and c.tie
    assert c.valid_counts == {"entailment": 1, "neutral": 1, "contradiction": 0}


def test_consensus_is_judge_anonymous(dataset):
    v = dataset.validations.copy()
    swap = {"a1": "a3", "a3": "a1"}
    v["judge_id"] = v["judge_id"].map(lambda j: swap.get(j, j))
    a = infer_consensus(dataset.validations)
    b = infer_consensus(v)
    assert {k: c.mu_label for k, c in a.items.items()} == {k: c.mu_label for k, c in b.items.items()}


def test_trial1_rate_equals_disagreement_fraction(dataset):
    oc = build_outcomes(dataset)
    tally = label_disagreement_tally(oc.global_, oc.consensus)
    assert error_rate_by_trial(oc.global_)[1] == pytest.approx(tally["differ"] / sum(tally.values()))


def test_two_rows_per_pair_and_self_pairs_present(dataset):
    oc = build_outcomes(dataset)
    sizes = oc.global_.groupby(["item_id", "annotator_id", "label"]).size()
    assert (sizes == 2).all()
    assert (oc.pairwise["labeler_id"] == oc.pairwise["judge_id"]).any()
    assert "trial" not in oc.individual.columns


def test_rebuild_is_byte_identical(fixture_paths, tmp_path):
    blobs = []
    for k in range(2):
        oc = build_outcomes(parse_inputs(*fixture_paths))
        blobs.append(write_ndjson(oc.global_, tmp_path / f"g{k}.ndjson").read_bytes())
    assert blobs[0] == blobs[1]


def test_empty_annotations_rejected(fixture_paths, tmp_path):
    empty = tmp_path / "a.ndjson"
    empty.write_text("")
    with pytest.raises(IntegrityError, match="no records"):
        parse_inputs(fixture_paths[0], empty, fixture_paths[2])


def test_duplicate_annotation_key_named(fixture_paths, tmp_path):
    rows = [{"item_id": "i1", "annotator_id": "a1", "label": "neutral"},
            {"item_id": "i1", "annotator_id": "a1", "label": "entailment"}]
    with pytest.raises(IntegrityError, match=r"\('i1', 'a1', 1\)"):
        parse_inputs(fixture_paths[0], _write(tmp_path / "a.ndjson", rows), fixture_paths[2])


def test_parse_error_carries_line(fixture_paths, tmp_path):
    bad = tmp_path / "v.ndjson"
    bad.write_text('{"item_id":"i1","labeler_id":"a1","judge_id":"a1","label":"neutral","verdict":"yes"}\n'
                   '{"item_id":"i1","labeler_id":"a1","judge_id":"a2","label":"neutral"}\n')
    with pytest.raises(ParseError) as info:
        parse_inputs(fixture_paths[0], fixture_paths[1], bad)
    assert info.value.line == 2 and "verdict" in str(info.value)


def test_invalid_json_and_bad_verdict(fixture_paths, tmp_path):
    bad = tmp_path / "v.ndjson"
    bad.write_text("{not json\n")
    with pytest.raises(ParseError, match=":1:"):
        parse_inputs(fixture_paths[0], fixture_paths[1], bad)
    _write(bad, [{"item_id": "i1", "labeler_id": "a1", "judge_id": "a1", "label": "neutral", "verdict": "sure"}])
    with pytest.raises(ParseError):
        parse_inputs(fixture_paths[0], fixture_paths[1], bad)


def test_dangling_item_reference(fixture_paths, tmp_path):
    rows = [{"item_id": "zzz", "annotator_id": "a1", "label": "neutral"}]
    with pytest.raises(IntegrityError, match="unknown item_id"):
        parse_inputs(fixture_paths[0], _write(tmp_path / "a.ndjson", rows), fixture_paths[2])


def test_unknown_label_is_parse_error(fixture_paths, tmp_path):
    rows = [{"item_id": "i1", "annotator_id": "a1", "label": "maybe"}]
    with pytest.raises(ParseError):
        parse_inputs(fixture_paths[0], _write(tmp_path / "a.ndjson", rows), fixture_paths[2])


def test_ledger_balances_on_random_inputs():
    rng = random.Random(0)
    labels = ["entailment", "neutral", "contradiction", "idk"]
    ann, val = [], []
    for j in range(30):
        for a in range(4):
            lab = rng.choice(labels)
            ann.append({"item_id": f"i{j}", "annotator_id": f"a{a}", "trial": 1, "label": lab})
            if lab == "idk":
                continue
            for k in range(4):
                if rng.random() < 0.85:
                    val.append({"item_id": f"i{j}", "labeler_id": f"a{a}", "judge_id": f"a{k}", "label": lab,
                                "verdict": rng.choice(["yes", "yes", "no", "idk"])})
    ann, val = pd.DataFrame(ann), pd.DataFrame(val)
    cons = infer_consensus(val)
    for _, led in (build_global_outcomes(ann, cons, val), build_individual_outcomes(val), build_pairwise_table(val)):
        assert led.balanced
