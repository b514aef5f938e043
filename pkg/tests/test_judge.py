"""Mirrored pairwise judging and tournament aggregation."""

import json
import re

import pytest

from rolecraft.errors import ConfigError, EvaluationError, ParseError, StorageError
from rolecraft.gateway import (
    HashEmbeddingBackend,
    LlmGateway,
    ScriptedChatBackend,
    ScriptedRule,
)
from rolecraft.judge import (
    JUDGE_TEMPERATURE,
    JUDGE_TOP_P,
    METRICS,
    DialogueSample,
    JudgeScore,
    judge_pair,
    load_sample_file,
    render_dialogue,
    run_tournament,
    sample_from_dict,
    sample_to_dict,
    score_to_dict,
)

NAME = "Mara"


def sample(line, method, name=NAME):
    return DialogueSample(name, (("q", line),), method)


ALPHA = sample("alpha line", "ours")
BETA = sample("beta line", "baseline")


def make_gateway(rules):
    return LlmGateway(ScriptedChatBackend(list(rules)), HashEmbeddingBackend(dim=16))


def triple(value):
    return {m: value for m in METRICS}


def pair_body(a, b):
    def shape(x):
        return x if isinstance(x, dict) else dict(zip(METRICS, x))
    return json.dumps({"a": shape(a), "b": shape(b)})


def a_position_rule(line, body):
    return ScriptedRule(f"Conversation A:\nUser: q\n{NAME}: {line}", body)


# Deterministic judge: scores depend only on which sample sits in
# position A, mirroring the hand-worked oracle below.
MIRROR_RULES = [
    a_position_rule("alpha line", pair_body((8, 7, 6), (6, 5, 4))),
    a_position_rule("beta line", pair_body((5, 4, 3), (7, 6, 5))),
]
ALPHA_FINAL = JudgeScore(7.5, 6.5, 5.5)   # mean of (8,7,6) and (7,6,5)
BETA_FINAL = JudgeScore(5.5, 4.5, 3.5)    # mean of (6,5,4) and (5,4,3)


# ---------------------------------------------------------------------------
# Types and serialization


def test_sample_validation():
    with pytest.raises(ConfigError):
        DialogueSample(NAME, (), "ours")
    with pytest.raises(ConfigError):
        DialogueSample("  ", (("q", "a"),), "ours")
    with pytest.raises(ConfigError):
        DialogueSample(NAME, (("q", "a"),), "")


def test_score_bounds_never_clamped():
    with pytest.raises(ParseError):
        JudgeScore(11, 5, 5)
    with pytest.raises(ParseError):
        JudgeScore(5, -0.1, 5)
    with pytest.raises(ParseError):
        JudgeScore(True, 5, 5)
    assert score_to_dict(JudgeScore(0, 10, 5.5)) == {"cp": 0, "ak": 10, "qc": 5.5}


def test_sample_round_trip():
    assert sample_from_dict(sample_to_dict(ALPHA)) == ALPHA


@pytest.mark.parametrize("raw", [
    {},
    {"character_name": NAME, "method_label": "m"},
    {"character_name": NAME, "turns": [["only one"]], "method_label": "m"},
    {"character_name": NAME, "turns": [], "method_label": "m"},
])
def test_sample_from_dict_rejects_malformed(raw):
    with pytest.raises(StorageError):
        sample_from_dict(raw)


def test_load_sample_file(tmp_path):
    path = tmp_path / "samples.json"
    path.write_text(json.dumps([sample_to_dict(ALPHA), sample_to_dict(BETA)]),
                    encoding="utf-8")
    assert load_sample_file(path) == [ALPHA, BETA]
    bad = tmp_path / "bad.json"
    bad.write_text("{}", encoding="utf-8")
    with pytest.raises(StorageError):
        load_sample_file(bad)
    with pytest.raises(StorageError):
        load_sample_file(tmp_path / "missing.json")


def test_render_dialogue():
    assert render_dialogue(NAME, (("q", "alpha line"),)) == \
        "User: q\nMara: alpha line"


# ---------------------------------------------------------------------------
# judge_pair


def test_mirrored_scores_match_hand_arithmetic():
    gw = make_gateway(MIRROR_RULES)
    final_a, final_b = judge_pair(gw, ALPHA, BETA)
    assert final_a == ALPHA_FINAL
    assert final_b == BETA_FINAL
    calls = gw.log.calls(kind="chat")
    assert [c.tag for c in calls] == ["judge_pair", "judge_pair"]
    for call in calls:
        assert call.request.temperature == JUDGE_TEMPERATURE == 0.2
        assert call.request.top_p == JUDGE_TOP_P == 0.8


def test_swap_symmetry():
    forward = judge_pair(make_gateway(MIRROR_RULES), ALPHA, BETA)
    backward = judge_pair(make_gateway(MIRROR_RULES), BETA, ALPHA)
    assert forward == (backward[1], backward[0])


def test_position_bonus_cancels_out():
    # The judge adds one point to whoever occupies position A; bases are
    # alpha 6, beta 4.  Both samples collect the bonus exactly once, so
    # the mirrored means keep the base gap of 2.
    rules = [
        a_position_rule("alpha line", pair_body(triple(7), triple(4))),
        a_position_rule("beta line", pair_body(triple(5), triple(6))),
    ]
    final_a, final_b = judge_pair(make_gateway(rules), ALPHA, BETA)
    assert final_a == JudgeScore(6.5, 6.5, 6.5)
    assert final_b == JudgeScore(4.5, 4.5, 4.5)
    for metric in METRICS:
        assert getattr(final_a, metric) - getattr(final_b, metric) == 2


def test_identical_samples_score_equal():
    rules = [ScriptedRule("scoring two conversations",
                          pair_body(triple(8), triple(6)))]
    twin = sample("alpha line", "other")
    final_a, final_b = judge_pair(make_gateway(rules), ALPHA, twin)
    assert final_a == final_b == JudgeScore(7, 7, 7)


def test_character_mismatch_rejected():
    other = sample("line", "ours", name="Tom")
    with pytest.raises(ConfigError):
        judge_pair(make_gateway(MIRROR_RULES), ALPHA, other)


def test_unparseable_after_repair_is_evaluation_error():
    gw = make_gateway([ScriptedRule("scoring two conversations", "never json")])
    with pytest.raises(EvaluationError):
        judge_pair(gw, ALPHA, BETA)
    assert gw.log.count(tag="judge_pair") == 1
    assert gw.log.count(tag="judge_pair_repair") == 1
    repair = [c for c in gw.log.calls(kind="chat")
              if c.tag == "judge_pair_repair"][0]
    assert repair.request.temperature == JUDGE_TEMPERATURE
    assert repair.request.top_p == JUDGE_TOP_P


def test_repair_recovers_bad_first_reply():
    rules = [
        ScriptedRule("could not be parsed", pair_body(triple(8), triple(6))),
        ScriptedRule("scoring two conversations", "garbage"),
    ]
    gw = make_gateway(rules)
    final_a, final_b = judge_pair(gw, ALPHA, BETA)
    assert final_a == final_b == JudgeScore(7, 7, 7)
    assert gw.log.count(tag="judge_pair") == 2
    assert gw.log.count(tag="judge_pair_repair") == 2


def test_out_of_range_scores_fail_loudly():
    gw = make_gateway([ScriptedRule("scoring two conversations",
                                    pair_body(triple(11), triple(5)))])
    with pytest.raises(EvaluationError) as err:
        judge_pair(gw, ALPHA, BETA)
    assert "outside 0..10" in str(err.value)


# ---------------------------------------------------------------------------
# run_tournament


def test_two_methods_one_character():
    gw = make_gateway(MIRROR_RULES)
    report = run_tournament(gw, [ALPHA, BETA])
    assert report["characters"] == [NAME]
    assert report["methods"] == ["baseline", "ours"]
    assert report["warnings"] == []
    assert len(report["pairs"]) == 1
    assert gw.log.count(tag="judge_pair") == 2
    row = report["pairs"][0]
    assert row["character"] == NAME
    assert row["scores"]["ours"] == score_to_dict(ALPHA_FINAL)
    assert row["scores"]["baseline"] == score_to_dict(BETA_FINAL)
    assert report["means"]["ours"] == {**score_to_dict(ALPHA_FINAL), "pairs": 1}
    assert report["means"]["baseline"] == {**score_to_dict(BETA_FINAL), "pairs": 1}


def _base_rule(line_a, line_b, score_a, score_b):
    pattern = (re.escape(f"Conversation A:\nUser: q\n{NAME}: {line_a}") + ".*"
               + re.escape(f"Conversation B:\nUser: q\n{NAME}: {line_b}"))
    return ScriptedRule(pattern, pair_body(triple(score_a), triple(score_b)),
                        regex=True)


def test_three_method_means_match_spreadsheet():
    # Judge always returns each method's base score, so every per-method
    # mean must equal its base and every method joins two pairs.
    bases = {"alpha": 9, "beta": 6, "gamma": 3}
    lines = {m: f"{m} line" for m in bases}
    rules = [_base_rule(lines[x], lines[y], bases[x], bases[y])
             for x in bases for y in bases if x != y]
    samples = [sample(lines[m], m) for m in bases]
    gw = make_gateway(rules)
    report = run_tournament(gw, samples, max_workers=3)
    assert [ (p["method_a"], p["method_b"]) for p in report["pairs"] ] == \
        [("alpha", "beta"), ("alpha", "gamma"), ("beta", "gamma")]
    assert gw.log.count(tag="judge_pair") == 6
    for method, base in bases.items():
        assert report["means"][method] == {**triple(float(base)), "pairs": 2}


def test_missing_coverage_warns_but_runs():
    tom = sample("tom line", "ours", name="Tom")
    report = run_tournament(make_gateway(MIRROR_RULES), [ALPHA, BETA, tom])
    assert len(report["pairs"]) == 1
    assert any("Tom" in w and "baseline" in w for w in report["warnings"])
    assert report["means"]["ours"]["pairs"] == 1


def test_single_method_yields_no_pairs():
    gw = make_gateway([])
    report = run_tournament(gw, [ALPHA])
    assert report["pairs"] == []
    assert report["means"]["ours"] == {"cp": None, "ak": None, "qc": None,
                                       "pairs": 0}
    assert any("fewer than two methods" in w for w in report["warnings"])
    assert gw.log.count() == 0


def test_tournament_input_errors():
    with pytest.raises(ConfigError):
        run_tournament(make_gateway([]), [])
    with pytest.raises(ConfigError):
        run_tournament(make_gateway([]), [ALPHA, sample("other", "ours")])


def test_report_is_json_ready():
    report = run_tournament(make_gateway(MIRROR_RULES), [ALPHA, BETA])
    assert json.loads(json.dumps(report)) == report
