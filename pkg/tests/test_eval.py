from __future__ import annotations

import json
import random

import pytest

from m3kg.backends import StubJudge
from m3kg.evalharness import (
    CRITERIA,
    JudgeParseError,
    JudgeScore,
    WinRateRecord,
    Winner,
    aggregate_judge,
    aggregate_winrate,
    format_judge_table,
    format_winrate_table,
    judge,
    winrate,
)

PREFER_1 = json.dumps(
    {
        "Comprehensiveness": "Answer 1",
        "Diversity": "Answer 1",
        "Empowerment": "Answer 1",
        "Overall Winner": "Answer 1",
    }
)


def test_judge_scales_raw_by_twenty():
    score = judge("q", "ref", "ans", StubJudge(["4"]))
    assert score.raw == 4 and score.scaled == 80.0


def test_judge_zero():
    score = judge("q", "ref", "ans", StubJudge(["0"]))
    assert score.raw == 0 and score.scaled == 0.0


def test_judge_parses_embedded_integer():
    score = judge("q", "ref", "ans", StubJudge(["score: 3/5"]))
    assert score.raw == 3 and score.scaled == 60.0


def test_judge_clamps_out_of_range():
    assert judge("q", "r", "a", StubJudge(["9"])).raw == 5
    assert judge("q", "r", "a", StubJudge(["-2"])).raw == 0


def test_judge_unparseable_raises():
    with pytest.raises(JudgeParseError):
        judge("q", "r", "a", StubJudge(["no numbers here"]))


def test_judge_rejects_empty_inputs():
    with pytest.raises(ValueError):
        judge("", "r", "a", StubJudge(["3"]))


def test_winrate_prefer_answer1_no_swap():
    record = winrate("q", "ref", "ans a", "ans b", StubJudge([PREFER_1]), swap=False)
    assert all(record.winners[c] is Winner.A for c in CRITERIA)


def test_winrate_prefer_answer1_swap_relabels_to_b():
    record = winrate("q", "ref", "ans a", "ans b", StubJudge([PREFER_1]), swap=True)
    assert all(record.winners[c] is Winner.B for c in CRITERIA)


def test_winrate_swap_pairing_yields_even_split_on_ties():
    records = [
        winrate("q", "ref", "same", "same", StubJudge([PREFER_1]), swap=swap)
        for swap in (False, True)
    ]
    report = aggregate_winrate(records)
    for criterion in CRITERIA:
        assert report.per_criterion[criterion]["a_pct"] == 50.0
        assert report.per_criterion[criterion]["b_pct"] == 50.0


def test_winrate_json_embedded_in_prose_is_parsed():
    reply = "Here is my verdict:\n" + PREFER_1 + "\nthanks"
    record = winrate("q", "r", "a", "b", StubJudge([reply]))
    assert record.winners["Overall"] is Winner.A


def test_winrate_malformed_verdict_raises():
    with pytest.raises(JudgeParseError):
        winrate("q", "r", "a", "b", StubJudge(["{}"]))
    with pytest.raises(JudgeParseError):
        winrate("q", "r", "a", "b", StubJudge(["not json at all"]))


def test_winrate_invalid_winner_value_raises():
    bad = PREFER_1.replace("Answer 1", "Answer 3")
    with pytest.raises(JudgeParseError):
        winrate("q", "r", "a", "b", StubJudge([bad]))


def test_winrate_record_requires_all_criteria():
    with pytest.raises(ValueError):
        WinRateRecord(winners={"Diversity": Winner.A})


def _records(a_wins: int, total: int) -> list[WinRateRecord]:
    out = []
    for i in range(total):
        winner = Winner.A if i < a_wins else Winner.B
        out.append(WinRateRecord(winners={c: winner for c in CRITERIA}))
    return out


def test_aggregate_percentages():
    report = aggregate_winrate(_records(42, 100))
    cell = report.per_criterion["Overall"]
    assert cell["a_pct"] == 42.0 and cell["b_pct"] == 58.0


def test_aggregate_zero_records_undefined():
    report = aggregate_winrate([], excluded=3)
    assert report.per_criterion["Diversity"]["a_pct"] is None
    assert report.excluded == 3
    assert "undefined" in format_winrate_table(report)


def test_aggregate_judge_mean():
    scores = [JudgeScore(raw=r, scaled=r * 20.0) for r in (5, 4, 3)]
    report = aggregate_judge(scores)
    assert report.mean_scaled == 80.0
    assert report.mean_raw == 4.0


def test_aggregate_judge_empty():
    report = aggregate_judge([], excluded=2)
    assert report.mean_scaled is None and report.count == 0 and report.excluded == 2
    assert "undefined" in format_judge_table(report)


def test_percentages_sum_to_100_random():
    rng = random.Random(99)
    records = []
    for _ in range(250):
        records.append(
            WinRateRecord(
                winners={c: rng.choice([Winner.A, Winner.B]) for c in CRITERIA}
            )
        )
    report = aggregate_winrate(records)
    for criterion in CRITERIA:
        cell = report.per_criterion[criterion]
        assert cell["a_pct"] + cell["b_pct"] == pytest.approx(100.0)
        assert cell["a_wins"] + cell["b_wins"] == 250


def test_winrate_table_has_criterion_rows():
    table = format_winrate_table(aggregate_winrate(_records(1, 2)))
    for criterion in CRITERIA:
        assert criterion in table
