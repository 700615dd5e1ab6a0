"""Answer evaluation: model-judged 0-5 scoring and reference-aware win rates.

The judge grades one answer on a 0-5 integer scale reported times 20 on a
0-100 scale. The win-rate protocol shows the judge both answers plus the
trusted reference and collects per-criterion preferences. Unparseable judge
output is excluded and counted, never coerced, since coercion would silently
bias results.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum

from . import prompts
from .backends import JudgeBackend
from .errors import M3kgError

logger = logging.getLogger(__name__)

CRITERIA = ("Comprehensiveness", "Diversity", "Empowerment", "Overall")

_VERDICT_KEYS = {
    "Comprehensiveness": "Comprehensiveness",
    "Diversity": "Diversity",
    "Empowerment": "Empowerment",
    "Overall": "Overall Winner",
}


class JudgeParseError(M3kgError):
    """Judge output could not be parsed; the item is excluded, not coerced."""


class Winner(str, Enum):
    A = "A"
    B = "B"


@dataclass
class JudgeScore:
    raw: int
    scaled: float


@dataclass
class WinRateRecord:
    winners: dict[str, Winner]  # keyed by CRITERIA names

    def __post_init__(self) -> None:
        missing = [c for c in CRITERIA if c not in self.winners]
        if missing:
            raise ValueError(f"record missing criteria: {missing}")


def judge(question: str, reference: str, answer: str, backend: JudgeBackend) -> JudgeScore:
    """Grade one answer; the first integer in the reply is the raw score.

    Out-of-range integers clamp to [0, 5]; a reply with no integer raises
    JudgeParseError.
    """
    if not question or not reference or not answer:
        raise ValueError("judge requires non-empty question, reference, and answer")
    prompt = prompts.render("judge", QUESTION=question, REFERENCE=reference, ANSWER=answer)
    reply = backend.judge(prompt)
    match = re.search(r"-?\d+", reply)
    if match is None:
        raise JudgeParseError(f"no integer score in judge reply {reply[:80]!r}")
    raw = max(0, min(5, int(match.group())))
    return JudgeScore(raw=raw, scaled=raw * 20.0)


def _parse_verdict(reply: str) -> dict:
    stripped = reply.strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass
    start, end = stripped.find("{"), stripped.rfind("}")
    if start == -1 or end <= start:
        raise JudgeParseError(f"no JSON verdict in reply {reply[:80]!r}")
    try:
        return json.loads(stripped[start : end + 1])
    except json.JSONDecodeError as exc:
        raise JudgeParseError(f"malformed JSON verdict: {exc}") from None


def winrate(
    question: str,
    reference: str,
    answer_a: str,
    answer_b: str,
    backend: JudgeBackend,
    swap: bool = False,
) -> WinRateRecord:
    """One pairwise comparison; with swap=True the prompt order is exchanged
    and winners are relabeled back so A always denotes ``answer_a``."""
    if not question or not reference or not answer_a or not answer_b:
        raise ValueError("winrate requires non-empty inputs")
    first, second = (answer_b, answer_a) if swap else (answer_a, answer_b)
    prompt = prompts.render(
        "winrate",
        QUESTION=question,
        REFERENCE=reference,
        ANSWER_1=first,
        ANSWER_2=second,
    )
    verdict = _parse_verdict(backend.judge(prompt))
    winners: dict[str, Winner] = {}
    for criterion in CRITERIA:
        value = verdict.get(_VERDICT_KEYS[criterion])
        if value == "Answer 1":
            winners[criterion] = Winner.B if swap else Winner.A
        elif value == "Answer 2":
            winners[criterion] = Winner.A if swap else Winner.B
        else:
            raise JudgeParseError(
                f"criterion {criterion!r} has invalid winner {value!r}"
            )
    return WinRateRecord(winners=winners)


@dataclass
class WinRateReport:
    per_criterion: dict[str, dict]
    valid_records: int
    excluded: int

    def to_dict(self) -> dict:
        return {
            "criteria": self.per_criterion,
            "valid_records": self.valid_records,
            "excluded": self.excluded,
        }


def aggregate_winrate(records: list[WinRateRecord], excluded: int = 0) -> WinRateReport:
    """Per-criterion win percentages; undefined (None) with zero valid records."""
    per_criterion: dict[str, dict] = {}
    n = len(records)
    for criterion in CRITERIA:
        a_wins = sum(1 for r in records if r.winners[criterion] is Winner.A)
        b_wins = n - a_wins
        per_criterion[criterion] = {
            "a_wins": a_wins,
            "b_wins": b_wins,
            "a_pct": round(a_wins / n * 100.0, 10) if n else None,
            "b_pct": round(b_wins / n * 100.0, 10) if n else None,
        }
    return WinRateReport(per_criterion=per_criterion, valid_records=n, excluded=excluded)


@dataclass
class JudgeReport:
    mean_raw: float | None
    mean_scaled: float | None
    count: int
    excluded: int

    def to_dict(self) -> dict:
        return {
            "mean_raw": self.mean_raw,
            "mean_scaled": self.mean_scaled,
            "count": self.count,
            "excluded": self.excluded,
        }


def aggregate_judge(scores: list[JudgeScore], excluded: int = 0) -> JudgeReport:
    if not scores:
        return JudgeReport(mean_raw=None, mean_scaled=None, count=0, excluded=excluded)
    mean_raw = sum(s.raw for s in scores) / len(scores)
    mean_scaled = sum(s.scaled for s in scores) / len(scores)
    return JudgeReport(
        mean_raw=mean_raw, mean_scaled=mean_scaled, count=len(scores), excluded=excluded
    )


def format_winrate_table(report: WinRateReport, side_a: str = "A", side_b: str = "B") -> str:
    """Aligned plain-text table with one row per criterion."""
    width = max(len(c) for c in CRITERIA)
    header = f"{'Criterion'.ljust(width)}  {side_a:>10}  {side_b:>10}"
    lines = [header, "-" * len(header)]
    for criterion in CRITERIA:
        cell = report.per_criterion[criterion]
        if cell["a_pct"] is None:
            a_txt = b_txt = "undefined"
        else:
            a_txt = f"{cell['a_pct']:.1f}%"
            b_txt = f"{cell['b_pct']:.1f}%"
        lines.append(f"{criterion.ljust(width)}  {a_txt:>10}  {b_txt:>10}")
    return "\n".join(lines)


def format_judge_table(report: JudgeReport) -> str:
    if report.count == 0:
        body = "mean score: undefined (no valid records)"
    else:
        body = f"mean score: {report.mean_scaled:.2f} (0-100 scale, n={report.count})"
    return f"{body}\nexcluded: {report.excluded}"
