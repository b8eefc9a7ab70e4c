"""Response scoring: option parsing, the LLM-judge protocol, aggregation.

Multiple-choice scoring is deterministic (parse, compare, fixed denominator).
Open-ended and text-generation scoring go through a judge endpoint following
the yes/no + 0-5 protocol; judge failures are excluded from the open-ended
denominator but multiple-choice denominators never shrink.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from . import datasets
from .client import VlmClient
from .prompts import JUDGE_TEMPLATES, OPTION_LETTERS, TemplateSet
from .records import EvalRecord

# Standalone = bounded by these delimiters (or the ends of the string).
_MC_DELIMS = "().:"
_LETTER_RE = re.compile(r"[A-Ea-e]")


def parse_mc_answer(raw_text: str, options) -> int | None:
    """Extract the chosen option index from a free-form reply.

    Cascade, in order:
      1. the first standalone option letter A-E that is in range for the
         option count; case-insensitive; standalone means delimited by
         parentheses, period, colon, whitespace, or the string boundaries;
      2. else the unique option whose full text appears verbatim in the
         reply (case-insensitive);
      3. else None: the caller scores the item incorrect and flags it, it is
         never dropped.

    ``options`` is the option texts, or a bare count to use stage 1 only.
    """
    if isinstance(options, int):
        num_options = options
        texts: Sequence[str] = ()
    else:
        texts = tuple(options)
        num_options = len(texts)
    if not 2 <= num_options <= len(OPTION_LETTERS):
        raise ValueError(f"need 2-{len(OPTION_LETTERS)} options, got {num_options}")

    for match in _LETTER_RE.finditer(raw_text):
        start, end = match.start(), match.end()
        before = raw_text[start - 1] if start > 0 else None
        after = raw_text[end] if end < len(raw_text) else None
        if before is not None and not (before.isspace() or before in _MC_DELIMS):
            continue
        if after is not None and not (after.isspace() or after in _MC_DELIMS):
            continue
        index = OPTION_LETTERS.index(match.group().upper())
        if index < num_options:
            return index

    lowered = raw_text.lower()
    hits = [i for i, text in enumerate(texts) if text and text.lower() in lowered]
    if len(hits) == 1:
        return hits[0]
    return None


def majority_vote(values: Sequence) -> str | int | None:
    """Exact-match majority; ties go to the smallest value (lowest letter)."""
    values = [v for v in values if v is not None]
    if not values:
        return None
    counts = Counter(values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


@dataclass(frozen=True)
class JudgeVerdict:
    correct: bool
    score: float


@dataclass(frozen=True)
class TextGenScores:
    ci: float
    do_: float
    cu: float
    tu: float
    co: float

    @property
    def average(self) -> float:
        return (self.ci + self.do_ + self.cu + self.tu + self.co) / 5.0

    def as_dict(self) -> dict:
        return {"CI": self.ci, "DO": self.do_, "CU": self.cu, "TU": self.tu, "CO": self.co}


_YESNO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_NUMBER_RE = re.compile(r"(?<![\d.])(\d+(?:\.\d+)?)(?![\d.])")


def parse_judge_reply(text: str) -> JudgeVerdict:
    """yes/no plus a 0-5 score, from replies like "{'pred': 'yes', 'score': 4}"
    or plain "yes, 4".  Scores outside [0, 5] are a parse error, not clamped.
    """
    verdict = _YESNO_RE.search(text)
    if not verdict:
        raise ValueError(f"no yes/no verdict in judge reply: {text!r}")
    number = _NUMBER_RE.search(text)
    if not number:
        raise ValueError(f"no score in judge reply: {text!r}")
    score = float(number.group(1))
    if not 0 <= score <= 5:
        raise ValueError(f"judge score {score} outside [0, 5]")
    return JudgeVerdict(correct=verdict.group(1).lower() == "yes", score=score)


def parse_judge_score(text: str) -> float:
    number = _NUMBER_RE.search(text)
    if not number:
        raise ValueError(f"no score in judge reply: {text!r}")
    score = float(number.group(1))
    if not 0 <= score <= 5:
        raise ValueError(f"judge score {score} outside [0, 5]")
    return score


def judge_open_ended(
    question: str,
    ground_truth: str,
    prediction: str,
    judge: VlmClient,
    templates: TemplateSet,
) -> JudgeVerdict | None:
    """One judged verdict, or None after an unparseable reply and one retry."""
    if not question or not ground_truth or not prediction:
        raise ValueError("question, ground truth, and prediction must be non-empty")
    prompt = templates.render(
        JUDGE_TEMPLATES["correctness"],
        question=question,
        answer=ground_truth,
        prediction=prediction,
    )
    for _ in range(2):
        reply = judge.ask(None, [prompt])
        try:
            return parse_judge_reply(reply.raw_text)
        except ValueError:
            continue
    return None


def judge_text_generation(
    metric: str,
    question: str,
    ground_truth: str,
    prediction: str,
    judge: VlmClient,
    templates: TemplateSet,
) -> float | None:
    if metric not in datasets.TEXTGEN_METRICS:
        raise ValueError(f"unknown text-generation metric {metric!r}")
    prompt = templates.render(
        JUDGE_TEMPLATES[metric],
        question=question,
        answer=ground_truth,
        prediction=prediction,
    )
    for _ in range(2):
        reply = judge.ask(None, [prompt])
        try:
            return parse_judge_score(reply.raw_text)
        except ValueError:
            continue
    return None


@dataclass
class BenchmarkReport:
    benchmark: str
    task: str
    n_items: int
    n_failed: int
    n_unparsed: int = 0
    accuracy: float | None = None  # fraction in [0, 1]
    avg_score: float | None = None
    per_category: dict[str, float] | None = None
    category_counts: dict[str, int] | None = None
    textgen: TextGenScores | None = None
    textgen_avg: float | None = None


def aggregate(records: Sequence[EvalRecord], manifest: datasets.BenchmarkManifest) -> BenchmarkReport:
    """Fold records into the benchmark's headline numbers.

    Permutation-invariant; per-category accuracies weighted by their counts
    recombine exactly to the overall accuracy.
    """
    if not records:
        raise ValueError("no records to aggregate")
    items = {item.id: item for item in manifest.items}
    for record in records:
        if record.item_id not in items:
            raise ValueError(f"record {record.item_id!r} not in manifest")

    report = BenchmarkReport(
        benchmark=manifest.name,
        task=manifest.task,
        n_items=len(records),
        n_failed=sum(1 for r in records if not r.ok),
    )

    if manifest.task == datasets.MULTIPLE_CHOICE:
        _aggregate_mc(records, items, manifest, report)
    elif manifest.task == datasets.OPEN_ENDED:
        _aggregate_open_ended(records, items, manifest, report)
    else:
        _aggregate_textgen(records, items, report)
    return report


def _per_category(outcomes: list[tuple[str | None, bool]], tags) -> tuple[dict, dict]:
    accuracy: dict[str, float] = {}
    counts: dict[str, int] = {}
    for tag in tags:
        group = [correct for category, correct in outcomes if category == tag]
        if group:
            counts[tag] = len(group)
            accuracy[tag] = sum(group) / len(group)
    return accuracy, counts


def _aggregate_mc(records, items, manifest, report: BenchmarkReport):
    outcomes = []
    unparsed = 0
    for record in records:
        item = items[record.item_id]
        if record.ok and record.parsed_answer is None:
            unparsed += 1
        correct = record.ok and record.parsed_answer == item.answer_index
        outcomes.append((item.category, correct))
    report.n_unparsed = unparsed
    report.accuracy = sum(c for _, c in outcomes) / len(outcomes)
    report.per_category, report.category_counts = _per_category(outcomes, manifest.tags)


def _aggregate_open_ended(records, items, manifest, report: BenchmarkReport):
    outcomes = []
    scores = []
    failed = report.n_failed
    for record in records:
        item = items[record.item_id]
        verdict = record.verdict
        if not record.ok:
            continue
        if not verdict or verdict.get("failed"):
            failed += 1  # judge failure: out of the denominator
            continue
        outcomes.append((item.category, bool(verdict["correct"])))
        scores.append(float(verdict["score"]))
    report.n_failed = failed
    if not outcomes:
        raise ValueError("no judged records to aggregate; run the judge step first")
    report.accuracy = sum(c for _, c in outcomes) / len(outcomes)
    report.avg_score = sum(scores) / len(scores)
    report.per_category, report.category_counts = _per_category(outcomes, manifest.tags)


def _aggregate_textgen(records, items, report: BenchmarkReport):
    by_metric: dict[str, list[float]] = {m: [] for m in datasets.TEXTGEN_METRICS}
    failed = report.n_failed
    for record in records:
        if not record.ok:
            continue
        verdict = record.verdict
        if not verdict or verdict.get("failed"):
            failed += 1
            continue
        by_metric[items[record.item_id].metric].append(float(verdict["score"]))
    report.n_failed = failed
    means = {m: sum(v) / len(v) for m, v in by_metric.items() if v}
    if not means:
        raise ValueError("no judged records to aggregate; run the judge step first")
    if set(means) == set(datasets.TEXTGEN_METRICS):
        report.textgen = TextGenScores(
            ci=means["CI"], do_=means["DO"], cu=means["CU"], tu=means["TU"], co=means["CO"]
        )
        report.textgen_avg = report.textgen.average
    else:
        report.textgen_avg = sum(means.values()) / len(means)
    report.avg_score = report.textgen_avg


def textgen_average(ci: float, do_: float, cu: float, tu: float, co: float) -> float:
    """Arithmetic mean of the five text-generation metrics."""
    return TextGenScores(ci, do_, cu, tu, co).average


def judge_records(
    records: list[EvalRecord],
    manifest: datasets.BenchmarkManifest,
    judge: VlmClient,
    templates: TemplateSet,
    only_missing: bool = True,
) -> list[EvalRecord]:
    """Fill verdicts on open-ended / text-generation records, in place.

    Raw responses are already persisted, so this can be re-run at any time
    without touching the answering endpoint.
    """
    if manifest.task == datasets.MULTIPLE_CHOICE:
        raise ValueError("multiple choice is scored deterministically; nothing to judge")
    items = {item.id: item for item in manifest.items}
    for record in records:
        if not record.ok or record.response is None:
            continue
        if only_missing and record.verdict is not None:
            continue
        item = items[record.item_id]
        # Self-consistency records carry the voted text in parsed_answer.
        prediction = (
            record.parsed_answer
            if isinstance(record.parsed_answer, str) and record.parsed_answer
            else record.response.raw_text
        )
        if not prediction.strip():
            record.verdict = {"failed": True}
            continue
        if manifest.task == datasets.OPEN_ENDED:
            verdict = judge_open_ended(item.question, item.answer, prediction, judge, templates)
            record.verdict = (
                {"correct": verdict.correct, "score": verdict.score}
                if verdict
                else {"failed": True}
            )
        else:
            score = judge_text_generation(
                item.metric, item.question, item.answer, prediction, judge, templates
            )
            record.verdict = (
                {"score": score, "metric": item.metric} if score is not None else {"failed": True}
            )
    return records
