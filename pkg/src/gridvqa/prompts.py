"""Prompt assembly: guidance components, option labeling, multi-step plans.

Wording lives in plain-text template files ({placeholder} syntax), never in
code, so ablations swap template sets rather than branches.  A template set
directory carries a manifest.json with its version; the content fingerprint
of the whole set goes into run config hashes.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

OPTION_LETTERS = "ABCDE"

OPEN_ENDED = "open_ended"
MULTIPLE_CHOICE = "multiple_choice"
TEXT_GENERATION = "text_generation"

_PLACEHOLDER_RE = re.compile(r"\{([a-z_][a-z0-9_]*)\}")

STRATEGY_TAGS = (
    "single_step",
    "zero_shot_cot",
    "self_consistency",
    "plan_and_solve",
    "describe_and_answer",
)


@dataclass(frozen=True)
class MultiStepStrategy:
    tag: str
    k: int = 1  # sample count, self_consistency only

    def __post_init__(self):
        if self.tag not in STRATEGY_TAGS:
            raise ValueError(f"unknown strategy {self.tag!r}")
        if self.tag == "self_consistency" and self.k < 2:
            raise ValueError("self_consistency needs k >= 2")
        if self.tag != "self_consistency" and self.k != 1:
            raise ValueError(f"{self.tag} does not take a sample count")

    def label(self) -> str:
        return f"{self.tag}:{self.k}" if self.tag == "self_consistency" else self.tag


SINGLE_STEP = MultiStepStrategy("single_step")
ZERO_SHOT_COT = MultiStepStrategy("zero_shot_cot")
PLAN_AND_SOLVE = MultiStepStrategy("plan_and_solve")
DESCRIBE_AND_ANSWER = MultiStepStrategy("describe_and_answer")


def self_consistency(k: int) -> MultiStepStrategy:
    return MultiStepStrategy("self_consistency", k)


def parse_strategy(text: str) -> MultiStepStrategy:
    if text.startswith("self_consistency"):
        _, _, k = text.partition(":")
        return self_consistency(int(k) if k else 5)
    return MultiStepStrategy(text)


class TemplateSet:
    """Named plain-text templates loaded from one directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise ConfigError(f"template set {self.root} has no manifest.json")
        meta = json.loads(manifest_path.read_text(encoding="utf-8"))
        self.name = meta.get("name", self.root.name)
        self.version = str(meta.get("version", "0"))
        self._texts = {
            p.stem: p.read_text(encoding="utf-8").strip()
            for p in sorted(self.root.glob("*.txt"))
        }

    @property
    def fingerprint(self) -> str:
        """Content hash of the whole set; any wording edit changes it."""
        digest = hashlib.sha256()
        digest.update(f"{self.name}:{self.version}".encode())
        for name in sorted(self._texts):
            digest.update(name.encode())
            digest.update(b"\x00")
            digest.update(self._texts[name].encode())
            digest.update(b"\x00")
        return digest.hexdigest()[:16]

    def names(self) -> tuple[str, ...]:
        return tuple(sorted(self._texts))

    def render(self, name: str, **variables) -> str:
        if name not in self._texts:
            raise ConfigError(f"template {name!r} missing from set {self.name}")
        unfilled: list[str] = []

        def fill(match: re.Match) -> str:
            key = match.group(1)
            if key in variables:
                return str(variables[key])
            unfilled.append(key)
            return match.group(0)

        # single pass: substituted values are never re-scanned, so variable
        # content that looks like a placeholder stays verbatim
        text = _PLACEHOLDER_RE.sub(fill, self._texts[name])
        if unfilled:
            raise ConfigError(
                f"template {name!r} has unfilled placeholders: {sorted(set(unfilled))}"
            )
        return text


def default_templates() -> TemplateSet:
    return TemplateSet(Path(__file__).parent / "templates" / "default")


@dataclass(frozen=True)
class PromptSpec:
    """One question's fully resolved prompt ingredients."""

    mode: str
    question: str
    options: tuple[str, ...] | None = None
    grid_guidance: str | None = None
    reasoning_guidance: str | None = None
    strategy: MultiStepStrategy = SINGLE_STEP

    def __post_init__(self):
        if self.mode not in (OPEN_ENDED, MULTIPLE_CHOICE, TEXT_GENERATION):
            raise ValueError(f"unknown prompt mode {self.mode!r}")
        if not self.question:
            raise ValueError("question must be non-empty")
        if self.mode == MULTIPLE_CHOICE:
            if not self.options or not 2 <= len(self.options) <= len(OPTION_LETTERS):
                raise ValueError("multiple choice needs 2-5 options")
            if self.reasoning_guidance is not None:
                raise ValueError("multiple choice prompts never carry reasoning guidance")


@dataclass(frozen=True)
class PromptPlan:
    """Conversation turns plus the sampling contract for executing them.

    ``samples`` > 1 means the single turn is issued that many times as
    independent sampled completions, reduced by ``reduction``.
    """

    turns: tuple[str, ...]
    samples: int = 1
    reduction: str = "none"

    def sampled_prompts(self) -> tuple[str, ...]:
        return tuple(self.turns[0] for _ in range(self.samples))


def format_options(options) -> str:
    return "\n".join(f"({OPTION_LETTERS[i]}) {text}" for i, text in enumerate(options))


def _join(parts) -> str:
    return "\n".join(p for p in parts if p)


def grid_vars(n_frames: int, rows: int, cols: int) -> dict:
    return {"n_frames": n_frames, "rows": rows, "cols": cols}


def build_open_ended(
    question: str,
    include_grid_guidance: bool,
    include_reasoning_guidance: bool,
    templates: TemplateSet,
    vars: dict,
) -> str:
    """Guidance components, in order, then the bare question."""
    if not question:
        raise ValueError("question must be non-empty")
    parts = []
    if include_grid_guidance:
        parts.append(templates.render("grid_guidance", **vars))
    if include_reasoning_guidance:
        parts.append(templates.render("reasoning_guidance", **vars))
    parts.append(question)
    return _join(parts)


def build_multiple_choice(
    question: str,
    options,
    templates: TemplateSet,
    vars: dict,
    include_grid_guidance: bool = True,
) -> str:
    """Grid guidance, question, lettered options, letter-answer instruction."""
    if not question:
        raise ValueError("question must be non-empty")
    options = tuple(options)
    if not 2 <= len(options) <= len(OPTION_LETTERS):
        raise ValueError(f"need 2-{len(OPTION_LETTERS)} options, got {len(options)}")
    parts = []
    if include_grid_guidance:
        parts.append(templates.render("grid_guidance", **vars))
    parts.append(question)
    parts.append(format_options(options))
    parts.append(templates.render("mc_instruction", **vars))
    return _join(parts)


def render_single_step(spec: PromptSpec, templates: TemplateSet, vars: dict) -> str:
    if spec.mode == MULTIPLE_CHOICE:
        return build_multiple_choice(
            spec.question,
            spec.options,
            templates,
            vars,
            include_grid_guidance=spec.grid_guidance is not None,
        )
    return build_open_ended(
        spec.question,
        spec.grid_guidance is not None,
        spec.reasoning_guidance is not None,
        templates,
        vars,
    )


def _final_answer_turn(spec: PromptSpec, templates: TemplateSet, vars: dict) -> str:
    """Answer-extraction turn; restates the question so the eliciting turn
    always carries it verbatim."""
    parts = [templates.render("answer_extract", question=spec.question, **vars)]
    if spec.mode == MULTIPLE_CHOICE:
        parts.append(format_options(spec.options))
        parts.append(templates.render("mc_instruction", **vars))
    return _join(parts)


def build_multistep(
    strategy: MultiStepStrategy,
    spec: PromptSpec,
    templates: TemplateSet,
    vars: dict,
) -> PromptPlan:
    """Conversation plan for one of the multi-step strategies.

    Grid guidance is kept in every strategy's first turn so single-step and
    multi-step arms differ only in their reasoning scaffold.
    """
    if strategy.tag == "single_step":
        raise ValueError("single_step is not a multi-step strategy; use build_plan")
    gg = spec.grid_guidance

    if strategy.tag == "zero_shot_cot":
        question_block = _question_block(spec)
        first = _join([gg, question_block, templates.render("cot_elicit", **vars)])
        return PromptPlan(turns=(first, _final_answer_turn(spec, templates, vars)))

    if strategy.tag == "plan_and_solve":
        question_block = _question_block(spec)
        first = _join([gg, question_block, templates.render("plan_elicit", **vars)])
        return PromptPlan(turns=(first, _final_answer_turn(spec, templates, vars)))

    if strategy.tag == "describe_and_answer":
        first = _join([gg, templates.render("describe_request", **vars)])
        second_parts = [spec.question]
        if spec.mode == MULTIPLE_CHOICE:
            second_parts.append(format_options(spec.options))
            second_parts.append(templates.render("mc_instruction", **vars))
        return PromptPlan(turns=(first, _join(second_parts)))

    # self_consistency: the single-step prompt, replicated for sampling
    prompt = render_single_step(spec, templates, vars)
    return PromptPlan(turns=(prompt,), samples=strategy.k, reduction="majority")


def _question_block(spec: PromptSpec) -> str:
    if spec.mode == MULTIPLE_CHOICE:
        return _join([spec.question, format_options(spec.options)])
    return spec.question


def build_plan(spec: PromptSpec, templates: TemplateSet, vars: dict) -> PromptPlan:
    """Uniform entry point covering single-step and every multi-step tag."""
    if spec.strategy.tag == "single_step":
        return PromptPlan(turns=(render_single_step(spec, templates, vars),))
    return build_multistep(spec.strategy, spec, templates, vars)


# Template names each strategy may render, for registry round-trip checks.
STRATEGY_TEMPLATES = {
    "single_step": ("grid_guidance", "reasoning_guidance", "mc_instruction"),
    "zero_shot_cot": ("grid_guidance", "cot_elicit", "answer_extract", "mc_instruction"),
    "self_consistency": ("grid_guidance", "reasoning_guidance", "mc_instruction"),
    "plan_and_solve": ("grid_guidance", "plan_elicit", "answer_extract", "mc_instruction"),
    "describe_and_answer": ("grid_guidance", "describe_request", "mc_instruction"),
}

JUDGE_TEMPLATES = {
    "correctness": "judge_correctness",
    "CI": "judge_ci",
    "DO": "judge_do",
    "CU": "judge_cu",
    "TU": "judge_tu",
    "CO": "judge_co",
}
