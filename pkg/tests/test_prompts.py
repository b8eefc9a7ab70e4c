import pytest

from hypothesis import given, strategies as st

from gridvqa.errors import ConfigError
from gridvqa.prompts import (
    DESCRIBE_AND_ANSWER,
    JUDGE_TEMPLATES,
    PLAN_AND_SOLVE,
    SINGLE_STEP,
    STRATEGY_TEMPLATES,
    ZERO_SHOT_COT,
    MultiStepStrategy,
    PromptSpec,
    build_multiple_choice,
    build_multistep,
    build_open_ended,
    build_plan,
    default_templates,
    format_options,
    grid_vars,
    parse_strategy,
    self_consistency,
)

TPL = default_templates()
VARS = grid_vars(6, 3, 2)


def gg():
    return TPL.render("grid_guidance", **VARS)


def rg():
    return TPL.render("reasoning_guidance", **VARS)


# --- open-ended arms ---------------------------------------------------------


def test_open_ended_full_prompt_orders_components():
    text = build_open_ended("What is the man doing?", True, True, TPL, VARS)
    g, r = gg(), rg()
    assert g in text and r in text and text.endswith("What is the man doing?")
    assert text.index(g) < text.index(r) < text.index("What is the man doing?")


def test_open_ended_question_only_is_bare_question():
    assert build_open_ended("Q", False, False, TPL, VARS) == "Q"


def test_open_ended_grid_guidance_arm():
    text = build_open_ended("Q", True, False, TPL, VARS)
    assert text == gg() + "\nQ"
    assert rg() not in text


def test_open_ended_rejects_empty_question():
    with pytest.raises(ValueError):
        build_open_ended("", True, True, TPL, VARS)


def test_guidance_mentions_grid_geometry():
    assert "6" in gg() and "3" in gg() and "2" in gg()


# --- multiple choice ---------------------------------------------------------


def test_mc_prompt_labels_options_in_order():
    text = build_multiple_choice("Q", ["x", "y"], TPL, VARS)
    assert "(A) x" in text and "(B) y" in text
    assert TPL.render("mc_instruction", **VARS) in text
    assert gg() in text


def test_mc_five_options_label_bijection():
    options = ["opt one", "opt two", "opt three", "opt four", "opt five"]
    text = build_multiple_choice("Q", options, TPL, VARS)
    for letter, option in zip("ABCDE", options):
        assert text.count(f"({letter}) {option}") == 1
    assert "(F)" not in text


def test_mc_reversed_options_keep_labels_swap_texts():
    fwd = build_multiple_choice("Q", ["x", "y"], TPL, VARS)
    rev = build_multiple_choice("Q", ["y", "x"], TPL, VARS)
    assert "(A) x" in fwd and "(A) y" in rev


def test_mc_never_contains_reasoning_guidance():
    text = build_multiple_choice("Q", ["x", "y"], TPL, VARS)
    assert rg() not in text


def test_mc_rejects_too_few_or_many_options():
    with pytest.raises(ValueError):
        build_multiple_choice("Q", ["only"], TPL, VARS)
    with pytest.raises(ValueError):
        build_multiple_choice("Q", list("abcdef"), TPL, VARS)


def test_prompt_spec_enforces_mc_invariants():
    with pytest.raises(ValueError):
        PromptSpec(mode="multiple_choice", question="Q", options=("x", "y"),
                   reasoning_guidance="how to reason")
    with pytest.raises(ValueError):
        PromptSpec(mode="multiple_choice", question="Q", options=("x",))


# --- strategies ---------------------------------------------------------------


def _spec(mode="open_ended", strategy=SINGLE_STEP, options=None):
    return PromptSpec(
        mode=mode,
        question="What happens at the end?",
        options=options,
        grid_guidance=gg(),
        reasoning_guidance=rg() if mode == "open_ended" else None,
        strategy=strategy,
    )


def test_strategy_validation():
    with pytest.raises(ValueError):
        MultiStepStrategy("self_consistency", 1)
    with pytest.raises(ValueError):
        MultiStepStrategy("zero_shot_cot", 3)
    with pytest.raises(ValueError):
        MultiStepStrategy("chain_of_everything")
    assert parse_strategy("self_consistency:5").k == 5
    assert parse_strategy("plan_and_solve") == PLAN_AND_SOLVE


def test_zero_shot_cot_two_turn_structure():
    plan = build_multistep(ZERO_SHOT_COT, _spec(), TPL, VARS)
    assert len(plan.turns) == 2 and plan.samples == 1
    first, second = plan.turns
    assert gg() in first
    assert TPL.render("cot_elicit", **VARS) in first
    assert "What happens at the end?" in second  # extraction restates it


def test_plan_and_solve_two_phase():
    plan = build_multistep(PLAN_AND_SOLVE, _spec(), TPL, VARS)
    assert len(plan.turns) == 2
    assert TPL.render("plan_elicit", **VARS) in plan.turns[0]


def test_describe_and_answer_phase_separation():
    plan = build_multistep(DESCRIBE_AND_ANSWER, _spec(), TPL, VARS)
    assert len(plan.turns) == 2
    assert "What happens at the end?" not in plan.turns[0]
    assert "What happens at the end?" in plan.turns[1]
    assert gg() in plan.turns[0]


def test_self_consistency_replicates_single_step_prompt():
    plan = build_multistep(self_consistency(5), _spec(), TPL, VARS)
    sampled = plan.sampled_prompts()
    assert len(sampled) == 5
    assert len(set(sampled)) == 1
    assert plan.samples == 5 and plan.reduction == "majority"
    single = build_plan(_spec(strategy=SINGLE_STEP), TPL, VARS).turns[0]
    assert sampled[0] == single


def test_self_consistency_k_below_two_rejected():
    with pytest.raises(ValueError):
        self_consistency(1)


def test_build_multistep_rejects_single_step():
    with pytest.raises(ValueError):
        build_multistep(SINGLE_STEP, _spec(), TPL, VARS)


def test_mc_multistep_final_turn_carries_options_and_letter_instruction():
    for strategy in (ZERO_SHOT_COT, PLAN_AND_SOLVE, DESCRIBE_AND_ANSWER):
        plan = build_multistep(strategy, _spec("multiple_choice", strategy, ("x", "y")), TPL, VARS)
        final = plan.turns[-1]
        assert "(A) x" in final and "(B) y" in final
        assert TPL.render("mc_instruction", **VARS) in final


def test_grid_guidance_present_in_every_multistep_arm():
    for strategy in (ZERO_SHOT_COT, PLAN_AND_SOLVE, DESCRIBE_AND_ANSWER):
        plan = build_multistep(strategy, _spec(strategy=strategy), TPL, VARS)
        assert gg() in plan.turns[0]
    sc = build_multistep(self_consistency(3), _spec(strategy=self_consistency(3)), TPL, VARS)
    assert gg() in sc.turns[0]


# --- invariants ----------------------------------------------------------------


def test_rendering_is_deterministic():
    spec = _spec()
    a = build_plan(spec, TPL, VARS)
    b = build_plan(spec, TPL, VARS)
    assert a == b


@given(st.uuids())
def test_question_exactly_once_in_final_turn_all_strategies(token):
    question = f"What is entity {token} doing?"
    for strategy in (SINGLE_STEP, ZERO_SHOT_COT, PLAN_AND_SOLVE, DESCRIBE_AND_ANSWER,
                     self_consistency(3)):
        spec = PromptSpec(
            mode="open_ended", question=question, grid_guidance=gg(),
            reasoning_guidance=rg(), strategy=strategy,
        )
        plan = build_plan(spec, TPL, VARS)
        assert plan.turns[-1].count(question) == 1


def test_template_registry_roundtrip():
    """Every template any strategy or judge references exists and renders
    with no unfilled placeholders."""
    sample = {"n_frames": 6, "rows": 3, "cols": 2, "question": "Q",
              "answer": "A", "prediction": "P"}
    for names in STRATEGY_TEMPLATES.values():
        for name in names:
            assert name in TPL.names()
            TPL.render(name, **sample)
    for name in JUDGE_TEMPLATES.values():
        assert name in TPL.names()
        TPL.render(name, **sample)


def test_render_rejects_missing_template_and_unfilled_placeholder():
    with pytest.raises(ConfigError):
        TPL.render("no_such_template")
    with pytest.raises(ConfigError):
        TPL.render("grid_guidance", rows=3, cols=2)  # n_frames unfilled


def test_render_keeps_placeholder_syntax_inside_values_verbatim():
    question = "Is the {rows} marker literally on screen?"
    text = TPL.render("answer_extract", question=question, **VARS)
    assert question in text


def test_fingerprint_changes_with_wording(tmp_path):
    import shutil

    from gridvqa.prompts import TemplateSet

    clone = tmp_path / "custom"
    shutil.copytree(TPL.root, clone)
    assert TemplateSet(clone).fingerprint == TPL.fingerprint
    (clone / "grid_guidance.txt").write_text("A new wording with {n_frames} frames.")
    assert TemplateSet(clone).fingerprint != TPL.fingerprint


def test_format_options():
    assert format_options(["x", "y"]) == "(A) x\n(B) y"
