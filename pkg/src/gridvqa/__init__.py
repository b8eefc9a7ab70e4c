"""gridvqa: zero-shot video QA through a single composed image grid.

Pipeline: sample frames uniformly, compose them into one grid image, pair it
with a structured prompt, query a chat-style VLM endpoint, then score and
aggregate. Everything runs offline against the bundled mock endpoints.
"""

from .client import ModelEndpoint, ModelResponse, SamplingParams, VlmClient
from .datasets import BenchmarkManifest, VqaItem, load_manifest, save_manifest, subsample
from .grid import (
    COL_MAJOR,
    ROW_MAJOR,
    GridLayout,
    ImageGrid,
    Ordering,
    cell_for,
    compose,
    layout_for,
    random_ordering,
)
from .harness import RunConfig, RunStats, run_benchmark, single_frame_baseline, sweep
from .judging import (
    BenchmarkReport,
    JudgeVerdict,
    TextGenScores,
    aggregate,
    judge_open_ended,
    majority_vote,
    parse_mc_answer,
)
from .prompts import (
    MultiStepStrategy,
    PromptPlan,
    PromptSpec,
    TemplateSet,
    build_multiple_choice,
    build_multistep,
    build_open_ended,
    default_templates,
    self_consistency,
)
from .records import EvalRecord
from .sampling import Frame, FramePlan, VideoSource, extract_frames, open_video, plan_samples

__version__ = "0.1.0"

__all__ = [
    "BenchmarkManifest",
    "BenchmarkReport",
    "COL_MAJOR",
    "EvalRecord",
    "Frame",
    "FramePlan",
    "GridLayout",
    "ImageGrid",
    "JudgeVerdict",
    "ModelEndpoint",
    "ModelResponse",
    "MultiStepStrategy",
    "Ordering",
    "PromptPlan",
    "PromptSpec",
    "ROW_MAJOR",
    "RunConfig",
    "RunStats",
    "SamplingParams",
    "TemplateSet",
    "TextGenScores",
    "VideoSource",
    "VlmClient",
    "VqaItem",
    "aggregate",
    "build_multiple_choice",
    "build_multistep",
    "build_open_ended",
    "cell_for",
    "compose",
    "default_templates",
    "extract_frames",
    "judge_open_ended",
    "layout_for",
    "load_manifest",
    "majority_vote",
    "open_video",
    "parse_mc_answer",
    "plan_samples",
    "random_ordering",
    "run_benchmark",
    "save_manifest",
    "self_consistency",
    "single_frame_baseline",
    "subsample",
    "sweep",
]
