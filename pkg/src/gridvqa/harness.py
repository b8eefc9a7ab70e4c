"""Benchmark execution: the per-item pipeline with caching, resume, sweeps.

Two caches, both content-addressed under the run's cache directory:

  grids/      composed images, keyed by everything that shapes the image
              (video, frame count, layout, ordering, cell geometry) and
              nothing else, so prompt-arm sweeps recompose nothing;
  responses/  raw endpoint output, keyed by (item id, config hash), so
              judging and reporting re-run without touching the endpoint.

records.jsonl is written in manifest order as items complete; an interrupted
run resumes from the lines already present and converges on byte-identical
records.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import datasets, judging, prompts
from .client import ModelEndpoint, ModelResponse, SamplingParams, VlmClient
from .datasets import BenchmarkManifest, VqaItem
from .errors import AuthError, ConfigError, GridVqaError
from .grid import ROW_MAJOR, GridLayout, Ordering, compose, layout_for, parse_ordering
from .prompts import MultiStepStrategy, PromptSpec, SINGLE_STEP, TemplateSet, default_templates
from .records import EvalRecord, append_record, read_records, write_records
from .sampling import Frame, VideoSource, extract_frames, open_video, pick_random_frame, plan_samples

N_FRAMES_CHOICES = (4, 6, 9, 12, 16, 20)

QUESTION_ONLY = "question_only"
GRID_GUIDANCE = "grid_guidance"
REASONING_GUIDANCE = "reasoning_guidance"
PROMPT_ARMS = (QUESTION_ONLY, GRID_GUIDANCE, REASONING_GUIDANCE)

BASELINE_GRID = "image_grid"
BASELINE_SINGLE_FRAME = "single_frame"
BASELINES = (BASELINE_GRID, BASELINE_SINGLE_FRAME)

SELF_CONSISTENCY_TEMPERATURE = 0.7

SWEEP_AXES = ("n_frames", "shape", "ordering", "prompt_arm", "strategy", "baseline")


@dataclass(frozen=True)
class RunConfig:
    endpoint: ModelEndpoint
    n_frames: int = 6
    shape_class: str = "square"
    ordering: Ordering = ROW_MAJOR
    wide: bool = False
    prompt_arm: str = REASONING_GUIDANCE
    strategy: MultiStepStrategy = SINGLE_STEP
    baseline: str = BASELINE_GRID
    cell_size: tuple[int, int] | None = None  # (width, height)
    fit: str = "stretch"
    padding: int = 0
    frame_seed: int = 0  # single-frame baseline draws
    cache_dir: str | None = None  # defaults to <run_dir>/cache

    def validate(self) -> None:
        # Shape feasibility first: 7 frames + square is an unsupported grid
        # size, not merely an off-menu frame count.
        self.layout()
        if self.n_frames not in N_FRAMES_CHOICES:
            raise ConfigError(f"n_frames must be one of {N_FRAMES_CHOICES}, got {self.n_frames}")
        if self.prompt_arm not in PROMPT_ARMS:
            raise ConfigError(f"prompt_arm must be one of {PROMPT_ARMS}, got {self.prompt_arm!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.fit not in ("stretch", "letterbox"):
            raise ConfigError(f"fit must be stretch or letterbox, got {self.fit!r}")
        if self.padding < 0:
            raise ConfigError("padding must be >= 0")
        if self.cell_size is not None and min(self.cell_size) < 1:
            raise ConfigError("cell size must be at least 1x1")

    def layout(self) -> GridLayout:
        return layout_for(self.n_frames, self.shape_class, ordering=self.ordering, wide=self.wide)

    def to_dict(self) -> dict:
        ep = self.endpoint
        return {
            "n_frames": self.n_frames,
            "shape_class": self.shape_class,
            "ordering": self.ordering.label(),
            "wide": self.wide,
            "prompt_arm": self.prompt_arm,
            "strategy": self.strategy.label(),
            "baseline": self.baseline,
            "cell_size": list(self.cell_size) if self.cell_size else None,
            "fit": self.fit,
            "padding": self.padding,
            "frame_seed": self.frame_seed,
            "cache_dir": self.cache_dir,
            "endpoint": {
                "base_url": ep.base_url,
                "model_name": ep.model_name,
                "api_key_env": ep.api_key_env,
                "timeout": ep.timeout,
                "max_retries": ep.max_retries,
                "temperature": ep.sampling.temperature,
                "max_tokens": ep.sampling.max_tokens,
                "permits": ep.permits,
                "requests_per_second": ep.requests_per_second,
            },
        }


def config_hash(config: RunConfig, template_fingerprint: str) -> str:
    """Stable across processes; any config field or template edit changes it."""
    blob = json.dumps(
        {"config": config.to_dict(), "templates": template_fingerprint}, sort_keys=True
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunStats:
    endpoint_calls: int = 0  # client invocations that actually left the cache
    compose_calls: int = 0
    grid_cache_hits: int = 0
    response_cache_hits: int = 0
    failures: int = 0

    def add(self, other: "RunStats") -> None:
        self.endpoint_calls += other.endpoint_calls
        self.compose_calls += other.compose_calls
        self.grid_cache_hits += other.grid_cache_hits
        self.response_cache_hits += other.response_cache_hits
        self.failures += other.failures


def single_frame_baseline(source: VideoSource, seed: int) -> Frame:
    """One seed-deterministic uniform random frame, untouched (no grid)."""
    index = pick_random_frame(source.frame_count, seed)
    return Frame(pixels=source.read_frame(index), source_index=index)


def _item_seed(frame_seed: int, item_id: str) -> int:
    digest = hashlib.sha256(f"{frame_seed}:{item_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _grid_key(item: VqaItem, config: RunConfig) -> str:
    if config.baseline == BASELINE_SINGLE_FRAME:
        parts = {
            "video": item.video,
            "baseline": BASELINE_SINGLE_FRAME,
            "seed": _item_seed(config.frame_seed, item.id),
        }
    else:
        parts = {
            "video": item.video,
            "n_frames": config.n_frames,
            "shape_class": config.shape_class,
            "ordering": config.ordering.label(),
            "wide": config.wide,
            "cell_size": list(config.cell_size) if config.cell_size else None,
            "fit": config.fit,
            "padding": config.padding,
        }
    blob = json.dumps(parts, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


class _RunContext:
    def __init__(
        self,
        manifest: BenchmarkManifest,
        config: RunConfig,
        cache_dir: Path,
        templates: TemplateSet,
        client: VlmClient,
        stats: RunStats,
    ):
        self.manifest = manifest
        self.config = config
        self.grids_dir = cache_dir / "grids"
        self.responses_dir = cache_dir / "responses"
        self.templates = templates
        self.client = client
        self.stats = stats
        self.cfg_hash = config_hash(config, templates.fingerprint)

    # --- image stage -----------------------------------------------------

    def image_for(self, item: VqaItem) -> tuple[np.ndarray, GridLayout | None]:
        from PIL import Image

        key = _grid_key(item, self.config)
        png = self.grids_dir / f"{key}.png"
        layout = None if self.config.baseline == BASELINE_SINGLE_FRAME else self.config.layout()
        if png.exists():
            self.stats.grid_cache_hits += 1
            with Image.open(png) as im:
                return np.asarray(im.convert("RGB")), layout
        source = open_video(item.video)
        if self.config.baseline == BASELINE_SINGLE_FRAME:
            frame = single_frame_baseline(source, _item_seed(self.config.frame_seed, item.id))
            pixels = frame.pixels
            self.grids_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(pixels).save(png)
            return pixels, None
        plan = plan_samples(source.frame_count, self.config.n_frames)
        frames = extract_frames(source, plan)
        cell_w, cell_h = self.config.cell_size or (None, None)
        grid = compose(
            frames, layout, cell_w, cell_h, fit=self.config.fit, padding=self.config.padding
        )
        self.stats.compose_calls += 1
        self._store_grid(grid, png)
        return grid.pixels, layout

    def _store_grid(self, grid, png: Path) -> None:
        # Items sharing a video race on one cache key; write-then-rename
        # keeps concurrent writers from tearing the file.
        import os
        import threading

        self.grids_dir.mkdir(parents=True, exist_ok=True)
        tmp = png.with_name(f"{png.stem}.{threading.get_ident()}.tmp.png")
        grid.save(tmp)
        os.replace(tmp, png)
        os.replace(
            tmp.with_name(tmp.name + ".provenance.txt"),
            png.with_name(png.name + ".provenance.txt"),
        )

    # --- prompt stage ----------------------------------------------------

    def plan_for(self, item: VqaItem, layout: GridLayout | None) -> prompts.PromptPlan:
        config = self.config
        if layout is None:
            vars = prompts.grid_vars(1, 1, 1)
        else:
            vars = prompts.grid_vars(layout.n, layout.rows, layout.cols)
        mode = {
            datasets.OPEN_ENDED: prompts.OPEN_ENDED,
            datasets.TEXT_GENERATION: prompts.TEXT_GENERATION,
            datasets.MULTIPLE_CHOICE: prompts.MULTIPLE_CHOICE,
        }[self.manifest.task]
        # A single bare frame is not a grid; guidance describing one is off.
        if config.baseline == BASELINE_SINGLE_FRAME:
            include_gg = include_rg = False
        else:
            include_gg = config.prompt_arm in (GRID_GUIDANCE, REASONING_GUIDANCE)
            include_rg = (
                config.prompt_arm == REASONING_GUIDANCE and mode != prompts.MULTIPLE_CHOICE
            )
        spec = PromptSpec(
            mode=mode,
            question=item.question,
            options=item.options,
            grid_guidance=self.templates.render("grid_guidance", **vars) if include_gg else None,
            reasoning_guidance=(
                self.templates.render("reasoning_guidance", **vars) if include_rg else None
            ),
            strategy=config.strategy,
        )
        return prompts.build_plan(spec, self.templates, vars)

    # --- endpoint stage ---------------------------------------------------

    def responses_for(self, item: VqaItem) -> list[ModelResponse]:
        key = hashlib.sha256(f"{item.id}\n{self.cfg_hash}".encode()).hexdigest()[:24]
        cached = self.responses_dir / f"{key}.json"
        if cached.exists():
            self.stats.response_cache_hits += 1
            data = json.loads(cached.read_text(encoding="utf-8"))
            return [ModelResponse.from_dict(r) for r in data["responses"]]
        pixels, layout = self.image_for(item)
        plan = self.plan_for(item, layout)
        if plan.samples > 1:
            sampling = self.client.endpoint.sampling
            if sampling.temperature == 0:
                sampling = SamplingParams(
                    temperature=SELF_CONSISTENCY_TEMPERATURE, max_tokens=sampling.max_tokens
                )
            responses = self.client.ask_many(pixels, plan.turns[0], plan.samples, sampling=sampling)
            self.stats.endpoint_calls += plan.samples
        else:
            responses = [self.client.ask(pixels, plan.turns)]
            self.stats.endpoint_calls += 1
        self.responses_dir.mkdir(parents=True, exist_ok=True)
        cached.write_text(
            json.dumps(
                {
                    "item_id": item.id,
                    "config_hash": self.cfg_hash,
                    "responses": [r.to_dict() for r in responses],
                },
                sort_keys=True,
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
        return responses

    # --- whole item -------------------------------------------------------

    def process(self, item: VqaItem) -> EvalRecord:
        try:
            responses = self.responses_for(item)
        except (AuthError, ConfigError):
            raise
        except (GridVqaError, OSError) as exc:
            self.stats.failures += 1
            return EvalRecord(
                item_id=item.id, config_hash=self.cfg_hash, ok=False, error=str(exc)
            )
        texts = [r.raw_text for r in responses]
        if self.manifest.task == datasets.MULTIPLE_CHOICE:
            votes = [judging.parse_mc_answer(t, item.options) for t in texts]
            parsed = judging.majority_vote(votes) if len(votes) > 1 else votes[0]
        else:
            parsed = judging.majority_vote(texts) if len(texts) > 1 else texts[0]
        return EvalRecord(
            item_id=item.id,
            config_hash=self.cfg_hash,
            response=responses[0],
            sample_texts=texts if len(texts) > 1 else None,
            parsed_answer=parsed,
        )


def _snapshot(run_dir: Path, manifest: BenchmarkManifest, config: RunConfig,
              templates: TemplateSet, cfg_hash: str) -> None:
    config_path = run_dir / "config.json"
    if config_path.exists():
        previous = json.loads(config_path.read_text(encoding="utf-8"))
        if previous.get("config_hash") != cfg_hash:
            raise ConfigError(
                f"run directory {run_dir} was created with a different configuration "
                f"({previous.get('config_hash')} != {cfg_hash}); use a fresh directory"
            )
        snapshot = run_dir / "manifest.jsonl"
        if snapshot.exists() and snapshot.read_bytes() != datasets.manifest_bytes(manifest):
            raise ConfigError(
                f"run directory {run_dir} was created for a different manifest; "
                "use a fresh directory"
            )
        return
    run_dir.mkdir(parents=True, exist_ok=True)
    config_path.write_text(
        json.dumps(
            {
                "benchmark": manifest.name,
                "task": manifest.task,
                "config": config.to_dict(),
                "config_hash": cfg_hash,
                "templates": {"name": templates.name, "version": templates.version,
                              "fingerprint": templates.fingerprint},
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    datasets.save_manifest(manifest, run_dir / "manifest.jsonl")
    snapshot_dir = run_dir / "templates"
    if not snapshot_dir.exists():
        shutil.copytree(templates.root, snapshot_dir)


def run_benchmark(
    manifest: BenchmarkManifest,
    config: RunConfig,
    run_dir: str | Path,
    templates: TemplateSet | None = None,
    client: VlmClient | None = None,
    stats: RunStats | None = None,
    on_record: Callable[[EvalRecord], None] | None = None,
    retry_failed: bool = False,
) -> list[EvalRecord]:
    """Evaluate every manifest item under one configuration.

    Completed items are skipped on re-entry (their records and cached
    responses are reused), so interrupting and resuming converges on the
    same records as an uninterrupted run.  Per-item failures become failed
    records; only auth and configuration problems abort the run.  Failed
    items are reprocessed only when ``retry_failed`` is set.
    """
    config.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    templates = templates or default_templates()
    stats = stats if stats is not None else RunStats()
    cfg_hash = config_hash(config, templates.fingerprint)
    cache_dir = Path(config.cache_dir) if config.cache_dir else run_dir / "cache"
    _snapshot(run_dir, manifest, config, templates, cfg_hash)
    if client is None:
        client = VlmClient(
            config.endpoint,
            template_fingerprint=templates.fingerprint,
            transcript_path=run_dir / "transcripts.jsonl",
        )
    ctx = _RunContext(manifest, config, cache_dir, templates, client, stats)

    records_path = run_dir / "records.jsonl"
    done = {r.item_id: r for r in read_records(records_path)}
    if retry_failed:
        done = {item_id: r for item_id, r in done.items() if r.ok}
        write_records(records_path, [done[i.id] for i in manifest.items if i.id in done])

    ordered: list[EvalRecord] = []
    pending = [item for item in manifest.items if item.id not in done]
    with ThreadPoolExecutor(max_workers=config.endpoint.permits) as pool:
        futures = {item.id: pool.submit(ctx.process, item) for item in pending}
        for item in manifest.items:
            if item.id in done:
                record = done[item.id]
            else:
                record = futures[item.id].result()
                append_record(records_path, record)
            ordered.append(record)
            if on_record:
                on_record(record)
    write_records(records_path, ordered)
    return ordered


def _apply_axis(config: RunConfig, axis: str, value) -> RunConfig:
    if axis == "n_frames":
        return dataclasses.replace(config, n_frames=int(value))
    if axis == "shape":
        return dataclasses.replace(config, shape_class=str(value))
    if axis == "ordering":
        ordering = value if isinstance(value, Ordering) else parse_ordering(value)
        return dataclasses.replace(config, ordering=ordering)
    if axis == "prompt_arm":
        return dataclasses.replace(config, prompt_arm=str(value))
    if axis == "strategy":
        strategy = value if isinstance(value, MultiStepStrategy) else prompts.parse_strategy(value)
        return dataclasses.replace(config, strategy=strategy)
    if axis == "baseline":
        return dataclasses.replace(config, baseline=str(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; axes: {SWEEP_AXES}")


def _axis_label(axis: str, value) -> str:
    if isinstance(value, Ordering):
        return value.label()
    if isinstance(value, MultiStepStrategy):
        return value.label()
    return str(value)


def sweep(
    manifest: BenchmarkManifest,
    config: RunConfig,
    axis: str,
    values,
    run_dir: str | Path,
    templates: TemplateSet | None = None,
    client: VlmClient | None = None,
    stats: RunStats | None = None,
) -> dict[str, list[EvalRecord]]:
    """One run per axis value, sharing caches wherever stages coincide.

    All arms use the sweep directory's cache, so e.g. prompt-arm sweeps
    compose each item's grid exactly once.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    shared_cache = config.cache_dir or str(run_dir / "cache")
    results: dict[str, list[EvalRecord]] = {}
    labels = []
    for value in values:
        arm_config = _apply_axis(
            dataclasses.replace(config, cache_dir=shared_cache), axis, value
        )
        label = _axis_label(axis, value)
        labels.append(label)
        arm_dir = run_dir / "arms" / f"{axis}={label}"
        results[label] = run_benchmark(
            manifest, arm_config, arm_dir, templates=templates, client=client, stats=stats
        )
    (run_dir / "sweep.json").write_text(
        json.dumps({"axis": axis, "values": labels}, indent=2) + "\n", encoding="utf-8"
    )
    return results
