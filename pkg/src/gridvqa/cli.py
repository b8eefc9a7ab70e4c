"""Command-line surface tying the pipeline together.

Exit codes: 0 ok, 2 config error, 3 endpoint error, 4 data error.
Every verb runs offline against ``mock:`` endpoints; ask/run/judge/sweep take
a real HTTPS endpoint the same way.  API keys come from the environment
variable named by --api-key-env, never from flags or files.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import datasets, harness, judging, prompts, reporting, synthetic
from .client import ModelEndpoint, SamplingParams, VlmClient
from .errors import GridVqaError
from .grid import compose, layout_for, parse_ordering
from .harness import RunConfig, RunStats
from .prompts import PromptSpec, TemplateSet, default_templates
from .records import read_records, write_records
from .sampling import extract_frames, open_video, plan_samples


def handles_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GridVqaError as exc:
            category = {2: "config error", 3: "endpoint error", 4: "data error"}.get(
                exc.exit_code, "error"
            )
            click.echo(f"{category}: {exc}", err=True)
            sys.exit(exc.exit_code)
        except ValueError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(4)

    return wrapper


@click.group()
def main():
    """Video QA by packing sampled frames into one image grid for a VLM."""


def endpoint_options(fn):
    fn = click.option("--endpoint-url", default="mock:echo", show_default=True,
                      help="Chat-completion base URL, or a mock: spec.")(fn)
    fn = click.option("--model", default="mock-model", show_default=True)(fn)
    fn = click.option("--api-key-env", default="GRIDVQA_API_KEY", show_default=True)(fn)
    fn = click.option("--timeout", default=120.0, show_default=True)(fn)
    fn = click.option("--max-retries", default=3, show_default=True)(fn)
    fn = click.option("--temperature", default=0.0, show_default=True)(fn)
    fn = click.option("--max-tokens", default=768, show_default=True)(fn)
    fn = click.option("--permits", default=4, show_default=True,
                      help="Max concurrent endpoint calls.")(fn)
    fn = click.option("--rps", default=None, type=float, help="Rate limit, requests/second.")(fn)
    return fn


def _endpoint_from_flags(endpoint_url, model, api_key_env, timeout, max_retries,
                         temperature, max_tokens, permits, rps) -> ModelEndpoint:
    return ModelEndpoint(
        base_url=endpoint_url,
        model_name=model,
        api_key_env=api_key_env,
        timeout=timeout,
        max_retries=max_retries,
        sampling=SamplingParams(temperature=temperature, max_tokens=max_tokens),
        permits=permits,
        requests_per_second=rps,
    )


_ENDPOINT_FLAG_FIELDS = {
    "endpoint_url": "base_url",
    "model": "model_name",
    "api_key_env": "api_key_env",
    "timeout": "timeout",
    "max_retries": "max_retries",
    "temperature": "temperature",
    "max_tokens": "max_tokens",
    "permits": "permits",
    "rps": "requests_per_second",
}


def _merge_endpoint(file_values: dict, endpoint_flags: dict) -> ModelEndpoint:
    """Flag defaults, overlaid by the config file's endpoint block, overlaid
    by flags the user actually typed (flags win)."""
    values = {field: endpoint_flags[flag] for flag, field in _ENDPOINT_FLAG_FIELDS.items()}
    file_endpoint = file_values.get("endpoint") or {}
    values.update({k: v for k, v in file_endpoint.items() if k in values and v is not None})
    ctx = click.get_current_context(silent=True)
    if ctx is not None:
        for flag, field in _ENDPOINT_FLAG_FIELDS.items():
            source = ctx.get_parameter_source(flag)
            if source is not None and source.name in ("COMMANDLINE", "ENVIRONMENT"):
                values[field] = endpoint_flags[flag]
    return ModelEndpoint(
        base_url=values["base_url"],
        model_name=values["model_name"],
        api_key_env=values["api_key_env"],
        timeout=values["timeout"],
        max_retries=values["max_retries"],
        sampling=SamplingParams(
            temperature=values["temperature"], max_tokens=values["max_tokens"]
        ),
        permits=values["permits"],
        requests_per_second=values["requests_per_second"],
    )


def _load_file_values(config_file) -> dict:
    if not config_file:
        return {}
    values = json.loads(Path(config_file).read_text(encoding="utf-8"))
    # also accept a run directory's config.json snapshot
    return values.get("config", values)


def config_options(fn):
    fn = click.option("--config", "config_file", type=click.Path(exists=True), default=None,
                      help="JSON run configuration; flags override file values.")(fn)
    fn = click.option("--frames", "n_frames", default=None, type=int)(fn)
    fn = click.option("--shape", default=None, type=click.Choice(["square", "vertical", "horizontal"]))(fn)
    fn = click.option("--ordering", default=None, help="row_major, col_major, or random:SEED")(fn)
    fn = click.option("--wide", is_flag=True, default=None,
                      help="Flip the near-square orientation to more columns than rows.")(fn)
    fn = click.option("--arm", "prompt_arm", default=None,
                      type=click.Choice(list(harness.PROMPT_ARMS)))(fn)
    fn = click.option("--strategy", default=None,
                      help="single_step, zero_shot_cot, self_consistency[:K], plan_and_solve, describe_and_answer")(fn)
    fn = click.option("--baseline", default=None, type=click.Choice(list(harness.BASELINES)))(fn)
    fn = click.option("--cell-size", default=None, help="Cell WxH in pixels, e.g. 336x336.")(fn)
    fn = click.option("--fit", default=None, type=click.Choice(["stretch", "letterbox"]))(fn)
    fn = click.option("--padding", default=None, type=int)(fn)
    fn = click.option("--frame-seed", default=None, type=int)(fn)
    fn = click.option("--cache-dir", default=None, type=click.Path())(fn)
    fn = click.option("--templates", "templates_dir", default=None, type=click.Path(exists=True),
                      help="Template set directory (defaults to the bundled set).")(fn)
    return fn


def _parse_cell_size(text):
    if text is None:
        return None
    w, _, h = text.lower().partition("x")
    return int(w), int(h)


def _build_config(endpoint: ModelEndpoint, file_values: dict, **flags) -> RunConfig:
    """File values under flag overrides; flags win."""

    def pick(flag_name, file_name, default):
        flag = flags.get(flag_name)
        if flag is not None:
            return flag
        if file_name in file_values and file_values[file_name] is not None:
            return file_values[file_name]
        return default

    ordering = pick("ordering", "ordering", "row_major")
    strategy = pick("strategy", "strategy", "single_step")
    cell_size = pick("cell_size", "cell_size", None)
    if isinstance(cell_size, str):
        cell_size = _parse_cell_size(cell_size)
    elif isinstance(cell_size, list):
        cell_size = tuple(cell_size)
    return RunConfig(
        endpoint=endpoint,
        n_frames=int(pick("n_frames", "n_frames", 6)),
        shape_class=pick("shape", "shape_class", "square"),
        ordering=parse_ordering(ordering) if isinstance(ordering, str) else ordering,
        wide=bool(pick("wide", "wide", False)),
        prompt_arm=pick("prompt_arm", "prompt_arm", harness.REASONING_GUIDANCE),
        strategy=prompts.parse_strategy(strategy) if isinstance(strategy, str) else strategy,
        baseline=pick("baseline", "baseline", harness.BASELINE_GRID),
        cell_size=cell_size,
        fit=pick("fit", "fit", "stretch"),
        padding=int(pick("padding", "padding", 0)),
        frame_seed=int(pick("frame_seed", "frame_seed", 0)),
        cache_dir=pick("cache_dir", "cache_dir", None),
    )


def _load_templates(templates_dir) -> TemplateSet:
    return TemplateSet(templates_dir) if templates_dir else default_templates()


@main.command("compose")
@click.argument("video", type=click.Path(exists=True))
@click.option("--frames", "n_frames", default=6, show_default=True)
@click.option("--shape", default="square", type=click.Choice(["square", "vertical", "horizontal"]),
              show_default=True)
@click.option("--ordering", default="row_major", show_default=True)
@click.option("--wide", is_flag=True, default=False)
@click.option("--cell-size", default=None)
@click.option("--fit", default="stretch", type=click.Choice(["stretch", "letterbox"]))
@click.option("--padding", default=0, type=int)
@click.option("--jpeg-quality", default=None, type=int)
@click.option("--out", required=True, type=click.Path())
@handles_errors
def cmd_compose(video, n_frames, shape, ordering, wide, cell_size, fit, padding, jpeg_quality, out):
    """Compose VIDEO into a grid image plus a provenance sidecar."""
    source = open_video(video)
    plan = plan_samples(source.frame_count, n_frames)
    layout = layout_for(n_frames, shape, ordering=parse_ordering(ordering), wide=wide)
    frames = extract_frames(source, plan)
    cell_w, cell_h = _parse_cell_size(cell_size) or (None, None)
    grid = compose(frames, layout, cell_w, cell_h, fit=fit, padding=padding)
    path = grid.save(out, jpeg_quality=jpeg_quality)
    click.echo(f"wrote {path} ({layout.rows}x{layout.cols}, frames {list(plan.indices)})")


@main.command("ask")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--question", required=True)
@click.option("--options", default=None, help="Comma-separated option texts (multiple choice).")
@click.option("--arm", "prompt_arm", default=harness.REASONING_GUIDANCE,
              type=click.Choice(list(harness.PROMPT_ARMS)), show_default=True)
@click.option("--strategy", default="single_step", show_default=True)
@click.option("--frames", "n_frames", default=6, show_default=True)
@click.option("--rows", default=3, show_default=True)
@click.option("--cols", default=2, show_default=True)
@click.option("--templates", "templates_dir", default=None, type=click.Path(exists=True))
@endpoint_options
@handles_errors
def cmd_ask(image_path, question, options, prompt_arm, strategy, n_frames, rows, cols,
            templates_dir, **endpoint_flags):
    """Send one composed image plus a question to the endpoint."""
    import numpy as np
    from PIL import Image

    templates = _load_templates(templates_dir)
    endpoint = _endpoint_from_flags(**endpoint_flags)
    client = VlmClient(endpoint, template_fingerprint=templates.fingerprint)
    with Image.open(image_path) as im:
        pixels = np.asarray(im.convert("RGB"))
    vars = prompts.grid_vars(n_frames, rows, cols)
    option_list = tuple(o.strip() for o in options.split(",")) if options else None
    include_gg = prompt_arm in (harness.GRID_GUIDANCE, harness.REASONING_GUIDANCE)
    include_rg = prompt_arm == harness.REASONING_GUIDANCE and option_list is None
    spec = PromptSpec(
        mode=prompts.MULTIPLE_CHOICE if option_list else prompts.OPEN_ENDED,
        question=question,
        options=option_list,
        grid_guidance=templates.render("grid_guidance", **vars) if include_gg else None,
        reasoning_guidance=templates.render("reasoning_guidance", **vars) if include_rg else None,
        strategy=prompts.parse_strategy(strategy),
    )
    plan = prompts.build_plan(spec, templates, vars)
    if plan.samples > 1:
        responses = client.ask_many(pixels, plan.turns[0], plan.samples)
        texts = [r.raw_text for r in responses]
        click.echo(json.dumps({"samples": texts, "vote": judging.majority_vote(texts)}))
    else:
        response = client.ask(pixels, plan.turns)
        click.echo(response.raw_text)


@main.command("run")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--subsample", "fraction", default=None, type=float,
              help="Keep this fraction of items (stratified, seed-pinned).")
@click.option("--subsample-seed", default=7, show_default=True, type=int)
@click.option("--retry-failed", is_flag=True, default=False)
@config_options
@endpoint_options
@handles_errors
def cmd_run(manifest_path, run_dir, fraction, subsample_seed, retry_failed,
            config_file, templates_dir, **flags):
    """Run a benchmark end to end: sample, compose, prompt, ask, record."""
    endpoint_flags = {k: flags.pop(k) for k in _ENDPOINT_FLAG_FIELDS}
    file_values = _load_file_values(config_file)
    endpoint = _merge_endpoint(file_values, endpoint_flags)
    config = _build_config(endpoint, file_values, **flags)
    templates = _load_templates(templates_dir)
    manifest = datasets.load_manifest(manifest_path)
    if fraction is not None:
        manifest = datasets.subsample(manifest, fraction, subsample_seed)
    stats = RunStats()
    done = {"n": 0}

    def progress(record):
        done["n"] += 1
        if done["n"] % 25 == 0:
            click.echo(f"  {done['n']}/{len(manifest.items)} items", err=True)

    records = harness.run_benchmark(
        manifest, config, run_dir, templates=templates, stats=stats,
        on_record=progress, retry_failed=retry_failed,
    )
    failed = sum(1 for r in records if not r.ok)
    click.echo(
        f"{len(records)} records ({failed} failed) in {run_dir}; "
        f"endpoint calls {stats.endpoint_calls}, compose calls {stats.compose_calls}, "
        f"cache hits {stats.response_cache_hits}"
    )


@main.command("judge")
@click.option("--run-dir", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True),
              help="Defaults to the manifest snapshot inside the run directory.")
@click.option("--templates", "templates_dir", default=None, type=click.Path(exists=True))
@click.option("--rejudge", is_flag=True, default=False, help="Re-judge already judged records.")
@endpoint_options
@handles_errors
def cmd_judge(run_dir, manifest_path, templates_dir, rejudge, **endpoint_flags):
    """Score recorded responses with an LLM judge (open-ended / text-gen)."""
    run_dir = Path(run_dir)
    manifest = datasets.load_manifest(manifest_path or run_dir / "manifest.jsonl")
    templates = _load_templates(templates_dir)
    endpoint = _endpoint_from_flags(**endpoint_flags)
    judge = VlmClient(endpoint, template_fingerprint=templates.fingerprint)
    records = read_records(run_dir / "records.jsonl")
    try:
        judging.judge_records(records, manifest, judge, templates, only_missing=not rejudge)
    finally:
        # keep verdicts gathered before an endpoint failure; rerun skips them
        write_records(run_dir / "records.jsonl", records)
    judged = sum(1 for r in records if r.verdict and not r.verdict.get("failed"))
    failed = sum(1 for r in records if r.verdict and r.verdict.get("failed"))
    click.echo(f"judged {judged} records ({failed} judge failures)")


@main.command("report")
@click.argument("run_dir", type=click.Path(exists=True))
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "markdown"]),
              show_default=True)
@click.option("--out", default=None, type=click.Path())
@handles_errors
def cmd_report(run_dir, fmt, out):
    """Aggregate a run (or sweep) directory into report files."""
    path = reporting.write_run_report(run_dir, fmt, out)
    click.echo(path.read_text(encoding="utf-8"), nl=False)
    click.echo(f"wrote {path}")


@main.command("sweep")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--axis", required=True, type=click.Choice(list(harness.SWEEP_AXES)))
@click.option("--values", required=True,
              help="Comma-separated axis values, e.g. 4,6,9 or row_major,col_major,random:3")
@config_options
@endpoint_options
@handles_errors
def cmd_sweep(manifest_path, run_dir, axis, values, config_file, templates_dir, **flags):
    """Run one benchmark arm per axis value, sharing caches across arms."""
    endpoint_flags = {k: flags.pop(k) for k in _ENDPOINT_FLAG_FIELDS}
    file_values = _load_file_values(config_file)
    endpoint = _merge_endpoint(file_values, endpoint_flags)
    config = _build_config(endpoint, file_values, **flags)
    templates = _load_templates(templates_dir)
    manifest = datasets.load_manifest(manifest_path)
    stats = RunStats()
    results = harness.sweep(
        manifest, config, axis, [v.strip() for v in values.split(",")], run_dir,
        templates=templates, stats=stats,
    )
    for label, records in results.items():
        failed = sum(1 for r in records if not r.ok)
        click.echo(f"{axis}={label}: {len(records)} records ({failed} failed)")
    try:
        path = reporting.write_run_report(run_dir, "csv", None)
        click.echo(f"wrote {path}")
    except (GridVqaError, ValueError):
        click.echo("arms need judging before a sweep report; run the judge verb first", err=True)


@main.command("synth")
@click.option("--out", required=True, type=click.Path())
@click.option("--frames", "n_frames", default=60, show_default=True)
@click.option("--size", default="64x48", show_default=True)
@click.option("--colors", default=None, help="Comma-separated palette names to cycle.")
@click.option("--frames-per-color", default=10, show_default=True)
@handles_errors
def cmd_synth(out, n_frames, size, colors, frames_per_color):
    """Generate a synthetic solid-color video (frame directory or .mp4)."""
    w, h = _parse_cell_size(size)
    names = [c.strip() for c in colors.split(",")] if colors else list(synthetic.PALETTE_NAMES)
    frames = []
    i = 0
    while len(frames) < n_frames:
        block = synthetic.interval_color_frames(
            [names[i % len(names)]], frames_per_color, width=w, height=h
        )
        frames.extend(block)
        i += 1
    frames = frames[:n_frames]
    out_path = Path(out)
    if out_path.suffix.lower() == ".mp4":
        synthetic.write_mp4(frames, out_path)
    else:
        synthetic.write_frame_dir(frames, out_path)
    click.echo(f"wrote {out_path} ({n_frames} frames)")


@main.command("synth-bench")
@click.option("--out", required=True, type=click.Path())
@click.option("--items", default=20, show_default=True)
@click.option("--rows", default=3, show_default=True)
@click.option("--cols", default=2, show_default=True)
@handles_errors
def cmd_synth_bench(out, items, rows, cols):
    """Generate the synthetic color-cell benchmark (videos + MC manifest)."""
    manifest_path = synthetic.make_color_benchmark(out, n_items=items, rows=rows, cols=cols)
    click.echo(f"wrote {manifest_path}")


@main.command("convert")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--benchmark", required=True)
@click.option("--task", required=True, type=click.Choice(list(datasets.TASKS)))
@click.option("--video-col", required=True)
@click.option("--question-col", required=True)
@click.option("--answer-col", default=None)
@click.option("--options-cols", default=None, help="Comma-separated option column names.")
@click.option("--answer-index-col", default=None)
@click.option("--category-col", default=None)
@click.option("--metric-col", default=None)
@click.option("--id-col", default=None)
@handles_errors
def cmd_convert(csv_path, out, benchmark, task, video_col, question_col, answer_col,
                options_cols, answer_index_col, category_col, metric_col, id_col):
    """Convert a public benchmark CSV export into a manifest."""
    manifest = datasets.manifest_from_csv(
        csv_path,
        benchmark=benchmark,
        task=task,
        video_col=video_col,
        question_col=question_col,
        answer_col=answer_col,
        options_cols=tuple(c.strip() for c in options_cols.split(",")) if options_cols else (),
        answer_index_col=answer_index_col,
        category_col=category_col,
        metric_col=metric_col,
        id_col=id_col,
    )
    path = datasets.save_manifest(manifest, out)
    click.echo(f"wrote {path} ({len(manifest.items)} items)")


if __name__ == "__main__":
    main()
