"""Benchmark manifest schema: JSONL load, validation, canonical save, subsampling.

One schema covers every benchmark; task type and tag set are the only things
that differ.  File format (UTF-8 JSONL):

    line 1   header  {"benchmark": <name>, "task": <task>, "tags": [<categories>]}
    line 2+  one item object per line

Item fields (bit-exact names):

    id            unique string
    video         path to a video file or frame directory
    question      string
    answer        ground-truth text        (open_ended / text_generation)
    metric        one of CI DO CU TU CO    (text_generation)
    options       list of 2-5 strings      (multiple_choice)
    answer_index  0-based correct option   (multiple_choice)
    category      optional tag, must be in the header's tags
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ManifestError

OPEN_ENDED = "open_ended"
TEXT_GENERATION = "text_generation"
MULTIPLE_CHOICE = "multiple_choice"
TASKS = (OPEN_ENDED, TEXT_GENERATION, MULTIPLE_CHOICE)

TEXTGEN_METRICS = ("CI", "DO", "CU", "TU", "CO")

MAX_OPTIONS = 5


@dataclass(frozen=True)
class VqaItem:
    id: str
    video: str
    question: str
    answer: str | None = None
    answer_index: int | None = None
    options: tuple[str, ...] | None = None
    category: str | None = None
    metric: str | None = None

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "video": self.video, "question": self.question}
        if self.answer is not None:
            out["answer"] = self.answer
        if self.answer_index is not None:
            out["answer_index"] = self.answer_index
        if self.options is not None:
            out["options"] = list(self.options)
        if self.category is not None:
            out["category"] = self.category
        if self.metric is not None:
            out["metric"] = self.metric
        return out


@dataclass(frozen=True)
class BenchmarkManifest:
    name: str
    task: str
    tags: tuple[str, ...]
    items: tuple[VqaItem, ...]

    def item_by_id(self, item_id: str) -> VqaItem:
        for item in self.items:
            if item.id == item_id:
                return item
        raise KeyError(item_id)


def _check_item(obj: dict, task: str, tags: tuple[str, ...], seen_ids: set) -> list[str]:
    problems = []
    for key in ("id", "video", "question"):
        if not obj.get(key):
            problems.append(f"missing {key}")
    item_id = obj.get("id")
    if item_id in seen_ids:
        problems.append(f"duplicate id {item_id!r}")
    if task == MULTIPLE_CHOICE:
        options = obj.get("options")
        if not options:
            problems.append("multiple_choice item missing options")
        elif not 2 <= len(options) <= MAX_OPTIONS:
            problems.append(f"needs 2-{MAX_OPTIONS} options, got {len(options)}")
        idx = obj.get("answer_index")
        if idx is None:
            problems.append("multiple_choice item missing answer_index")
        elif options and not 0 <= idx < len(options):
            problems.append(f"answer_index {idx} out of range for {len(options)} options")
    else:
        if obj.get("answer") is None:
            problems.append(f"{task} item missing answer")
    if task == TEXT_GENERATION:
        metric = obj.get("metric")
        if metric not in TEXTGEN_METRICS:
            problems.append(f"metric must be one of {TEXTGEN_METRICS}, got {metric!r}")
    category = obj.get("category")
    if category is not None and category not in tags:
        problems.append(f"unknown category {category!r}, declared tags: {list(tags)}")
    return problems


def load_manifest(path: str | Path) -> BenchmarkManifest:
    """Parse and validate a manifest; all problems are reported together."""
    path = Path(path)
    # keep real line numbers: blank lines are skipped, not renumbered
    numbered = [
        (lineno, line)
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1)
        if line.strip()
    ]
    if not numbered:
        raise ManifestError([(1, "empty manifest")])

    problems: list[tuple[int, str]] = []
    header_line, header_text = numbered[0]
    try:
        header = json.loads(header_text)
    except json.JSONDecodeError as exc:
        raise ManifestError([(header_line, f"header is not valid JSON: {exc}")])
    name = header.get("benchmark")
    task = header.get("task")
    tags = tuple(header.get("tags") or ())
    if not name:
        problems.append((header_line, "header missing benchmark name"))
    if task not in TASKS:
        problems.append((header_line, f"task must be one of {TASKS}, got {task!r}"))

    items: list[VqaItem] = []
    seen_ids: set = set()
    for lineno, raw in numbered[1:]:
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            problems.append((lineno, f"not valid JSON: {exc}"))
            continue
        if task in TASKS:
            for msg in _check_item(obj, task, tags, seen_ids):
                problems.append((lineno, msg))
        seen_ids.add(obj.get("id"))
        items.append(
            VqaItem(
                id=obj.get("id", ""),
                video=obj.get("video", ""),
                question=obj.get("question", ""),
                answer=obj.get("answer"),
                answer_index=obj.get("answer_index"),
                options=tuple(obj["options"]) if obj.get("options") else None,
                category=obj.get("category"),
                metric=obj.get("metric"),
            )
        )
    if not items:
        problems.append((header_line + 1, "manifest has no items"))
    if problems:
        raise ManifestError(problems)
    return BenchmarkManifest(name=name, task=task, tags=tags, items=tuple(items))


def manifest_bytes(manifest: BenchmarkManifest) -> bytes:
    """Canonical serialization: sorted keys, compact separators, one trailing
    newline.  load(save(m)) == m and save(load(f)) == f for canonical files."""
    header = {"benchmark": manifest.name, "task": manifest.task, "tags": list(manifest.tags)}
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False)]
    for item in manifest.items:
        lines.append(
            json.dumps(item.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def save_manifest(manifest: BenchmarkManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(manifest_bytes(manifest))
    return path


def manifest_from_csv(
    csv_path: str | Path,
    benchmark: str,
    task: str,
    video_col: str,
    question_col: str,
    answer_col: str | None = None,
    options_cols: tuple[str, ...] = (),
    answer_index_col: str | None = None,
    category_col: str | None = None,
    metric_col: str | None = None,
    id_col: str | None = None,
) -> BenchmarkManifest:
    """Generic CSV-to-manifest converter for public benchmark exports.

    Column mapping is the caller's job; rows become items, categories found
    become the tag set.  Validation happens on the resulting manifest.
    """
    import csv as _csv

    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    items = []
    tags: list[str] = []
    with Path(csv_path).open(newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        wanted = {video_col, question_col, answer_col, answer_index_col,
                  category_col, metric_col, id_col, *options_cols} - {None}
        missing = wanted - set(reader.fieldnames or ())
        if missing:
            raise ValueError(
                f"{csv_path} lacks mapped columns: {sorted(missing)}; "
                f"found: {reader.fieldnames}"
            )
        for i, row in enumerate(reader):
            options = tuple(row[c] for c in options_cols if row.get(c)) or None
            category = row.get(category_col) if category_col else None
            if category and category not in tags:
                tags.append(category)
            items.append(
                VqaItem(
                    id=row[id_col] if id_col else f"{benchmark}-{i:06d}",
                    video=row[video_col],
                    question=row[question_col],
                    answer=row.get(answer_col) if answer_col else None,
                    answer_index=int(row[answer_index_col]) if answer_index_col else None,
                    options=options,
                    category=category,
                    metric=row.get(metric_col) if metric_col else None,
                )
            )
    manifest = BenchmarkManifest(name=benchmark, task=task, tags=tuple(tags), items=tuple(items))
    # Round-trip through the validator so converter output is always loadable.
    import tempfile

    with tempfile.NamedTemporaryFile("wb", suffix=".jsonl", delete=False) as tmp:
        tmp.write(manifest_bytes(manifest))
        tmp_path = tmp.name
    try:
        return load_manifest(tmp_path)
    finally:
        Path(tmp_path).unlink(missing_ok=True)


def subsample(manifest: BenchmarkManifest, fraction: float, seed: int) -> BenchmarkManifest:
    """Seed-deterministic uniform subsample, stratified by category.

    Per-category counts are fraction * size rounded half-up, so a 60/40 split
    at fraction 0.5 keeps exactly 30/20.  Items keep their manifest order.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return manifest
    rng = random.Random(seed)
    groups: dict[str | None, list[int]] = {}
    for pos, item in enumerate(manifest.items):
        groups.setdefault(item.category, []).append(pos)
    keep: list[int] = []
    for category in sorted(groups, key=lambda c: (c is None, c)):
        positions = groups[category]
        count = int(fraction * len(positions) + 0.5)
        keep.extend(rng.sample(positions, count) if count else [])
    if not keep:
        raise ValueError(f"fraction {fraction} leaves no items")
    keep.sort()
    return replace(manifest, items=tuple(manifest.items[i] for i in keep))
