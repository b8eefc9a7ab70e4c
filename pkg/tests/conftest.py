import json

import pytest

from gridvqa import datasets
from gridvqa.client import ModelEndpoint, SamplingParams, VlmClient
from gridvqa.harness import RunConfig
from gridvqa.synthetic import expected_color_at, item_colors, make_color_benchmark, write_frame_dir
from gridvqa.synthetic import interval_color_frames


def no_sleep(_):
    pass


@pytest.fixture
def color_bench(tmp_path):
    """Synthetic color-cell MC benchmark: 10 items, 3x2 grids, tiny videos."""
    manifest_path = make_color_benchmark(tmp_path / "bench", n_items=10, frames_per_interval=2)
    return datasets.load_manifest(manifest_path)


def make_open_benchmark(root, n_items=6, frames_per_interval=2):
    """Open-ended twin of the color benchmark: free-text color answers."""
    lines = [
        json.dumps({"benchmark": "synthetic-color-open", "task": "open_ended", "tags": []})
    ]
    cells = [(r, c) for r in range(3) for c in range(2)]
    for i in range(n_items):
        colors = item_colors(i, 6)
        video = write_frame_dir(
            interval_color_frames(colors, frames_per_interval), root / f"video_{i:03d}"
        )
        row, col = cells[i % 6]
        lines.append(
            json.dumps(
                {
                    "id": f"open-{i:03d}",
                    "video": str(video),
                    "question": f"What color is the frame at row {row + 1}, column {col + 1} of the grid?",
                    "answer": expected_color_at(colors, row, col, 2),
                }
            )
        )
    path = root / "manifest.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return datasets.load_manifest(path)


@pytest.fixture
def open_bench(tmp_path):
    return make_open_benchmark(tmp_path / "open_bench")


def endpoint_for(url="mock:echo", **overrides) -> ModelEndpoint:
    values = dict(base_url=url, model_name="mock-model",
                  sampling=SamplingParams(temperature=0.0, max_tokens=256))
    values.update(overrides)
    return ModelEndpoint(**values)


def config_for(url="mock:echo", **overrides) -> RunConfig:
    endpoint = overrides.pop("endpoint", None) or endpoint_for(url)
    return RunConfig(endpoint=endpoint, **overrides)


def client_with(transport, endpoint=None) -> VlmClient:
    return VlmClient(endpoint or endpoint_for(), transport=transport, sleeper=no_sleep)
