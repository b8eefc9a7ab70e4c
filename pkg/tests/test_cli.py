import json

import numpy as np
import pytest
from click.testing import CliRunner

from gridvqa.cli import main
from gridvqa.synthetic import PALETTE_RGB, make_color_benchmark


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def make_video(runner, tmp_path, name="vid", frames=60):
    out = tmp_path / name
    result = invoke(runner, "synth", "--out", out, "--frames", frames)
    assert result.exit_code == 0
    return out


# --- synth ----------------------------------------------------------------------


def test_synth_writes_frame_directory(runner, tmp_path):
    out = make_video(runner, tmp_path)
    assert len(list(out.glob("frame_*.png"))) == 60


def test_synth_bench_writes_manifest(runner, tmp_path):
    result = invoke(runner, "synth-bench", "--out", tmp_path / "bench", "--items", 6)
    assert result.exit_code == 0
    manifest = tmp_path / "bench" / "manifest.jsonl"
    assert manifest.exists()
    assert len(manifest.read_text().splitlines()) == 7  # header + 6 items


# --- compose ---------------------------------------------------------------------


def test_compose_produces_grid_with_sidecar(runner, tmp_path):
    from PIL import Image

    video = make_video(runner, tmp_path)
    out = tmp_path / "grid.png"
    result = invoke(runner, "compose", video, "--frames", 6, "--out", out)
    assert result.exit_code == 0
    assert "3x2" in result.output
    with Image.open(out) as im:
        pixels = np.asarray(im.convert("RGB"))
    h, w = pixels.shape[:2]
    cell_h, cell_w = h // 3, w // 2
    # palette order: red green blue yellow magenta cyan, row-major
    assert tuple(pixels[0, 0]) == PALETTE_RGB["red"]
    assert tuple(pixels[cell_h, 0]) == PALETTE_RGB["blue"]
    assert tuple(pixels[h - 1, w - 1]) == PALETTE_RGB["cyan"]
    assert (tmp_path / "grid.png.provenance.txt").exists()


def test_compose_unsupported_grid_size_exits_2(runner, tmp_path):
    video = make_video(runner, tmp_path)
    result = runner.invoke(
        main, ["compose", str(video), "--frames", "7", "--shape", "square",
               "--out", str(tmp_path / "x.png")],
    )
    assert result.exit_code == 2
    assert "config error" in result.output


def test_compose_random_ordering_deterministic(runner, tmp_path):
    video = make_video(runner, tmp_path)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    for out in (a, b):
        result = invoke(runner, "compose", video, "--ordering", "random:9", "--out", out)
        assert result.exit_code == 0
    assert a.read_bytes() == b.read_bytes()


def test_compose_missing_video_exits_nonzero(runner, tmp_path):
    result = runner.invoke(
        main, ["compose", str(tmp_path / "ghost"), "--out", str(tmp_path / "x.png")]
    )
    assert result.exit_code != 0


# --- ask -------------------------------------------------------------------------


def test_ask_echo_mock_returns_prompt(runner, tmp_path):
    video = make_video(runner, tmp_path)
    grid = tmp_path / "grid.png"
    invoke(runner, "compose", video, "--out", grid)
    result = invoke(
        runner, "ask", "--image", grid, "--question", "What color starts the video?",
        "--endpoint-url", "mock:echo",
    )
    assert result.exit_code == 0
    assert "What color starts the video?" in result.output


def test_ask_multiple_choice_against_colorcell(runner, tmp_path):
    video = make_video(runner, tmp_path)
    grid = tmp_path / "grid.png"
    invoke(runner, "compose", video, "--out", grid)
    result = invoke(
        runner, "ask", "--image", grid,
        "--question", "What color is the frame at row 1, column 2 of the grid?",
        "--options", "red,green,blue",
        "--endpoint-url", "mock:colorcell:3x2",
    )
    assert result.exit_code == 0
    assert "(B)" in result.output  # row 1 col 2 is the second frame: green


def test_ask_unreachable_endpoint_exits_3(runner, tmp_path):
    video = make_video(runner, tmp_path)
    grid = tmp_path / "grid.png"
    invoke(runner, "compose", video, "--out", grid)
    result = runner.invoke(
        main, ["ask", "--image", str(grid), "--question", "q",
               "--endpoint-url", "http://127.0.0.1:9", "--max-retries", "0",
               "--timeout", "1"],
    )
    assert result.exit_code == 3
    assert "endpoint error" in result.output


# --- run / report ------------------------------------------------------------------


def bench_and_run(runner, tmp_path, *extra):
    manifest = make_color_benchmark(tmp_path / "bench", n_items=6, frames_per_interval=2)
    run_dir = tmp_path / "run"
    result = invoke(
        runner, "run", "--manifest", manifest, "--run-dir", run_dir,
        "--endpoint-url", "mock:colorcell:3x2", *extra,
    )
    assert result.exit_code == 0, result.output
    return manifest, run_dir, result


def test_run_and_warm_cache_rerun(runner, tmp_path):
    manifest, run_dir, first = bench_and_run(runner, tmp_path)
    assert "6 records (0 failed)" in first.output
    rerun = invoke(
        runner, "run", "--manifest", manifest, "--run-dir", run_dir,
        "--endpoint-url", "mock:colorcell:3x2",
    )
    assert "endpoint calls 0" in rerun.output


def test_report_csv_and_markdown_deterministic(runner, tmp_path):
    _, run_dir, _ = bench_and_run(runner, tmp_path)
    first = invoke(runner, "report", run_dir, "--format", "csv")
    assert first.exit_code == 0
    csv_bytes = (run_dir / "report.csv").read_bytes()
    assert b"100.0" in csv_bytes  # colorcell mock answers perfectly
    again = invoke(runner, "report", run_dir, "--format", "csv")
    assert (run_dir / "report.csv").read_bytes() == csv_bytes

    md = invoke(runner, "report", run_dir, "--format", "markdown")
    assert md.exit_code == 0
    assert "| Acc. |" in (run_dir / "report.md").read_text()


def test_report_empty_dir_exits_4_no_files(runner, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    result = runner.invoke(main, ["report", str(empty)])
    assert result.exit_code == 4
    assert "data error" in result.output
    assert not list(empty.iterdir())


def test_run_subsample_is_seeded(runner, tmp_path):
    manifest = make_color_benchmark(tmp_path / "bench", n_items=10, frames_per_interval=2)
    for name in ("a", "b"):
        result = invoke(
            runner, "run", "--manifest", manifest, "--run-dir", tmp_path / name,
            "--subsample", "0.5", "--endpoint-url", "mock:colorcell:3x2",
        )
        assert result.exit_code == 0
    first = (tmp_path / "a" / "manifest.jsonl").read_bytes()
    second = (tmp_path / "b" / "manifest.jsonl").read_bytes()
    assert first == second


def test_run_with_config_file_and_flag_override(runner, tmp_path):
    manifest = make_color_benchmark(tmp_path / "bench", n_items=4, frames_per_interval=2)
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "n_frames": 4, "shape_class": "square", "prompt_arm": "grid_guidance",
        "endpoint": {"base_url": "mock:colorcell:2x2", "model_name": "m"},
    }))
    run_dir = tmp_path / "run"
    result = invoke(
        runner, "run", "--manifest", manifest, "--run-dir", run_dir,
        "--config", config, "--frames", 6, "--endpoint-url", "mock:colorcell:3x2",
    )
    assert result.exit_code == 0
    snapshot = json.loads((run_dir / "config.json").read_text())
    assert snapshot["config"]["n_frames"] == 6  # flag wins over file
    assert snapshot["config"]["prompt_arm"] == "grid_guidance"  # file wins over default


def test_run_file_endpoint_with_explicit_flag_override(runner, tmp_path):
    manifest = make_color_benchmark(tmp_path / "bench", n_items=2, frames_per_interval=2)
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "endpoint": {"base_url": "mock:colorcell:3x2", "model_name": "file-model",
                     "temperature": 0.0},
    }))
    run_dir = tmp_path / "run"
    result = invoke(
         runner, "run", "--manifest", manifest, "--run-dir", run_dir,
         "--config", config, "--temperature", "0.4",
    )
    assert result.exit_code == 0
    snapshot = json.loads((run_dir / "config.json").read_text())
    endpoint = snapshot["config"]["endpoint"]
    assert endpoint["base_url"] == "mock:colorcell:3x2"  # file value kept
    assert endpoint["model_name"] == "file-model"
    assert endpoint["temperature"] == 0.4  # typed flag wins over file


def test_run_invalid_grid_exits_2(runner, tmp_path):
    manifest = make_color_benchmark(tmp_path / "bench", n_items=2, frames_per_interval=2)
    result = runner.invoke(
        main, ["run", "--manifest", str(manifest), "--run-dir", str(tmp_path / "r"),
               "--frames", "7"],
    )
    assert result.exit_code == 2


# --- judge -----------------------------------------------------------------------


def test_judge_then_report_open_ended(runner, tmp_path):
    from conftest import make_open_benchmark

    bench = make_open_benchmark(tmp_path / "bench", n_items=4)
    manifest_path = tmp_path / "bench" / "manifest.jsonl"
    run_dir = tmp_path / "run"
    result = invoke(
        runner, "run", "--manifest", manifest_path, "--run-dir", run_dir,
        "--endpoint-url", "mock:fixed:the color is red", "--permits", 1,
    )
    assert result.exit_code == 0
    judged = invoke(
        runner, "judge", "--run-dir", run_dir, "--endpoint-url", "mock:judge",
    )
    assert judged.exit_code == 0
    assert "judged 4 records" in judged.output
    report = invoke(runner, "report", run_dir, "--format", "markdown")
    assert report.exit_code == 0
    assert "Score" in report.output


# --- sweep -----------------------------------------------------------------------


def test_sweep_ordering_emits_tidy_csv(runner, tmp_path):
    manifest = make_color_benchmark(tmp_path / "bench", n_items=4, frames_per_interval=2)
    run_dir = tmp_path / "sweep"
    result = invoke(
        runner, "sweep", "--manifest", manifest, "--run-dir", run_dir,
        "--axis", "ordering", "--values", "row_major,col_major",
        "--endpoint-url", "mock:colorcell:3x2",
    )
    assert result.exit_code == 0, result.output
    csv_text = (run_dir / "sweep_report.csv").read_text()
    rows = [line.split(",") for line in csv_text.splitlines()[1:]]
    values = {row[1] for row in rows}
    assert values == {"row_major", "col_major"}
    acc = {row[1]: float(row[3]) for row in rows if row[2] == "accuracy_pct"}
    assert acc["row_major"] == 100.0
    assert acc["col_major"] < 100.0


# --- convert ---------------------------------------------------------------------


def test_convert_csv_to_manifest(runner, tmp_path):
    csv_path = tmp_path / "export.csv"
    csv_path.write_text(
        "video,question,a,b,answer\n"
        "v1,what is it?,cat,dog,0\n"
        "v2,who is it?,man,woman,1\n"
    )
    out = tmp_path / "m.jsonl"
    result = invoke(
        runner, "convert", "--csv", csv_path, "--out", out,
        "--benchmark", "demo", "--task", "multiple_choice",
        "--video-col", "video", "--question-col", "question",
        "--options-cols", "a,b", "--answer-index-col", "answer",
    )
    assert result.exit_code == 0
    assert "2 items" in result.output
    from gridvqa.datasets import load_manifest

    manifest = load_manifest(out)
    assert manifest.items[1].answer_index == 1
