import numpy as np
import pytest
from fractions import Fraction

from hypothesis import given, strategies as st

from gridvqa.errors import MediaError
from gridvqa.sampling import (
    Frame,
    extract_frames,
    frames_from_arrays,
    open_video,
    pick_random_frame,
    plan_samples,
)
from gridvqa.synthetic import interval_color_frames, write_frame_dir


def oracle_plan(frame_count: int, n: int) -> list[int]:
    """Independent enumeration: split [0, frame_count) into n equal intervals
    with exact rational endpoints and, for each, scan for the frame whose
    [j, j+1) span contains the interval start."""
    starts = [Fraction(i * frame_count, n) for i in range(n)]
    picked = []
    for start in starts:
        for j in range(frame_count):
            if j <= start < j + 1:
                picked.append(j)
                break
    return picked


def test_plan_matches_stated_examples():
    assert plan_samples(60, 6).indices == (0, 10, 20, 30, 40, 50)
    # enumerated by hand: floor(i*7/6) for i = 0..5
    assert plan_samples(7, 6).indices == (0, 1, 2, 3, 4, 5)
    assert plan_samples(1, 6).indices == (0, 0, 0, 0, 0, 0)


def test_plan_agrees_with_interval_oracle_exhaustively():
    for frame_count in range(1, 201):
        for n in (1, 4, 6, 9, 12, 16, 20):
            plan = plan_samples(frame_count, n)
            assert list(plan.indices) == oracle_plan(frame_count, n), (frame_count, n)


def test_plan_rejects_zero_arguments():
    with pytest.raises(ValueError):
        plan_samples(0, 6)
    with pytest.raises(ValueError):
        plan_samples(60, 0)


@given(st.integers(1, 5000), st.integers(1, 64))
def test_plan_indices_monotone_in_range_and_start_at_zero(frame_count, n):
    plan = plan_samples(frame_count, n)
    assert len(plan.indices) == n
    assert plan.indices[0] == 0
    assert all(0 <= i < frame_count for i in plan.indices)
    assert all(a <= b for a, b in zip(plan.indices, plan.indices[1:]))


@given(st.integers(1, 5000), st.integers(1, 64))
def test_plan_strictly_increasing_when_enough_frames(frame_count, n):
    if frame_count >= n:
        plan = plan_samples(frame_count, n)
        assert len(set(plan.indices)) == n


@given(st.integers(1, 500))
def test_plan_single_sample_is_first_frame(frame_count):
    assert plan_samples(frame_count, 1).indices == (0,)


@given(st.integers(1, 200), st.integers(1, 32))
def test_plan_scaling_multiples(k, n):
    assert plan_samples(k * n, n).indices == tuple(i * k for i in range(n))


def _numbered_source(count):
    return frames_from_arrays(
        [np.full((4, 4, 3), i, dtype=np.uint8) for i in range(count)]
    )


def test_extract_preserves_plan_order_and_provenance():
    source = _numbered_source(60)
    plan = plan_samples(60, 6)
    frames = extract_frames(source, plan)
    assert [f.source_index for f in frames] == [0, 10, 20, 30, 40, 50]
    assert all(int(f.pixels[0, 0, 0]) == f.source_index for f in frames)


def test_extract_handles_duplicate_indices():
    source = _numbered_source(1)
    frames = extract_frames(source, plan_samples(1, 6))
    assert [f.source_index for f in frames] == [0] * 6


def test_extract_rejects_out_of_range_plan():
    source = _numbered_source(3)
    with pytest.raises(ValueError):
        extract_frames(source, plan_samples(60, 6))


def test_open_video_frame_directory(tmp_path):
    frames = interval_color_frames(["red", "green", "blue"], frames_per_interval=2)
    write_frame_dir(frames, tmp_path / "vid")
    source = open_video(tmp_path / "vid")
    assert source.frame_count == 6
    np.testing.assert_array_equal(source.read_frame(0), frames[0])
    np.testing.assert_array_equal(source.read_frame(5), frames[5])


def test_open_video_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        open_video(tmp_path / "nope.mp4")


def test_open_video_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(MediaError):
        open_video(tmp_path / "empty")


def test_open_video_gif(tmp_path):
    from PIL import Image

    # distinct colors per frame; identical neighbours would be merged on save
    frames = interval_color_frames(
        ["red", "green", "blue", "yellow", "magenta", "cyan"], frames_per_interval=1
    )
    images = [Image.fromarray(f) for f in frames]
    gif = tmp_path / "clip.gif"
    images[0].save(gif, save_all=True, append_images=images[1:], duration=100)
    source = open_video(gif)
    assert source.frame_count == 6
    # GIF palette quantization is lossy-ish but solid primaries survive
    assert source.read_frame(0)[0, 0, 0] > 200


def test_open_video_mp4(tmp_path):
    cv2 = pytest.importorskip("cv2")
    from gridvqa.synthetic import write_mp4

    frames = interval_color_frames(["red", "green", "blue"], frames_per_interval=4)
    path = write_mp4(frames, tmp_path / "clip.mp4")
    source = open_video(path)
    assert source.frame_count == 12
    first = source.read_frame(0)
    late = source.read_frame(11)
    assert first[0, 0, 0] > 150 and first[0, 0, 2] < 100  # red-ish
    assert late[0, 0, 2] > 150 and late[0, 0, 0] < 100  # blue-ish
    # backwards read after a forward read still lands on the right frame
    again = source.read_frame(0)
    np.testing.assert_array_equal(again, first)


def test_pick_random_frame_deterministic_and_uniformish():
    assert pick_random_frame(60, 123) == pick_random_frame(60, 123)
    seen = {pick_random_frame(10, seed) for seed in range(1000)}
    assert seen == set(range(10))
    assert pick_random_frame(1, 42) == 0


def test_frame_dataclass_carries_source_index():
    frame = Frame(pixels=np.zeros((2, 2, 3), np.uint8), source_index=17)
    assert frame.source_index == 17
