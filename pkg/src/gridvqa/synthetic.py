"""Deterministic synthetic media and benchmarks for hermetic runs.

Videos are sequences of solid-color frames whose color changes once per
sampling interval, so any frame drawn from interval i has color i.  The
bundled color-cell benchmark asks which color sits at a given grid cell; the
ground truth is computed with hardcoded row-major arithmetic, independent of
the composer under test.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

# Order matters: item colors are drawn by rotating through this palette.
PALETTE: tuple[tuple[str, tuple[int, int, int]], ...] = (
    ("red", (255, 0, 0)),
    ("green", (0, 200, 0)),
    ("blue", (0, 0, 255)),
    ("yellow", (255, 255, 0)),
    ("magenta", (255, 0, 255)),
    ("cyan", (0, 255, 255)),
    ("orange", (255, 128, 0)),
    ("purple", (128, 0, 192)),
)

PALETTE_NAMES = tuple(name for name, _ in PALETTE)
PALETTE_RGB = {name: rgb for name, rgb in PALETTE}


def color_name_for(rgb) -> str:
    """Nearest palette name for an observed pixel (mocks read real pixels)."""
    r, g, b = int(rgb[0]), int(rgb[1]), int(rgb[2])
    best, best_d = None, None
    for name, (pr, pg, pb) in PALETTE:
        d = (r - pr) ** 2 + (g - pg) ** 2 + (b - pb) ** 2
        if best_d is None or d < best_d:
            best, best_d = name, d
    return best


def solid_frame(rgb: tuple[int, int, int], width: int = 64, height: int = 48) -> np.ndarray:
    frame = np.empty((height, width, 3), dtype=np.uint8)
    frame[:] = rgb
    return frame


def interval_color_frames(
    colors: list[str],
    frames_per_interval: int = 10,
    width: int = 64,
    height: int = 48,
) -> list[np.ndarray]:
    """One solid-color block of frames per interval, in the given order."""
    frames = []
    for name in colors:
        frames.extend(
            solid_frame(PALETTE_RGB[name], width, height) for _ in range(frames_per_interval)
        )
    return frames


def write_frame_dir(frames: list[np.ndarray], out_dir: str | Path) -> Path:
    """Write frames as frame_000001.png ... (a pre-decoded VideoSource)."""
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        Image.fromarray(frame).save(out / f"frame_{i + 1:06d}.png")
    return out


def write_mp4(frames: list[np.ndarray], path: str | Path, fps: float = 10.0) -> Path:
    """Encode frames as mp4; requires opencv."""
    import cv2

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = frames[0].shape[:2]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (w, h))
    if not writer.isOpened():
        raise RuntimeError(f"cv2 cannot open a writer for {path}")
    for frame in frames:
        writer.write(frame[..., ::-1])  # RGB -> BGR
    writer.release()
    return path


def item_colors(item_index: int, n: int = 6) -> list[str]:
    """Deterministic distinct colors for one benchmark item."""
    start = item_index % len(PALETTE)
    return [PALETTE_NAMES[(start + j) % len(PALETTE)] for j in range(n)]


def expected_color_at(colors: list[str], row: int, col: int, cols: int) -> str:
    """Color at (row, col) under row-major placement; fixed arithmetic on
    purpose, so benchmark ground truth never passes through the composer."""
    return colors[row * cols + col]


def make_color_benchmark(
    out_dir: str | Path,
    n_items: int = 20,
    rows: int = 3,
    cols: int = 2,
    frames_per_interval: int = 10,
    n_options: int = 4,
) -> Path:
    """Write synthetic videos plus an MC manifest asking per-cell colors.

    Returns the manifest path.  Under row-major composition every question's
    correct option names the color actually painted at the asked cell.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = rows * cols
    if n > len(PALETTE):
        raise ValueError(
            f"{rows}x{cols} needs {n} distinct colors; the palette has {len(PALETTE)}"
        )
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    lines = [
        json.dumps(
            {"benchmark": "synthetic-color-cells", "task": "multiple_choice", "tags": ["Color"]},
            sort_keys=True,
            separators=(",", ":"),
        )
    ]
    for i in range(n_items):
        colors = item_colors(i, n)
        video_dir = write_frame_dir(
            interval_color_frames(colors, frames_per_interval), out / f"video_{i:03d}"
        )
        row, col = cells[i % len(cells)]
        answer = expected_color_at(colors, row, col, cols)
        distractors = [c for c in colors if c != answer][: n_options - 1]
        options = distractors[:]
        options.insert(i % n_options, answer)
        item = {
            "id": f"item-{i:03d}",
            "video": str(video_dir),
            "question": (
                f"What color is the frame at row {row + 1}, column {col + 1} of the grid?"
            ),
            "options": options,
            "answer_index": options.index(answer),
            "category": "Color",
        }
        lines.append(json.dumps(item, sort_keys=True, separators=(",", ":")))
    manifest_path = out / "manifest.jsonl"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path
