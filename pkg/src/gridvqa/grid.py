"""Grid geometry, frame placement order, and composite image assembly.

The resampling kernel is pinned for the whole package: nearest neighbour
with pixel-center mapping, src = floor((dst + 0.5) * src_size / dst_size),
evaluated in exact integer arithmetic.  Round-trip tests (crop a cell, compare
with the independently resized source) rely on that kernel never changing.
"""

from __future__ import annotations

import io
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnsupportedGridSize
from .sampling import Frame

SQUARE = "square"
VERTICAL = "vertical"
HORIZONTAL = "horizontal"
SHAPE_CLASSES = (SQUARE, VERTICAL, HORIZONTAL)


@dataclass(frozen=True)
class Ordering:
    """How frame positions map onto grid cells.

    ``row_major`` sweeps each row left to right before moving down;
    ``col_major`` sweeps each column top to bottom before moving right;
    ``random`` applies a seed-deterministic permutation.
    """

    kind: str
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("row_major", "col_major", "random"):
            raise ValueError(f"unknown ordering {self.kind!r}")
        if self.kind == "random" and self.seed is None:
            raise ValueError("random ordering requires a seed")

    def label(self) -> str:
        return f"random:{self.seed}" if self.kind == "random" else self.kind


ROW_MAJOR = Ordering("row_major")
COL_MAJOR = Ordering("col_major")


def random_ordering(seed: int) -> Ordering:
    return Ordering("random", seed)


def parse_ordering(text: str) -> Ordering:
    if text in ("row_major", "col_major"):
        return Ordering(text)
    if text.startswith("random:"):
        return Ordering("random", int(text.split(":", 1)[1]))
    if text == "random":
        return Ordering("random", 0)
    raise ValueError(f"unknown ordering {text!r} (row_major, col_major, random[:SEED])")


@dataclass(frozen=True)
class GridLayout:
    rows: int
    cols: int
    shape_class: str
    ordering: Ordering = ROW_MAJOR

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("layout needs at least one row and one column")
        if self.shape_class not in SHAPE_CLASSES:
            raise ValueError(f"unknown shape class {self.shape_class!r}")
        if self.shape_class == SQUARE and abs(self.rows - self.cols) > 1:
            raise ValueError("square layouts must have |rows - cols| <= 1")
        if self.shape_class == VERTICAL and self.cols != 1:
            raise ValueError("vertical layouts have exactly one column")
        if self.shape_class == HORIZONTAL and self.rows != 1:
            raise ValueError("horizontal layouts have exactly one row")

    @property
    def n(self) -> int:
        return self.rows * self.cols


def square_dims(n: int) -> tuple[int, int]:
    """Rows and columns of the near-square arrangement for n cells.

    A perfect square n gives sqrt(n) x sqrt(n); otherwise n must factor as
    M*(M-1) for an integer M >= 2, giving M rows by M-1 columns.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    r = math.isqrt(n)
    if r * r == n:
        return r, r
    # n = M*(M-1)  =>  M = (1 + sqrt(1 + 4n)) / 2
    m = (1 + math.isqrt(1 + 4 * n)) // 2
    if m >= 2 and m * (m - 1) == n:
        return m, m - 1
    raise UnsupportedGridSize(
        f"no square grid for n={n}: n must be a perfect square (1, 4, 9, 16, 25, ...) "
        "or M*(M-1) (2, 6, 12, 20, 30, ...)"
    )


def layout_for(
    n: int,
    shape_class: str,
    *,
    ordering: Ordering = ROW_MAJOR,
    wide: bool = False,
) -> GridLayout:
    """Build the layout for n frames under the requested shape class.

    ``wide`` flips the near-square orientation to (M-1) rows by M columns;
    the default keeps rows >= cols, which composes landscape frames into an
    image closer to a unit aspect ratio.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if shape_class == SQUARE:
        rows, cols = square_dims(n)
        if wide:
            rows, cols = cols, rows
        return GridLayout(rows=rows, cols=cols, shape_class=SQUARE, ordering=ordering)
    if shape_class == VERTICAL:
        return GridLayout(rows=n, cols=1, shape_class=VERTICAL, ordering=ordering)
    if shape_class == HORIZONTAL:
        return GridLayout(rows=1, cols=n, shape_class=HORIZONTAL, ordering=ordering)
    raise ValueError(f"unknown shape class {shape_class!r}")


def _random_permutation(n: int, seed: int) -> list[int]:
    perm = list(range(n))
    random.Random(seed).shuffle(perm)
    return perm


def cell_for(layout: GridLayout, frame_position: int) -> tuple[int, int]:
    """Grid cell (row, col) that frame number ``frame_position`` lands in."""
    n = layout.n
    if not 0 <= frame_position < n:
        raise ValueError(f"frame position {frame_position} out of range [0, {n})")
    kind = layout.ordering.kind
    if kind == "row_major":
        return frame_position // layout.cols, frame_position % layout.cols
    if kind == "col_major":
        return frame_position % layout.rows, frame_position // layout.rows
    cell = _random_permutation(n, layout.ordering.seed)[frame_position]
    return cell // layout.cols, cell % layout.cols


def resize_nearest(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    """The package's one resampling kernel (see module docstring)."""
    if width < 1 or height < 1:
        raise ValueError("target size must be at least 1x1")
    src = np.asarray(pixels)
    src_h, src_w = src.shape[:2]
    rows = ((2 * np.arange(height) + 1) * src_h) // (2 * height)
    cols = ((2 * np.arange(width) + 1) * src_w) // (2 * width)
    return np.ascontiguousarray(src[rows[:, None], cols[None, :]])


def letterbox(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    """Fit preserving aspect ratio, padding with black, centered."""
    src = np.asarray(pixels)
    src_h, src_w = src.shape[:2]
    scale = min(width / src_w, height / src_h)
    fit_w = max(1, int(src_w * scale))
    fit_h = max(1, int(src_h * scale))
    inner = resize_nearest(src, fit_w, fit_h)
    out = np.zeros((height, width, 3), dtype=np.uint8)
    y = (height - fit_h) // 2
    x = (width - fit_w) // 2
    out[y : y + fit_h, x : x + fit_w] = inner
    return out


@dataclass
class ImageGrid:
    """The composed image plus per-cell provenance."""

    pixels: np.ndarray
    layout: GridLayout
    cell_w: int
    cell_h: int
    padding: int = 0
    provenance: dict[tuple[int, int], int] = field(default_factory=dict)

    def cell(self, row: int, col: int) -> np.ndarray:
        y = row * (self.cell_h + self.padding)
        x = col * (self.cell_w + self.padding)
        return self.pixels[y : y + self.cell_h, x : x + self.cell_w]

    def to_png_bytes(self) -> bytes:
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(self.pixels).save(buf, format="PNG")
        return buf.getvalue()

    def provenance_text(self) -> str:
        lines = ["# row\tcol\tsource_frame_index"]
        for (row, col), idx in sorted(self.provenance.items()):
            lines.append(f"{row}\t{col}\t{idx}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path, jpeg_quality: int | None = None) -> Path:
        """Write the image plus a ``.provenance.txt`` sidecar.

        PNG by default (lossless); pass ``jpeg_quality`` with a .jpg path for
        JPEG output.
        """
        from PIL import Image

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        im = Image.fromarray(self.pixels)
        if path.suffix.lower() in (".jpg", ".jpeg"):
            im.save(path, format="JPEG", quality=jpeg_quality if jpeg_quality else 90)
        else:
            im.save(path, format="PNG")
        sidecar = path.with_suffix(path.suffix + ".provenance.txt")
        sidecar.write_text(self.provenance_text(), encoding="utf-8")
        return path


def compose(
    frames: list[Frame],
    layout: GridLayout,
    cell_w: int | None = None,
    cell_h: int | None = None,
    *,
    fit: str = "stretch",
    padding: int = 0,
) -> ImageGrid:
    """Paint frames into the grid under the layout's placement order.

    Cell size defaults to the frames' shared native resolution when they all
    agree, else the first frame's size.  ``fit`` is "stretch" (default) or
    "letterbox"; padding is the black gap in pixels between cells.
    """
    if len(frames) != layout.n:
        raise ValueError(f"layout holds {layout.n} frames, got {len(frames)}")
    if fit not in ("stretch", "letterbox"):
        raise ValueError(f"unknown fit mode {fit!r}")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    if cell_w is None or cell_h is None:
        h, w = frames[0].pixels.shape[:2]
        cell_w = cell_w or w
        cell_h = cell_h or h
    if cell_w < 1 or cell_h < 1:
        raise ValueError("cell size must be at least 1x1")

    width = layout.cols * cell_w + (layout.cols - 1) * padding
    height = layout.rows * cell_h + (layout.rows - 1) * padding
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    provenance: dict[tuple[int, int], int] = {}
    for k, frame in enumerate(frames):
        row, col = cell_for(layout, k)
        if fit == "stretch":
            tile = resize_nearest(frame.pixels, cell_w, cell_h)
        else:
            tile = letterbox(frame.pixels, cell_w, cell_h)
        y = row * (cell_h + padding)
        x = col * (cell_w + padding)
        canvas[y : y + cell_h, x : x + cell_w] = tile
        provenance[(row, col)] = frame.source_index
    return ImageGrid(
        pixels=canvas,
        layout=layout,
        cell_w=cell_w,
        cell_h=cell_h,
        padding=padding,
        provenance=provenance,
    )
