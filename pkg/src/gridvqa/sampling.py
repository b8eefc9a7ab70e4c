"""Uniform-interval frame selection and the video decoder boundary.

Planning is pure index arithmetic.  Decoding sits behind ``VideoSource`` so
codecs stay swappable: a directory of numbered images, a GIF via Pillow, any
container OpenCV can open, or an in-memory array stack for tests.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MediaError

FRAME_FILE_RE = re.compile(r"^frame_(\d+)\.(png|jpg|jpeg|bmp)$", re.IGNORECASE)


@dataclass(frozen=True)
class FramePlan:
    """Which frame indices to pull from a video, in order."""

    n: int
    indices: tuple[int, ...]


def plan_samples(frame_count: int, n: int) -> FramePlan:
    """Pick the frame on screen at the start of each of ``n`` equal intervals.

    The span [0, frame_count) is split into n equal intervals; the index kept
    for interval i is floor(i * frame_count / n), the frame being shown at the
    instant the interval begins.  Videos shorter than n frames produce
    duplicate indices rather than an error, so a full grid can always be
    built from very short clips.
    """
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    indices = tuple((i * frame_count) // n for i in range(n))
    return FramePlan(n=n, indices=indices)


def pick_random_frame(frame_count: int, seed: int) -> int:
    """Seed-deterministic uniform draw of a single frame index."""
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    return random.Random(seed).randrange(frame_count)


@dataclass(frozen=True)
class Frame:
    """One decoded frame plus the source index it came from."""

    pixels: np.ndarray  # (H, W, 3) uint8
    source_index: int


class VideoSource:
    """A decodable video: uri, frame count, fps, and random frame access."""

    def __init__(self, uri: str, frame_count: int, fps: float, reader):
        if frame_count < 1:
            raise MediaError(f"no decodable frames in {uri}")
        self.uri = uri
        self.frame_count = frame_count
        self.fps = fps
        self._reader = reader

    def read_frame(self, index: int) -> np.ndarray:
        if not 0 <= index < self.frame_count:
            raise ValueError(
                f"frame index {index} out of range [0, {self.frame_count}) for {self.uri}"
            )
        return self._reader(index)


def extract_frames(source: VideoSource, plan: FramePlan) -> list[Frame]:
    """Decode the planned frames in plan order, tagged with their indices.

    Duplicate indices (short clips) are decoded once and reused.
    """
    cache: dict[int, np.ndarray] = {}
    frames = []
    for index in plan.indices:
        if index not in cache:
            cache[index] = source.read_frame(index)
        frames.append(Frame(pixels=cache[index], source_index=index))
    return frames


def _as_rgb(pixels: np.ndarray) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.shape[-1] == 4:
        arr = arr[..., :3]
    return np.ascontiguousarray(arr, dtype=np.uint8)


def frames_from_arrays(arrays, uri: str = "<memory>", fps: float = 30.0) -> VideoSource:
    """In-memory source for tests and synthetic media."""
    stack = [_as_rgb(a) for a in arrays]

    def read(index: int) -> np.ndarray:
        return stack[index]

    return VideoSource(uri=uri, frame_count=len(stack), fps=fps, reader=read)


def _open_image_dir(path: Path) -> VideoSource:
    entries = []
    for child in path.iterdir():
        m = FRAME_FILE_RE.match(child.name)
        if m:
            entries.append((int(m.group(1)), child))
    entries.sort()
    if not entries:
        raise MediaError(f"no frame_NNNNNN image files in {path}")
    files = [p for _, p in entries]

    def read(index: int) -> np.ndarray:
        from PIL import Image

        try:
            with Image.open(files[index]) as im:
                return _as_rgb(np.asarray(im.convert("RGB")))
        except OSError as exc:
            raise MediaError(f"cannot decode {files[index]}: {exc}", frame_index=index)

    return VideoSource(uri=str(path), frame_count=len(files), fps=30.0, reader=read)


def _open_gif(path: Path) -> VideoSource:
    from PIL import Image

    with Image.open(path) as im:
        count = getattr(im, "n_frames", 1)

    def read(index: int) -> np.ndarray:
        try:
            with Image.open(path) as im:
                im.seek(index)
                return _as_rgb(np.asarray(im.convert("RGB")))
        except (OSError, EOFError) as exc:
            raise MediaError(f"cannot decode {path} frame {index}: {exc}", frame_index=index)

    return VideoSource(uri=str(path), frame_count=count, fps=10.0, reader=read)


class _CvReader:
    """Sequential-forward reader over one cv2 capture session."""

    def __init__(self, path: Path):
        import cv2

        self._cv2 = cv2
        self._path = path
        self._cap = cv2.VideoCapture(str(path))
        if not self._cap.isOpened():
            raise MediaError(f"cannot open {path}")
        self._pos = 0

    @property
    def frame_count(self) -> int:
        return int(self._cap.get(self._cv2.CAP_PROP_FRAME_COUNT))

    @property
    def fps(self) -> float:
        return float(self._cap.get(self._cv2.CAP_PROP_FPS)) or 30.0

    def read(self, index: int) -> np.ndarray:
        # Seeking backwards is unreliable for some codecs; reopen instead.
        if index < self._pos:
            self._cap.release()
            self._cap = self._cv2.VideoCapture(str(self._path))
            self._pos = 0
        frame = None
        while self._pos <= index:
            ok, frame = self._cap.read()
            self._pos += 1
            if not ok:
                raise MediaError(f"cannot decode {self._path} frame {index}", frame_index=index)
        return _as_rgb(frame[..., ::-1])  # BGR -> RGB


def open_video(uri: str | Path) -> VideoSource:
    """Open a video by sniffing its form.

    Accepts a directory of ``frame_000001.png``-style images, a GIF, or any
    container OpenCV can decode (mp4 and webm at minimum).
    """
    path = Path(uri)
    if path.is_dir():
        return _open_image_dir(path)
    if not path.exists():
        raise FileNotFoundError(f"no such video: {path}")
    if path.suffix.lower() == ".gif":
        return _open_gif(path)
    try:
        reader = _CvReader(path)
    except ImportError:
        raise MediaError(
            f"opencv-python is required to decode {path.suffix} files; "
            "install gridvqa[video] or supply a frame directory"
        )
    return VideoSource(uri=str(path), frame_count=reader.frame_count, fps=reader.fps, reader=reader.read)
