"""In-process endpoints for hermetic runs and fault-injection tests.

Specs understood by ``mock_transport`` (usable anywhere a base_url goes):

    mock:echo                 reply with the last user turn, verbatim
    mock:fixed:<text>         constant reply
    mock:cycle:<a|b|c>        canned replies, cycling per request
    mock:colorcell:<R>x<C>    decode the attached grid and answer which
                              color sits at the cell named in the question
    mock:judge                rule-based judge: compares the Correct Answer
                              and Predicted Answer lines of a judge prompt

Every mock records the full request payloads it saw, so tests can assert on
call counts, idempotence, and wire shape.
"""

from __future__ import annotations

import base64
import io
import re
import threading

import numpy as np

from .client import TransportReply, make_chat_reply
from .synthetic import color_name_for


def last_user_text(messages: list[dict]) -> str:
    for msg in reversed(messages):
        if msg.get("role") != "user":
            continue
        content = msg.get("content")
        if isinstance(content, str):
            return content
        return "\n".join(p.get("text", "") for p in content if p.get("type") == "text")
    return ""


def first_image(messages: list[dict]) -> np.ndarray | None:
    from PIL import Image

    for msg in messages:
        content = msg.get("content")
        if not isinstance(content, list):
            continue
        for part in content:
            if part.get("type") == "image_url":
                url = part["image_url"]["url"]
                b64 = url.split("base64,", 1)[1]
                with Image.open(io.BytesIO(base64.b64decode(b64))) as im:
                    return np.asarray(im.convert("RGB"))
    return None


class MockTransport:
    """Base transport: logs requests, delegates the reply to a hook."""

    def __init__(self):
        self.requests: list[dict] = []
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return len(self.requests)

    def send(self, payload: dict, timeout: float) -> TransportReply:
        with self._lock:
            self.requests.append(payload)
        return self._reply(payload)

    def _reply(self, payload: dict) -> TransportReply:
        return TransportReply(status=200, payload=make_chat_reply(self._reply_text(payload)))

    def _reply_text(self, payload: dict) -> str:
        raise NotImplementedError


class EchoMock(MockTransport):
    def _reply_text(self, payload):
        return last_user_text(payload["messages"])


class FixedMock(MockTransport):
    def __init__(self, text: str):
        super().__init__()
        self.text = text

    def _reply_text(self, payload):
        return self.text


class CycleMock(MockTransport):
    def __init__(self, texts):
        super().__init__()
        self.texts = list(texts)

    def _reply_text(self, payload):
        return self.texts[(self.calls - 1) % len(self.texts)]


class ScriptMock(MockTransport):
    """Plays back a scripted sequence of events, one per request.

    Events: an int is returned as that HTTP status; a string succeeds with
    that text; an Exception instance is raised (connection-level failure).
    The last event repeats once the script is exhausted.
    """

    def __init__(self, events):
        super().__init__()
        self.events = list(events)
        if not self.events:
            raise ValueError("script needs at least one event")

    def _reply(self, payload):
        event = self.events[min(self.calls - 1, len(self.events) - 1)]
        if isinstance(event, Exception):
            raise event
        if isinstance(event, int):
            return TransportReply(status=event, payload={"error": f"scripted {event}"})
        if isinstance(event, dict):
            return TransportReply(status=200, payload=event)
        return TransportReply(status=200, payload=make_chat_reply(str(event)))


class SlowMock(FixedMock):
    """Fixed reply after a real delay; lets tests observe concurrency."""

    def __init__(self, text: str, delay: float):
        super().__init__(text)
        self.delay = delay
        self.spans: list[tuple[float, float]] = []

    def _reply(self, payload):
        import time

        start = time.monotonic()
        time.sleep(self.delay)
        reply = super()._reply(payload)
        with self._lock:
            self.spans.append((start, time.monotonic()))
        return reply


_CELL_RE = re.compile(r"row\s+(\d+)\s*,?\s*column\s+(\d+)", re.IGNORECASE)
_OPTION_RE = re.compile(r"^\(([A-E])\)\s*(.+)$", re.MULTILINE)


class ColorCellMock(MockTransport):
    """Reads the composed grid like a (very literal) vision model would.

    Parses "row R, column C" from the question, samples the center pixel of
    that cell in the attached image, and answers with the option letter whose
    text names the observed color.
    """

    def __init__(self, rows: int, cols: int):
        super().__init__()
        self.rows = rows
        self.cols = cols

    def _reply_text(self, payload):
        text = last_user_text(payload["messages"])
        image = first_image(payload["messages"])
        m = _CELL_RE.search(text)
        if image is None or m is None:
            return "I cannot see a grid cell to answer about."
        row, col = int(m.group(1)) - 1, int(m.group(2)) - 1
        cell_h = image.shape[0] // self.rows
        cell_w = image.shape[1] // self.cols
        pixel = image[row * cell_h + cell_h // 2, col * cell_w + cell_w // 2]
        seen = color_name_for(pixel)
        for letter, option in _OPTION_RE.findall(text):
            if option.strip().lower() == seen:
                return f"The answer is ({letter})."
        return f"The cell looks {seen}, which is not among the options."


_JUDGE_FIELD_RE = re.compile(r"^(Correct Answer|Predicted Answer):\s*(.*)$", re.MULTILINE)


class ExactJudgeMock(MockTransport):
    """Deterministic judge: full containment scores 5/yes, else 1/no."""

    def _reply_text(self, payload):
        text = last_user_text(payload["messages"])
        fields = {k.lower(): v.strip().lower() for k, v in _JUDGE_FIELD_RE.findall(text)}
        truth = fields.get("correct answer", "")
        pred = fields.get("predicted answer", "")
        if truth and truth in pred:
            return "{'pred': 'yes', 'score': 5}"
        return "{'pred': 'no', 'score': 1}"


def mock_transport(spec: str) -> MockTransport:
    if not spec.startswith("mock:"):
        raise ValueError(f"not a mock endpoint spec: {spec!r}")
    rest = spec[len("mock:") :]
    kind, _, arg = rest.partition(":")
    if kind == "echo":
        return EchoMock()
    if kind == "fixed":
        return FixedMock(arg)
    if kind == "cycle":
        return CycleMock(arg.split("|"))
    if kind == "colorcell":
        rows, _, cols = arg.partition("x")
        return ColorCellMock(rows=int(rows or 3), cols=int(cols or 2))
    if kind == "judge":
        return ExactJudgeMock()
    raise ValueError(f"unknown mock endpoint {spec!r}")
