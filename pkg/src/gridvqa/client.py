"""Chat-completion client for vision-language endpoints.

One wire dialect: the OpenAI-style ``/chat/completions`` JSON shape, with the
grid image delivered as a base64 PNG data URL inside the first user message.
Covers hosted and local servers alike.  Retries are exponential-backoff with
full-request idempotence; the API key is read from an environment variable at
send time and never logged, only the variable's name is recorded.

``base_url`` values starting with ``mock:`` resolve to the bundled in-process
endpoints (see gridvqa.mock), so every pipeline stage runs offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .errors import (
    AuthError,
    EndpointError,
    MalformedReply,
    RateLimited,
    SampleSetError,
    TransientEndpointError,
)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    max_tokens: int = 768

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class ModelEndpoint:
    """Where and how to reach a chat-style model."""

    base_url: str
    model_name: str
    api_key_env: str = "GRIDVQA_API_KEY"
    timeout: float = 120.0
    max_retries: int = 3
    sampling: SamplingParams = field(default_factory=SamplingParams)
    permits: int = 4  # max concurrent in-flight requests
    requests_per_second: float | None = None

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.permits < 1:
            raise ValueError("permits must be >= 1")


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    turns_used: int
    latency: float
    usage: dict | None
    endpoint_fingerprint: str
    attempts: int

    def to_dict(self) -> dict:
        return {
            "raw_text": self.raw_text,
            "turns_used": self.turns_used,
            "latency": self.latency,
            "usage": self.usage,
            "endpoint_fingerprint": self.endpoint_fingerprint,
            "attempts": self.attempts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelResponse":
        return cls(
            raw_text=data["raw_text"],
            turns_used=data["turns_used"],
            latency=data["latency"],
            usage=data.get("usage"),
            endpoint_fingerprint=data["endpoint_fingerprint"],
            attempts=data["attempts"],
        )


def endpoint_fingerprint(endpoint: ModelEndpoint, template_fingerprint: str = "") -> str:
    """Deterministic hash of what shapes a model's output: model, wording
    version, sampling."""
    blob = json.dumps(
        {
            "model": endpoint.model_name,
            "templates": template_fingerprint,
            "temperature": endpoint.sampling.temperature,
            "max_tokens": endpoint.sampling.max_tokens,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TransportReply:
    status: int
    payload: Any  # parsed JSON dict, or raw text when not JSON


class Transport(Protocol):
    def send(self, payload: dict, timeout: float) -> TransportReply: ...


class HttpTransport:
    """requests-backed transport; built lazily so offline runs never import it."""

    def __init__(self, base_url: str, api_key_env: str):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key_env = api_key_env

    def send(self, payload: dict, timeout: float) -> TransportReply:
        import os

        import requests

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = requests.post(self.url, json=payload, headers=headers, timeout=timeout)
        except requests.Timeout as exc:
            raise TransientEndpointError(f"timeout talking to {self.url}: {exc}")
        except requests.ConnectionError as exc:
            raise TransientEndpointError(f"cannot reach {self.url}: {exc}")
        try:
            body = resp.json()
        except ValueError:
            body = resp.text
        return TransportReply(status=resp.status_code, payload=body)


class _TokenBucket:
    def __init__(self, rate: float, sleeper: Callable[[float], None]):
        self.rate = rate
        self.sleeper = sleeper
        self._lock = threading.Lock()
        self._next_at = 0.0

    def wait(self):
        with self._lock:
            now = time.monotonic()
            wait_for = max(0.0, self._next_at - now)
            self._next_at = max(now, self._next_at) + 1.0 / self.rate
        if wait_for > 0:
            self.sleeper(wait_for)


def encode_image_png(pixels) -> str:
    """PNG data URL; lossless on purpose so transport adds no artifacts."""
    from PIL import Image
    import io

    if hasattr(pixels, "pixels"):  # ImageGrid
        pixels = pixels.pixels
    buf = io.BytesIO()
    Image.fromarray(np.asarray(pixels)).save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def _redact_images(messages: list[dict]) -> list[dict]:
    out = []
    for msg in messages:
        content = msg.get("content")
        if isinstance(content, list):
            parts = []
            for part in content:
                if part.get("type") == "image_url":
                    url = part["image_url"]["url"]
                    digest = hashlib.sha256(url.encode()).hexdigest()[:16]
                    parts.append({"type": "image_url", "image_url": {"url": f"<png sha256:{digest}>"}})
                else:
                    parts.append(part)
            out.append({**msg, "content": parts})
        else:
            out.append(msg)
    return out


class VlmClient:
    """Dispatches (image, conversation) pairs to one endpoint."""

    def __init__(
        self,
        endpoint: ModelEndpoint,
        transport: Transport | None = None,
        template_fingerprint: str = "",
        transcript_path: str | Path | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        backoff_base: float = 0.5,
    ):
        self.endpoint = endpoint
        if transport is None:
            if endpoint.base_url.startswith("mock:"):
                from .mock import mock_transport

                transport = mock_transport(endpoint.base_url)
            else:
                transport = HttpTransport(endpoint.base_url, endpoint.api_key_env)
        self.transport = transport
        self.fingerprint = endpoint_fingerprint(endpoint, template_fingerprint)
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self.sleeper = sleeper
        self.backoff_base = backoff_base
        self._permits = threading.Semaphore(endpoint.permits)
        self._bucket = (
            _TokenBucket(endpoint.requests_per_second, sleeper)
            if endpoint.requests_per_second
            else None
        )
        self._transcript_lock = threading.Lock()

    def ask(
        self,
        image,
        turns: Sequence[str],
        sampling: SamplingParams | None = None,
    ) -> ModelResponse:
        """Run the turns as one conversation; the image rides on turn one.

        Each turn past the first sees the model's previous reply.  Returns the
        final turn's text.
        """
        turns = list(turns)
        if not turns:
            raise ValueError("at least one turn is required")
        sampling = sampling or self.endpoint.sampling
        messages: list[dict] = []
        started = time.monotonic()
        total_attempts = 0
        usage_total: dict | None = None
        text = ""
        for i, turn in enumerate(turns):
            content: Any = turn
            if i == 0 and image is not None:
                content = [
                    {"type": "text", "text": turn},
                    {"type": "image_url", "image_url": {"url": encode_image_png(image)}},
                ]
            messages.append({"role": "user", "content": content})
            text, usage, attempts = self._request(messages, sampling)
            total_attempts += attempts
            usage_total = _merge_usage(usage_total, usage)
            messages.append({"role": "assistant", "content": text})
        return ModelResponse(
            raw_text=text,
            turns_used=len(turns),
            latency=time.monotonic() - started,
            usage=usage_total,
            endpoint_fingerprint=self.fingerprint,
            attempts=total_attempts,
        )

    def ask_many(
        self,
        image,
        prompt: str,
        k: int,
        sampling: SamplingParams | None = None,
    ) -> list[ModelResponse]:
        """k independent sampled completions of one prompt."""
        if k < 2:
            raise ValueError("ask_many needs k >= 2")
        out = []
        for i in range(k):
            try:
                out.append(self.ask(image, [prompt], sampling=sampling))
            except EndpointError as exc:
                raise SampleSetError(f"sample set aborted: {exc}", failed_index=i)
        return out

    def _request(self, messages: list[dict], sampling: SamplingParams):
        payload = {
            "model": self.endpoint.model_name,
            "messages": list(messages),  # snapshot: the conversation grows after send
            "temperature": sampling.temperature,
            "max_tokens": sampling.max_tokens,
        }
        attempts = 0
        delay = self.backoff_base
        while True:
            attempts += 1
            failure: EndpointError | None = None
            if self._bucket:
                self._bucket.wait()
            started = time.monotonic()
            try:
                with self._permits:
                    reply = self.transport.send(payload, self.endpoint.timeout)
            except TransientEndpointError as exc:
                failure = exc
            else:
                self._log_transcript(messages, reply, time.monotonic() - started)
                if reply.status in (401, 403):
                    raise AuthError(f"endpoint rejected credentials (HTTP {reply.status})")
                if reply.status == 429:
                    failure = RateLimited("endpoint rate limit (HTTP 429)")
                elif 500 <= reply.status < 600:
                    failure = TransientEndpointError(f"endpoint failure (HTTP {reply.status})")
                elif reply.status != 200:
                    raise MalformedReply(
                        f"unexpected HTTP {reply.status}", payload=reply.payload
                    )
                else:
                    text, usage = _parse_completion(reply.payload)
                    return text, usage, attempts
            if attempts > self.endpoint.max_retries:
                raise failure
            self.sleeper(delay)
            delay *= 2

    def _log_transcript(self, messages, reply: TransportReply, latency: float):
        if not self.transcript_path:
            return
        line = json.dumps(
            {
                "model": self.endpoint.model_name,
                "api_key_env": self.endpoint.api_key_env,
                "messages": _redact_images(messages),
                "status": reply.status,
                "payload": reply.payload,
                "latency": round(latency, 6),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        with self._transcript_lock:
            self.transcript_path.parent.mkdir(parents=True, exist_ok=True)
            with self.transcript_path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def _merge_usage(total: dict | None, usage: dict | None) -> dict | None:
    if usage is None:
        return total
    if total is None:
        return dict(usage)
    merged = dict(total)
    for key, value in usage.items():
        if isinstance(value, (int, float)) and isinstance(merged.get(key), (int, float)):
            merged[key] = merged[key] + value
        else:
            merged[key] = value
    return merged


def _parse_completion(payload) -> tuple[str, dict | None]:
    if not isinstance(payload, dict):
        raise MalformedReply("endpoint reply is not a JSON object", payload=payload)
    try:
        text = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedReply("reply lacks choices[0].message.content", payload=payload)
    if not isinstance(text, str):
        raise MalformedReply("completion content is not text", payload=payload)
    return text, payload.get("usage")


def make_chat_reply(text: str, usage: dict | None = None) -> dict:
    """The minimal completion body mocks and fixtures reply with."""
    body: dict = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = usage
    return body
