"""OpenAI-compatible chat-completions client with pluggable transports.

The client owns retries, latency measurement and error classification.
Transports only move one request and report what came back:

* ``HttpTransport``     real POST to ``{endpoint}/chat/completions``
* ``MockTransport``     scripted replies for unit tests
* ``ReplayTransport``   serves recorded responses keyed by image id
* ``RecordingTransport`` wraps another transport and writes a replay store
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol
from urllib.parse import urlparse

import httpx

from .embedding import image_data_url
from .errors import (
    ConfigError,
    MissingFixtureError,
    VlmConfigError,
    VlmError,
    VlmProtocolError,
    VlmRetriableError,
)

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "qwen-vl-max"
VLM_API_KEY_ENV = "VLM_API_KEY"
REPLAY_INDEX_NAME = "index.json"
REPLAY_SUFFIX = ".response.txt"


@dataclass(frozen=True)
class VlmConfig:
    endpoint: str | None = None
    model: str = DEFAULT_MODEL
    api_key_env: str = VLM_API_KEY_ENV
    timeout: float = 120.0
    max_retries: int = 2
    temperature: float = 0.0
    max_in_flight: int = 1
    backoff_base: float = 1.0
    max_tokens: int | None = None

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ConfigError("VLM timeout must be positive")
        if self.max_retries < 0:
            raise ConfigError("VLM max_retries must be >= 0")
        if not 0 <= self.temperature <= 2:
            raise ConfigError("VLM temperature must be within [0, 2]")
        if self.max_in_flight < 1:
            raise ConfigError("VLM max_in_flight must be >= 1")
        if self.backoff_base < 0:
            raise ConfigError("VLM backoff_base must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "VlmConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class VlmRequest:
    prompt: str
    image_locator: str
    image_id: str


@dataclass(frozen=True)
class TransportReply:
    """What a transport saw. ``latency`` is only set by transports that
    report a recorded value instead of a measured one."""

    status: int
    text: str | None
    latency: float | None = None


class TransportFailure(Exception):
    """Raised by transports for connection-level problems (retriable)."""


@dataclass(frozen=True)
class VlmExchange:
    prompt: str
    image_locator: str
    image_id: str
    raw_response: str
    latency_seconds: float
    status: int = 200
    attempts: int = 1


class Transport(Protocol):
    def send(self, request: VlmRequest, config: VlmConfig) -> TransportReply: ...


def resolve_image_url(locator: str) -> str:
    """Remote URLs pass through; local files are inlined as data URLs."""
    parsed = urlparse(locator)
    if parsed.scheme in ("http", "https", "data"):
        return locator
    path = Path(parsed.path if parsed.scheme == "file" else locator)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise VlmConfigError(f"cannot read image {locator!r}: {exc}") from exc
    return image_data_url(data, path.name)


def build_payload(request: VlmRequest, config: VlmConfig, image_url: str) -> dict:
    payload: dict = {
        "model": config.model,
        "temperature": config.temperature,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": request.prompt},
                    {"type": "image_url", "image_url": {"url": image_url}},
                ],
            }
        ],
    }
    if config.max_tokens is not None:
        payload["max_tokens"] = config.max_tokens
    return payload


class HttpTransport:
    def __init__(self, client: httpx.Client | None = None):
        self._client = client or httpx.Client()

    def send(self, request: VlmRequest, config: VlmConfig) -> TransportReply:
        if not config.endpoint:
            raise VlmConfigError("no VLM endpoint configured")
        url = config.endpoint.rstrip("/") + "/chat/completions"
        headers = {}
        key = os.environ.get(config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = build_payload(request, config, resolve_image_url(request.image_locator))
        try:
            resp = self._client.post(url, json=payload, headers=headers, timeout=config.timeout)
        except httpx.TransportError as exc:
            raise TransportFailure(str(exc)) from exc
        if resp.status_code != 200:
            return TransportReply(resp.status_code, resp.text[:500])
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise VlmProtocolError(f"malformed chat-completions response: {exc}") from exc
        if isinstance(content, list):
            # some servers return content parts even for plain text
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        return TransportReply(200, content)


Outcome = str | int | Exception


class MockTransport:
    """Scripted transport.

    ``responses`` is either a callable ``request -> str`` or a sequence of
    outcomes consumed in order: a string is a 200 reply, an int is a bare
    status code and an exception instance is raised.
    """

    def __init__(self, responses: Callable[[VlmRequest], str] | Iterable[Outcome] | str):
        if isinstance(responses, str):
            fixed = responses
            responses = lambda _req: fixed  # noqa: E731
        self._fn = responses if callable(responses) else None
        self._queue = None if callable(responses) else list(responses)
        self._lock = threading.Lock()
        self.requests: list[VlmRequest] = []

    def send(self, request: VlmRequest, config: VlmConfig) -> TransportReply:
        with self._lock:
            self.requests.append(request)
        if self._fn is not None:
            return TransportReply(200, self._fn(request))
        with self._lock:
            if not self._queue:
                raise AssertionError("mock transport ran out of scripted responses")
            outcome = self._queue.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        if isinstance(outcome, int):
            return TransportReply(outcome, None)
        return TransportReply(200, outcome)


@dataclass
class ReplayStore:
    """Directory of ``{image_id}.response.txt`` files plus ``index.json``.

    The index maps image id to ``{"file", "latency_seconds", "model"}``.
    """

    root: Path
    entries: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def open(cls, root: str | Path) -> "ReplayStore":
        root = Path(root)
        index_path = root / REPLAY_INDEX_NAME
        entries: dict[str, dict] = {}
        if index_path.exists():
            try:
                entries = json.loads(index_path.read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise VlmConfigError(f"unreadable replay index {index_path}: {exc}") from exc
            if not isinstance(entries, dict):
                raise VlmConfigError(f"replay index {index_path} must be a JSON object")
        return cls(root, entries)

    def path_for(self, image_id: str) -> Path:
        entry = self.entries.get(image_id, {})
        return self.root / entry.get("file", image_id + REPLAY_SUFFIX)

    def lookup(self, image_id: str) -> tuple[str, float | None]:
        path = self.path_for(image_id)
        if image_id not in self.entries and not path.exists():
            raise MissingFixtureError(f"no recorded response for image {image_id!r} in {self.root}")
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise MissingFixtureError(f"recorded response for {image_id!r} unreadable: {exc}") from exc
        latency = self.entries.get(image_id, {}).get("latency_seconds")
        return text, (float(latency) if latency is not None else None)

    def save(self, image_id: str, text: str, latency: float, model: str) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        name = image_id + REPLAY_SUFFIX
        with open(self.root / name, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.entries[image_id] = {"file": name, "latency_seconds": round(latency, 6), "model": model}
        tmp = self.root / (REPLAY_INDEX_NAME + ".tmp")
        tmp.write_text(json.dumps(self.entries, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(self.root / REPLAY_INDEX_NAME)


class ReplayTransport:
    """Serves stored responses with no network access.

    The recorded latency is reported back (0.0 if none was stored) so that
    replayed evaluations are reproducible byte for byte.
    """

    def __init__(self, root: str | Path):
        self.store = ReplayStore.open(root)

    def send(self, request: VlmRequest, config: VlmConfig) -> TransportReply:
        text, latency = self.store.lookup(request.image_id)
        return TransportReply(200, text, latency if latency is not None else 0.0)


class RecordingTransport:
    def __init__(self, inner: Transport, root: str | Path):
        self.inner = inner
        self.store = ReplayStore.open(root)
        self._lock = threading.Lock()

    def send(self, request: VlmRequest, config: VlmConfig) -> TransportReply:
        start = time.perf_counter()
        reply = self.inner.send(request, config)
        elapsed = time.perf_counter() - start
        if reply.status == 200 and reply.text:
            latency = reply.latency if reply.latency is not None else elapsed
            with self._lock:
                self.store.save(request.image_id, reply.text, latency, config.model)
        return reply


def _default_image_id(locator: str) -> str:
    name = Path(urlparse(locator).path or locator).name
    return name.split(".")[0] or locator


class VlmClient:
    """Thread-safe up to ``config.max_in_flight`` concurrent calls."""

    def __init__(
        self,
        config: VlmConfig,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.transport = transport or HttpTransport()
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def analyze(self, prompt: str, image_locator: str, image_id: str | None = None) -> VlmExchange:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        request = VlmRequest(prompt, image_locator, image_id or _default_image_id(image_locator))
        attempts_allowed = self.config.max_retries + 1
        last_problem = ""
        for attempt in range(1, attempts_allowed + 1):
            try:
                with self._slots:
                    start = time.perf_counter()
                    reply = self.transport.send(request, self.config)
                    elapsed = time.perf_counter() - start
            except TransportFailure as exc:
                last_problem = f"transport failure: {exc}"
            except (httpx.TimeoutException, TimeoutError) as exc:
                last_problem = f"timeout: {exc}"
            else:
                if reply.status >= 500:
                    last_problem = f"server error {reply.status}"
                elif reply.status >= 400:
                    raise VlmConfigError(f"VLM endpoint rejected request ({reply.status}): {reply.text or ''}")
                elif reply.status != 200:
                    raise VlmProtocolError(f"unexpected status {reply.status}")
                else:
                    if not reply.text or not reply.text.strip():
                        raise VlmProtocolError("VLM returned an empty completion")
                    latency = reply.latency if reply.latency is not None else elapsed
                    return VlmExchange(
                        prompt=prompt,
                        image_locator=image_locator,
                        image_id=request.image_id,
                        raw_response=reply.text,
                        latency_seconds=max(0.0, float(latency)),
                        status=reply.status,
                        attempts=attempt,
                    )
            logger.warning("VLM attempt %d/%d failed: %s", attempt, attempts_allowed, last_problem)
            if attempt < attempts_allowed:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
        raise VlmRetriableError(f"VLM call failed after {attempts_allowed} attempts: {last_problem}")


__all__ = [
    "HttpTransport",
    "MockTransport",
    "RecordingTransport",
    "ReplayStore",
    "ReplayTransport",
    "TransportFailure",
    "TransportReply",
    "VlmClient",
    "VlmConfig",
    "VlmError",
    "VlmExchange",
    "VlmRequest",
    "build_payload",
    "resolve_image_url",
]
