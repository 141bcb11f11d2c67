"""Text (384-d) and image (512-d) embedding providers.

Two providers share one surface:

* ``HashingEmbedder`` -- deterministic, offline. Every byte 3-gram of the
  input is hashed with a seeded 64-bit mix; the hash picks a coordinate
  (``h % dim``) and a sign (bit 63) and contributes +/-1 there.
* ``RemoteEmbedder`` -- POSTs ``{"model": ..., "input": [...]}`` to an
  embeddings endpoint and reads ``data[i].embedding``.

Both return L2-normalized float32 vectors.
"""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import threading
from dataclasses import dataclass
from typing import Protocol

import httpx
import numpy as np

from .errors import ConfigError, DimensionMismatchError, EmbeddingError

logger = logging.getLogger(__name__)

TEXT_DIM = 384
IMAGE_DIM = 512

DEFAULT_TEXT_MODEL = "sentence-transformers/all-MiniLM-L6-v2"
DEFAULT_IMAGE_MODEL = "openai/clip-vit-base-patch32"
EMBED_API_KEY_ENV = "EMBED_API_KEY"

_MASK64 = (1 << 64) - 1


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm, returned as float32."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("expected a 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite components")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return (arr / norm).astype(np.float32)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def hash_embed(data: bytes, dim: int, seed: int = 0) -> np.ndarray:
    """Signed feature hashing of byte 3-grams into ``dim`` buckets, normalized.

    Inputs shorter than 3 bytes hash as a single short gram. The gram value
    carries its length in bits 24..25 so short grams never collide with
    zero-padded 3-grams.
    """
    if not data:
        raise ValueError("cannot embed empty input")
    buf = np.frombuffer(data, dtype=np.uint8).astype(np.uint64)
    if len(buf) >= 3:
        grams = (buf[:-2] << np.uint64(16)) | (buf[1:-1] << np.uint64(8)) | buf[2:]
        grams = grams | np.uint64(3 << 24)
    else:
        value = 0
        for b in data:
            value = (value << 8) | b
        grams = np.array([value | (len(data) << 24)], dtype=np.uint64)
    seed_mix = _splitmix64(np.array([seed & _MASK64], dtype=np.uint64))[0]
    h = _splitmix64(grams ^ seed_mix)
    idx = (h % np.uint64(dim)).astype(np.int64)
    sign = np.where((h >> np.uint64(63)) == 1, -1.0, 1.0)
    acc = np.zeros(dim, dtype=np.float64)
    np.add.at(acc, idx, sign)
    if not acc.any():
        # every contribution cancelled; fall back to the first gram's bucket
        acc[idx[0]] = sign[0]
    return normalize(acc)


class EmbeddingProvider(Protocol):
    text_dim: int
    image_dim: int

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_image(self, data: bytes) -> np.ndarray: ...


@dataclass(frozen=True)
class EmbeddingProviderConfig:
    mode: str = "deterministic-test"
    endpoint: str | None = None
    text_model: str = DEFAULT_TEXT_MODEL
    image_model: str = DEFAULT_IMAGE_MODEL
    timeout: float = 30.0
    seed: int = 0
    max_in_flight: int = 4
    api_key_env: str = EMBED_API_KEY_ENV

    def __post_init__(self) -> None:
        if self.mode not in ("deterministic-test", "remote"):
            raise ConfigError(f"unknown embedding mode {self.mode!r}")
        if self.mode == "remote" and not (self.endpoint and self.text_model and self.image_model):
            raise ConfigError("remote embedding mode requires endpoint and model identifiers")
        if self.timeout <= 0 or self.max_in_flight < 1:
            raise ConfigError("embedding timeout and max_in_flight must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "EmbeddingProviderConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


class HashingEmbedder:
    def __init__(self, seed: int = 0, text_dim: int = TEXT_DIM, image_dim: int = IMAGE_DIM):
        self.seed = seed
        self.text_dim = text_dim
        self.image_dim = image_dim

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        return hash_embed(text.encode("utf-8"), self.text_dim, self.seed)

    def embed_image(self, data: bytes) -> np.ndarray:
        return hash_embed(bytes(data), self.image_dim, self.seed)


def image_data_url(data: bytes, filename: str | None = None) -> str:
    mime = (mimetypes.guess_type(filename)[0] if filename else None) or _sniff_mime(data)
    return f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"


def _sniff_mime(data: bytes) -> str:
    if data.startswith(b"\x89PNG"):
        return "image/png"
    if data.startswith(b"\xff\xd8"):
        return "image/jpeg"
    if data[:6] in (b"GIF87a", b"GIF89a"):
        return "image/gif"
    if data.startswith(b"RIFF") and data[8:12] == b"WEBP":
        return "image/webp"
    return "application/octet-stream"


class RemoteEmbedder:
    """Client for an OpenAI-style ``/embeddings`` endpoint.

    Images are sent as base64 data URLs in the ``input`` list. One retry is
    made on transport errors and 5xx responses.
    """

    text_dim = TEXT_DIM
    image_dim = IMAGE_DIM

    def __init__(self, config: EmbeddingProviderConfig, client: httpx.Client | None = None):
        if config.mode != "remote":
            raise ConfigError("RemoteEmbedder needs a remote-mode config")
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def embed_text(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        return self._embed(self.config.text_model, text, self.text_dim)

    def embed_image(self, data: bytes) -> np.ndarray:
        if not data:
            raise ValueError("cannot embed empty image bytes")
        return self._embed(self.config.image_model, image_data_url(bytes(data)), self.image_dim)

    def _embed(self, model: str, item: str, dim: int) -> np.ndarray:
        url = self.config.endpoint.rstrip("/") + "/embeddings"
        headers = {}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {"model": model, "input": [item]}
        last_exc: Exception | None = None
        for attempt in range(2):
            try:
                with self._slots:
                    resp = self._client.post(url, json=body, headers=headers, timeout=self.config.timeout)
            except httpx.TransportError as exc:
                last_exc = exc
                logger.warning("embedding request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_exc = EmbeddingError(f"embedding endpoint returned {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise EmbeddingError(f"embedding endpoint rejected request: {resp.status_code} {resp.text[:200]}")
            return self._parse(resp, dim)
        raise EmbeddingError(f"embedding request failed after retry: {last_exc}") from last_exc

    @staticmethod
    def _parse(resp: httpx.Response, dim: int) -> np.ndarray:
        try:
            values = resp.json()["data"][0]["embedding"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EmbeddingError(f"malformed embeddings response: {exc}") from exc
        if len(values) != dim:
            raise DimensionMismatchError(dim, len(values))
        try:
            return normalize(values)
        except ValueError as exc:
            raise EmbeddingError(f"unusable embedding from service: {exc}") from exc


def make_provider(config: EmbeddingProviderConfig) -> EmbeddingProvider:
    if config.mode == "remote":
        return RemoteEmbedder(config)
    return HashingEmbedder(seed=config.seed)
