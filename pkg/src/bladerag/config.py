"""Pipeline configuration loaded from a JSON or TOML document.

Relative paths are resolved against the directory holding the config file.
Secrets never live here; only the names of the environment variables that
hold them.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .chunking import ChunkingConfig
from .embedding import EmbeddingProviderConfig
from .errors import ConfigError
from .retrieval import DEFAULT_QUERY, DEFAULT_TOP_K, DEFAULT_TOP_N
from .vlm_client import VlmConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_PATH_KEYS = ("kb_path", "index_dir", "replay_dir", "record_dir")


@dataclass(frozen=True)
class PipelineConfig:
    kb_path: Path = Path("kb")
    index_dir: Path = Path("indices")
    embedding: EmbeddingProviderConfig = field(default_factory=EmbeddingProviderConfig)
    vlm: VlmConfig = field(default_factory=VlmConfig)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    top_k: int = DEFAULT_TOP_K
    top_n: int = DEFAULT_TOP_N
    query: str = DEFAULT_QUERY
    rag_enabled: bool = True
    replay_dir: Path | None = None
    record_dir: Path | None = None
    parallel: int = 1

    def __post_init__(self) -> None:
        if self.top_k < 1 or self.top_n < 1 or self.top_n > self.top_k:
            raise ConfigError(f"need 1 <= top_n <= top_k, got top_k={self.top_k} top_n={self.top_n}")
        if not self.query:
            raise ConfigError("retrieval query must be non-empty")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")
        if self.replay_dir is not None and self.record_dir is not None:
            raise ConfigError("replay and record modes are mutually exclusive")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config document must be a table/object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        try:
            if "embedding" in kwargs:
                kwargs["embedding"] = EmbeddingProviderConfig.from_dict(kwargs["embedding"])
            if "vlm" in kwargs:
                kwargs["vlm"] = VlmConfig.from_dict(kwargs["vlm"])
            if "chunking" in kwargs:
                kwargs["chunking"] = ChunkingConfig.from_dict(kwargs["chunking"])
        except TypeError as exc:
            raise ConfigError(f"bad config section: {exc}") from exc
        for key in _PATH_KEYS:
            if kwargs.get(key) is not None:
                p = Path(kwargs[key])
                kwargs[key] = p if p.is_absolute() or base_dir is None else base_dir / p
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            if path.suffix.lower() == ".toml":
                data = tomllib.loads(raw.decode("utf-8"))
            else:
                data = json.loads(raw)
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_dict(data, path.parent)
