"""Recursive separator-aware text splitting with overlapping chunks.

Separators stay attached to the end of the segment they terminate, so the
concatenation of a document's chunks (minus each chunk's declared overlap
prefix) is exactly the source text.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ConfigError

DEFAULT_SEPARATORS: tuple[str, ...] = ("\n\n", "\n", ".", " ", "")


@dataclass(frozen=True)
class ChunkingConfig:
    chunk_size: int = 1000
    chunk_overlap: int = 200
    separators: tuple[str, ...] = field(default=DEFAULT_SEPARATORS)

    def __post_init__(self) -> None:
        object.__setattr__(self, "separators", tuple(self.separators))
        if self.chunk_size < 1:
            raise ConfigError(f"chunk_size must be positive, got {self.chunk_size}")
        if not 0 <= self.chunk_overlap < self.chunk_size:
            raise ConfigError(
                f"chunk_overlap must satisfy 0 <= overlap < chunk_size, got {self.chunk_overlap}"
            )
        if not self.separators or self.separators[-1] != "":
            raise ConfigError("separators must end with the empty-string fallback")

    def to_dict(self) -> dict:
        return {
            "chunk_size": self.chunk_size,
            "chunk_overlap": self.chunk_overlap,
            "separators": list(self.separators),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChunkingConfig":
        return cls(
            chunk_size=int(data.get("chunk_size", 1000)),
            chunk_overlap=int(data.get("chunk_overlap", 200)),
            separators=tuple(data.get("separators", DEFAULT_SEPARATORS)),
        )


@dataclass(frozen=True)
class TextPiece:
    """One chunk of text; the first ``overlap`` chars repeat the previous chunk's tail."""

    text: str
    overlap: int = 0


def reconstruct(pieces: Sequence[TextPiece]) -> str:
    return "".join(p.text[p.overlap :] for p in pieces)


def _split_keep_end(text: str, sep: str) -> list[str]:
    if sep == "":
        return list(text)
    parts = text.split(sep)
    out = [p + sep for p in parts[:-1]]
    out.append(parts[-1])
    return [p for p in out if p]


def _usable(text: str, sep: str) -> bool:
    # A separator that only occurs as the trailing run would split off nothing but itself.
    if sep == "":
        return True
    while text.endswith(sep):
        text = text[: -len(sep)]
    return sep in text


class _Splitter:
    def __init__(self, cfg: ChunkingConfig):
        self.size = cfg.chunk_size
        self.overlap = cfg.chunk_overlap
        self.separators = cfg.separators

    def split(self, text: str, separators: Sequence[str]) -> list[TextPiece]:
        sep, finer = "", ()
        for i, candidate in enumerate(separators):
            if _usable(text, candidate):
                sep, finer = candidate, tuple(separators[i + 1 :])
                break

        out: list[TextPiece] = []
        pending: list[str] = []
        for segment in _split_keep_end(text, sep):
            if len(segment) <= self.size:
                pending.append(segment)
                continue
            if pending:
                out.extend(self._merge(pending))
                pending = []
            # finer is never empty here: "" yields 1-char segments, which always fit.
            out.extend(self.split(segment, finer))
        if pending:
            out.extend(self._merge(pending))
        return out

    def _merge(self, splits: list[str]) -> list[TextPiece]:
        pieces: list[TextPiece] = []
        window: deque[str] = deque()
        total = 0
        carried = 0
        for s in splits:
            if total + len(s) > self.size and window:
                pieces.append(TextPiece("".join(window), carried))
                while window and (total > self.overlap or total + len(s) > self.size):
                    total -= len(window.popleft())
                carried = total
            window.append(s)
            total += len(s)
        if window:
            pieces.append(TextPiece("".join(window), carried))
        return pieces


def split_text(text: str, cfg: ChunkingConfig) -> list[TextPiece]:
    """Split ``text`` into pieces of at most ``cfg.chunk_size`` code points.

    Coarser separators win: a finer separator is only used inside segments
    that are still too long. Consecutive pieces produced from the same run of
    sibling segments share up to ``cfg.chunk_overlap`` characters, made of
    whole trailing segments of the previous piece.
    """
    if not text:
        raise ValueError("cannot split empty text")
    return _Splitter(cfg).split(text, cfg.separators)
