"""Hybrid text/image similarity search followed by keyword-aware reranking.

Text hits are rescored with ``keyword_hits * 1 / (0.1 + len/1000)`` and cut
to ``top_n``. Image hits keep their embedding-distance order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

from .embedding import EmbeddingProvider
from .errors import ConfigError, RetrievalError
from .knowledge_base import KnowledgeBase
from .vector_index import FlatIndex, SearchHit

DEFAULT_QUERY = (
    "comprehensive wind turbine blade damage assessment guidelines including technical "
    "documentation. The image to be analyzed may be taken at cloudy, night or dusk with bad vision."
)
DEFAULT_TOP_K = 5
DEFAULT_TOP_N = 3

# NLTK's English stopword list.
STOPWORDS = frozenset(
    """
    i me my myself we our ours ourselves you you're you've you'll you'd your yours yourself
    yourselves he him his himself she she's her hers herself it it's its itself they them their
    theirs themselves what which who whom this that that'll these those am is are was were be been
    being have has had having do does did doing a an the and but if or because as until while of
    at by for with about against between into through during before after above below to from up
    down in out on off over under again further then once here there when where why how all any
    both each few more most other some such no nor not only own same so than too very s t can will
    just don don't should should've now d ll m o re ve y ain aren aren't couldn couldn't didn
    didn't doesn doesn't hadn hadn't hasn hasn't haven haven't isn isn't ma mightn mightn't mustn
    mustn't needn needn't shan shan't shouldn shouldn't wasn wasn't weren weren't won won't wouldn
    wouldn't
    """.split()
)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class QueryContext:
    text_query: str = DEFAULT_QUERY
    image: bytes | None = None
    top_k: int = DEFAULT_TOP_K
    top_n: int = DEFAULT_TOP_N

    def __post_init__(self) -> None:
        if not self.text_query:
            raise ConfigError("text query must be non-empty")
        if self.top_k < 1 or self.top_n < 1:
            raise ConfigError("top_k and top_n must be positive")
        if self.top_n > self.top_k:
            raise ConfigError(f"top_n ({self.top_n}) cannot exceed top_k ({self.top_k})")


@dataclass(frozen=True)
class RerankCandidate:
    id: str
    content: str
    rank: int
    distance: float = 0.0
    keyword_hits: int = 0
    score: float = 0.0

    @property
    def length(self) -> int:
        return len(self.content)


@dataclass(frozen=True)
class TextRef:
    chunk_id: str
    content: str
    score: float


@dataclass(frozen=True)
class ImageRef:
    image_id: str
    description: str
    distance: float
    damage_labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class RetrievalResult:
    text_docs: tuple[TextRef, ...]
    image_refs: tuple[ImageRef, ...]
    query: str
    keywords: tuple[str, ...] = ()

    def context_used(self) -> dict[str, list[str]]:
        return {
            "text_docs": [t.chunk_id for t in self.text_docs],
            "image_docs": [i.image_id for i in self.image_refs],
        }


@dataclass
class Indices:
    text: FlatIndex
    image: FlatIndex


@dataclass(frozen=True)
class RawHits:
    text: list[SearchHit] = field(default_factory=list)
    image: list[SearchHit] = field(default_factory=list)


def extract_keywords(text_query: str) -> list[str]:
    """Lowercased alphanumeric tokens minus stopwords, first occurrence kept."""
    if not text_query:
        raise ValueError("query must be non-empty")
    seen: dict[str, None] = {}
    for token in _TOKEN_RE.findall(text_query.lower()):
        if token not in STOPWORDS:
            seen.setdefault(token, None)
    return list(seen)


def keyword_score(content: str, keywords: Sequence[str]) -> int:
    lowered = content.lower()
    return sum(1 for k in dict.fromkeys(kw.lower() for kw in keywords) if k in lowered)


def length_factor(length: int) -> float:
    if length < 0:
        raise ValueError("length must be non-negative")
    return 1.0 / (0.1 + length / 1000)


def rerank(candidates: Sequence[RerankCandidate], keywords: Sequence[str], top_n: int) -> list[RerankCandidate]:
    """Score candidates and keep the best ``top_n``.

    Ties (including the all-zero case) fall back to retrieval rank, then id.
    """
    scored = []
    for c in candidates:
        hits = keyword_score(c.content, keywords)
        scored.append(
            RerankCandidate(c.id, c.content, c.rank, c.distance, hits, hits * length_factor(c.length))
        )
    scored.sort(key=lambda c: (-c.score, c.rank, c.id))
    return scored[:top_n]


def hybrid_search(
    kb: KnowledgeBase, indices: Indices, embedder: EmbeddingProvider, query: QueryContext
) -> RawHits:
    if len(indices.text) == 0:
        raise RetrievalError("text index is empty")
    text_hits = indices.text.search(embedder.embed_text(query.text_query), query.top_k)
    image_hits: list[SearchHit] = []
    if query.image is not None and len(indices.image):
        image_hits = indices.image.search(embedder.embed_image(query.image), query.top_k)
    return RawHits(text_hits, image_hits)


def retrieve(
    kb: KnowledgeBase, indices: Indices, embedder: EmbeddingProvider, query: QueryContext
) -> RetrievalResult:
    raw = hybrid_search(kb, indices, embedder, query)
    chunks = kb.chunk_map()
    keywords = extract_keywords(query.text_query)
    candidates = []
    for rank, hit in enumerate(raw.text):
        try:
            content = chunks[hit.id].text
        except KeyError:
            raise RetrievalError(f"text index refers to unknown chunk {hit.id!r}") from None
        candidates.append(RerankCandidate(hit.id, content, rank, hit.distance))
    text_refs = tuple(TextRef(c.id, c.content, c.score) for c in rerank(candidates, keywords, query.top_n))

    image_refs = []
    for hit in raw.image[: query.top_n]:
        entry = kb.images.get(hit.id)
        if entry is None:
            raise RetrievalError(f"image index refers to unknown image {hit.id!r}")
        image_refs.append(ImageRef(entry.id, entry.description, hit.distance, entry.damage_labels))
    return RetrievalResult(text_refs, tuple(image_refs), query.text_query, tuple(keywords))
