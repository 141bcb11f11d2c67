"""End-to-end inspection: retrieve -> prompt -> VLM -> structured report."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .embedding import EmbeddingProvider
from .errors import VectorIndexError
from .extraction import InspectionReport, assemble_report
from .knowledge_base import KnowledgeBase
from .prompting import AssembledPrompt, build_baseline_prompt, build_prompt
from .retrieval import Indices, QueryContext, RetrievalResult, retrieve
from .vector_index import FlatIndex
from .vlm_client import VlmClient, VlmExchange

logger = logging.getLogger(__name__)

TEXT_INDEX_NAME = "text.idx"
IMAGE_INDEX_NAME = "image.idx"


def build_indices(kb: KnowledgeBase, embedder: EmbeddingProvider) -> Indices:
    text = FlatIndex(embedder.text_dim)
    for c in kb.chunks:
        text.insert(c.id, embedder.embed_text(c.text))
    image = FlatIndex(embedder.image_dim)
    for image_id in kb.images:
        image.insert(image_id, embedder.embed_image(kb.image_bytes[image_id]))
    return Indices(text, image)


def save_indices(indices: Indices, directory: str | Path) -> tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = d / TEXT_INDEX_NAME, d / IMAGE_INDEX_NAME
    indices.text.persist(paths[0])
    indices.image.persist(paths[1])
    return paths


def load_indices(directory: str | Path, text_dim: int, image_dim: int) -> Indices:
    d = Path(directory)
    for name in (TEXT_INDEX_NAME, IMAGE_INDEX_NAME):
        if not (d / name).exists():
            raise VectorIndexError(f"index file missing: {d / name}")
    return Indices(
        FlatIndex.load(d / TEXT_INDEX_NAME, text_dim),
        FlatIndex.load(d / IMAGE_INDEX_NAME, image_dim),
    )


@dataclass
class Inspection:
    report: InspectionReport
    prompt: AssembledPrompt
    exchange: VlmExchange
    retrieval: RetrievalResult | None


class Inspector:
    """Runs single-image inspections against shared, read-only state.

    With ``rag_enabled=False`` the knowledge base and indices are never
    touched and the prompt carries only the instruction and the questions.
    """

    def __init__(
        self,
        vlm: VlmClient,
        kb: KnowledgeBase | None = None,
        indices: Indices | None = None,
        embedder: EmbeddingProvider | None = None,
        text_query: str | None = None,
        top_k: int = 5,
        top_n: int = 3,
        rag_enabled: bool = True,
    ):
        if rag_enabled and (kb is None or indices is None or embedder is None):
            raise ValueError("RAG mode needs a knowledge base, indices and an embedder")
        self.vlm = vlm
        self.kb = kb
        self.indices = indices
        self.embedder = embedder
        self.text_query = text_query
        self.top_k = top_k
        self.top_n = top_n
        self.rag_enabled = rag_enabled

    def inspect(self, image_bytes: bytes, image_locator: str, image_id: str) -> Inspection:
        retrieval = None
        if self.rag_enabled:
            kwargs = {"top_k": self.top_k, "top_n": self.top_n, "image": image_bytes}
            if self.text_query:
                kwargs["text_query"] = self.text_query
            retrieval = retrieve(self.kb, self.indices, self.embedder, QueryContext(**kwargs))
            prompt = build_prompt(retrieval)
        else:
            prompt = build_baseline_prompt()
        exchange = self.vlm.analyze(prompt.text, image_locator, image_id=image_id)
        report = assemble_report(exchange, retrieval)
        return Inspection(report, prompt, exchange, retrieval)
