"""Dynamic prompt assembly from retrieved context."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyRetrievalError
from .retrieval import ImageRef, RetrievalResult
from .taxonomy import DAMAGE_TYPES

BASE_INSTRUCTION = (
    "I need to utilize the knowledge base and observe the features of the anomaly on the "
    "wind turbine related components, and identify damage type."
)
TRANSITIONAL_PHRASE = "Using the following reference information to help with the analysis:"

QUESTIONS: tuple[str, ...] = (
    "How many blades are visible in the image?",
    "Is there visible damage on any of the turbine blades in the image?",
    "If yes, what specific type of damage can be identified in this damage lists ("
    + ", ".join(f"'{t}'" for t in DAMAGE_TYPES)
    + ")?",
    "Provide a detailed description of the damage observed, referencing the specific "
    "characteristics described above.",
    "Rate the severity of the damage on a scale of 1-5, where 1 is minor and 5 is severe.",
)
QUESTIONS_LEAD = "Based on these descriptions and references, analyze the image and determine:"
QUESTIONS_BLOCK = QUESTIONS_LEAD + "\n" + "\n".join(f"{i}. {q}" for i, q in enumerate(QUESTIONS, 1))

SINGLE_TYPE_NOTE = (
    "Note: Every labeled similar reference image shows {label}. Carefully check whether the "
    "image contains {label}."
)
CANDIDATES_NOTE = (
    "Note: The similar reference images show several damage types ({labels}). Treat these as "
    "potential candidates and assess which, if any, are present in the image."
)

SECTION_SEPARATOR = "\n\n"


@dataclass(frozen=True)
class AssembledPrompt:
    base_instruction: str = BASE_INSTRUCTION
    transitional_phrase: str | None = None
    text_reference_block: str | None = None
    image_reference_block: str | None = None
    adaptive_note: str | None = None
    questions_block: str = QUESTIONS_BLOCK

    @property
    def sections(self) -> list[str]:
        parts = [
            self.base_instruction,
            self.transitional_phrase,
            self.text_reference_block,
            self.image_reference_block,
            self.adaptive_note,
            self.questions_block,
        ]
        return [p for p in parts if p is not None]

    @property
    def text(self) -> str:
        return SECTION_SEPARATOR.join(self.sections)

    @property
    def has_references(self) -> bool:
        return self.text_reference_block is not None or self.image_reference_block is not None


def adaptive_guidance(image_refs: Sequence[ImageRef]) -> str | None:
    labels: list[str] = []
    for ref in image_refs:
        for label in ref.damage_labels:
            if label not in labels:
                labels.append(label)
    if not labels:
        return None
    if len(labels) == 1:
        return SINGLE_TYPE_NOTE.format(label=labels[0])
    return CANDIDATES_NOTE.format(labels=", ".join(labels))


def render_text_references(retrieval: RetrievalResult) -> str:
    return SECTION_SEPARATOR.join(
        f"[Reference document {i}: {t.chunk_id}]\n{t.content}"
        for i, t in enumerate(retrieval.text_docs, 1)
    )


def render_image_references(image_refs: Sequence[ImageRef]) -> str:
    entries = []
    for k, ref in enumerate(image_refs, 1):
        entry = f"Similar Image #{k}: {ref.description}"
        if ref.damage_labels:
            entry += "\nDamage labels: " + ", ".join(ref.damage_labels)
        entries.append(entry)
    return SECTION_SEPARATOR.join(entries)


def build_prompt(retrieval: RetrievalResult) -> AssembledPrompt:
    if not retrieval.text_docs:
        raise EmptyRetrievalError("retrieval returned no text documents; knowledge base unusable")
    image_block = render_image_references(retrieval.image_refs) if retrieval.image_refs else None
    return AssembledPrompt(
        transitional_phrase=TRANSITIONAL_PHRASE,
        text_reference_block=render_text_references(retrieval),
        image_reference_block=image_block,
        adaptive_note=adaptive_guidance(retrieval.image_refs),
    )


def build_baseline_prompt() -> AssembledPrompt:
    """Instruction plus questions only, used when retrieval is switched off."""
    return AssembledPrompt()
