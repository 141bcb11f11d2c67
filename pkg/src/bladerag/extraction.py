"""Turn a free-text VLM answer into a structured inspection report.

Negation is scoped to the clause: sentences are split on ``. ? !`` and
newlines, then on ``;`` and contrastive conjunctions ("but", "however",
...). A term is dropped if a negation cue precedes it in its clause or a
trailing cue ("is not", "ruled out") follows it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable

from .retrieval import RetrievalResult
from .taxonomy import DAMAGE_TYPES, sort_types
from .vlm_client import VlmExchange

# Surface forms per canonical type. All patterns are case-insensitive and
# anchored on word boundaries so "evident" never reads as "Dent".
TERM_PATTERNS: dict[str, tuple[str, ...]] = {
    "Missing Teeth of Vortex generators": (
        r"missing teeth(?: of (?:the )?vortex generators?)?",
        r"vortex generators? (?:with )?(?:missing|broken) teeth",
    ),
    "Lightning Receptors": (r"lightning receptors?",),
    "Crack": (r"crack(?:s|ed|ing)?",),
    "Corrosion": (r"corrosion", r"corroded", r"corroding"),
    "Erosion": (r"erosion", r"eroded", r"eroding"),
    "Rust": (r"rust(?:y|ed|ing)?",),
    "Delamination": (r"delamination", r"delaminat(?:ed|ing)"),
    "Fracture": (r"fractur(?:e|es|ed|ing)",),
    "Dent": (r"dent(?:s|ed)?",),
    "Ice": (r"ice", r"icing", r"iced", r"icy"),
    "Snow": (r"snow(?:y|fall)?",),
    "Surface Peeling": (r"surface peeling", r"peeling"),
    "Wear": (r"wear(?:s|ing)?", r"worn"),
    "Lightning Strike/Burning": (
        r"lightning[ -]strikes?(?:\s*/\s*burning)?",
        r"lightning damage",
        r"burning",
        r"burned",
        r"scorch(?:ed|ing|es)?",
    ),
}

# Out-of-taxonomy findings kept as free text rather than forced into a type.
EXTRA_TERM_PATTERNS: dict[str, tuple[str, ...]] = {
    "Burn Mark": (r"burn marks?", r"burnt", r"blackened", r"charr(?:ing|ed)"),
    "Discoloration": (r"discolou?r(?:ed|ation)",),
    "Pitting": (r"pitting", r"pitted"),
    "Oil Leakage": (r"oil lea(?:k|ks|kage|king)",),
}

NEGATION_CUES: tuple[str, ...] = (
    "no",
    "not",
    "without",
    "absence of",
    "free of",
    "rather than",
    "ruled out",
    "none",
    "nor",
    "neither",
    "never",
    "nothing",
    "lack of",
)
_PRE_CUE_RE = re.compile(
    r"(?:\b(?:" + "|".join(re.escape(c).replace(r"\ ", r"\s+") for c in NEGATION_CUES) + r")\b|n't\b)",
    re.IGNORECASE,
)
_POST_CUE_RE = re.compile(
    r"^[^,]*?\b(?:(?:is|are|was|were)\s+(?:not|absent)|(?:was|were|is|are|been)\s+ruled\s+out|not\s+(?:present|observed|visible|detected))\b",
    re.IGNORECASE,
)

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+|\n+")
_CLAUSE_SPLIT = re.compile(
    r";|,?\s+\b(?:but|however|although|though|yet|whereas)\b|^\s*(?:but|however)\b",
    re.IGNORECASE,
)

# Affirmative damage statements; each match is then checked for negation.
DAMAGE_PHRASES: tuple[str, ...] = (
    r"damage (?:is|was|has been|can be) (?:clearly )?(?:detected|observed|present|visible|identified|noted|seen|evident)",
    r"there (?:is|are|appears to be|seems to be) (?:\w+ ){0,3}damage",
    r"signs? of (?:\w+ ){0,2}damage",
    r"visible damage",
    r"damage detected",
    r"(?:blade|surface|component) (?:is|appears|shows?) (?:\w+ ){0,2}damaged",
    r"shows? (?:\w+ ){0,3}damage",
)
_DAMAGE_RE = re.compile(r"\b(?:" + "|".join(DAMAGE_PHRASES) + r")\b", re.IGNORECASE)
_EXPLICIT_NO_DAMAGE = re.compile(r"\bno (?:\w+ ){0,2}damage\b|\bhealthy\b|\bgood condition\b", re.IGNORECASE)

_SEVERITY_PATTERNS = (
    r"severity(?:\s+(?:rating|level|score))?\s*(?:[:=]|is|of)\s*(?:level\s+)?(?P<n>[1-5])",
    r"rated\s+(?:as\s+)?(?:an?\s+)?(?:level\s+)?(?P<n>[1-5])",
    r"(?P<n>[1-5])\s*(?:out\s+of\s+5|/\s*5)",
)
_SEVERITY_RES = tuple(
    re.compile(p + r"(?!\d|\s*-\s*\d|\.\d)", re.IGNORECASE) for p in _SEVERITY_PATTERNS
)

_NUMBERED_RE = re.compile(r"^\s*(?:\*\*)?(?P<n>[1-5])[.)]\s*", re.MULTILINE)
_QUESTION_STEMS = (
    "how many blades are visible",
    "is there visible damage on any of the turbine blades",
    "if yes, what specific type of damage",
    "provide a detailed description of the damage",
    "rate the severity of the damage on a scale",
)
_HEADER_RE = re.compile(r"^[A-Z][A-Za-z /]{2,40}:\s*")


def _compile_terms(table: dict[str, tuple[str, ...]]) -> dict[str, re.Pattern]:
    return {
        name: re.compile(r"\b(?:" + "|".join(p.replace(" ", r"\s+") for p in pats) + r")\b", re.IGNORECASE)
        for name, pats in table.items()
    }


_TERM_RES = _compile_terms(TERM_PATTERNS)
_EXTRA_RES = _compile_terms(EXTRA_TERM_PATTERNS)


def strip_markup(text: str) -> str:
    return text.replace("**", "").replace("__", "")


def drop_echoed_questions(text: str) -> str:
    """Remove lines that restate the prompt's questions, and any sentence
    that is itself a question."""
    kept = []
    for line in strip_markup(text).splitlines():
        body = _NUMBERED_RE.sub("", line, count=1).strip().lower()
        if any(body.startswith(stem) for stem in _QUESTION_STEMS):
            continue
        kept.append(line)
    out = "\n".join(kept)
    return "\n".join(
        " ".join(s for s in re.split(r"(?<=[.!?])\s+", ln) if not s.rstrip().endswith("?"))
        for ln in out.splitlines()
    )


def clauses(text: str) -> list[str]:
    out = []
    for sentence in _SENTENCE_SPLIT.split(text):
        for clause in _CLAUSE_SPLIT.split(sentence):
            if clause and clause.strip():
                out.append(clause)
    return out


def is_negated(clause: str, start: int, end: int) -> bool:
    """True if the span [start, end) of ``clause`` sits under a negation cue."""
    if _PRE_CUE_RE.search(clause[:start]):
        return True
    return bool(_POST_CUE_RE.search(clause[end:]))


def _affirmed(pattern: re.Pattern, text: str) -> tuple[bool, bool]:
    """(asserted somewhere, mentioned at all).

    Damage phrases can swallow a cue ("there is no damage"), so the cue
    search covers the match itself, not just the text before it.
    """
    mentioned = False
    for clause in clauses(text):
        for m in pattern.finditer(clause):
            mentioned = True
            if not is_negated(clause, m.end(), m.end()):
                return True, True
    return False, mentioned


def detect_damage_flag(text: str) -> bool:
    return _detect_damage(text)[0]


def _detect_damage(text: str) -> tuple[bool, bool]:
    """(flag, confident)."""
    cleaned = drop_echoed_questions(text)
    asserted, mentioned = _affirmed(_DAMAGE_RE, cleaned)
    confident = mentioned or bool(_EXPLICIT_NO_DAMAGE.search(cleaned))
    return asserted, confident


def _find_terms(text: str, table: dict[str, re.Pattern]) -> set[str]:
    found = set()
    for clause in clauses(drop_echoed_questions(text)):
        for name, pattern in table.items():
            if name in found:
                continue
            if any(not is_negated(clause, m.start(), m.end()) for m in pattern.finditer(clause)):
                found.add(name)
    return found


def extract_damage_types(text: str, taxonomy: Iterable[str] = DAMAGE_TYPES) -> set[str]:
    wanted = set(taxonomy)
    return _find_terms(text, {k: v for k, v in _TERM_RES.items() if k in wanted})


def extract_extra_terms(text: str) -> set[str]:
    return _find_terms(text, _EXTRA_RES)


def _answer_regions(text: str) -> dict[int, str]:
    """Map answer number -> text after its numbered marker, for responses
    that follow the 1..5 layout. Only a strictly increasing run counts."""
    marks = []
    expected = 1
    for m in _NUMBERED_RE.finditer(strip_markup(text)):
        if int(m.group("n")) == expected:
            marks.append((expected, m.start(), m.end()))
            expected += 1
    body = strip_markup(text)
    regions = {}
    for i, (n, _start, end) in enumerate(marks):
        stop = marks[i + 1][1] if i + 1 < len(marks) else len(body)
        regions[n] = body[end:stop]
    return regions


def _first_severity(text: str) -> int | None:
    best: tuple[int, int] | None = None
    for pattern in _SEVERITY_RES:
        m = pattern.search(text)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), int(m.group("n")))
    return best[1] if best else None


def extract_severity(text: str, damage_detected: bool) -> tuple[int, bool]:
    """Return ``(severity, matched)``. ``matched`` is False when damage was
    detected but no severity phrase could be found; severity is then 0."""
    if not damage_detected:
        return 0, True
    regions = _answer_regions(text)
    for candidate in (regions.get(5), strip_markup(text)):
        if candidate:
            found = _first_severity(candidate)
            if found is not None:
                return found, True
    return 0, False


def extract_description(text: str) -> str:
    region = _answer_regions(text).get(4)
    if region is None:
        return text.strip()
    lines = []
    for line in drop_echoed_questions(region).splitlines():
        line = line.strip()
        if line.startswith(("- ", "* ", "• ")):
            line = line[2:].strip()
        if line:
            lines.append(line)
    desc = "\n".join(lines)
    desc = _HEADER_RE.sub("", desc, count=1) if desc else desc
    return desc.strip() or text.strip()


@dataclass(frozen=True)
class InspectionReport:
    raw_response: str
    damage_detected: bool
    damage_types: tuple[str, ...] = ()
    extra_terms: tuple[str, ...] = ()
    severity: int = 0
    description: str = ""
    context_used: dict[str, list[str]] = field(default_factory=lambda: {"text_docs": [], "image_docs": []})
    latency_seconds: float = 0.0
    parse_warnings: tuple[str, ...] = ()
    image_id: str | None = None

    def __post_init__(self) -> None:
        if self.severity not in range(6):
            raise ValueError(f"severity must be in 0..5, got {self.severity}")
        if not self.damage_detected and (self.severity or self.damage_types):
            raise ValueError("a no-damage report cannot carry severity or damage types")

    def to_dict(self) -> dict:
        return {
            "raw_response": self.raw_response,
            "damage_detected": self.damage_detected,
            "damage_types": list(self.damage_types),
            "extra_terms": list(self.extra_terms),
            "severity": self.severity,
            "description": self.description,
            "context_used": {
                "text_docs": list(self.context_used.get("text_docs", [])),
                "image_docs": list(self.context_used.get("image_docs", [])),
            },
            "latency_seconds": self.latency_seconds,
            "parse_warnings": list(self.parse_warnings),
        }

    @classmethod
    def from_dict(cls, data: dict, image_id: str | None = None) -> "InspectionReport":
        return cls(
            raw_response=data["raw_response"],
            damage_detected=bool(data["damage_detected"]),
            damage_types=tuple(data.get("damage_types", ())),
            extra_terms=tuple(data.get("extra_terms", ())),
            severity=int(data.get("severity", 0)),
            description=data.get("description", ""),
            context_used={
                "text_docs": list(data.get("context_used", {}).get("text_docs", [])),
                "image_docs": list(data.get("context_used", {}).get("image_docs", [])),
            },
            latency_seconds=float(data.get("latency_seconds", 0.0)),
            parse_warnings=tuple(data.get("parse_warnings", ())),
            image_id=image_id,
        )


def parse_response(text: str) -> InspectionReport:
    """Pure text -> report, without provenance or latency."""
    warnings = []
    flag, confident = _detect_damage(text)
    if not confident:
        warnings.append("no damage statement found; assuming no damage")
    types = extract_damage_types(text)
    extras = extract_extra_terms(text)
    if not flag:
        if types:
            warnings.append("damage terms found without an affirmative damage statement: " + ", ".join(sort_types(types)))
        types, extras = set(), set()
    severity, matched = extract_severity(text, flag)
    if not matched:
        warnings.append("damage detected but no severity rating found")
    return InspectionReport(
        raw_response=text,
        damage_detected=flag,
        damage_types=tuple(sort_types(types)),
        extra_terms=tuple(sorted(extras)),
        severity=severity,
        description=extract_description(text),
        parse_warnings=tuple(warnings),
    )


def assemble_report(exchange: VlmExchange, retrieval: RetrievalResult | None) -> InspectionReport:
    parsed = parse_response(exchange.raw_response)
    context = retrieval.context_used() if retrieval is not None else {"text_docs": [], "image_docs": []}
    return InspectionReport(
        raw_response=parsed.raw_response,
        damage_detected=parsed.damage_detected,
        damage_types=parsed.damage_types,
        extra_terms=parsed.extra_terms,
        severity=parsed.severity,
        description=parsed.description,
        context_used=context,
        latency_seconds=exchange.latency_seconds,
        parse_warnings=parsed.parse_warnings,
        image_id=exchange.image_id,
    )


REPORT_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "raw_response",
        "damage_detected",
        "damage_types",
        "extra_terms",
        "severity",
        "description",
        "context_used",
        "latency_seconds",
        "parse_warnings",
    ],
    "properties": {
        "raw_response": {"type": "string", "minLength": 1},
        "damage_detected": {"type": "boolean"},
        "damage_types": {"type": "array", "items": {"enum": list(DAMAGE_TYPES)}, "uniqueItems": True},
        "extra_terms": {"type": "array", "items": {"type": "string"}, "uniqueItems": True},
        "severity": {"type": "integer", "minimum": 0, "maximum": 5},
        "description": {"type": "string"},
        "context_used": {
            "type": "object",
            "additionalProperties": False,
            "required": ["text_docs", "image_docs"],
            "properties": {
                "text_docs": {"type": "array", "items": {"type": "string"}},
                "image_docs": {"type": "array", "items": {"type": "string"}},
            },
        },
        "latency_seconds": {"type": "number", "minimum": 0},
        "parse_warnings": {"type": "array", "items": {"type": "string"}},
    },
}
