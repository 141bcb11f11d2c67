"""Dual-modal knowledge base: text documents, their chunks, and reference images.

On-disk layout::

    docs/<doc_id>.txt        first line is the title, the rest is the body
    images/<image_id><ext>   raw image bytes
    images.meta.json         list of image records
    kb.manifest.json         schema version, chunking config, document order/kinds
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable
from urllib.parse import urlparse

import httpx

from .chunking import ChunkingConfig, split_text
from .errors import DuplicateIdError, KnowledgeBaseError, SchemaVersionError
from .taxonomy import canonical_type, sort_types

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_NAME = "kb.manifest.json"
IMAGES_META_NAME = "images.meta.json"

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.\-]*$")


class DocumentKind(str, Enum):
    DAMAGE_DESCRIPTIONS = "damage-descriptions"
    TURBINE_FEATURES = "turbine-features"
    MAINTENANCE_LOGS = "maintenance-logs"
    IMAGE_METADATA_TEXT = "image-metadata-text"


@dataclass(frozen=True)
class DocumentSource:
    id: str
    title: str
    body: str
    kind: DocumentKind = DocumentKind.DAMAGE_DESCRIPTIONS

    def __post_init__(self) -> None:
        _check_id(self.id)
        object.__setattr__(self, "kind", DocumentKind(self.kind))
        if not self.body:
            raise KnowledgeBaseError(f"document {self.id!r} has an empty body")
        if "\n" in self.title:
            raise KnowledgeBaseError(f"document {self.id!r}: title must be a single line")


@dataclass(frozen=True)
class Chunk:
    id: str
    doc_id: str
    index: int
    text: str
    overlap: int = 0


@dataclass(frozen=True)
class ImageEntry:
    id: str
    description: str
    image_locator: str
    damage_labels: tuple[str, ...] = ()
    capture_conditions: str | None = None

    def __post_init__(self) -> None:
        _check_id(self.id)
        if not self.description.strip():
            raise KnowledgeBaseError(f"image {self.id!r} has an empty description")
        labels = tuple(sort_types(canonical_type(lbl) for lbl in self.damage_labels))
        object.__setattr__(self, "damage_labels", labels)


def _check_id(item_id: str) -> None:
    # ids double as file stems
    if not _ID_RE.match(item_id):
        raise KnowledgeBaseError(f"invalid id {item_id!r}: use letters, digits, '_', '-', '.'")


def chunk_id(doc_id: str, index: int) -> str:
    return f"{doc_id}_chunk_{index}"


def split_document(doc: DocumentSource, cfg: ChunkingConfig) -> list[Chunk]:
    pieces = split_text(doc.body, cfg)
    return [
        Chunk(chunk_id(doc.id, i), doc.id, i, p.text, p.overlap) for i, p in enumerate(pieces)
    ]


def read_locator(locator: str, timeout: float = 30.0) -> bytes:
    """Fetch image bytes from a local path, ``file://`` URL or http(s) URL."""
    parsed = urlparse(locator)
    try:
        if parsed.scheme in ("http", "https"):
            resp = httpx.get(locator, timeout=timeout, follow_redirects=True)
            resp.raise_for_status()
            data = resp.content
        else:
            path = Path(parsed.path if parsed.scheme == "file" else locator)
            data = path.read_bytes()
    except (OSError, httpx.HTTPError) as exc:
        raise KnowledgeBaseError(f"unreadable image locator {locator!r}: {exc}") from exc
    if not data:
        raise KnowledgeBaseError(f"image locator {locator!r} resolved to zero bytes")
    return data


@dataclass
class KnowledgeBase:
    config: ChunkingConfig = field(default_factory=ChunkingConfig)
    documents: dict[str, DocumentSource] = field(default_factory=dict)
    doc_configs: dict[str, ChunkingConfig] = field(default_factory=dict)
    chunks: list[Chunk] = field(default_factory=list)
    images: dict[str, ImageEntry] = field(default_factory=dict)
    image_bytes: dict[str, bytes] = field(default_factory=dict, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    def add_document(self, doc: DocumentSource, cfg: ChunkingConfig | None = None) -> list[str]:
        with self._lock:
            if doc.id in self.documents:
                raise DuplicateIdError("document", doc.id)
            cfg = cfg or self.config
            new_chunks = split_document(doc, cfg)
            self.documents[doc.id] = doc
            if cfg != self.config:
                self.doc_configs[doc.id] = cfg
            self.chunks.extend(new_chunks)
            return [c.id for c in new_chunks]

    def add_reference_image(self, entry: ImageEntry, data: bytes | None = None) -> str:
        """Store a reference image and ingest its description as a text document.

        ``data`` overrides reading ``entry.image_locator``.
        """
        with self._lock:
            if entry.id in self.images:
                raise DuplicateIdError("image", entry.id)
            if entry.id in self.documents:
                raise DuplicateIdError("document", entry.id)
            if data is None:
                data = read_locator(entry.image_locator)
            elif not data:
                raise KnowledgeBaseError(f"image {entry.id!r}: empty image bytes")
            # the knowledge base owns a copy of the bytes from here on
            entry = replace(entry, image_locator=f"images/{entry.id}{_suffix(entry.image_locator)}")
            self.add_document(
                DocumentSource(
                    id=entry.id,
                    title=f"Reference image {entry.id}",
                    body=entry.description,
                    kind=DocumentKind.IMAGE_METADATA_TEXT,
                )
            )
            self.images[entry.id] = entry
            self.image_bytes[entry.id] = data
            return entry.id

    def chunk(self, cid: str) -> Chunk:
        for c in self.chunks:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def chunk_map(self) -> dict[str, Chunk]:
        return {c.id: c for c in self.chunks}

    def chunks_of(self, doc_id: str) -> list[Chunk]:
        return [c for c in self.chunks if c.doc_id == doc_id]

    # persistence -----------------------------------------------------------

    def persist(self, path: str | Path) -> None:
        root = Path(path)
        with self._lock:
            if root.exists() and any(root.iterdir()) and not (root / MANIFEST_NAME).exists():
                raise KnowledgeBaseError(f"{root} is not empty and is not a knowledge base")
            docs_dir, img_dir = root / "docs", root / "images"
            try:
                for d in (docs_dir, img_dir):
                    d.mkdir(parents=True, exist_ok=True)
                    for stale in d.iterdir():
                        stale.unlink()
                for doc in self.documents.values():
                    _write_text(docs_dir / f"{doc.id}.txt", f"{doc.title}\n{doc.body}")
                records = []
                for entry in self.images.values():
                    (root / entry.image_locator).write_bytes(self.image_bytes[entry.id])
                    rec: dict = {
                        "id": entry.id,
                        "description": entry.description,
                        "image_path": entry.image_locator,
                    }
                    if entry.damage_labels:
                        rec["damage_labels"] = list(entry.damage_labels)
                    if entry.capture_conditions is not None:
                        rec["capture_conditions"] = entry.capture_conditions
                    records.append(rec)
                _write_json(root / IMAGES_META_NAME, records)
                manifest = {
                    "schema_version": SCHEMA_VERSION,
                    "chunking": self.config.to_dict(),
                    "documents": [self._manifest_entry(d) for d in self.documents.values()],
                }
                _write_json(root / MANIFEST_NAME, manifest)
            except OSError as exc:
                raise KnowledgeBaseError(f"failed to persist knowledge base to {root}: {exc}") from exc
        logger.info(
            "persisted %d documents, %d images to %s", len(self.documents), len(self.images), root
        )

    def _manifest_entry(self, doc: DocumentSource) -> dict:
        entry: dict = {"id": doc.id, "kind": doc.kind.value}
        if doc.id in self.doc_configs:
            entry["chunking"] = self.doc_configs[doc.id].to_dict()
        return entry

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeBase":
        root = Path(path)
        manifest_path = root / MANIFEST_NAME
        if not manifest_path.exists():
            raise KnowledgeBaseError(f"no {MANIFEST_NAME} in {root}")
        return _load_dir(root, _read_json(manifest_path), strict=True)

    @classmethod
    def ingest_directory(cls, path: str | Path, cfg: ChunkingConfig | None = None) -> "KnowledgeBase":
        """Build a knowledge base from a source directory; the manifest is optional."""
        root = Path(path)
        manifest_path = root / MANIFEST_NAME
        manifest = _read_json(manifest_path) if manifest_path.exists() else {}
        if cfg is not None:
            manifest = {**manifest, "chunking": cfg.to_dict()}
        return _load_dir(root, manifest, strict=False)


def _load_dir(root: Path, manifest: dict, strict: bool) -> KnowledgeBase:
    if strict or "schema_version" in manifest:
        version = manifest.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"{root}: schema version {version!r} is not supported (expected {SCHEMA_VERSION})"
            )
    try:
        cfg = ChunkingConfig.from_dict(manifest.get("chunking", {}))
    except (TypeError, ValueError) as exc:
        raise KnowledgeBaseError(f"{root}: bad chunking config: {exc}") from exc
    kb = KnowledgeBase(config=cfg)

    images_meta = root / IMAGES_META_NAME
    raw_images = _read_json(images_meta) if images_meta.exists() else []
    if not isinstance(raw_images, list):
        raise KnowledgeBaseError(f"{images_meta}: expected a JSON array of image records")
    entries: dict[str, tuple[ImageEntry, bytes]] = {}
    for rec in raw_images:
        try:
            locator = rec["image_path"]
            entry = ImageEntry(
                id=rec["id"],
                description=rec["description"],
                image_locator=locator,
                damage_labels=tuple(rec.get("damage_labels", ())),
                capture_conditions=rec.get("capture_conditions"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise KnowledgeBaseError(f"{images_meta}: malformed image record {rec!r}: {exc}") from exc
        if entry.id in entries:
            raise DuplicateIdError("image", entry.id)
        local = root / locator
        data = read_locator(str(local) if local.exists() else locator)
        entries[entry.id] = (entry, data)

    listed = manifest.get("documents")
    docs_dir = root / "docs"
    if listed is None:
        files = sorted(docs_dir.glob("*.txt")) if docs_dir.exists() else []
        listed = [{"id": f.stem} for f in files]
    for rec in listed:
        doc_id = rec["id"]
        kind = DocumentKind(rec.get("kind", DocumentKind.DAMAGE_DESCRIPTIONS.value))
        if doc_id in entries and kind == DocumentKind.IMAGE_METADATA_TEXT:
            entry, data = entries.pop(doc_id)
            kb.add_reference_image(entry, data)
            continue
        if doc_id in entries:
            raise DuplicateIdError("document", doc_id)
        file = docs_dir / f"{doc_id}.txt"
        try:
            with open(file, encoding="utf-8", newline="") as fh:
                raw = fh.read()
        except OSError as exc:
            raise KnowledgeBaseError(f"cannot read document {file}: {exc}") from exc
        title, _, body = raw.partition("\n")
        doc_cfg = ChunkingConfig.from_dict(rec["chunking"]) if "chunking" in rec else None
        kb.add_document(DocumentSource(doc_id, title, body, kind), doc_cfg)
    if strict and entries:
        raise KnowledgeBaseError(f"images without manifest entries: {sorted(entries)}")
    for entry, data in entries.values():
        kb.add_reference_image(entry, data)
    return kb


def _suffix(locator: str) -> str:
    suffix = Path(urlparse(locator).path).suffix.lower()
    return suffix if re.fullmatch(r"\.[a-z0-9]{1,5}", suffix) else ".bin"


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, obj: object) -> None:
    _write_text(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def _read_json(path: Path) -> object:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise KnowledgeBaseError(f"cannot read {path}: {exc}") from exc


def iter_text_units(kb: KnowledgeBase) -> Iterable[tuple[str, str]]:
    """(chunk id, chunk text) in insertion order; the unit of text indexing."""
    for c in kb.chunks:
        yield c.id, c.text
