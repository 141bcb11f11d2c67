"""Command-line entry point: ``bladerag <command> ...``.

Exit codes: 0 ok, 2 configuration, 3 knowledge base / index / retrieval,
4 VLM transport, 5 parse warnings escalated by ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig
from .embedding import make_provider
from .errors import (
    BladeRagError,
    ConfigError,
    DimensionMismatchError,
    EmbeddingError,
    EvaluationError,
    KnowledgeBaseError,
    RetrievalError,
    VectorIndexError,
    VlmError,
)
from .evaluation import GroundTruthRecord, load_manifest, summarize
from .extraction import InspectionReport
from .knowledge_base import KnowledgeBase, read_locator
from .pipeline import Inspection, Inspector, build_indices, load_indices, save_indices
from .vlm_client import HttpTransport, RecordingTransport, ReplayTransport, VlmClient

logger = logging.getLogger("bladerag")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_KB = 3
EXIT_VLM = 4
EXIT_PARSE = 5

REPORTS_DIR = "reports"
PROMPTS_DIR = "prompts"
SUMMARY_JSON = "summary.json"
SUMMARY_TXT = "summary.txt"


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, EvaluationError)):
        return EXIT_CONFIG
    if isinstance(exc, VlmError):
        return EXIT_VLM
    if isinstance(exc, (KnowledgeBaseError, VectorIndexError, RetrievalError, EmbeddingError, DimensionMismatchError)):
        return EXIT_KB
    return 1


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON or TOML pipeline config")
    p.add_argument("--kb", type=Path, dest="kb_path", help="persisted knowledge-base directory")
    p.add_argument("--index-dir", type=Path, help="directory holding text.idx and image.idx")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_inference(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-rag", action="store_true", help="skip retrieval (ablation mode)")
    p.add_argument("--top-k", type=int)
    p.add_argument("--top-n", type=int)
    p.add_argument("--query", help="override the retrieval text query")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--replay", type=Path, dest="replay_dir", help="serve VLM responses from a replay store")
    mode.add_argument("--record", type=Path, dest="record_dir", help="record live VLM responses to a store")
    p.add_argument("--strict", action="store_true", help="exit 5 when any report has parse warnings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bladerag", description="RAG-grounded VLM blade inspection")
    sub = parser.add_subparsers(dest="command", required=True)

    kb = sub.add_parser("kb", help="knowledge-base commands").add_subparsers(dest="kb_command", required=True)
    ingest = kb.add_parser("ingest", help="ingest a source directory and persist the knowledge base")
    ingest.add_argument("source", type=Path)
    _add_common(ingest)

    index = sub.add_parser("index", help="index commands").add_subparsers(dest="index_command", required=True)
    build = index.add_parser("build", help="embed the knowledge base and write both indices")
    _add_common(build)

    inspect = sub.add_parser("inspect", help="inspect one image")
    inspect.add_argument("image", help="image path or URL")
    inspect.add_argument("--id", dest="image_id", help="image id (defaults to the file stem)")
    inspect.add_argument("--out", type=Path, help="also write the report JSON here")
    inspect.add_argument("--dump-prompt", type=Path, help="write the exact prompt text to this file")
    _add_common(inspect)
    _add_inference(inspect)

    ev = sub.add_parser("eval", help="inspect every image in a ground-truth manifest and score")
    ev.add_argument("manifest", type=Path)
    ev.add_argument("--out-dir", type=Path, required=True)
    ev.add_argument("--parallel", type=int, help="concurrent inspections (default 1)")
    ev.add_argument("--dump-prompt", type=Path, help="directory for per-image prompt files")
    _add_common(ev)
    _add_inference(ev)

    rep = sub.add_parser("report", help="rescore saved reports against a manifest")
    rep.add_argument("reports", type=Path, help="directory of per-image report JSON files")
    rep.add_argument("--manifest", type=Path, required=True)
    rep.add_argument("--out-dir", type=Path, help="write summary.json and summary.txt here")
    rep.add_argument("--config", type=Path)
    rep.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {
        key: getattr(args, key)
        for key in ("kb_path", "index_dir", "top_k", "top_n", "query", "parallel")
        if getattr(args, key, None) is not None
    }
    # A command-line VLM mode replaces whatever mode the config file chose.
    if getattr(args, "replay_dir", None) is not None:
        changes.update(replay_dir=args.replay_dir, record_dir=None)
    if getattr(args, "record_dir", None) is not None:
        changes.update(record_dir=args.record_dir, replay_dir=None)
    if getattr(args, "no_rag", False):
        changes["rag_enabled"] = False
    return replace(cfg, **changes)


def make_vlm_client(cfg: PipelineConfig) -> VlmClient:
    if cfg.replay_dir is not None:
        transport = ReplayTransport(cfg.replay_dir)
    elif cfg.record_dir is not None:
        transport = RecordingTransport(HttpTransport(), cfg.record_dir)
    else:
        transport = HttpTransport()
    vlm_cfg = cfg.vlm
    if cfg.parallel > vlm_cfg.max_in_flight:
        vlm_cfg = replace(vlm_cfg, max_in_flight=cfg.parallel)
    return VlmClient(vlm_cfg, transport)


def make_inspector(cfg: PipelineConfig) -> Inspector:
    vlm = make_vlm_client(cfg)
    if not cfg.rag_enabled:
        return Inspector(vlm, rag_enabled=False)
    kb = KnowledgeBase.load(cfg.kb_path)
    embedder = make_provider(cfg.embedding)
    indices = load_indices(cfg.index_dir, embedder.text_dim, embedder.image_dim)
    if len(indices.text) != len(kb.chunks) or len(indices.image) != len(kb.images):
        raise VectorIndexError("indices are stale: entry counts differ from the knowledge base; rebuild them")
    return Inspector(vlm, kb, indices, embedder, cfg.query, cfg.top_k, cfg.top_n, rag_enabled=True)


def _image_id(locator: str) -> str:
    return Path(locator.split("?")[0]).name.split(".")[0]


def _write_json(path: Path, obj: object) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_inspection(inspector: Inspector, locator: str, image_id: str) -> Inspection:
    data = read_locator(locator) if inspector.rag_enabled else b""
    return inspector.inspect(data, locator, image_id)


# commands ------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    kb = KnowledgeBase.ingest_directory(args.source, cfg.chunking)
    kb.persist(cfg.kb_path)
    print(f"documents={len(kb.documents)} chunks={len(kb.chunks)} images={len(kb.images)} -> {cfg.kb_path}")
    return EXIT_OK


def cmd_build_index(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    kb = KnowledgeBase.load(cfg.kb_path)
    embedder = make_provider(cfg.embedding)
    indices = build_indices(kb, embedder)
    text_path, image_path = save_indices(indices, cfg.index_dir)
    print(f"text entries={len(indices.text)} ({indices.text.dim}-d) -> {text_path}")
    print(f"image entries={len(indices.image)} ({indices.image.dim}-d) -> {image_path}")
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    inspector = make_inspector(cfg)
    result = run_inspection(inspector, args.image, args.image_id or _image_id(args.image))
    if args.dump_prompt:
        _write_text(args.dump_prompt, result.prompt.text)
    report = result.report.to_dict()
    print(json.dumps(report, indent=2, ensure_ascii=False))
    if args.out:
        _write_json(args.out, report)
    if args.strict and result.report.parse_warnings:
        logger.error("parse warnings: %s", "; ".join(result.report.parse_warnings))
        return EXIT_PARSE
    return EXIT_OK


@dataclass
class _Outcome:
    record: GroundTruthRecord
    inspection: Inspection | None = None
    error: BladeRagError | None = None


def _locator_for(record: GroundTruthRecord, manifest_dir: Path) -> str:
    if "://" in record.image or Path(record.image).is_absolute():
        return record.image
    return str(manifest_dir / record.image)


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    records = load_manifest(args.manifest)
    inspector = make_inspector(cfg)
    manifest_dir = args.manifest.parent

    def work(record: GroundTruthRecord) -> _Outcome:
        try:
            return _Outcome(record, run_inspection(inspector, _locator_for(record, manifest_dir), record.image_id))
        except (VlmError, KnowledgeBaseError, RetrievalError, EmbeddingError) as exc:
            logger.warning("%s failed: %s", record.image_id, exc)
            return _Outcome(record, error=exc)

    if cfg.parallel == 1:
        outcomes = [work(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallel) as pool:
            outcomes = list(pool.map(work, records))

    out_dir: Path = args.out_dir
    prompt_dir = args.dump_prompt or out_dir / PROMPTS_DIR
    reports: dict[str, InspectionReport] = {}
    failures: dict[str, str] = {}
    for o in outcomes:
        key = o.record.image_id
        if o.inspection is None:
            failures[key] = f"{type(o.error).__name__}: {o.error}"
            continue
        reports[key] = o.inspection.report
        _write_json(out_dir / REPORTS_DIR / f"{key}.json", o.inspection.report.to_dict())
        _write_text(prompt_dir / f"{key}.txt", o.inspection.prompt.text)

    if not reports:
        first = next(o.error for o in outcomes if o.error is not None)
        raise first
    summary = summarize(reports, records, failures)
    _write_text(out_dir / SUMMARY_JSON, summary.to_json())
    table = summary.render_table()
    _write_text(out_dir / SUMMARY_TXT, table)
    print(table, end="")
    if args.strict and any(r.parse_warnings for r in reports.values()):
        return EXIT_PARSE
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    records = load_manifest(args.manifest)
    reports: dict[str, InspectionReport] = {}
    failures: dict[str, str] = {}
    for record in records:
        path = args.reports / f"{record.image_id}.json"
        if not path.exists():
            failures[record.image_id] = "no report file"
            continue
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            reports[record.image_id] = InspectionReport.from_dict(data, record.image_id)
        except (ValueError, KeyError) as exc:
            raise EvaluationError(f"malformed report {path}: {exc}") from exc
    summary = summarize(reports, records, failures)
    table = summary.render_table()
    if args.out_dir:
        _write_text(args.out_dir / SUMMARY_JSON, summary.to_json())
        _write_text(args.out_dir / SUMMARY_TXT, table)
    print(table, end="")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handler = {
        "kb": cmd_ingest,
        "index": cmd_build_index,
        "inspect": cmd_inspect,
        "eval": cmd_eval,
        "report": cmd_report,
    }[args.command]
    try:
        return handler(args)
    except BladeRagError as exc:
        logger.error("%s", exc)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
