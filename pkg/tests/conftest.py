import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import pytest

from bladerag.cli import main
from bladerag.knowledge_base import KnowledgeBase

FIXTURES = Path(__file__).parent / "fixtures"
KB_SOURCE = FIXTURES / "kb_source"
RESPONSES = FIXTURES / "responses"

# Filled by the acceptance suite, printed once at the end of the run.
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def fixture_kb() -> KnowledgeBase:
    return KnowledgeBase.ingest_directory(KB_SOURCE)


@dataclass
class Workspace:
    root: Path
    kb: Path
    index_dir: Path
    replay: Path
    images: Path
    manifest: Path

    def args(self, *extra: str) -> list[str]:
        return [*extra, "--kb", str(self.kb), "--index-dir", str(self.index_dir)]


def build_kb(root: Path) -> tuple[Path, Path]:
    kb, idx = root / "kb", root / "indices"
    assert main(["kb", "ingest", str(KB_SOURCE), "--kb", str(kb)]) == 0
    assert main(["index", "build", "--kb", str(kb), "--index-dir", str(idx)]) == 0
    return kb, idx


def make_workspace(root: Path, cases: list[tuple[str, str, list[str]]]) -> Workspace:
    """``cases`` are (image id, response fixture name, ground-truth labels).

    Each image gets distinct placeholder bytes, a copy of the named replay
    response and a manifest line.
    """
    kb, idx = build_kb(root)
    replay, images = root / "replay", root / "images"
    replay.mkdir()
    images.mkdir()
    recorded = json.loads((RESPONSES / "index.json").read_text())
    index = {}
    lines = []
    for image_id, response, labels in cases:
        (images / f"{image_id}.png").write_bytes(f"placeholder image {image_id}".encode() * 8)
        shutil.copyfile(RESPONSES / f"{response}.response.txt", replay / f"{image_id}.response.txt")
        index[image_id] = {
            "file": f"{image_id}.response.txt",
            "latency_seconds": recorded[response]["latency_seconds"],
            "model": "qwen-vl-max",
        }
        lines.append(json.dumps({"image": f"images/{image_id}.png", "labels": labels}))
    (replay / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    manifest = root / "ground_truth.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return Workspace(root, kb, idx, replay, images, manifest)


# The five recorded responses with their own ground truth: all correct.
FIXTURE_CASES = [
    ("healthy_01", "healthy_01", []),
    ("burn_12", "burn_12", ["Lightning Strike/Burning", "Fracture"]),
    ("crack_17", "crack_17", ["Crack"]),
    ("ice_06", "ice_06", ["Ice", "Snow"]),
    ("mixed_07", "mixed_07", ["Surface Peeling", "Corrosion", "Rust", "Erosion", "Crack"]),
]


@pytest.fixture
def workspace(tmp_path) -> Workspace:
    return make_workspace(tmp_path, FIXTURE_CASES)
