"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``conftest.ACCEPTANCE_RESULTS`` and shown in the
terminal summary, so they appear even when output capture is on.
"""

import json
import math
import random
import time
from contextlib import contextmanager

import numpy as np
import pytest

from bladerag.chunking import ChunkingConfig, reconstruct, split_text
from bladerag.cli import main
from bladerag.evaluation import BinaryCounts, metrics
from bladerag.extraction import extract_damage_types, parse_response
from bladerag.prompting import TRANSITIONAL_PHRASE
from bladerag.retrieval import RerankCandidate, keyword_score, length_factor, rerank
from bladerag.stats import clopper_pearson
from bladerag.taxonomy import DAMAGE_TYPES
from bladerag.vector_index import FlatIndex

from conftest import ACCEPTANCE_RESULTS, FIXTURE_CASES, RESPONSES, make_workspace
from test_extraction import NEGATED_TEMPLATES, SURFACE_FORMS
from test_retrieval import RERANK_ORDER, RERANK_TABLE, TABLE_KEYWORDS


@contextmanager
def criterion(number: int, title: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        assert elapsed < budget_s, f"runtime {elapsed:.2f}s exceeds {budget_s}s"
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        line = f"CRITERION {number}: FAIL  {title} ({elapsed:.2f}s) -- {exc}"
        ACCEPTANCE_RESULTS.append(line)
        print(line)
        raise
    line = f"CRITERION {number}: PASS  {title} ({elapsed:.2f}s)"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def test_criterion_1_clopper_pearson_reproduction():
    with criterion(1, "Clopper-Pearson intervals (30/30, 28/30, 27/30)", 1.0):
        lo, hi = clopper_pearson(30, 30, 0.95)
        assert abs(lo - 0.8843) <= 0.0005 and hi == 1.0
        lo, hi = clopper_pearson(28, 30, 0.95)
        assert abs(lo - 0.779) <= 0.001 and abs(hi - 0.992) <= 0.001
        lo, hi = clopper_pearson(27, 30, 0.95)
        assert abs(lo - 0.735) <= 0.001 and abs(hi - 0.979) <= 0.001


def test_criterion_2_metric_reproduction():
    with criterion(2, "metrics from binary counts", 1.0):
        m = metrics(BinaryCounts(11, 0, 19, 0))
        assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)
        m = metrics(BinaryCounts(10, 1, 18, 1))
        assert abs(m.accuracy - 0.9333) <= 0.0001
        for v in (m.precision, m.recall, m.f1):
            assert abs(v - 0.9091) <= 0.0001


def _oracle_knn(rows: np.ndarray, q: np.ndarray, k: int) -> list[tuple[int, float]]:
    scored = []
    for i, row in enumerate(rows):
        scored.append((math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(row, q))), i))
    scored.sort()
    return [(i, d) for d, i in scored[:k]]


def test_criterion_3_knn_oracle_equivalence():
    with criterion(3, "flat index equals naive full scan", 30.0):
        rng = np.random.default_rng(3)
        for dim in (3, 384, 512):
            rows = rng.standard_normal((1000, dim)).astype(np.float32)
            index = FlatIndex(dim)
            for i, row in enumerate(rows):
                index.insert(f"v{i}", row)
            queries = rng.standard_normal((200, dim)).astype(np.float32)
            rows64 = rows.astype(np.float64)
            for qi, q in enumerate(queries):
                # full per-row scan in float64; one query in 20 also goes through pure Python
                full = np.sqrt(((rows64 - q.astype(np.float64)) ** 2).sum(axis=1))
                ranked = sorted(range(len(full)), key=lambda i: (full[i], i))
                if qi % 20 == 0:
                    assert [i for i, _ in _oracle_knn(rows, q, 10)] == ranked[:10]
                for k in (1, 5, 10):
                    hits = index.search(q, k)
                    assert [h.id for h in hits] == [f"v{i}" for i in ranked[:k]]
                    for h, i in zip(hits, ranked[:k]):
                        assert h.distance == pytest.approx(full[i], rel=1e-5)


def test_criterion_4_chunker_invariants():
    with criterion(4, "chunker bounds, lossless reconstruction, determinism", 10.0):
        rng = random.Random(4)
        tokens = ["wind", "turbine", "blade", "crack", "é", " ", " ", ". ", ".", "\n", "\n\n", ",", "x" * 30]
        cfg = ChunkingConfig()
        for _ in range(100):
            n = rng.randint(1, 10_000)
            body = "".join(rng.choice(tokens) for _ in range(n))[:n]
            pieces = split_text(body, cfg)
            assert all(len(p.text) <= 1000 for p in pieces)
            assert reconstruct(pieces) == body
            assert split_text(body, cfg) == pieces


def test_criterion_5_rerank_formula():
    with criterion(5, "rerank length factor, fixture order, indicator semantics, monotonicity", 5.0):
        assert length_factor(0) == 10.0
        assert length_factor(900) == 1.0
        words = ["crack", "blade", "erosion", "tip"]
        cands = []
        for rank, (cid, length, hits, _) in enumerate(RERANK_TABLE):
            content = (" ".join(words[:hits]) + " ").ljust(length, "z")
            cands.append(RerankCandidate(cid, content, rank))
        assert [c.id for c in rerank(cands, TABLE_KEYWORDS, 5)] == RERANK_ORDER
        for c, (_, _, _, score) in zip(rerank(cands, TABLE_KEYWORDS, 5), sorted(RERANK_TABLE, key=lambda r: RERANK_ORDER.index(r[0]))):
            assert c.score == pytest.approx(score, abs=1e-9)
        assert keyword_score("crack crack crack", ["crack"]) == 1
        assert keyword_score("Crack near the TIP", ["crack", "tip", "ice"]) == 2

        rng = random.Random(5)
        kw = ["crack", "blade", "erosion", "tip", "ice"]
        for _ in range(1000):
            hits = rng.randint(0, 4)
            length = rng.randint(30, 3000)
            base = " ".join(kw[:hits])
            a = RerankCandidate("a", (base + " ").ljust(length, "z"), 0)
            more = RerankCandidate("b", (" ".join(kw[: hits + 1]) + " ").ljust(length, "z"), 1)
            longer = RerankCandidate("c", (base + " ").ljust(length + rng.randint(1, 500), "z"), 2)
            sa, sb, sc = (rerank([c], kw, 1)[0].score for c in (a, more, longer))
            assert sb >= sa  # more distinct keywords never lowers the score
            assert sc <= sa  # longer content never raises it
            top = rerank([a, more, longer], kw, 3)
            assert [c.score for c in top] == sorted((c.score for c in top), reverse=True)


FIDELITY = {
    "healthy_01": (False, None, 0),
    "burn_12": (True, {"Delamination", "Lightning Strike/Burning"}, 5),
    "crack_17": (True, {"Crack"}, 3),
}


def test_criterion_6_extraction_fixture_fidelity():
    with criterion(6, "extraction on recorded responses and negation suite", 5.0):
        for name, (flag, types, severity) in FIDELITY.items():
            report = parse_response((RESPONSES / f"{name}.response.txt").read_text(encoding="utf-8"))
            assert report.damage_detected is flag, name
            assert report.severity == severity, name
            if name == "healthy_01":
                assert report.damage_types == ()
            elif name == "burn_12":
                assert types <= set(report.damage_types)
            else:
                assert set(report.damage_types) == types
        for term in DAMAGE_TYPES:
            surface = SURFACE_FORMS[term]
            for template in NEGATED_TEMPLATES:
                sentence = template.format(t=surface, T=surface[0].upper() + surface[1:])
                assert term not in extract_damage_types(sentence), sentence


SCALED_5 = [
    ("c7_tn", "healthy_01", []),
    ("c7_fp", "crack_17", []),
    ("c7_tp1", "crack_17", ["Crack"]),
    ("c7_fn", "healthy_01", ["Crack"]),
    ("c7_tp2", "ice_06", ["Ice", "Snow"]),
]


def _thirty_cases():
    damaged = [
        ("burn_12", ["Lightning Strike/Burning", "Fracture"]),
        ("crack_17", ["Crack"]),
        ("ice_06", ["Ice", "Snow"]),
        ("mixed_07", ["Surface Peeling", "Corrosion", "Rust", "Erosion", "Crack"]),
    ]
    cases = [(f"h{i:02d}", "healthy_01", []) for i in range(18)]
    cases.append(("h18_false_alarm", "crack_17", []))
    for i in range(10):
        resp, labels = damaged[i % 4]
        cases.append((f"d{i:02d}", resp, labels))
    cases.append(("d10_missed", "healthy_01", ["Crack"]))
    return cases


def _run_eval(ws, out, *extra):
    code = main(ws.args("eval", str(ws.manifest), "--out-dir", str(out), "--replay", str(ws.replay), *extra))
    assert code == 0
    return (out / "summary.json").read_bytes()


def test_criterion_7_end_to_end_determinism(tmp_path, capsys):
    with criterion(7, "replayed end-to-end inspect and byte-identical eval summaries", 30.0):
        ws = make_workspace(tmp_path / "five", FIXTURE_CASES)
        capsys.readouterr()
        code = main(ws.args("inspect", str(ws.images / "crack_17.png"), "--replay", str(ws.replay)))
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert len(report["context_used"]["text_docs"]) == 3
        assert len(report["context_used"]["image_docs"]) <= 3

        # Five images with one miss and one false alarm.
        ws5 = make_workspace(tmp_path / "scaled5", SCALED_5)
        first = _run_eval(ws5, tmp_path / "run5a")
        second = _run_eval(ws5, tmp_path / "run5b")
        assert first == second
        s5 = json.loads(first)
        assert s5["binary_counts"] == {"tp": 2, "fp": 1, "tn": 1, "fn": 1}
        expected5 = metrics(BinaryCounts(2, 1, 1, 1)).as_dict()
        assert s5["metrics"] == expected5

        # Thirty images, same error pattern: the headline ablation numbers.
        ws30 = make_workspace(tmp_path / "thirty", _thirty_cases())
        first = _run_eval(ws30, tmp_path / "run30a")
        second = _run_eval(ws30, tmp_path / "run30b")
        assert first == second
        s30 = json.loads(first)
        assert s30["binary_counts"] == {"tp": 10, "fp": 1, "tn": 18, "fn": 1}
        assert abs(s30["metrics"]["accuracy"] - 0.9333) <= 0.0001
        for key in ("precision", "recall", "f1"):
            assert abs(s30["metrics"][key] - 0.9091) <= 0.0001
        acc_ci = s30["intervals"]["accuracy"]["natural"]
        assert abs(acc_ci["lower"] - 0.779) <= 0.001 and abs(acc_ci["upper"] - 0.992) <= 0.001
        prec_ci = s30["intervals"]["precision"]["paper_convention"]
        assert abs(prec_ci["lower"] - 0.735) <= 0.001 and abs(prec_ci["upper"] - 0.979) <= 0.001


EXTRACTED_FIELDS = ("damage_detected", "damage_types", "extra_terms", "severity", "description", "parse_warnings")


def test_criterion_8_ablation_contract(tmp_path):
    with criterion(8, "--no-rag drops references and context only", 10.0):
        ws = make_workspace(tmp_path / "ws", FIXTURE_CASES)
        rag_out, plain_out = tmp_path / "rag", tmp_path / "plain"
        _run_eval(ws, rag_out)
        _run_eval(ws, plain_out, "--no-rag")
        for image_id, _, _ in FIXTURE_CASES:
            rag_prompt = (rag_out / "prompts" / f"{image_id}.txt").read_text(encoding="utf-8")
            plain_prompt = (plain_out / "prompts" / f"{image_id}.txt").read_text(encoding="utf-8")
            assert TRANSITIONAL_PHRASE in rag_prompt and "[Reference document" in rag_prompt
            for marker in (TRANSITIONAL_PHRASE, "[Reference document", "Similar Image #", "Note:"):
                assert marker not in plain_prompt
            rag = json.loads((rag_out / "reports" / f"{image_id}.json").read_text())
            plain = json.loads((plain_out / "reports" / f"{image_id}.json").read_text())
            assert plain["context_used"] == {"text_docs": [], "image_docs": []}
            assert rag["context_used"]["text_docs"]
            for field in EXTRACTED_FIELDS:
                assert rag[field] == plain[field], (image_id, field)


def test_criterion_9_ci_coverage():
    with criterion(9, "Monte-Carlo coverage of 95% interval at n=30", 60.0):
        n = 30
        intervals = np.array([clopper_pearson(x, n) for x in range(n + 1)])
        rng = np.random.default_rng(9)
        worst = 1.0
        for p in [i / 10 for i in range(1, 10)]:
            xs = rng.binomial(n, p, size=10_000)
            lo, hi = intervals[xs, 0], intervals[xs, 1]
            coverage = float(np.mean((lo <= p) & (p <= hi)))
            worst = min(worst, coverage)
            assert coverage >= 0.95, f"p={p}: coverage {coverage:.4f}"
        print(f"worst-case coverage {worst:.4f}")
