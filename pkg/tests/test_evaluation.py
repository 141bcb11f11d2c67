import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bladerag.errors import EvaluationError
from bladerag.evaluation import (
    BinaryCounts,
    GroundTruthRecord,
    binary_counts,
    collapse_matrix,
    confusion_matrix,
    latency_stats,
    load_manifest,
    metric_intervals,
    metrics,
    predicted_group,
    summarize,
)
from bladerag.extraction import InspectionReport
from bladerag.taxonomy import GROUP_ORDER, MechanismGroup, group_of


def _report(types=(), severity=None, latency=1.0):
    damaged = bool(types)
    return InspectionReport(
        raw_response="r",
        damage_detected=damaged,
        damage_types=tuple(types),
        severity=(severity if severity is not None else (3 if damaged else 0)),
        latency_seconds=latency,
    )


def test_group_of_examples():
    assert group_of([]) is MechanismGroup.HEALTHY
    assert group_of(["Corrosion", "Rust", "Crack"]) is MechanismGroup.STRUCTURAL
    assert group_of(["Ice"]) is MechanismGroup.ENVIRONMENTAL
    assert group_of(["Ice", "Erosion"]) is MechanismGroup.ENVIRONMENTAL
    assert group_of(["Wear", "Dent"]) is MechanismGroup.SURFACE


def test_binary_counts_examples():
    truth = {f"h{i}": False for i in range(19)} | {f"d{i}": True for i in range(11)}
    assert binary_counts(dict(truth), truth).as_tuple() == (11, 0, 19, 0)
    pred = dict(truth)
    pred["d0"] = False  # one miss
    pred["h0"] = True  # one false alarm
    assert binary_counts(pred, truth).as_tuple() == (10, 1, 18, 1)


def test_binary_counts_rejects_mismatch_and_empty():
    with pytest.raises(EvaluationError):
        binary_counts({"a": True}, {"b": True})
    with pytest.raises(EvaluationError):
        binary_counts({}, {})


def test_metrics_examples():
    m = metrics(BinaryCounts(11, 0, 19, 0))
    assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)
    m = metrics(BinaryCounts(10, 1, 18, 1))
    assert m.accuracy == pytest.approx(28 / 30)
    assert m.precision == pytest.approx(10 / 11) and m.recall == pytest.approx(10 / 11)
    assert m.f1 == pytest.approx(10 / 11)
    m = metrics(BinaryCounts(0, 0, 7, 0))
    assert m.accuracy == 1.0 and m.precision is None and m.recall is None and m.f1 is None


def test_intervals_both_conventions():
    iv = metric_intervals(BinaryCounts(10, 1, 18, 1), metrics(BinaryCounts(10, 1, 18, 1)))
    assert iv["accuracy"]["natural"]["x"] == 28 and iv["accuracy"]["natural"]["n"] == 30
    nat = iv["precision"]["natural"]
    assert (nat["x"], nat["n"]) == (10, 11)
    assert nat["lower"] == pytest.approx(0.5872, abs=1e-4) and nat["upper"] == pytest.approx(0.9977, abs=1e-4)
    paper = iv["precision"]["paper_convention"]
    assert (paper["x"], paper["n"]) == (27, 30)
    assert paper["lower"] == pytest.approx(0.735, abs=1e-3) and paper["upper"] == pytest.approx(0.979, abs=1e-3)
    assert iv["f1"]["natural"] is None and iv["f1"]["paper_convention"]["approximate"] is True


def test_confusion_matrix_layout():
    truth = {"a": MechanismGroup.HEALTHY, "b": MechanismGroup.STRUCTURAL, "c": MechanismGroup.SURFACE}
    pred = {"a": MechanismGroup.HEALTHY, "b": MechanismGroup.ENVIRONMENTAL, "c": MechanismGroup.SURFACE}
    m = confusion_matrix(pred, truth)
    assert m == [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0], [0, 0, 1, 0]]


_group = st.sampled_from(GROUP_ORDER)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(_group, _group), min_size=1, max_size=60))
def test_matrix_sum_and_collapse_agree_with_binary_counts(pairs):
    truth = {str(i): t for i, (t, _) in enumerate(pairs)}
    pred = {str(i): p for i, (_, p) in enumerate(pairs)}
    m = confusion_matrix(pred, truth)
    assert sum(map(sum, m)) == len(pairs)
    direct = binary_counts(
        {k: v is not MechanismGroup.HEALTHY for k, v in pred.items()},
        {k: v is not MechanismGroup.HEALTHY for k, v in truth.items()},
    )
    assert collapse_matrix(m) == direct
    assert direct.n == len(pairs)


def test_predicted_group_rule():
    assert predicted_group(_report()) is MechanismGroup.HEALTHY
    assert predicted_group(_report(["Crack", "Rust"])) is MechanismGroup.STRUCTURAL
    # Damage asserted but nothing from the taxonomy named: scored as Healthy.
    r = InspectionReport(raw_response="r", damage_detected=True, severity=2)
    assert predicted_group(r) is MechanismGroup.HEALTHY


def test_ground_truth_consistency():
    rec = GroundTruthRecord.from_dict({"image": "imgs/x_07.jpg", "labels": ["crack", "Rust"], "group": "Structural"})
    assert rec.labels == ("Crack", "Rust") and rec.image_id == "x_07"
    with pytest.raises(EvaluationError):
        GroundTruthRecord.from_dict({"image": "y.png", "labels": ["Ice"], "group": "Surface"})
    with pytest.raises(EvaluationError):
        GroundTruthRecord.from_dict({"image": "y.png", "labels": ["Bird strike"]})


def test_load_manifest(tmp_path):
    path = tmp_path / "gt.jsonl"
    path.write_text(
        '{"image": "a.png", "labels": [], "group": "Healthy"}\n\n'
        '{"image": "b.png", "labels": ["Ice", "Snow"], "group": "Environmental"}\n'
    )
    recs = load_manifest(path)
    assert [r.image_id for r in recs] == ["a", "b"]
    path.write_text('{"image": "a.png"}\n{"image": "a.png"}\n')
    with pytest.raises(EvaluationError, match="duplicate"):
        load_manifest(path)
    path.write_text("not json\n")
    with pytest.raises(EvaluationError):
        load_manifest(path)


def test_latency_stats():
    s = latency_stats([21.0, 23.0, 4.0])
    assert s["mean"] == pytest.approx(16.0) and s["min"] == 4.0 and s["max"] == 23.0
    assert [b["count"] for b in s["histogram"]] == [1, 0, 0, 0, 2]


def test_summarize_counts_failures_and_serializes():
    truths = [
        GroundTruthRecord("h1.png"),
        GroundTruthRecord("h2.png"),
        GroundTruthRecord("c1.png", ("Crack",), MechanismGroup.STRUCTURAL),
        GroundTruthRecord("i1.png", ("Ice",), MechanismGroup.ENVIRONMENTAL),
    ]
    reports = {"h1": _report(latency=10.0), "c1": _report(["Crack"], 4, 20.0), "i1": _report(latency=30.0)}
    s = summarize(reports, truths, failures={"h2": "VlmRetriableError: timeout"})
    assert (s.attempted, s.completed) == (4, 3)
    assert s.counts.as_tuple() == (1, 0, 1, 1)
    assert s.severity == {"0": 2, "1": 0, "2": 0, "3": 0, "4": 1, "5": 0}
    assert s.latency["mean"] == pytest.approx(20.0)
    d = json.loads(s.to_json())
    assert d["failures"] == {"h2": "VlmRetriableError: timeout"}
    assert d["confusion_matrix"][2][0] == 1  # environmental truth predicted healthy
    table = s.render_table()
    assert "completed 3/4" in table and "Structural" in table


def test_summarize_rejects_unknown_reports():
    with pytest.raises(EvaluationError):
        summarize({"zzz": _report()}, [GroundTruthRecord("a.png")])
