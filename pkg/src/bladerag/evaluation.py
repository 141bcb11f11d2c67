"""Batch scoring of inspection reports against expert ground truth."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import EvaluationError
from .extraction import InspectionReport
from .stats import clopper_pearson
from .taxonomy import GROUP_ORDER, MechanismGroup, canonical_type, group_of, sort_types

LATENCY_BIN_SECONDS = 5.0


@dataclass(frozen=True)
class GroundTruthRecord:
    image: str
    labels: tuple[str, ...] = ()
    group: MechanismGroup = MechanismGroup.HEALTHY
    image_id: str = ""

    def __post_init__(self) -> None:
        if not self.image:
            raise EvaluationError("ground-truth record needs an image")
        try:
            labels = tuple(sort_types(canonical_type(t) for t in self.labels))
        except ValueError as exc:
            raise EvaluationError(f"{self.image}: {exc}") from exc
        object.__setattr__(self, "labels", labels)
        expected = group_of(labels)
        if MechanismGroup(self.group) != expected:
            raise EvaluationError(
                f"{self.image}: group {MechanismGroup(self.group).value!r} inconsistent with labels "
                f"{list(labels)} (expected {expected.value!r})"
            )
        object.__setattr__(self, "group", expected)
        if not self.image_id:
            object.__setattr__(self, "image_id", Path(self.image).name.split(".")[0])

    @property
    def damaged(self) -> bool:
        return self.group is not MechanismGroup.HEALTHY

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruthRecord":
        try:
            image = data["image"]
        except (KeyError, TypeError):
            raise EvaluationError(f"ground-truth record missing 'image': {data!r}") from None
        labels = tuple(data.get("labels") or ())
        group = data.get("group")
        try:
            group = MechanismGroup(group) if group is not None else group_of(labels)
        except ValueError as exc:
            raise EvaluationError(f"{image}: {exc}") from exc
        return cls(image, labels, group, data.get("id", ""))

    def to_dict(self) -> dict:
        return {"image": self.image, "labels": list(self.labels), "group": self.group.value}


def load_manifest(path: str | Path) -> list[GroundTruthRecord]:
    """Read a JSON-lines ground-truth manifest. Blank lines are skipped."""
    records: list[GroundTruthRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except ValueError as exc:
                raise EvaluationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            record = GroundTruthRecord.from_dict(data)
            if record.image_id in seen:
                raise EvaluationError(f"{path}:{lineno}: duplicate image id {record.image_id!r}")
            seen.add(record.image_id)
            records.append(record)
    if not records:
        raise EvaluationError(f"{path}: manifest is empty")
    return records


def predicted_group(report: InspectionReport) -> MechanismGroup:
    if not report.damage_detected:
        return MechanismGroup.HEALTHY
    return group_of(report.damage_types)


@dataclass(frozen=True)
class BinaryCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_tuple(self) -> tuple[int, int, int, int]:
        return self.tp, self.fp, self.tn, self.fn


def binary_counts(predictions: Mapping[str, bool], truths: Mapping[str, bool]) -> BinaryCounts:
    """Damaged-vs-healthy counts over aligned id sets (True = damaged)."""
    if set(predictions) != set(truths):
        missing = sorted(set(truths) - set(predictions))
        extra = sorted(set(predictions) - set(truths))
        raise EvaluationError(f"prediction/truth id mismatch: missing={missing} unexpected={extra}")
    if not truths:
        raise EvaluationError("cannot score an empty sample set")
    tp = fp = tn = fn = 0
    for key, truth in truths.items():
        pred = predictions[key]
        if pred and truth:
            tp += 1
        elif pred:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
    return BinaryCounts(tp, fp, tn, fn)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None

    def as_dict(self) -> dict[str, float | None]:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def metrics(counts: BinaryCounts) -> Metrics:
    """Undefined ratios (zero denominator) are reported as ``None``."""
    if counts.n <= 0:
        raise EvaluationError("metrics need at least one sample")
    accuracy = (counts.tp + counts.tn) / counts.n
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else None
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else None
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(accuracy, precision, recall, f1)


def confusion_matrix(
    predicted: Mapping[str, MechanismGroup], truth: Mapping[str, MechanismGroup]
) -> list[list[int]]:
    """4x4 counts, rows = truth, columns = prediction, in ``GROUP_ORDER``."""
    if set(predicted) != set(truth):
        raise EvaluationError("prediction/truth id mismatch in confusion matrix")
    pos = {g: i for i, g in enumerate(GROUP_ORDER)}
    matrix = [[0] * len(GROUP_ORDER) for _ in GROUP_ORDER]
    for key, t in truth.items():
        matrix[pos[MechanismGroup(t)]][pos[MechanismGroup(predicted[key])]] += 1
    return matrix


def collapse_matrix(matrix: Sequence[Sequence[int]]) -> BinaryCounts:
    """Healthy (index 0) vs any damage group."""
    tn = matrix[0][0]
    fp = sum(matrix[0][1:])
    fn = sum(row[0] for row in matrix[1:])
    tp = sum(sum(row[1:]) for row in matrix[1:])
    return BinaryCounts(tp, fp, tn, fn)


def _paper_convention_x(value: float, n: int) -> int:
    return int(math.floor(value * n + 0.5))


def metric_intervals(counts: BinaryCounts, m: Metrics, level: float = 0.95) -> dict:
    """Two interval schemes per metric.

    ``natural`` uses the metric's own numerator and denominator; F1 has none.
    ``paper_convention`` uses (round(metric * N), N) with N the sample count,
    and is flagged approximate for F1, which is not a binomial proportion.
    """
    n = counts.n
    natural = {
        "accuracy": (counts.tp + counts.tn, n),
        "precision": (counts.tp, counts.tp + counts.fp),
        "recall": (counts.tp, counts.tp + counts.fn),
    }
    out: dict[str, dict] = {}
    for name, value in m.as_dict().items():
        entry: dict = {"natural": None, "paper_convention": None}
        if name in natural and natural[name][1] > 0:
            x, trials = natural[name]
            lo, hi = clopper_pearson(x, trials, level)
            entry["natural"] = {"x": x, "n": trials, "lower": lo, "upper": hi}
        if value is not None:
            x = _paper_convention_x(value, n)
            lo, hi = clopper_pearson(x, n, level)
            entry["paper_convention"] = {"x": x, "n": n, "lower": lo, "upper": hi, "approximate": name == "f1"}
        out[name] = entry
    return out


def latency_stats(latencies: Iterable[float], bin_seconds: float = LATENCY_BIN_SECONDS) -> dict:
    values = [float(v) for v in latencies]
    if not values:
        return {"count": 0, "mean": None, "median": None, "min": None, "max": None, "histogram": []}
    top = int(max(values) // bin_seconds)
    bins = [0] * (top + 1)
    for v in values:
        bins[int(v // bin_seconds)] += 1
    return {
        "count": len(values),
        "mean": statistics.fmean(values),
        "median": statistics.median(values),
        "min": min(values),
        "max": max(values),
        "histogram": [
            {"lower": i * bin_seconds, "upper": (i + 1) * bin_seconds, "count": c} for i, c in enumerate(bins)
        ],
    }


def severity_histogram(reports: Iterable[InspectionReport]) -> dict[str, int]:
    hist = {str(i): 0 for i in range(6)}
    for r in reports:
        hist[str(r.severity)] += 1
    return hist


@dataclass
class EvaluationSummary:
    attempted: int
    completed: int
    confusion: list[list[int]]
    counts: BinaryCounts
    metrics: Metrics
    intervals: dict
    severity: dict[str, int]
    latency: dict
    failures: dict[str, str] = field(default_factory=dict)
    level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "attempted": self.attempted,
            "completed": self.completed,
            "failures": dict(sorted(self.failures.items())),
            "groups": [g.value for g in GROUP_ORDER],
            "confusion_matrix": self.confusion,
            "binary_counts": dict(zip(("tp", "fp", "tn", "fn"), self.counts.as_tuple())),
            "metrics": self.metrics.as_dict(),
            "confidence_level": self.level,
            "intervals": self.intervals,
            "severity_histogram": self.severity,
            "latency_seconds": self.latency,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def render_table(self) -> str:
        lines = [f"completed {self.completed}/{self.attempted}", "", "confusion matrix (rows=truth, cols=prediction)"]
        names = [g.value for g in GROUP_ORDER]
        width = max(len(n) for n in names) + 2
        lines.append(" " * width + "".join(n.rjust(width) for n in names))
        for name, row in zip(names, self.confusion):
            lines.append(name.ljust(width) + "".join(str(c).rjust(width) for c in row))
        tp, fp, tn, fn = self.counts.as_tuple()
        lines += ["", f"TP={tp} FP={fp} TN={tn} FN={fn}", ""]
        lines.append(f"{'metric':<10}{'value':>8}  {'natural CI':<20}{'paper-convention CI':<20}")
        for name, value in self.metrics.as_dict().items():
            iv = self.intervals[name]
            lines.append(
                f"{name:<10}{_fmt(value):>8}  {_fmt_ci(iv['natural']):<20}{_fmt_ci(iv['paper_convention']):<20}"
            )
        lines += ["", "severity " + " ".join(f"{k}:{v}" for k, v in self.severity.items())]
        lat = self.latency
        if lat["count"]:
            lines.append(f"latency mean={lat['mean']:.2f}s min={lat['min']:.2f}s max={lat['max']:.2f}s")
        return "\n".join(lines) + "\n"


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def _fmt_ci(ci: dict | None) -> str:
    if ci is None:
        return "n/a"
    mark = "~" if ci.get("approximate") else ""
    return f"{mark}[{ci['lower']:.3f}, {ci['upper']:.3f}]"


def summarize(
    reports: Mapping[str, InspectionReport],
    truths: Sequence[GroundTruthRecord],
    failures: Mapping[str, str] | None = None,
    level: float = 0.95,
) -> EvaluationSummary:
    """Score the completed reports. ``failures`` lists attempted ids that
    produced no report; they count toward ``attempted`` only."""
    failures = dict(failures or {})
    by_id = {t.image_id: t for t in truths}
    unknown = sorted(set(reports) - set(by_id))
    if unknown:
        raise EvaluationError(f"reports for images not in the manifest: {unknown}")
    if not reports:
        raise EvaluationError("no completed reports to summarize")
    completed_truth = {k: by_id[k] for k in by_id if k in reports}
    pred_groups = {k: predicted_group(reports[k]) for k in completed_truth}
    true_groups = {k: t.group for k, t in completed_truth.items()}
    matrix = confusion_matrix(pred_groups, true_groups)
    counts = binary_counts(
        {k: g is not MechanismGroup.HEALTHY for k, g in pred_groups.items()},
        {k: g is not MechanismGroup.HEALTHY for k, g in true_groups.items()},
    )
    m = metrics(counts)
    ordered = [reports[k] for k in completed_truth]
    return EvaluationSummary(
        attempted=len(completed_truth) + len(failures),
        completed=len(completed_truth),
        confusion=matrix,
        counts=counts,
        metrics=m,
        intervals=metric_intervals(counts, m, level),
        severity=severity_histogram(ordered),
        latency=latency_stats(r.latency_seconds for r in ordered),
        failures=failures,
        level=level,
    )
