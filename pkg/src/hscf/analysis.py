"""Evaluation metrics and connectivity-difference analysis.

Staging metrics treat the later stage as the positive class. Reported
percentages are truncated (not rounded) at the requested number of
decimals, matching the granularity used when quoting them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import STAGES, Cohort, Subject, Task
from .errors import ValidationError
from .model import Model, PreparedSubject, prepare_subject

STAGE_PAIRS = (("NC", "EMCI"), ("EMCI", "LMCI"))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fn": self.fn, "tn": self.tn, "fp": self.fp}


@dataclass(frozen=True)
class Metrics:
    """Fractions in [0, 1]; a metric is None when its denominator is zero."""

    acc: float | None
    sen: float | None
    spe: float | None
    f1: float | None

    def as_dict(self) -> dict:
        return {"acc": self.acc, "sen": self.sen, "spe": self.spe, "f1": self.f1}


def confusion_metrics(counts: ConfusionCounts) -> Metrics:
    """Accuracy, sensitivity, specificity, and F1 from confusion counts."""
    total = counts.total
    pos = counts.tp + counts.fn
    neg = counts.tn + counts.fp
    f1_den = 2 * counts.tp + counts.fp + counts.fn
    return Metrics(
        acc=(counts.tp + counts.tn) / total if total else None,
        sen=counts.tp / pos if pos else None,
        spe=counts.tn / neg if neg else None,
        f1=2 * counts.tp / f1_den if f1_den else None,
    )


def percent_string(fraction: float, decimals: int = 2) -> str:
    """Truncate a fraction to a percentage with the given decimals.

    Truncation (not rounding) is intentional; e.g. 138/152 prints as
    90.78, not 90.79. A 1e-9 guard absorbs binary representation error
    for fractions that are exact at the requested granularity.
    """
    scaled = math.floor(fraction * 100 * 10**decimals + 1e-9)
    return f"{scaled / 10**decimals:.{decimals}f}"


@dataclass(frozen=True)
class SubjectPrediction:
    subject_id: str
    label: str
    predicted: str
    probabilities: tuple[float, float]


@dataclass(frozen=True)
class EvalResult:
    counts: ConfusionCounts
    metrics: Metrics
    predictions: tuple[SubjectPrediction, ...]


def _predict(model: Model, prep: PreparedSubject, task: Task) -> SubjectPrediction:
    probs = model.forward(prep, train_mode=False).probs.value.ravel()
    # strict inequality: ties go to the earlier stage
    predicted = task.later if probs[1] > probs[0] else task.earlier
    return SubjectPrediction(
        subject_id=prep.subject_id,
        label=prep.label,
        predicted=predicted,
        probabilities=(float(probs[0]), float(probs[1])),
    )


def evaluate_task(
    model: Model,
    cohort: Cohort,
    task: Task,
    threads: int = 1,
    prepared: list[PreparedSubject] | None = None,
) -> EvalResult:
    """Deterministic evaluation-mode pass over the task's subjects."""
    if prepared is None:
        subjects = cohort.with_labels(task.classes)
        if not subjects:
            raise ValidationError(f"no subjects for task {task.value}")
        prepared = [prepare_subject(s) for s in subjects]
    else:
        prepared = [p for p in prepared if p.label in task.classes]
        if not prepared:
            raise ValidationError(f"no subjects for task {task.value}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            predictions = list(pool.map(lambda p: _predict(model, p, task), prepared))
    else:
        predictions = [_predict(model, p, task) for p in prepared]
    tp = fn = tn = fp = 0
    for pred in predictions:
        actual_pos = pred.label == task.later
        predicted_pos = pred.predicted == task.later
        if actual_pos and predicted_pos:
            tp += 1
        elif actual_pos:
            fn += 1
        elif predicted_pos:
            fp += 1
        else:
            tn += 1
    counts = ConfusionCounts(tp=tp, fn=fn, tn=tn, fp=fp)
    return EvalResult(counts=counts, metrics=confusion_metrics(counts), predictions=tuple(predictions))


def generated_matrix(model: Model, subject: Subject) -> np.ndarray:
    """Evaluation-mode generated connectivity for one subject."""
    return model.forward(prepare_subject(subject), train_mode=False).fused.value


def group_mean_sfc(
    model: Model, cohort: Cohort, stage: str, threads: int = 1
) -> np.ndarray:
    """Mean generated connectivity over a stage's subjects."""
    subjects = cohort.with_labels([stage])
    if not subjects:
        raise ValidationError(f"cohort has no subjects labelled '{stage}'")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            mats = list(pool.map(lambda s: generated_matrix(model, s), subjects))
    else:
        mats = [generated_matrix(model, s) for s in subjects]
    return np.mean(mats, axis=0)


def empirical_mean_sfc(cohort: Cohort, stage: str) -> np.ndarray:
    """Input-level baseline: group mean of the two modalities' average."""
    subjects = cohort.with_labels([stage])
    if not subjects:
        raise ValidationError(f"cohort has no subjects labelled '{stage}'")
    return np.mean([(s.sc.weights + s.fc.weights) / 2.0 for s in subjects], axis=0)


def stage_difference(later_mean: np.ndarray, earlier_mean: np.ndarray) -> np.ndarray:
    """Per-edge change from the earlier to the later stage."""
    if later_mean.shape != earlier_mean.shape:
        raise ValidationError(
            f"stage means disagree in shape: {later_mean.shape} vs {earlier_mean.shape}"
        )
    return later_mean - earlier_mean


@dataclass(frozen=True)
class ConnectionDelta:
    roi_a: int
    roi_b: int
    delta: float


def _upper_deltas(diff: np.ndarray) -> list[ConnectionDelta]:
    n = diff.shape[0]
    return [
        ConnectionDelta(a, b, float(diff[a, b])) for a in range(n) for b in range(a + 1, n)
    ]


def nearest_rank_threshold(values: np.ndarray, q: float) -> float:
    """Value at 1-indexed rank ceil(q * M) of the ascending sorted values."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValidationError("quantile of an empty value set")
    if not 0.0 < q < 1.0:
        raise ValidationError(f"quantile must be in (0, 1), got {q}")
    rank = math.ceil(q * values.size)
    rank = min(max(rank, 1), values.size)
    return float(np.sort(values)[rank - 1])


@dataclass(frozen=True)
class QuantileSelection:
    threshold: float
    selected: tuple[ConnectionDelta, ...]


def threshold_quantile(diff: np.ndarray, q: float, mode: str = "abs") -> QuantileSelection:
    """Keep upper-triangle deltas whose magnitude strictly exceeds the
    nearest-rank quantile threshold.

    mode 'abs' pools |delta| over all edges (one threshold); mode
    'per-direction' computes one threshold per sign from that sign's
    magnitudes and is reported as their max in `threshold`.
    """
    deltas = _upper_deltas(diff)
    magnitudes = np.array([abs(d.delta) for d in deltas])
    if mode == "abs":
        threshold = nearest_rank_threshold(magnitudes, q)
        kept = tuple(d for d in deltas if abs(d.delta) > threshold)
        return QuantileSelection(threshold=threshold, selected=kept)
    if mode == "per-direction":
        pos = np.array([d.delta for d in deltas if d.delta > 0])
        neg = np.array([-d.delta for d in deltas if d.delta < 0])
        kept: list[ConnectionDelta] = []
        thresholds = []
        if pos.size:
            t_pos = nearest_rank_threshold(pos, q)
            thresholds.append(t_pos)
            kept += [d for d in deltas if d.delta > t_pos]
        if neg.size:
            t_neg = nearest_rank_threshold(neg, q)
            thresholds.append(t_neg)
            kept += [d for d in deltas if -d.delta > t_neg]
        threshold = max(thresholds) if thresholds else 0.0
        kept.sort(key=lambda d: (d.roi_a, d.roi_b))
        return QuantileSelection(threshold=threshold, selected=tuple(kept))
    raise ValidationError(f"unknown quantile mode '{mode}'")


def top_k_connections(diff: np.ndarray, k: int, direction: str) -> list[ConnectionDelta]:
    """The k strongest increased (delta > 0) or decreased (delta < 0)
    upper-triangle connections; ties break on (roi_a, roi_b)."""
    if direction not in ("increased", "decreased"):
        raise ValidationError(f"direction must be 'increased' or 'decreased', got '{direction}'")
    if k < 0:
        raise ValidationError(f"k must be non-negative, got {k}")
    deltas = _upper_deltas(diff)
    if k > len(deltas):
        raise ValidationError(f"k={k} exceeds the {len(deltas)} upper-triangle edges")
    if direction == "increased":
        candidates = [d for d in deltas if d.delta > 0]
        candidates.sort(key=lambda d: (-d.delta, d.roi_a, d.roi_b))
    else:
        candidates = [d for d in deltas if d.delta < 0]
        candidates.sort(key=lambda d: (d.delta, d.roi_a, d.roi_b))
    return candidates[:k]


REPORT_SCHEMA = {
    "type": "object",
    "required": ["task", "source", "quantile", "top_k", "metrics", "stage_pairs"],
    "properties": {
        "task": {"type": "string"},
        "source": {"enum": ["generated", "inputs"]},
        "quantile": {"type": "number"},
        "quantile_mode": {"enum": ["abs", "per-direction"]},
        "top_k": {"type": "integer", "minimum": 0},
        "metrics": {
            "type": "object",
            "required": ["acc", "sen", "spe", "f1", "counts"],
            "properties": {
                "acc": {"type": ["number", "null"]},
                "sen": {"type": ["number", "null"]},
                "spe": {"type": ["number", "null"]},
                "f1": {"type": ["number", "null"]},
                "counts": {
                    "type": "object",
                    "required": ["tp", "fn", "tn", "fp"],
                    "additionalProperties": {"type": "integer"},
                },
            },
        },
        "stage_pairs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to", "threshold", "increased", "decreased"],
                "properties": {
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "threshold": {"type": "number"},
                    "selected": {"type": "integer"},
                    "increased": {"$ref": "#/$defs/connections"},
                    "decreased": {"$ref": "#/$defs/connections"},
                },
            },
        },
    },
    "$defs": {
        "connections": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["a", "b", "delta"],
                "properties": {
                    "a": {"type": "string"},
                    "b": {"type": "string"},
                    "delta": {"type": "number"},
                },
            },
        }
    },
}


def _connection_entry(delta: ConnectionDelta, atlas_names) -> dict:
    return {
        "a": atlas_names[delta.roi_a],
        "b": atlas_names[delta.roi_b],
        "delta": delta.delta,
    }


def build_analysis(
    model: Model,
    cohort: Cohort,
    task: Task,
    quantile: float = 0.75,
    top_k: int = 5,
    source: str = "generated",
    quantile_mode: str = "abs",
    threads: int = 1,
) -> tuple[dict, dict[tuple[str, str], np.ndarray]]:
    """Full connectivity-difference report over both adjacent stage pairs.

    Returns the report dict and the raw difference matrices keyed by
    stage pair (the latter feed the figure rendering).
    """
    if source not in ("generated", "inputs"):
        raise ValidationError(f"source must be 'generated' or 'inputs', got '{source}'")
    for stage in STAGES:
        if not cohort.with_labels([stage]):
            raise ValidationError(f"analysis needs all three stages; '{stage}' is missing")
    if source == "generated":
        means = {stage: group_mean_sfc(model, cohort, stage, threads=threads) for stage in STAGES}
    else:
        means = {stage: empirical_mean_sfc(cohort, stage) for stage in STAGES}

    evaluation = evaluate_task(model, cohort, task, threads=threads)
    names = cohort.atlas.names
    pairs = []
    diffs: dict[tuple[str, str], np.ndarray] = {}
    for earlier, later in STAGE_PAIRS:
        diff = stage_difference(means[later], means[earlier])
        diffs[(earlier, later)] = diff
        selection = threshold_quantile(diff, quantile, mode=quantile_mode)
        pairs.append(
            {
                "from": earlier,
                "to": later,
                "threshold": selection.threshold,
                "selected": len(selection.selected),
                "increased": [
                    _connection_entry(d, names)
                    for d in top_k_connections(diff, top_k, "increased")
                ],
                "decreased": [
                    _connection_entry(d, names)
                    for d in top_k_connections(diff, top_k, "decreased")
                ],
            }
        )
    report = {
        "task": task.value,
        "source": source,
        "quantile": quantile,
        "quantile_mode": quantile_mode,
        "top_k": top_k,
        "metrics": {
            **evaluation.metrics.as_dict(),
            "counts": evaluation.counts.as_dict(),
        },
        "stage_pairs": pairs,
    }
    return report, diffs


def export_report(report: dict, path: str | Path) -> Path:
    import json

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    return path


def export_connections_csv(report: dict, path: str | Path) -> Path:
    """Delimited companion to the JSON report: one row per listed connection."""
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage_from", "stage_to", "direction", "roi_a", "roi_b", "delta"])
        for pair in report["stage_pairs"]:
            for direction in ("increased", "decreased"):
                for entry in pair[direction]:
                    writer.writerow(
                        [pair["from"], pair["to"], direction, entry["a"], entry["b"],
                         repr(entry["delta"])]
                    )
    return path
