"""Hybrid deployment: a small in-pipeline model backed by a large direct model.

Routing happens on the pipeline's own quantized confidence (that is what a
deployed device would compare), so reports are faithful to what the hardware
would accept; the large model re-classifies everything below the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import LabelError
from .emulator import runner_for
from .model_ir import Model, Prediction, evaluate_direct
from .pipeline import StagedProgram
from .trainers import Dataset


@dataclass(frozen=True)
class HybridConfig:
    threshold: Fraction
    accept_classes: frozenset[int] | None = None  # None accepts every class

    def __post_init__(self):
        if not (0 <= self.threshold <= 1):
            raise LabelError(f"threshold {self.threshold} outside [0, 1]")


@dataclass(frozen=True)
class RouteDecision:
    accepted: bool
    class_id: int | None  # set when accepted


def _accepts(class_id: int, confidence: Fraction, cfg: HybridConfig) -> bool:
    return confidence >= cfg.threshold and (
        cfg.accept_classes is None or class_id in cfg.accept_classes
    )


def route(p_small: Prediction, cfg: HybridConfig) -> RouteDecision:
    """Accept iff confidence clears the threshold and the class is accept-listed."""
    if _accepts(p_small.class_id, p_small.confidence, cfg):
        return RouteDecision(accepted=True, class_id=p_small.class_id)
    return RouteDecision(accepted=False, class_id=None)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    accuracy: Fraction
    precision: tuple[Fraction, ...]  # per class
    recall: tuple[Fraction, ...]
    f1: tuple[Fraction, ...]
    macro_f1: Fraction

    @property
    def error_rate(self) -> Fraction:
        return 1 - self.accuracy

    def positive_f1(self) -> Fraction:
        """Class-1 F1, the single-score convention for binary use cases."""
        return self.f1[1] if len(self.f1) > 1 else self.f1[0]

    def to_dict(self) -> dict:
        return {
            "accuracy": float(self.accuracy),
            "error_rate": float(self.error_rate),
            "precision": [float(p) for p in self.precision],
            "recall": [float(r) for r in self.recall],
            "f1": [float(f) for f in self.f1],
            "macro_f1": float(self.macro_f1),
        }


def confusion_matrix(pairs: Sequence[tuple[int, int]], n_classes: int) -> tuple[tuple[int, ...], ...]:
    """Rows = true label, columns = predicted."""
    m = [[0] * n_classes for _ in range(n_classes)]
    for label, pred in pairs:
        if not (0 <= label < n_classes):
            raise LabelError(f"label {label} outside 0..{n_classes - 1}")
        m[label][pred] += 1
    return tuple(tuple(row) for row in m)


def metrics_from_confusion(matrix: Sequence[Sequence[int]]) -> Metrics:
    n = len(matrix)
    total = sum(sum(row) for row in matrix)
    correct = sum(matrix[i][i] for i in range(n))
    accuracy = Fraction(correct, total) if total else Fraction(1)
    precision = []
    recall = []
    f1 = []
    for y in range(n):
        pred_y = sum(matrix[i][y] for i in range(n))
        true_y = sum(matrix[y])
        p = Fraction(matrix[y][y], pred_y) if pred_y else Fraction(0)
        r = Fraction(matrix[y][y], true_y) if true_y else Fraction(0)
        f = 2 * p * r / (p + r) if p + r else Fraction(0)
        precision.append(p)
        recall.append(r)
        f1.append(f)
    macro = sum(f1, Fraction(0)) / n if n else Fraction(0)
    return Metrics(
        accuracy=accuracy,
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
        macro_f1=macro,
    )


def add_matrices(a, b):
    return tuple(tuple(x + y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


# --------------------------------------------------------------------------
# Hybrid evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HybridReport:
    threshold: Fraction
    offload_fraction: Fraction
    switch_only: Metrics  # small model alone, whole dataset
    hybrid: Metrics
    switch_subset: Metrics | None  # accepted inputs only (None when none accepted)
    forwarded_subset: Metrics | None  # large model on forwarded inputs
    confusion_switch: tuple[tuple[int, ...], ...]
    confusion_forwarded: tuple[tuple[int, ...], ...]
    confusion_combined: tuple[tuple[int, ...], ...]

    def to_dict(self) -> dict:
        return {
            "threshold": float(self.threshold),
            "offload_fraction": float(self.offload_fraction),
            "switch_only": self.switch_only.to_dict(),
            "hybrid": self.hybrid.to_dict(),
            "switch_subset": self.switch_subset.to_dict() if self.switch_subset else None,
            "forwarded_subset": (
                self.forwarded_subset.to_dict() if self.forwarded_subset else None
            ),
            "confusion_switch": [list(r) for r in self.confusion_switch],
            "confusion_forwarded": [list(r) for r in self.confusion_forwarded],
            "confusion_combined": [list(r) for r in self.confusion_combined],
        }


@dataclass(frozen=True)
class _Row:
    label: int
    small_class: int
    small_conf: Fraction
    large_class: int


def _evaluate_rows(small: StagedProgram, large: Model, data: Dataset) -> list[_Row]:
    runner = runner_for(small)
    rows = []
    for values, label in data.rows:
        small_pred = runner.run(values)
        large_cls = evaluate_direct(large, values).class_id
        rows.append(
            _Row(
                label=label,
                small_class=small_pred.class_id,
                small_conf=small_pred.confidence,
                large_class=large_cls,
            )
        )
    return rows


def _report_for(rows: Sequence[_Row], cfg: HybridConfig, n_classes: int) -> HybridReport:
    switch_pairs = []
    forwarded_pairs = []
    for row in rows:
        if _accepts(row.small_class, row.small_conf, cfg):
            switch_pairs.append((row.label, row.small_class))
        else:
            forwarded_pairs.append((row.label, row.large_class))
    cm_switch = confusion_matrix(switch_pairs, n_classes)
    cm_forwarded = confusion_matrix(forwarded_pairs, n_classes)
    cm_combined = add_matrices(cm_switch, cm_forwarded)
    switch_only = metrics_from_confusion(
        confusion_matrix([(r.label, r.small_class) for r in rows], n_classes)
    )
    return HybridReport(
        threshold=cfg.threshold,
        offload_fraction=Fraction(len(switch_pairs), len(rows)) if rows else Fraction(0),
        switch_only=switch_only,
        hybrid=metrics_from_confusion(cm_combined),
        switch_subset=metrics_from_confusion(cm_switch) if switch_pairs else None,
        forwarded_subset=metrics_from_confusion(cm_forwarded) if forwarded_pairs else None,
        confusion_switch=cm_switch,
        confusion_forwarded=cm_forwarded,
        confusion_combined=cm_combined,
    )


def evaluate_hybrid(
    small: StagedProgram, large: Model, data: Dataset, cfg: HybridConfig
) -> HybridReport:
    """Route every row through the small program; forward the rest to the large model."""
    if not data.rows:
        raise LabelError("empty dataset")
    return _report_for(_evaluate_rows(small, large, data), cfg, data.n_classes)


def confidence_calibration(
    small: StagedProgram, small_model: Model, data: Dataset
) -> list[dict]:
    """Pipeline (quantized) vs direct (full-precision) confidence, per input.

    Routing always compares the pipeline's own confidence; this log is for
    offline calibration analysis of how far quantization moves it.
    """
    runner = runner_for(small)
    rows = []
    for values, label in data.rows:
        pipe = runner.run(values)
        direct = evaluate_direct(small_model, values)
        rows.append(
            {
                "label": label,
                "pipeline_class": pipe.class_id,
                "pipeline_confidence": float(pipe.confidence),
                "direct_class": direct.class_id,
                "direct_confidence": float(direct.confidence),
            }
        )
    return rows


def sweep_thresholds(
    small: StagedProgram,
    large: Model,
    data: Dataset,
    thresholds: Sequence[Fraction],
    accept_classes: frozenset[int] | None = None,
) -> tuple[list[HybridReport], list[dict]]:
    """Reports per threshold plus plot-ready curve rows.

    Curve columns: theta, offload, error_switch (on the accepted subset),
    error_hybrid, error_large_on_forwarded.
    """
    if list(thresholds) != sorted(thresholds):
        raise LabelError("thresholds must be sorted ascending")
    if not data.rows:
        raise LabelError("empty dataset")
    rows = _evaluate_rows(small, large, data)
    reports = []
    curve = []
    for theta in thresholds:
        report = _report_for(rows, HybridConfig(theta, accept_classes), data.n_classes)
        reports.append(report)
        curve.append(
            {
                "theta": float(theta),
                "offload": float(report.offload_fraction),
                "error_switch": (
                    float(report.switch_subset.error_rate) if report.switch_subset else ""
                ),
                "error_hybrid": float(report.hybrid.error_rate),
                "error_large_on_forwarded": (
                    float(report.forwarded_subset.error_rate)
                    if report.forwarded_subset
                    else ""
                ),
            }
        )
    return reports, curve
