"""Bias quantification: per-class TPRs by group, gaps, RMS/max summaries.

Group attributes are binary and evaluation-only; they are never joined
into the feature matrix. A TPR cell with empty support (no group member
carries that true label) is undefined and excluded from the RMS and max
aggregates rather than imputed as zero, which would understate bias;
undefined cells stay visible as blanks in the serialized report.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

MISSING = -1  # group value for records whose attribute is unknown


@dataclass
class GroupAttribute:
    """One named binary attribute with per-record values.

    values: 1 for the positive group, 0 for its complement, -1 missing.
    The gap sign convention is positive group minus complement.
    """

    name: str
    positive_label: str
    negative_label: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        if not np.all(np.isin(self.values, (-1, 0, 1))):
            raise ValueError("group values must be -1, 0 or 1")


@dataclass
class GroupLabels:
    """A set of uniquely named group attributes over the same records."""

    attributes: list[GroupAttribute] = field(default_factory=list)

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValueError("attribute names must be unique")

    def get(self, name: str) -> GroupAttribute:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        raise KeyError(f"no group attribute named {name!r}")

    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def __len__(self) -> int:
        return len(self.attributes)


def tpr(predictions, labels, group_mask, c: int) -> float | None:
    """Fraction of group records with true label c that are predicted c.

    Returns None (undefined) when the group contains no record with true
    label c; undefined cells are excluded from aggregates, never zeroed.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    group_mask = np.asarray(group_mask, dtype=bool)
    support = group_mask & (labels == c)
    n = int(np.count_nonzero(support))
    if n == 0:
        return None
    hits = int(np.count_nonzero(support & (predictions == c)))
    return hits / n


def gap_rms(gaps) -> float:
    """Root mean square of the defined gaps."""
    defined = [g for g in gaps if g is not None]
    if not defined:
        raise ValueError("no defined gaps to aggregate")
    return float(np.sqrt(np.mean(np.square(defined))))


def gap_max(gaps) -> float:
    """Maximum absolute value over the defined gaps."""
    defined = [abs(g) for g in gaps if g is not None]
    if not defined:
        raise ValueError("no defined gaps to aggregate")
    return float(max(defined))


def balanced_tpr(predictions, labels, num_classes: int | None = None,
                 require_all_classes: bool = True) -> float:
    """Unweighted mean of per-class TPRs.

    The natural accuracy measure under class imbalance. With
    require_all_classes (the default) a class absent from labels is an
    error; otherwise absent classes are skipped, which is useful on small
    validation splits.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty label set")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    everyone = np.ones(len(labels), dtype=bool)
    values = []
    for c in range(num_classes):
        t = tpr(predictions, labels, everyone, c)
        if t is None:
            if require_all_classes:
                raise ValueError(f"class {c} has no records")
            continue
        values.append(t)
    if not values:
        raise ValueError("no class has any records")
    return float(np.mean(values))


@dataclass
class AttributeReport:
    """Per-class TPRs and gaps for one binary attribute."""

    name: str
    positive_label: str
    negative_label: str
    tpr_pos: list[float | None]
    tpr_neg: list[float | None]
    gaps: list[float | None]          # positive minus complement; None if either side undefined
    counts_pos: list[int]             # class-c records in the positive group
    counts_neg: list[int]
    gap_rms: float | None
    gap_max: float | None


@dataclass
class BiasReport:
    """Full bias measurement for one prediction set."""

    num_classes: int
    class_names: list[str]
    balanced_tpr: float
    attributes: list[AttributeReport]

    def get(self, name: str) -> AttributeReport:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        raise KeyError(f"no attribute named {name!r} in report")


def bias_report(predictions, labels, group_labels: GroupLabels,
                num_classes: int | None = None,
                class_names: list[str] | None = None) -> BiasReport:
    """Per-(attribute, class) TPRs and gaps plus RMS/max/balanced summaries."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must align")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    if class_names is None:
        class_names = [f"class_{c}" for c in range(num_classes)]
    if len(class_names) != num_classes:
        raise ValueError("need one class name per class")
    for attr in group_labels.attributes:
        if attr.values.shape != labels.shape:
            raise ValueError(f"attribute {attr.name!r} must align with labels")

    attr_reports = []
    any_defined = False
    for attr in group_labels.attributes:
        pos_mask = attr.values == 1
        neg_mask = attr.values == 0
        tpr_pos, tpr_neg, gaps, counts_pos, counts_neg = [], [], [], [], []
        for c in range(num_classes):
            tp = tpr(predictions, labels, pos_mask, c)
            tn = tpr(predictions, labels, neg_mask, c)
            tpr_pos.append(tp)
            tpr_neg.append(tn)
            gaps.append(tp - tn if tp is not None and tn is not None else None)
            counts_pos.append(int(np.count_nonzero(pos_mask & (labels == c))))
            counts_neg.append(int(np.count_nonzero(neg_mask & (labels == c))))
        defined = [g for g in gaps if g is not None]
        any_defined = any_defined or bool(defined)
        attr_reports.append(
            AttributeReport(
                name=attr.name,
                positive_label=attr.positive_label,
                negative_label=attr.negative_label,
                tpr_pos=tpr_pos,
                tpr_neg=tpr_neg,
                gaps=gaps,
                counts_pos=counts_pos,
                counts_neg=counts_neg,
                gap_rms=gap_rms(gaps) if defined else None,
                gap_max=gap_max(gaps) if defined else None,
            )
        )
    if group_labels.attributes and not any_defined:
        raise ValueError("no attribute has any defined gap")
    overall = balanced_tpr(
        predictions, labels, num_classes, require_all_classes=False
    )
    return BiasReport(
        num_classes=num_classes,
        class_names=list(class_names),
        balanced_tpr=overall,
        attributes=attr_reports,
    )


def summary_header(report: BiasReport) -> list[str]:
    """Summary columns: balanced TPR, then per-attribute RMS, then max."""
    names = [a.name for a in report.attributes]
    return (
        ["balanced_tpr"]
        + [f"gap_rms_{n}" for n in names]
        + [f"gap_max_{n}" for n in names]
    )


def summary_values(report: BiasReport) -> list[float | None]:
    return (
        [report.balanced_tpr]
        + [a.gap_rms for a in report.attributes]
        + [a.gap_max for a in report.attributes]
    )


def _cell(value) -> str:
    return "" if value is None else repr(value)


def write_bias_report_csv(report: BiasReport, path) -> None:
    """Serialize the report: one row per attribute-class cell, then a
    summary block with the balanced TPR and per-attribute RMS/max gaps.

    Undefined cells are written as empty fields. The gap sign convention
    (positive group minus complement) is declared in the header row.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "attribute",
                "positive_group",
                "negative_group",
                "class",
                "tpr_positive",
                "tpr_negative",
                "gap_positive_minus_negative",
                "count_positive",
                "count_negative",
            ]
        )
        for attr in report.attributes:
            for c in range(report.num_classes):
                writer.writerow(
                    [
                        attr.name,
                        attr.positive_label,
                        attr.negative_label,
                        report.class_names[c],
                        _cell(attr.tpr_pos[c]),
                        _cell(attr.tpr_neg[c]),
                        _cell(attr.gaps[c]),
                        attr.counts_pos[c],
                        attr.counts_neg[c],
                    ]
                )
        writer.writerow([])
        writer.writerow(summary_header(report))
        writer.writerow([_cell(v) for v in summary_values(report)])
