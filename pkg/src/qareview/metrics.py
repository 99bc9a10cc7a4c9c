"""Proposal-utility scores and two-rater agreement statistics.

Utility compares the proposed box set P to the reviewer-final evidence
set H: TP = retained proposals, FP = effectively removed proposals,
FN = evidence the reviewer had to add (missed candidates plus newly drawn
boxes). There are no true negatives anywhere in this module: the space of
non-evidence regions is open-ended, so no TN-based metric is defined.

Aggregation across records is micro-averaged: counts are summed first and
ratios computed once, never averaged per record.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Mapping, Tuple


class MetricsError(Exception):
    pass


class MismatchedInstances(MetricsError):
    pass


class EmptyLabelSet(MetricsError):
    pass


@dataclass(frozen=True)
class UtilityCounts:
    """Per-session review outcome counts.

    retained_pred_count: proposed regions kept essentially as proposed.
    effective_removed_count: proposed regions dropped or edited beyond the
        retention threshold.
    added_gt_count: evidence taken from the pre-existing candidate pool that
        the proposal missed.
    new_drawn_count: evidence the reviewer drew from scratch (including the
        replacement half of a heavily edited proposal).
    """

    retained_pred_count: int = 0
    effective_removed_count: int = 0
    added_gt_count: int = 0
    new_drawn_count: int = 0

    def __post_init__(self):
        for name, value in self.to_dict().items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")

    @property
    def tp(self) -> int:
        return self.retained_pred_count

    @property
    def fp(self) -> int:
        return self.effective_removed_count

    @property
    def fn(self) -> int:
        return self.added_gt_count + self.new_drawn_count

    def __add__(self, other: "UtilityCounts") -> "UtilityCounts":
        return UtilityCounts(
            self.retained_pred_count + other.retained_pred_count,
            self.effective_removed_count + other.effective_removed_count,
            self.added_gt_count + other.added_gt_count,
            self.new_drawn_count + other.new_drawn_count,
        )

    def to_dict(self) -> dict:
        return {
            "retained_pred_count": self.retained_pred_count,
            "effective_removed_count": self.effective_removed_count,
            "added_gt_count": self.added_gt_count,
            "new_drawn_count": self.new_drawn_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UtilityCounts":
        return cls(
            retained_pred_count=int(data.get("retained_pred_count", 0)),
            effective_removed_count=int(data.get("effective_removed_count", 0)),
            added_gt_count=int(data.get("added_gt_count", 0)),
            new_drawn_count=int(data.get("new_drawn_count", 0)),
        )


@dataclass(frozen=True)
class UtilityScores:
    precision: float
    recall: float
    f1: float


def compute_utility(counts: UtilityCounts) -> UtilityScores:
    """Precision, recall, and F1 from one set of counts.

    Zero denominators yield 0 by convention (an empty session scores zero,
    not an error).
    """
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return UtilityScores(precision, recall, f1)


def sum_counts(per_record: Iterable[UtilityCounts]) -> UtilityCounts:
    total = UtilityCounts()
    for counts in per_record:
        total = total + counts
    return total


def aggregate_micro(per_record: Iterable[UtilityCounts]) -> UtilityScores:
    """Micro-average: sum the counts component-wise, then compute ratios."""
    return compute_utility(sum_counts(per_record))


def fn_breakdown(counts: UtilityCounts) -> float:
    """Fraction of false negatives that required newly drawn boxes."""
    fn = counts.fn
    return counts.new_drawn_count / fn if fn else 0.0


def format_percent(ratio: float) -> str:
    """Two-decimal percentage string used in every table output."""
    return f"{100 * ratio:.2f}"


# ---------------------------------------------------------------------------
# Inter-annotator agreement
# ---------------------------------------------------------------------------

CRITERIA = ("CVR", "CEA")


@dataclass(frozen=True)
class LabelSet:
    """Boolean verdicts of one criterion: (instance_id, annotator_id, verdict)."""

    criterion: str
    labels: Tuple[Tuple[str, str, bool], ...]

    def by_annotator(self) -> Dict[str, Dict[str, bool]]:
        out: Dict[str, Dict[str, bool]] = {}
        for instance_id, annotator_id, verdict in self.labels:
            per = out.setdefault(annotator_id, {})
            if instance_id in per:
                raise MetricsError(
                    f"duplicate label for instance {instance_id!r} by annotator {annotator_id!r}"
                )
            per[instance_id] = verdict
        return out


def _paired_verdicts(a: Mapping[str, bool], b: Mapping[str, bool]):
    if not a or not b:
        raise EmptyLabelSet("agreement requires non-empty label sets")
    if set(a) != set(b):
        missing = set(a) ^ set(b)
        raise MismatchedInstances(f"annotators cover different instances: {sorted(missing)[:5]}")
    instances = sorted(a)
    return [(a[i], b[i]) for i in instances]


def percent_agreement(a: Mapping[str, bool], b: Mapping[str, bool]) -> float:
    """Fraction of instances on which both annotators gave the same verdict."""
    pairs = _paired_verdicts(a, b)
    return sum(x == y for x, y in pairs) / len(pairs)


def cohens_kappa(a: Mapping[str, bool], b: Mapping[str, bool]) -> float:
    """Chance-corrected two-rater agreement over boolean verdicts.

    kappa = (p_o - p_e) / (1 - p_e), with expected agreement p_e taken from
    the raters' marginal distributions. When both raters are constant and
    identical, p_e is 1 and kappa is 1 by convention.
    """
    pairs = _paired_verdicts(a, b)
    n = len(pairs)
    p_o = sum(x == y for x, y in pairs) / n
    a_true = sum(x for x, _ in pairs) / n
    b_true = sum(y for _, y in pairs) / n
    p_e = a_true * b_true + (1 - a_true) * (1 - b_true)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1 - p_e)


def agreement_for_labelset(label_set: LabelSet) -> Tuple[float, float]:
    """(percent agreement, kappa) for a two-annotator label set."""
    per_annotator = label_set.by_annotator()
    if len(per_annotator) != 2:
        raise MetricsError(
            f"agreement needs exactly two annotators, got {sorted(per_annotator)}"
        )
    a, b = (per_annotator[k] for k in sorted(per_annotator))
    return percent_agreement(a, b), cohens_kappa(a, b)


# ---------------------------------------------------------------------------
# Table rendering
# ---------------------------------------------------------------------------

UTILITY_COLUMNS = (
    "dataset",
    "precision",
    "recall",
    "f1",
    "added_gt",
    "new_drawn",
    "new_drawn_pct",
)


def utility_rows(per_dataset: Mapping[str, Iterable[UtilityCounts]]) -> list:
    """One row per dataset tag plus an Overall row, micro-averaged."""
    rows = []
    all_counts = []
    for dataset in sorted(per_dataset):
        counts = sum_counts(per_dataset[dataset])
        all_counts.append(counts)
        rows.append(_utility_row(dataset, counts))
    rows.append(_utility_row("Overall", sum_counts(all_counts)))
    return rows


def _utility_row(dataset: str, counts: UtilityCounts) -> dict:
    scores = compute_utility(counts)
    return {
        "dataset": dataset,
        "precision": format_percent(scores.precision),
        "recall": format_percent(scores.recall),
        "f1": format_percent(scores.f1),
        "added_gt": str(counts.added_gt_count),
        "new_drawn": str(counts.new_drawn_count),
        "new_drawn_pct": format_percent(fn_breakdown(counts)),
    }


def render_table(rows: list, columns: tuple) -> str:
    headers = {c: c.replace("_", " ") for c in columns}
    widths = {c: max(len(headers[c]), *(len(r[c]) for r in rows)) if rows else len(headers[c])
              for c in columns}
    lines = ["  ".join(headers[c].ljust(widths[c]) for c in columns)]
    lines.append("  ".join("-" * widths[c] for c in columns))
    for row in rows:
        lines.append("  ".join(row[c].ljust(widths[c]) for c in columns))
    return "\n".join(lines)


def render_csv(rows: list, columns: tuple) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(row[c] for c in columns))
    return "\n".join(lines) + "\n"


_TRUE_WORDS = {"true", "t", "1", "yes", "y"}
_FALSE_WORDS = {"false", "f", "0", "no", "n"}


def read_labels_csv(path) -> list:
    """Parse a verification-label CSV into flat tuples for iaa_rows.

    Required columns: instance_id, annotator_id, criterion, verdict. An
    optional dataset column groups rows into per-dataset tables.
    """
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"instance_id", "annotator_id", "criterion", "verdict"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise MetricsError(f"labels file missing columns: {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            word = row["verdict"].strip().lower()
            if word in _TRUE_WORDS:
                verdict = True
            elif word in _FALSE_WORDS:
                verdict = False
            else:
                raise MetricsError(f"line {i}: verdict {row['verdict']!r} is not boolean")
            out.append(
                (
                    (row.get("dataset") or "").strip(),
                    row["criterion"].strip(),
                    row["instance_id"].strip(),
                    row["annotator_id"].strip(),
                    verdict,
                )
            )
    return out


IAA_COLUMNS = ("dataset", "criterion", "agreement_pct", "kappa")


def iaa_rows(labels: Iterable[Tuple[str, str, str, str, bool]]) -> list:
    """Rows of (dataset, criterion, agreement, kappa) from flat label tuples.

    Each label is (dataset, criterion, instance_id, annotator_id, verdict);
    dataset may be empty, in which case everything lands in one "all" group.
    """
    grouped: Dict[Tuple[str, str], list] = {}
    for dataset, criterion, instance_id, annotator_id, verdict in labels:
        key = (dataset or "all", criterion)
        grouped.setdefault(key, []).append((instance_id, annotator_id, verdict))
    rows = []
    for dataset, criterion in sorted(grouped):
        label_set = LabelSet(criterion, tuple(grouped[(dataset, criterion)]))
        agreement, kappa = agreement_for_labelset(label_set)
        rows.append(
            {
                "dataset": dataset,
                "criterion": criterion,
                "agreement_pct": format_percent(agreement),
                "kappa": f"{kappa:.3f}",
            }
        )
    return rows
