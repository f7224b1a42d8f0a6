"""Example-based multi-label metrics, per-class F1 and prediction diffs.

P, R and IoU are per-sample set ratios averaged over samples; F1 is the
harmonic mean of the aggregate P and R (not a mean of per-sample F1s).
Sums are carried out in exact rational arithmetic and rounded once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

AVERAGING = "example-based P/R/IoU; F1 from aggregate P and R"


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    level_index: int | None
    precision: float
    recall: float
    f1: float
    iou: float
    n_samples: int
    per_class_f1: dict[str, float] = field(default_factory=dict)
    trainable_params: int | None = None

    def to_dict(self, digits: int = 2) -> dict:
        r = lambda x: round(x, digits)  # noqa: E731
        return {
            "level": self.level_index,
            "P": r(self.precision),
            "R": r(self.recall),
            "IOU": r(self.iou),
            "F1": r(self.f1),
            "#P": self.trainable_params,
            "n_samples": self.n_samples,
            "per_class_f1": {k: r(v) for k, v in self.per_class_f1.items()},
        }


def f1_from_pr(p, r):
    """Harmonic mean of precision and recall; 0 when both are 0."""
    return 0 * p if p + r == 0 else 2 * p * r / (p + r)


def _check(predictions: Sequence, targets: Sequence) -> None:
    if len(predictions) != len(targets):
        raise MetricsError(f"{len(predictions)} predictions vs {len(targets)} targets")
    for i, gt in enumerate(targets):
        if not gt:
            raise MetricsError(f"target set {i} is empty")


def evaluate(
    predictions: Sequence[Iterable[str]],
    targets: Sequence[Iterable[str]],
    level_index: int | None = None,
    trainable_params: int | None = None,
) -> MetricsReport:
    predictions = [frozenset(p) for p in predictions]
    targets = [frozenset(t) for t in targets]
    _check(predictions, targets)
    n = len(targets)
    if n == 0:
        raise MetricsError("nothing to evaluate")
    p_sum = r_sum = j_sum = Fraction(0)
    for pred, gt in zip(predictions, targets):
        hit = len(pred & gt)
        # an empty prediction against a non-empty target scores precision 0
        p_sum += Fraction(hit, len(pred)) if pred else 0
        r_sum += Fraction(hit, len(gt))
        j_sum += Fraction(hit, len(pred | gt))
    p, r, j = p_sum / n, r_sum / n, j_sum / n
    return MetricsReport(
        level_index,
        precision=float(100 * p),
        recall=float(100 * r),
        f1=float(100 * f1_from_pr(p, r)),
        iou=float(100 * j),
        n_samples=n,
        trainable_params=trainable_params,
    )


def per_class_f1(
    predictions: Sequence[Iterable[str]],
    targets: Sequence[Iterable[str]],
    labels: Iterable[str],
) -> dict[str, float]:
    """Binary F1 (percent) per class; classes never present nor predicted are left out."""
    predictions = [frozenset(p) for p in predictions]
    targets = [frozenset(t) for t in targets]
    _check(predictions, targets)
    out = {}
    for lab in labels:
        tp = fp = fn = 0
        for pred, gt in zip(predictions, targets):
            if lab in pred and lab in gt:
                tp += 1
            elif lab in pred:
                fp += 1
            elif lab in gt:
                fn += 1
        if tp + fp + fn:
            out[lab] = 100.0 * 2 * tp / (2 * tp + fp + fn)
    return out


@dataclass
class DiffRecord:
    id: str
    level: int
    added_correct: frozenset[str]
    removed_incorrect: frozenset[str]
    sibling_pairs: tuple[tuple[str, str], ...]  # (kept, removed) sharing one parent

    @property
    def empty(self) -> bool:
        return not (self.added_correct or self.removed_incorrect or self.sibling_pairs)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "level": self.level,
            "added_correct": sorted(self.added_correct),
            "removed_incorrect": sorted(self.removed_incorrect),
            "sibling_pairs": [{"kept": k, "removed": r} for k, r in self.sibling_pairs],
        }


def qualitative_diff(
    base_preds: Sequence[Iterable[str]],
    new_preds: Sequence[Iterable[str]],
    targets: Sequence[Iterable[str]],
    ids: Sequence[str] | None = None,
    level: int = 1,
    parent: Mapping[str, str] | Callable[[str], str | None] | None = None,
) -> list[DiffRecord]:
    """What a new model fixed relative to a base model, sample by sample.

    added_correct: true positives the base missed. removed_incorrect: base
    predictions outside the target that the new model dropped. A sibling pair
    is a label kept by both models next to a label sharing its parent that only
    the base predicted. These are the "complemented" and "removed" marks of a
    before/after comparison; "removed" entries are false positives of the base.
    """
    n = len(targets)
    if len(base_preds) != n or len(new_preds) != n:
        raise MetricsError("base, new and target lists must be aligned")
    if ids is None:
        ids = [str(i) for i in range(n)]
    elif len(ids) != n:
        raise MetricsError("ids must align with targets")
    if parent is None:
        parent_of = lambda _lab: None  # noqa: E731
    elif callable(parent):
        parent_of = parent
    else:
        parent_of = parent.get
    records = []
    for sid, base, new, gt in zip(ids, base_preds, new_preds, targets):
        base, new, gt = frozenset(base), frozenset(new), frozenset(gt)
        kept = base & new
        dropped = base - new
        pairs = sorted(
            (k, r)
            for k in kept
            for r in dropped
            if parent_of(k) is not None and parent_of(k) == parent_of(r)
        )
        records.append(
            DiffRecord(sid, level, (new & gt) - base, (base - gt) - new, tuple(pairs))
        )
    return records
