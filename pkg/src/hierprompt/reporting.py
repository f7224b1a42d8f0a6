"""Writers for results JSON, table-style CSV, loss traces, predictions and diffs."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from hierprompt.metrics import DiffRecord, MetricsReport


def format_params(n: int | None) -> str:
    """Trainable-parameter count in millions to one decimal, e.g. 5783552 -> '5.8M'."""
    if n is None:
        return "-"
    return f"{n / 1e6:.1f}M"


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def write_metrics_csv(reports: Mapping[int, MetricsReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "P", "R", "IOU", "F1", "#P", "#P_exact", "n_samples"])
        for lvl in sorted(reports):
            r = reports[lvl]
            w.writerow([
                lvl,
                f"{r.precision:.2f}",
                f"{r.recall:.2f}",
                f"{r.iou:.2f}",
                f"{r.f1:.2f}",
                format_params(r.trainable_params),
                "" if r.trainable_params is None else r.trainable_params,
                r.n_samples,
            ])


def write_per_class_csv(reports: Mapping[int, MetricsReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "label", "F1"])
        for lvl in sorted(reports):
            for label, f1 in sorted(reports[lvl].per_class_f1.items()):
                w.writerow([lvl, label, f"{f1:.2f}"])


def write_loss_csv(
    epoch_losses: Mapping[int, Sequence[float]],
    joint: Sequence[float] | None,
    path: str | Path,
) -> None:
    """Per-epoch mean training loss per level; ``joint`` is the stage-2 weighted loss."""
    levels = sorted(epoch_losses)
    n_epochs = len(epoch_losses[levels[0]])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch"] + [f"loss_l{lvl}" for lvl in levels] + (["joint"] if joint else []))
        for e in range(n_epochs):
            row = [e + 1] + [repr(epoch_losses[lvl][e]) for lvl in levels]
            w.writerow(row + ([repr(joint[e])] if joint else []))


def write_predictions(
    ids: Sequence[str], preds: Mapping[int, Sequence[Iterable[str]]], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, sid in enumerate(ids):
            rec = {"id": sid}
            for lvl in sorted(preds):
                rec[f"labels_l{lvl}"] = sorted(preds[lvl][i])
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_predictions(path: str | Path) -> dict[str, dict[int, frozenset[str]]]:
    """Inverse of write_predictions: id -> {level: labels} for the levels present."""
    out: dict[str, dict[int, frozenset[str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            sid = rec["id"]
            if sid in out:
                raise ValueError(f"{path}:{lineno}: duplicate id {sid!r}")
            out[sid] = {
                int(k[len("labels_l"):]): frozenset(v)
                for k, v in rec.items()
                if k.startswith("labels_l")
            }
    return out


def render_diff(records: Sequence[DiffRecord]) -> str:
    lines = []
    for r in records:
        if r.empty:
            continue
        parts = []
        if r.added_correct:
            parts.append("+ " + ", ".join(sorted(r.added_correct)))
        if r.removed_incorrect:
            parts.append("- " + ", ".join(sorted(r.removed_incorrect)))
        for kept, removed in r.sibling_pairs:
            parts.append(f"~ kept {kept!r}, dropped sibling {removed!r}")
        lines.append(f"{r.id} [L{r.level}] " + "; ".join(parts))
    n_changed = sum(1 for r in records if not r.empty)
    lines.append(f"{n_changed} of {len(records)} sample-levels changed")
    return "\n".join(lines) + "\n"
