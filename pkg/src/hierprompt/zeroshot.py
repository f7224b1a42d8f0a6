"""Score externally produced fine-grained predictions at every hierarchy level.

Predictions name level-1 labels in free text. They are matched against the
level-1 vocabulary (trim + lowercase, plus an optional alias table), mapped up
the hierarchy, and scored against the derived targets of each level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from hierprompt.data import DatasetSplit
from hierprompt.hierarchy import Hierarchy, derive_label_sets
from hierprompt.metrics import MetricsReport, evaluate, per_class_f1


class ZeroShotError(ValueError):
    pass


def _key(text: str) -> str:
    return text.strip().lower()


class LabelMatcher:
    def __init__(self, h: Hierarchy, aliases: Mapping[str, str] | None = None):
        self._lookup: dict[str, str] = {}
        for lab in h.levels[0]:
            k = _key(lab)
            if k in self._lookup and self._lookup[k] != lab:
                raise ZeroShotError(f"labels {self._lookup[k]!r} and {lab!r} collide after lowercasing")
            self._lookup[k] = lab
        for variant, canonical in (aliases or {}).items():
            canonical = canonical.strip()
            if canonical not in h.levels[0]:
                raise ZeroShotError(f"alias {variant!r} points to unknown level-1 label {canonical!r}")
            self._lookup[_key(variant)] = canonical

    def match(self, text: str) -> str | None:
        return self._lookup.get(_key(text))


def load_aliases(path: str | Path) -> dict[str, str]:
    """Alias TSV: ``variant<TAB>canonical`` per line, ``#`` comments allowed."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 2:
            raise ZeroShotError(f"{path}:{lineno}: expected 'variant<TAB>canonical'")
        out[cols[0].strip()] = cols[1].strip()
    return out


@dataclass
class ExternalPredictions:
    model_name: str
    p1: dict[str, frozenset[str]]
    unmatched: dict[str, list[str]] = field(default_factory=dict)

    @property
    def unmatched_count(self) -> int:
        return sum(len(v) for v in self.unmatched.values())


def match_predictions(
    raw: Mapping[str, Iterable[str]],
    h: Hierarchy,
    aliases: Mapping[str, str] | None = None,
    model_name: str = "external",
) -> ExternalPredictions:
    matcher = LabelMatcher(h, aliases)
    p1, unmatched = {}, {}
    for sid, labels in raw.items():
        hits, misses = set(), []
        for text in labels:
            lab = matcher.match(text)
            if lab is None:
                misses.append(text)
            else:
                hits.add(lab)
        p1[sid] = frozenset(hits)
        if misses:
            unmatched[sid] = misses
    return ExternalPredictions(model_name, p1, unmatched)


def load_predictions(
    path: str | Path,
    h: Hierarchy,
    aliases: Mapping[str, str] | None = None,
    model_name: str | None = None,
) -> ExternalPredictions:
    """Read JSON-lines ``{"id", "labels_l1"}`` predictions and match them to level 1."""
    path = Path(path)
    raw: dict[str, list[str]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ZeroShotError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            sid = rec.get("id")
            if not isinstance(sid, str):
                raise ZeroShotError(f"{path}:{lineno}: missing 'id'")
            if sid in raw:
                raise ZeroShotError(f"{path}:{lineno}: duplicate prediction id {sid!r}")
            labels = rec.get("labels_l1", [])
            if not isinstance(labels, list):
                raise ZeroShotError(f"{path}:{lineno}: 'labels_l1' must be a list")
            raw[sid] = [str(x) for x in labels]
    return match_predictions(raw, h, aliases, model_name or path.stem)


def map_predictions(
    h: Hierarchy, p1: ExternalPredictions | Mapping[str, Iterable[str]]
) -> dict[str, tuple[frozenset[str], frozenset[str]]]:
    sets = p1.p1 if isinstance(p1, ExternalPredictions) else p1
    return {sid: derive_label_sets(h, labels) for sid, labels in sets.items()}


@dataclass
class ZeroShotResult:
    model_name: str
    reports: dict[int, MetricsReport]
    unmatched_count: int
    predictions: dict[int, list[frozenset[str]]]


def evaluate_zeroshot(p1: ExternalPredictions, data: DatasetSplit, h: Hierarchy) -> ZeroShotResult:
    missing = [sid for sid in data.ids if sid not in p1.p1]
    if missing:
        raise ZeroShotError(f"{len(missing)} samples have no prediction, e.g. {missing[:3]}")
    extra = sorted(set(p1.p1) - set(data.ids))
    if extra:
        raise ZeroShotError(f"{len(extra)} predictions for unknown samples, e.g. {extra[:3]}")
    mapped = map_predictions(h, p1)
    preds = {
        1: [p1.p1[sid] for sid in data.ids],
        2: [mapped[sid][0] for sid in data.ids],
        3: [mapped[sid][1] for sid in data.ids],
    }
    reports = {}
    for lvl in (1, 2, 3):
        rep = evaluate(preds[lvl], data.targets(lvl), level_index=lvl)
        rep.per_class_f1 = per_class_f1(preds[lvl], data.targets(lvl), h.level(lvl).labels)
        reports[lvl] = rep
    return ZeroShotResult(p1.model_name, reports, p1.unmatched_count, preds)
