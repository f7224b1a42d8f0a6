"""Three-level label hierarchy (fine -> mid -> coarse) and cross-level mapping.

The on-disk format is a UTF-8 TSV with header ``l1\\tl2\\tl3`` and one row per
fine-grained (level-1) label. Lines starting with ``#`` are comments. A
two-level ingredient repeats its level-1 name in the level-2 column.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

LEVELS = (1, 2, 3)
HEADER = ("l1", "l2", "l3")


class HierarchyError(ValueError):
    """Raised when a hierarchy file or query violates the hierarchy invariants."""


def normalize_label(label: str) -> str:
    return label.strip()


@dataclass(frozen=True)
class LabelSpace:
    level_index: int
    labels: tuple[str, ...]
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise HierarchyError(f"level {self.level_index}: duplicate labels")
        object.__setattr__(self, "index", {lab: i for i, lab in enumerate(self.labels)})

    @classmethod
    def from_labels(cls, level_index: int, labels: Iterable[str]) -> "LabelSpace":
        return cls(level_index, tuple(sorted(set(labels))))

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: object) -> bool:
        return label in self.index

    def __iter__(self):
        return iter(self.labels)

    def digest(self) -> str:
        """sha256 over the ordered label list; used to bind checkpoints to a label space."""
        h = hashlib.sha256()
        h.update(str(self.level_index).encode())
        for lab in self.labels:
            h.update(b"\x00")
            h.update(lab.encode("utf-8"))
        return h.hexdigest()


@dataclass(frozen=True)
class Hierarchy:
    levels: tuple[LabelSpace, LabelSpace, LabelSpace]
    parent_l1_to_l2: Mapping[str, str]
    parent_l2_to_l3: Mapping[str, str]

    def __post_init__(self):
        s1, s2, s3 = self.levels
        for lvl, space in zip(LEVELS, self.levels):
            if space.level_index != lvl:
                raise HierarchyError(f"level {lvl} has level_index {space.level_index}")
            if len(space) == 0:
                raise HierarchyError(f"level {lvl} is empty")
        for child_space, parents, parent_space in (
            (s1, self.parent_l1_to_l2, s2),
            (s2, self.parent_l2_to_l3, s3),
        ):
            for lab in child_space:
                if lab not in parents:
                    raise HierarchyError(
                        f"level-{child_space.level_index} label {lab!r} has no parent"
                    )
                if parents[lab] not in parent_space:
                    raise HierarchyError(
                        f"level-{child_space.level_index} label {lab!r} references unknown "
                        f"parent {parents[lab]!r}"
                    )
            extra = set(parents) - set(child_space.labels)
            if extra:
                raise HierarchyError(f"parent map has labels outside level: {sorted(extra)[:5]}")
        _check_acyclic(self.parent_l1_to_l2, self.parent_l2_to_l3)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, str]]) -> "Hierarchy":
        """Build a hierarchy from (l1, l2, l3) triples, one per fine label."""
        return _build(((None, r) for r in rows))

    def level(self, i: int) -> LabelSpace:
        if i not in LEVELS:
            raise HierarchyError(f"level must be one of {LEVELS}, got {i}")
        return self.levels[i - 1]

    def sizes(self) -> tuple[int, int, int]:
        return tuple(len(s) for s in self.levels)  # type: ignore[return-value]

    def parent(self, label: str, level: int) -> str | None:
        """Immediate parent of ``label`` at ``level``; None for the coarsest level."""
        if level == 1:
            return self.parent_l1_to_l2[label]
        if level == 2:
            return self.parent_l2_to_l3[label]
        return None

    def map_label(self, label: str, from_level: int, to_level: int) -> str:
        return map_label(self, label, from_level, to_level)

    def derive_label_sets(self, y1: Iterable[str]) -> tuple[frozenset[str], frozenset[str]]:
        return derive_label_sets(self, y1)

    def rows(self) -> list[tuple[str, str, str]]:
        return [
            (l1, self.parent_l1_to_l2[l1], self.parent_l2_to_l3[self.parent_l1_to_l2[l1]])
            for l1 in self.levels[0]
        ]

    def to_tsv(self) -> str:
        lines = ["\t".join(HEADER)]
        lines += ["\t".join(r) for r in self.rows()]
        return "\n".join(lines) + "\n"


def _check_acyclic(p12: Mapping[str, str], p23: Mapping[str, str]) -> None:
    # Labels live in per-level namespaces, but a name reused across levels in
    # opposite directions (a -> b at one level, b -> a at another) is a cycle.
    graph: dict[str, set[str]] = {}
    for child, par in list(p12.items()) + list(p23.items()):
        if child != par:
            graph.setdefault(child, set()).add(par)
    state: dict[str, int] = {}

    def visit(node: str, path: list[str]) -> None:
        state[node] = 1
        for nxt in graph.get(node, ()):
            if state.get(nxt) == 1:
                cyc = path[path.index(nxt):] + [nxt] if nxt in path else [node, nxt]
                raise HierarchyError("cycle in hierarchy: " + " -> ".join(cyc))
            if nxt not in state:
                visit(nxt, path + [nxt])
        state[node] = 2

    for node in sorted(graph):
        if node not in state:
            visit(node, [node])


def _build(numbered_rows) -> Hierarchy:
    p12: dict[str, str] = {}
    p23: dict[str, str] = {}
    where12: dict[str, object] = {}
    where23: dict[str, object] = {}
    for lineno, row in numbered_rows:
        loc = f"line {lineno}: " if lineno is not None else ""
        l1, l2, l3 = (normalize_label(x) for x in row)
        if not l1 or not l2 or not l3:
            raise HierarchyError(f"{loc}empty label or missing parent in row {row!r}")
        if l1 in p12:
            if p12[l1] != l2:
                raise HierarchyError(
                    f"{loc}ambiguous parent for {l1!r}: {p12[l1]!r} "
                    f"({where12[l1]}) vs {l2!r}"
                )
            raise HierarchyError(f"{loc}duplicate level-1 label {l1!r} (first at {where12[l1]})")
        p12[l1] = l2
        where12[l1] = f"line {lineno}" if lineno is not None else "earlier row"
        if l2 in p23 and p23[l2] != l3:
            raise HierarchyError(
                f"{loc}ambiguous parent for level-2 label {l2!r}: {p23[l2]!r} "
                f"({where23[l2]}) vs {l3!r}"
            )
        if l2 not in p23:
            p23[l2] = l3
            where23[l2] = f"line {lineno}" if lineno is not None else "earlier row"
    if not p12:
        raise HierarchyError("hierarchy has no rows")
    levels = (
        LabelSpace.from_labels(1, p12.keys()),
        LabelSpace.from_labels(2, p23.keys()),
        LabelSpace.from_labels(3, p23.values()),
    )
    return Hierarchy(levels, p12, p23)


def parse_hierarchy(text: str) -> Hierarchy:
    rows = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if not header_seen:
            if tuple(c.strip() for c in cols) != HEADER:
                raise HierarchyError(f"line {lineno}: expected header 'l1\\tl2\\tl3', got {line!r}")
            header_seen = True
            continue
        if len(cols) != 3:
            raise HierarchyError(f"line {lineno}: expected 3 tab-separated columns, got {len(cols)}")
        rows.append((lineno, tuple(cols)))
    if not header_seen:
        raise HierarchyError("missing header 'l1\\tl2\\tl3'")
    return _build(rows)


def load_hierarchy(path: str | Path) -> Hierarchy:
    path = Path(path)
    if not path.exists():
        raise HierarchyError(f"hierarchy file not found: {path}")
    return parse_hierarchy(path.read_text(encoding="utf-8"))


def map_label(h: Hierarchy, label: str, from_level: int, to_level: int) -> str:
    """Return the unique ancestor of ``label`` at ``to_level``.

    Mapping downward is rejected: a coarse label has many fine descendants.
    """
    if to_level < from_level:
        raise HierarchyError(
            f"cannot map level {from_level} -> {to_level}: downward mapping is one-to-many"
        )
    if label not in h.level(from_level):
        raise HierarchyError(f"unknown level-{from_level} label {label!r}")
    h.level(to_level)
    cur = label
    for lvl in range(from_level, to_level):
        cur = h.parent(cur, lvl)  # type: ignore[assignment]
    return cur


def derive_label_sets(h: Hierarchy, y1: Iterable[str]) -> tuple[frozenset[str], frozenset[str]]:
    y1 = list(y1)
    unknown = [lab for lab in y1 if lab not in h.levels[0]]
    if unknown:
        raise HierarchyError(f"labels outside level 1: {unknown}")
    y2 = frozenset(h.parent_l1_to_l2[lab] for lab in y1)
    y3 = frozenset(h.parent_l2_to_l3[lab] for lab in y2)
    return y2, y3


def hierarchy_stats(h: Hierarchy) -> dict:
    s1, s2, s3 = h.sizes()
    repeated = sum(1 for l1, l2 in h.parent_l1_to_l2.items() if l1 == l2)
    return {"level_sizes": [s1, s2, s3], "two_level_ingredients": repeated}
