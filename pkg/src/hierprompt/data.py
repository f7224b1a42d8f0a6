"""Samples, dataset splits, annotation files and the seeded synthetic dataset."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hierprompt.hierarchy import Hierarchy, derive_label_sets, normalize_label

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    image_ref: str
    y1: frozenset[str]
    y2: frozenset[str]
    y3: frozenset[str]

    def labels(self, level: int) -> frozenset[str]:
        return (self.y1, self.y2, self.y3)[level - 1]


def make_sample(h: Hierarchy, sample_id: str, y1: Iterable[str], image_ref: str | None = None) -> Sample:
    y1 = frozenset(y1)
    if not y1:
        raise DataError(f"sample {sample_id!r}: empty label set")
    for lab in sorted(y1):
        if lab not in h.levels[0]:
            raise DataError(f"sample {sample_id!r}: unknown label {lab!r}")
    y2, y3 = derive_label_sets(h, y1)
    return Sample(sample_id, image_ref if image_ref is not None else sample_id, y1, y2, y3)


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    samples: tuple[Sample, ...]

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise DataError(f"split {self.name!r}: duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def targets(self, level: int) -> list[frozenset[str]]:
        return [s.labels(level) for s in self.samples]


def load_annotations(path: str | Path, h: Hierarchy, name: str | None = None) -> DatasetSplit:
    """Read a JSON-lines annotation file: {"id", "image", "labels_l1"} per line."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"annotation file not found: {path}")
    samples = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            sid = rec.get("id")
            if not isinstance(sid, str) or not sid:
                raise DataError(f"{path}:{lineno}: missing or non-string 'id'")
            if sid in seen:
                raise DataError(f"{path}:{lineno}: duplicate sample id {sid!r}")
            seen.add(sid)
            labels = rec.get("labels_l1")
            if not isinstance(labels, list):
                raise DataError(f"{path}:{lineno}: 'labels_l1' must be a list")
            y1 = [normalize_label(lab) for lab in labels]
            samples.append(make_sample(h, sid, y1, rec.get("image")))
    return DatasetSplit(name or path.stem, tuple(samples))


def write_annotations(split: DatasetSplit, path: str | Path, with_images: bool = False) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in split:
            rec = {
                "id": s.id,
                "image": s.image_ref if with_images else None,
                "labels_l1": sorted(s.y1),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    n_l1: int = 12
    n_l2: int = 6
    n_l3: int = 3
    d: int = 64
    regions: int = 4
    noise_sigma: float = 0.1
    labels_per_sample: tuple[int, int] = (1, 3)
    split_sizes: tuple[int, int, int] = (500, 100, 200)

    def __post_init__(self):
        if not (1 <= self.n_l3 <= self.n_l2 <= self.n_l1):
            raise DataError("synthetic level sizes must satisfy 1 <= n_l3 <= n_l2 <= n_l1")
        if self.d < 8:
            raise DataError("synthetic feature dimension d must be >= 8")
        if self.regions < 1:
            raise DataError("synthetic region count must be >= 1")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be non-negative")
        lo, hi = self.labels_per_sample
        if lo < 1 or hi < lo:
            raise DataError(f"invalid labels_per_sample range {self.labels_per_sample}")
        if hi > self.n_l1:
            raise DataError(
                f"labels_per_sample upper bound {hi} exceeds number of level-1 classes {self.n_l1}"
            )
        if hi > self.regions:
            raise DataError(
                f"labels_per_sample upper bound {hi} exceeds region count {self.regions}; "
                "labels are placed on disjoint regions"
            )


@dataclass
class PrototypeBank:
    """Unit-norm class directions plus the stored region features of every synthetic image."""

    labels: tuple[str, ...]
    prototypes: np.ndarray
    level2_directions: dict[str, np.ndarray]
    level3_directions: dict[str, np.ndarray]
    background: np.ndarray
    features: dict[str, np.ndarray] = field(repr=False)

    def prototype(self, label: str) -> np.ndarray:
        return self.prototypes[self.labels.index(label)]


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _directions(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    g = rng.standard_normal((d, k))
    if k <= d:
        q, r = np.linalg.qr(g)
        # fix QR sign ambiguity so the basis depends only on the draw
        q = q * np.sign(np.diag(r))
        return q.T
    return g.T / np.linalg.norm(g.T, axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticSpec) -> tuple[Hierarchy, tuple[DatasetSplit, DatasetSplit, DatasetSplit], PrototypeBank]:
    rng = np.random.default_rng(spec.seed)
    w1, w2, w3 = (len(str(n - 1)) for n in (spec.n_l1, spec.n_l2, spec.n_l3))
    s3 = [f"coarse_{i:0{w3}d}" for i in range(spec.n_l3)]
    s2 = [f"mid_{i:0{w2}d}" for i in range(spec.n_l2)]
    s1 = [f"fine_{i:0{w1}d}" for i in range(spec.n_l1)]
    # balanced: every parent gets floor or ceil of its share of children
    p23 = {lab: s3[j] for lab, j in zip(s2, rng.permutation(np.arange(spec.n_l2) % spec.n_l3))}
    p12 = {lab: s2[j] for lab, j in zip(s1, rng.permutation(np.arange(spec.n_l1) % spec.n_l2))}
    h = Hierarchy.from_rows((l1, p12[l1], p23[p12[l1]]) for l1 in s1)

    basis = _directions(rng, spec.d, spec.n_l1 + spec.n_l2 + spec.n_l3 + 1)
    background = basis[-1]
    dir3 = {lab: basis[spec.n_l1 + spec.n_l2 + i] for i, lab in enumerate(s3)}
    dir2 = {lab: _unit(dir3[p23[lab]] + basis[spec.n_l1 + i]) for i, lab in enumerate(s2)}
    protos = np.stack([_unit(dir2[p12[lab]] + basis[i]) for i, lab in enumerate(s1)])

    lo, hi = spec.labels_per_sample
    splits = []
    features: dict[str, np.ndarray] = {}
    for name, n in zip(SPLITS, spec.split_sizes):
        samples = []
        for i in range(n):
            k = int(rng.integers(lo, hi + 1))
            chosen = rng.choice(spec.n_l1, size=k, replace=False)
            slots = rng.permutation(spec.regions)[:k]
            feats = np.tile(background, (spec.regions, 1))
            for cls, slot in zip(chosen, slots):
                feats[slot] = protos[cls]
            feats += spec.noise_sigma * rng.standard_normal(feats.shape)
            sid = f"{name}_{i:05d}"
            features[sid] = feats
            samples.append(make_sample(h, sid, (s1[c] for c in chosen)))
        splits.append(DatasetSplit(name, tuple(samples)))
    bank = PrototypeBank(tuple(s1), protos, dir2, dir3, background, features)
    return h, (splits[0], splits[1], splits[2]), bank


def label_matrix(sets: Sequence[Iterable[str]], labels: Sequence[str]) -> np.ndarray:
    """Binary (n_samples, n_labels) indicator matrix in ``labels`` order."""
    index = {lab: i for i, lab in enumerate(labels)}
    out = np.zeros((len(sets), len(labels)))
    for r, s in enumerate(sets):
        for lab in s:
            out[r, index[lab]] = 1.0
    return out
