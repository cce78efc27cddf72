"""Seeded long-tailed, multi-modal synthetic datasets and frequency tiers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TIERS = ("ULT", "LT", "MT", "Head", "Dominant")
TARGET_RULES = {"ULT": (0.5, 10), "LT": (1.0, 10), "MT": (2.5, 5)}


class SpecError(ValueError):
    """Raised for an invalid dataset specification."""


@dataclass
class Mode:
    mean: np.ndarray
    var: np.ndarray
    weight: float


@dataclass
class ClassSpec:
    id: int
    count: int
    modes: list

    def validate(self, dim: int) -> None:
        if self.count < 1:
            raise SpecError(f"class {self.id}: count must be >= 1, got {self.count}")
        if not self.modes:
            raise SpecError(f"class {self.id}: needs at least one mode")
        for j, m in enumerate(self.modes):
            if m.mean.shape != (dim,) or m.var.shape != (dim,):
                raise SpecError(f"class {self.id} mode {j}: mean/var must have length {dim}")
            if not np.all(m.var > 0):
                raise SpecError(f"class {self.id} mode {j}: variances must be > 0")
            if m.weight < 0:
                raise SpecError(f"class {self.id} mode {j}: negative weight")
        total = sum(m.weight for m in self.modes)
        if abs(total - 1.0) > 1e-9:
            raise SpecError(f"class {self.id}: mode weights sum to {total}, expected 1")

    @property
    def weights(self) -> np.ndarray:
        return np.array([m.weight for m in self.modes])


@dataclass
class DatasetSpec:
    classes: list
    dim: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1:
            raise SpecError("dimension must be >= 1")
        if len(self.classes) < 2:
            raise SpecError("need at least 2 classes")
        ids = [c.id for c in self.classes]
        if len(set(ids)) != len(ids):
            raise SpecError("duplicate class ids")
        for c in self.classes:
            c.validate(self.dim)

    def class_spec(self, c: int) -> ClassSpec:
        for cs in self.classes:
            if cs.id == c:
                return cs
        raise KeyError(c)

    @property
    def counts(self) -> dict:
        return {c.id: c.count for c in self.classes}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        try:
            dim = int(d.get("dimension", 2))
            classes = []
            for i, c in enumerate(d["classes"]):
                modes = [Mode(np.asarray(m["mean"], dtype=float), np.asarray(m["var"], dtype=float),
                              float(m.get("weight", 1.0))) for m in c["modes"]]
                classes.append(ClassSpec(int(c.get("id", i)), int(c["count"]), modes))
            spec = cls(classes=classes, dim=dim, seed=int(d.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed dataset spec: missing or invalid field {exc}") from exc
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {
            "dimension": self.dim,
            "seed": self.seed,
            "classes": [
                {"id": c.id, "count": c.count,
                 "modes": [{"mean": m.mean.tolist(), "var": m.var.tolist(), "weight": m.weight}
                           for m in c.modes]}
                for c in self.classes
            ],
        }

    @classmethod
    def from_json(cls, path) -> "DatasetSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Dataset:
    """Struct-of-arrays labelled sample set.

    ``true_mode`` is ground truth used only by evaluation; ``subclass`` is
    filled after subclass induction (``-1`` when unset); ``synthetic`` flags
    generated rows.
    """

    x: np.ndarray
    y: np.ndarray
    true_mode: np.ndarray
    subclass: np.ndarray = None
    synthetic: np.ndarray = None

    def __post_init__(self):
        n = len(self.y)
        if self.subclass is None:
            self.subclass = np.full(n, -1, dtype=int)
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=int)

    def __len__(self):
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def classes(self) -> list:
        return sorted(int(c) for c in np.unique(self.y))

    def counts(self) -> dict:
        return {c: int(np.sum(self.y == c)) for c in self.classes}

    def of_class(self, c) -> np.ndarray:
        return self.x[self.y == c]

    def subset(self, mask) -> "Dataset":
        return Dataset(self.x[mask], self.y[mask], self.true_mode[mask],
                       self.subclass[mask], self.synthetic[mask])

    @staticmethod
    def concat(a: "Dataset", b: "Dataset") -> "Dataset":
        return Dataset(np.vstack([a.x, b.x]), np.concatenate([a.y, b.y]),
                       np.concatenate([a.true_mode, b.true_mode]),
                       np.concatenate([a.subclass, b.subclass]),
                       np.concatenate([a.synthetic, b.synthetic]))


def draw_from_class(cs: ClassSpec, n: int, rng: np.random.Generator):
    """Draw ``n`` points from a class's mode mixture; returns (x, mode)."""
    modes = rng.choice(len(cs.modes), size=n, p=cs.weights)
    means = np.stack([m.mean for m in cs.modes])
    stds = np.sqrt(np.stack([m.var for m in cs.modes]))
    z = rng.standard_normal((n, means.shape[1]))
    return means[modes] + stds[modes] * z, modes


def generate_dataset(spec: DatasetSpec, counts: dict | None = None, seed: int | None = None) -> Dataset:
    """Sample ``n_c`` points per class from the class mode mixtures.

    Each class draws from its own stream keyed by ``(seed, class id)`` so the
    output does not depend on class order. ``counts`` overrides the spec's
    per-class counts (used for balanced test sets).
    """
    spec.validate()
    seed = spec.seed if seed is None else seed
    xs, ys, ms = [], [], []
    for cs in spec.classes:
        n = cs.count if counts is None else int(counts[cs.id])
        if n < 1:
            raise SpecError(f"class {cs.id}: count must be >= 1")
        rng = np.random.default_rng([seed, cs.id])
        x, m = draw_from_class(cs, n, rng)
        xs.append(x)
        ys.append(np.full(n, cs.id, dtype=int))
        ms.append(m)
    return Dataset(np.vstack(xs), np.concatenate(ys), np.concatenate(ms))


def balanced_test_set(spec: DatasetSpec, per_class: int, seed: int) -> Dataset:
    return generate_dataset(spec, counts={c.id: per_class for c in spec.classes}, seed=seed)


@dataclass
class TierPartition:
    tiers: dict
    median: float
    dominant: int
    counts: dict = field(default_factory=dict)

    @property
    def thresholds(self) -> tuple:
        m = self.median
        return m / 4, m / 2, 5 * m / 2

    def classes_in(self, *tiers) -> list:
        return sorted(c for c, t in self.tiers.items() if t in tiers)


def partition_classes(counts: dict) -> TierPartition:
    """Split classes into ULT / LT / MT / Head tiers around the median count.

    The dominant class (largest count, smallest id on ties) is excluded from
    the median and from tiering. The median averages the two middle values
    for an even number of classes.
    """
    if len(counts) < 2:
        raise ValueError("need at least 2 classes to partition")
    if any(int(n) < 1 for n in counts.values()):
        raise ValueError("all counts must be >= 1")
    dominant = min(counts, key=lambda c: (-counts[c], c))
    rest = [counts[c] for c in counts if c != dominant]
    m = float(np.median(rest))
    tiers = {dominant: "Dominant"}
    for c, n in counts.items():
        if c == dominant:
            continue
        if n < m / 4:
            tiers[c] = "ULT"
        elif n < m / 2:
            tiers[c] = "LT"
        elif n < 5 * m / 2:
            tiers[c] = "MT"
        else:
            tiers[c] = "Head"
    return TierPartition(tiers=tiers, median=m, dominant=dominant, counts=dict(counts))


def augmentation_targets(partition: TierPartition, counts: dict | None = None) -> dict:
    """Target count per class; Head and Dominant classes keep their size."""
    counts = partition.counts if counts is None else counts
    m = partition.median
    targets = {}
    for c, n in counts.items():
        rule = TARGET_RULES.get(partition.tiers[c])
        if rule is None:
            targets[c] = int(n)
        else:
            mult, cap = rule
            targets[c] = int(min(math.ceil(mult * m), cap * n))
    return targets


def synthetic_counts(targets: dict, counts: dict) -> dict:
    return {c: max(0, int(targets[c]) - int(counts[c])) for c in counts}


# Layout: a broad unimodal dominant class at the origin, a broad Head class,
# and tail classes built from elongated sub-modes around ring positions.
_TAIL_LAYOUT = [
    # count, class anchor, [(offset from anchor, per-axis std, weight), ...]
    # tight low-weight modes are easy to blur away; they make mode recall informative
    (900, (-3.5, 3.5), [((-1.5, 0.0), (0.45, 0.45), 0.5), ((1.5, 0.0), (0.45, 0.45), 0.4),
                        ((0.0, 2.4), (0.12, 0.12), 0.10)]),
    (600, (3.0, 3.8), [((-1.35, 0.0), (0.525, 0.375), 0.5), ((1.35, 0.0), (0.525, 0.375), 0.5)]),
    (400, (-4.2, -1.0), [((0.0, -1.35), (0.375, 0.525), 0.75), ((0.0, 1.6), (0.12, 0.12), 0.25)]),
    (250, (1.0, -4.2), [((-1.35, 0.0), (0.525, 0.375), 0.7), ((1.5, 0.0), (0.12, 0.12), 0.3)]),
    (150, (-2.0, -4.6), [((-1.35, 0.0), (0.525, 0.375), 0.6), ((1.35, 0.0), (0.525, 0.375), 0.4)]),
    (80, (4.2, -3.6), [((0.0, 0.0), (1.2, 1.2), 1.0)]),
]


def default_spec(seed: int = 0, spread: float = 1.0, dominant: int = 12000) -> DatasetSpec:
    """The default 2-D benchmark used by the CLI, demos and acceptance suite.

    ``spread`` scales the distance of class anchors from the origin.
    """
    def mode(mean, std, w):
        return Mode(np.asarray(mean, float), np.asarray(std, float) ** 2, float(w))

    classes = [
        ClassSpec(0, dominant, [mode((0.0, 0.0), (1.0, 1.0), 1.0)]),
        ClassSpec(1, 3000, [mode((4.0 * spread, 0.0), (0.9, 0.9), 1.0)]),
    ]
    for i, (n, anchor, modes) in enumerate(_TAIL_LAYOUT, start=2):
        a = np.asarray(anchor) * spread
        classes.append(ClassSpec(i, n, [mode(a + np.asarray(o), s, w) for o, s, w in modes]))
    return DatasetSpec(classes=classes, dim=2, seed=seed)
