"""Long-tail subset construction: class-count profiles, seeded sampling of
long-tail and balanced subsets, size-group assignment, and split JSON I/O.

Profiles are defined over class *ranks* (rank 0 = largest class). A seeded
permutation maps ranks to actual class ids when a subset is sampled, so
repeated samplings vary which classes end up rare.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, InvalidSpecError

# Decay-rate constant of the Pareto-shaped profile. Calibrated once so the
# canonical (n=1000, max=1280, min=5, alpha=6) profile totals 116,279
# samples, matching the published 115.8K corpus size within 1%.
PARETO_DECAY = 2.22

GROUP_NAMES = ("many", "medium", "few")
DEFAULT_THRESHOLDS = (100, 20)


@dataclass(frozen=True)
class LongTailSpec:
    """Declarative recipe for a class-count profile and its sampled subset."""

    profile_kind: str  # "exponential" | "pareto"
    n_classes: int
    max_count: int
    imbalance_factor: float | None = None  # exponential only
    min_count: int | None = None           # pareto only
    alpha: float = 6.0                     # pareto only
    seed: int = 0

    def __post_init__(self):
        if self.profile_kind not in ("exponential", "pareto"):
            raise InvalidSpecError(f"unknown profile_kind {self.profile_kind!r}")
        if self.n_classes < 2:
            raise InvalidSpecError("n_classes must be >= 2")
        if self.max_count < 1:
            raise InvalidSpecError("max_count must be >= 1")
        if self.profile_kind == "exponential":
            if self.imbalance_factor is None:
                raise InvalidSpecError("exponential profile needs imbalance_factor")
        else:
            if self.min_count is None:
                raise InvalidSpecError("pareto profile needs min_count")

    def profile(self) -> "ClassCountProfile":
        if self.profile_kind == "exponential":
            return exp_profile(self.n_classes, self.max_count, self.imbalance_factor)
        return pareto_profile(self.n_classes, self.max_count, self.min_count, self.alpha)

    def to_dict(self):
        return {
            "profile_kind": self.profile_kind,
            "n_classes": self.n_classes,
            "max_count": self.max_count,
            "imbalance_factor": self.imbalance_factor,
            "min_count": self.min_count,
            "alpha": self.alpha,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ClassCountProfile:
    """Per-class sample counts indexed by class rank (non-increasing)."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 1 or counts.size < 1:
            raise InvalidSpecError("counts must be a non-empty 1-d sequence")
        if np.any(counts < 1):
            raise InvalidSpecError("all profile counts must be >= 1")
        if np.any(np.diff(counts) > 0):
            raise InvalidSpecError("profile counts must be non-increasing")

    @property
    def n_classes(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def exp_profile(n_classes, max_count, imbalance_factor) -> ClassCountProfile:
    """Exponential class-count profile.

    counts[k] = round(max_count * imbalance_factor**(-k/(n_classes-1))),
    floored at 1. The endpoints are max_count and round(max_count/factor).
    """
    if n_classes < 2:
        raise InvalidSpecError("n_classes must be >= 2")
    if imbalance_factor < 1:
        raise InvalidSpecError("imbalance_factor must be >= 1")
    k = np.arange(n_classes, dtype=np.float64)
    raw = max_count * imbalance_factor ** (-k / (n_classes - 1))
    counts = np.maximum(np.rint(raw).astype(np.int64), 1)
    return ClassCountProfile(counts)


def pareto_profile(n_classes, max_count, min_count, alpha=6.0) -> ClassCountProfile:
    """Pareto-shaped class-count profile with exact endpoints.

    Counts decay over rank as max_count * (1 + b*k/(n-1))**(-alpha) with the
    tail clamped to min_count, so counts[0] == max_count and
    counts[-1] == min_count. The decay rate b is PARETO_DECAY, raised when
    necessary so the unclamped curve can reach min_count.
    """
    if n_classes < 2:
        raise InvalidSpecError("n_classes must be >= 2")
    if min_count < 1:
        raise InvalidSpecError("min_count must be >= 1")
    if min_count >= max_count:
        raise InvalidSpecError("min_count must be < max_count")
    if alpha <= 0:
        raise InvalidSpecError("alpha must be > 0")
    b = max(PARETO_DECAY, (max_count / min_count) ** (1.0 / alpha) - 1.0)
    k = np.arange(n_classes, dtype=np.float64)
    raw = max_count * (1.0 + b * k / (n_classes - 1)) ** (-alpha)
    counts = np.maximum(np.rint(raw).astype(np.int64), min_count)
    return ClassCountProfile(counts)


@dataclass(frozen=True)
class GroupAssignment:
    """Partition of class ranks into many/medium/few size groups."""

    scheme: str  # "thirds" | "thresholds"
    many: tuple
    medium: tuple
    few: tuple
    thresholds: tuple = DEFAULT_THRESHOLDS

    def as_dict(self):
        return {"many": list(self.many), "medium": list(self.medium), "few": list(self.few)}

    def group_of(self):
        """Array mapping rank -> group index (0=many, 1=medium, 2=few)."""
        n = len(self.many) + len(self.medium) + len(self.few)
        out = np.empty(n, dtype=np.int64)
        for g, ranks in enumerate((self.many, self.medium, self.few)):
            for r in ranks:
                out[r] = g
        return out

    def remap(self, class_ranks):
        """Translate rank-based groups into class-id-based groups.

        ``class_ranks[k]`` is the class id holding rank k.
        """
        class_ranks = np.asarray(class_ranks)
        return GroupAssignment(
            scheme=self.scheme,
            many=tuple(int(class_ranks[r]) for r in self.many),
            medium=tuple(int(class_ranks[r]) for r in self.medium),
            few=tuple(int(class_ranks[r]) for r in self.few),
            thresholds=self.thresholds,
        )


def assign_groups(profile, scheme="thirds", thresholds=DEFAULT_THRESHOLDS) -> GroupAssignment:
    """Split a profile's class ranks into many/medium/few.

    thirds: many takes the first ceil(n/3) ranks, few the next-larger share
    of the remainder, medium the rest (100 classes -> 34/33/33). Boundary
    ties are resolved by rank, so equal-count classes near a boundary go to
    the larger-size group.
    thresholds: many > hi samples, medium in [lo, hi], few < lo.
    """
    counts = profile.counts
    n = counts.size
    if scheme == "thirds":
        n_many = -(-n // 3)
        n_few = -(-(n - n_many) // 2)
        many = tuple(range(n_many))
        few = tuple(range(n - n_few, n))
        medium = tuple(range(n_many, n - n_few))
    elif scheme == "thresholds":
        hi, lo = thresholds
        many = tuple(int(k) for k in np.flatnonzero(counts > hi))
        medium = tuple(int(k) for k in np.flatnonzero((counts >= lo) & (counts <= hi)))
        few = tuple(int(k) for k in np.flatnonzero(counts < lo))
    else:
        raise InvalidSpecError(f"unknown group scheme {scheme!r}")
    return GroupAssignment(scheme=scheme, many=many, medium=medium, few=few,
                           thresholds=tuple(thresholds))


@dataclass
class DatasetSplit:
    """Index sequences into a source dataset plus their labels.

    train/val indices address the source train pool; test indices address
    the source test pool. ``class_ranks[k]`` is the class id at rank k of
    the generating profile (identity for balanced subsets).
    """

    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray
    train_labels: np.ndarray
    val_labels: np.ndarray
    test_labels: np.ndarray
    class_ranks: np.ndarray
    profile: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for name in ("train_indices", "val_indices", "test_indices",
                     "train_labels", "val_labels", "test_labels", "class_ranks"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if set(self.train_indices) & set(self.val_indices):
            raise InvalidSpecError("train and val indices overlap")

    def per_class_train_counts(self, n_classes):
        return np.bincount(self.train_labels, minlength=n_classes)

    def to_dict(self):
        return {
            "profile": self.profile,
            "seed": self.seed,
            "class_ranks": self.class_ranks.tolist(),
            "train_indices": self.train_indices.tolist(),
            "val_indices": self.val_indices.tolist(),
            "test_indices": self.test_indices.tolist(),
            "train_labels": self.train_labels.tolist(),
            "val_labels": self.val_labels.tolist(),
            "test_labels": self.test_labels.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            train_indices=d["train_indices"],
            val_indices=d["val_indices"],
            test_indices=d["test_indices"],
            train_labels=d["train_labels"],
            val_labels=d["val_labels"],
            test_labels=d["test_labels"],
            class_ranks=d["class_ranks"],
            profile=d.get("profile", {}),
            seed=d.get("seed", 0),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _class_pools(labels, exclude=None):
    labels = np.asarray(labels)
    mask = np.ones(labels.size, dtype=bool)
    if exclude is not None and len(exclude) > 0:
        mask[np.asarray(exclude, dtype=np.int64)] = False
    pools = {}
    for c in np.unique(labels):
        pools[int(c)] = np.flatnonzero((labels == c) & mask)
    return pools


def sample_validation(source, val_size, seed):
    """Stratified random draw of val_size indices from the source train pool.

    Per-class shares differ by at most one, so removing the validation
    samples keeps the remaining pool balanced for probe training.
    """
    labels = np.asarray(source.train_labels)
    n = labels.size
    if val_size > n:
        raise InvalidSpecError("val_size exceeds train pool size")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    classes = np.unique(labels)
    base, extra = divmod(val_size, classes.size)
    lucky = set(rng.permutation(classes.size)[:extra].tolist())
    picked = []
    for j, c in enumerate(classes):
        pool = np.flatnonzero(labels == c)
        want = base + (1 if j in lucky else 0)
        if pool.size < want:
            raise CapacityError(c, want, pool.size)
        picked.append(rng.choice(pool, size=want, replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=np.int64)


def sample_longtail(source, profile, seed, val_indices=None) -> DatasetSplit:
    """Sample a long-tail subset matching ``profile`` exactly.

    Class ids are assigned to profile ranks by a seeded permutation; each
    class's samples are then drawn without replacement from the source train
    pool (minus ``val_indices``). Deterministic for a fixed seed.
    """
    counts = profile.counts
    labels = np.asarray(source.train_labels)
    classes = np.unique(labels)
    if classes.size != counts.size:
        raise InvalidSpecError(
            f"profile has {counts.size} classes but source has {classes.size}"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    class_ranks = classes[rng.permutation(classes.size)]
    pools = _class_pools(labels, exclude=val_indices)

    picked = []
    for rank, cid in enumerate(class_ranks):
        want = int(counts[rank])
        pool = pools[int(cid)]
        if pool.size < want:
            raise CapacityError(cid, want, pool.size)
        sel = rng.choice(pool, size=want, replace=False)
        picked.append(np.sort(sel))
    train_idx = np.concatenate(picked)

    val_idx = np.asarray(val_indices if val_indices is not None else [], dtype=np.int64)
    test_idx = np.arange(source.test_labels.size, dtype=np.int64)
    return DatasetSplit(
        train_indices=train_idx,
        val_indices=val_idx,
        test_indices=test_idx,
        train_labels=labels[train_idx],
        val_labels=labels[val_idx] if val_idx.size else np.empty(0, dtype=np.int64),
        test_labels=np.asarray(source.test_labels),
        class_ranks=class_ranks,
        profile={"counts": counts.tolist()},
        seed=seed,
    )


def sample_balanced_counterpart(source, total_size, seed, val_indices=None) -> DatasetSplit:
    """Sample a balanced subset of ``total_size`` from the source train pool.

    Per-class counts differ by at most one; classes receiving the extra
    sample are chosen by the seeded rng.
    """
    labels = np.asarray(source.train_labels)
    classes = np.unique(labels)
    n_classes = classes.size
    if total_size < n_classes:
        raise InvalidSpecError("total_size smaller than the number of classes")
    base, extra = divmod(total_size, n_classes)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    lucky = set(rng.permutation(n_classes)[:extra].tolist())
    pools = _class_pools(labels, exclude=val_indices)

    picked = []
    for j, cid in enumerate(classes):
        want = base + (1 if j in lucky else 0)
        pool = pools[int(cid)]
        if pool.size < want:
            raise CapacityError(cid, want, pool.size)
        picked.append(np.sort(rng.choice(pool, size=want, replace=False)))
    train_idx = np.concatenate(picked)

    val_idx = np.asarray(val_indices if val_indices is not None else [], dtype=np.int64)
    test_idx = np.arange(source.test_labels.size, dtype=np.int64)
    return DatasetSplit(
        train_indices=train_idx,
        val_indices=val_idx,
        test_indices=test_idx,
        train_labels=labels[train_idx],
        val_labels=labels[val_idx] if val_idx.size else np.empty(0, dtype=np.int64),
        test_labels=np.asarray(source.test_labels),
        class_ranks=np.sort(classes),
        profile={"balanced_total": int(total_size)},
        seed=seed,
    )
