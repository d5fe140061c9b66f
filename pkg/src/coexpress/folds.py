"""Stratified fold construction and within-fold oversampling with replica co-location."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldPlan:
    """Per-sample fold assignment plus the expanded (replicated) index list.

    `assignment[i]` is sample i's fold. `expanded` lists
    (original sample index, fold index) entries including replicas; every
    replica carries its original's fold, so no original/replica pair can
    straddle a train/validation split. `replication` maps site -> extra
    copies per sample of that site (0 = no replication).
    """

    k: int
    labels: tuple[str, ...]
    assignment: tuple[int, ...]
    replication: dict[str, int]
    expanded: tuple[tuple[int, int], ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "assignment", tuple(int(f) for f in self.assignment))
        object.__setattr__(self, "expanded", tuple((int(i), int(f)) for i, f in self.expanded))
        object.__setattr__(self, "replication", dict(self.replication))
        if len(self.assignment) != len(self.labels):
            raise ValidationError("one fold assignment per sample required")
        if any(not 0 <= f < self.k for f in self.assignment):
            raise ValidationError("fold index out of range")
        for i, f in self.expanded:
            if self.assignment[i] != f:
                raise ValidationError(f"replica of sample {i} violates fold co-location")
        per_class: dict[str, list[int]] = {}
        for i, lab in enumerate(self.labels):
            per_class.setdefault(lab, [0] * self.k)[self.assignment[i]] += 1
        for lab, counts in per_class.items():
            if max(counts) - min(counts) > 1:
                raise ValidationError(
                    f"class {lab!r} fold counts {counts} violate the +-1 stratification bound"
                )

    @property
    def n_samples(self) -> int:
        return len(self.labels)


def stratified_folds(labels: Sequence[str], k: int, seed: int) -> FoldPlan:
    """Assign samples to k folds, per-class round-robin after a seeded shuffle.

    Each fold's class counts match the global distribution within +-1 sample
    per class. Classes with fewer than k members trigger a warning (some
    folds get none). Deterministic for a fixed seed.
    """
    labels = tuple(labels)
    n = len(labels)
    if k < 2:
        raise ValidationError("k must be >= 2")
    if k > n:
        raise ValidationError(f"k={k} exceeds sample count {n}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.intp)
    classes: list[str] = []
    for lab in labels:
        if lab not in classes:
            classes.append(lab)
    for cl in classes:
        idx = np.array([i for i, lab in enumerate(labels) if lab == cl], dtype=np.intp)
        if idx.size < k:
            logger.warning("class %r has %d members for %d folds", cl, idx.size, k)
        rng.shuffle(idx)
        for pos, i in enumerate(idx):
            assignment[i] = pos % k
    expanded = tuple((i, int(assignment[i])) for i in range(n))
    return FoldPlan(k, labels, tuple(int(f) for f in assignment), {}, expanded, seed)


def oversample(plan: FoldPlan, factors: Mapping[str, int]) -> FoldPlan:
    """Add extra copies of each sample per its site's factor, co-located in its fold.

    A factor of f adds f extra copies (the sample then appears f+1 times in
    `expanded`). Factors must be >= 0; sites absent from `factors` get 0.
    """
    for site, f in factors.items():
        if f < 0:
            raise ValidationError(f"extra-copy factor for {site!r} must be >= 0")
    expanded: list[tuple[int, int]] = []
    for i, lab in enumerate(plan.labels):
        copies = 1 + int(factors.get(lab, 0))
        expanded.extend((i, plan.assignment[i]) for _ in range(copies))
    return FoldPlan(plan.k, plan.labels, plan.assignment, dict(factors), tuple(expanded), plan.seed)


def cv_split(plan: FoldPlan, validation_fold: int) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, validation indices) over the expanded list.

    Indices are original sample indices, repeated per replica. The two sides
    partition `expanded`, and no original/replica pair straddles the split.
    """
    if not 0 <= validation_fold < plan.k:
        raise ValidationError(f"validation fold {validation_fold} out of range for k={plan.k}")
    train = np.array([i for i, f in plan.expanded if f != validation_fold], dtype=np.intp)
    val = np.array([i for i, f in plan.expanded if f == validation_fold], dtype=np.intp)
    return train, val


def plan_to_json(plan: FoldPlan) -> str:
    payload = {
        "k": plan.k,
        "seed": plan.seed,
        "labels": list(plan.labels),
        "assignment": list(plan.assignment),
        "replication": dict(sorted(plan.replication.items())),
        "expanded": [list(e) for e in plan.expanded],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def plan_from_json(text: str) -> FoldPlan:
    d = json.loads(text)
    return FoldPlan(
        k=int(d["k"]),
        labels=tuple(d["labels"]),
        assignment=tuple(int(x) for x in d["assignment"]),
        replication={str(k): int(v) for k, v in d["replication"].items()},
        expanded=tuple((int(i), int(f)) for i, f in d["expanded"]),
        seed=int(d["seed"]),
    )


def save_plan(plan: FoldPlan, path: str | Path) -> None:
    Path(path).write_text(plan_to_json(plan), encoding="utf-8")


def load_plan(path: str | Path) -> FoldPlan:
    return plan_from_json(Path(path).read_text(encoding="utf-8"))
