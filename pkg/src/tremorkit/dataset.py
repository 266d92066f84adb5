"""Manifest handling: grouped stratified k-fold splits, label merging,
minority oversampling.

Both lateralities of one assessment id always land in the same fold, and
stratification uses the merged 4-class training target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod

MERGED_CLASSES = 4


class OutOfRange(ValueError):
    pass


class InsufficientGroups(ValueError):
    pass


class EmptyClass(ValueError):
    pass


def merge_labels(score: int) -> int:
    """Training target: severities 3 and 4 collapse into one class."""
    if score not in (0, 1, 2, 3, 4):
        raise OutOfRange(f"score must be 0..4, got {score}")
    return min(score, 3)


@dataclass
class FoldAssignment:
    fold_of: dict[str, int]     # assessment_id -> fold
    k: int

    def fold(self, assessment_id: str) -> int:
        return self.fold_of[assessment_id]

    def val_fold(self, test_fold: int) -> int:
        return (test_fold + 1) % self.k

    def roles(self, rows, test_fold: int):
        """Split manifest rows into (train, val, test) for one experiment."""
        val = self.val_fold(test_fold)
        train, vrows, trows = [], [], []
        for r in rows:
            f = self.fold_of[r.assessment_id]
            if f == test_fold:
                trows.append(r)
            elif f == val:
                vrows.append(r)
            else:
                train.append(r)
        return train, vrows, trows


def make_folds(rows, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Stratified k-fold over assessment-id groups.

    Groups are bucketed by the sorted tuple of their merged scores (so a
    left/right pair with scores (1, 0) strata together with (0, 1)), each
    bucket is shuffled deterministically, and groups are dealt round-robin
    into folds with the dealing position carried across buckets.
    """
    groups: dict[str, list[int]] = {}
    for r in rows:
        groups.setdefault(r.assessment_id, []).append(merge_labels(r.score))

    class_group_counts = np.zeros(MERGED_CLASSES, dtype=int)
    for labels in groups.values():
        for c in set(labels):
            class_group_counts[c] += 1
    present = np.unique([c for labels in groups.values() for c in labels])
    for c in present:
        if class_group_counts[c] < k:
            raise InsufficientGroups(
                f"merged class {c} spans only {class_group_counts[c]} "
                f"assessment ids; need at least {k}")

    buckets: dict[tuple, list[str]] = {}
    for gid, labels in groups.items():
        buckets.setdefault(tuple(sorted(labels)), []).append(gid)

    rng = rngmod.substream(seed, "folds")
    fold_of: dict[str, int] = {}
    cursor = 0
    # rarest strata first so their round-robin spread is exact
    for key in sorted(buckets, key=lambda kk: (len(buckets[kk]), kk)):
        ids = sorted(buckets[key])
        rng.shuffle(ids)
        for gid in ids:
            fold_of[gid] = cursor % k
            cursor += 1
    return FoldAssignment(fold_of=fold_of, k=k)


def fold_sizes(assignment: FoldAssignment, rows) -> list[int]:
    sizes = [0] * assignment.k
    for r in rows:
        sizes[assignment.fold_of[r.assessment_id]] += 1
    return sizes


def oversample(rows, seed: int = 0):
    """Replicate minority classes up to the majority-class count.

    Full copies first, then a uniform (seeded, without-replacement) sample
    for the remainder. Input rows always survive; only training data should
    ever pass through here.
    """
    by_class: dict[int, list] = {}
    for r in rows:
        by_class.setdefault(merge_labels(r.score), []).append(r)
    for c, members in by_class.items():
        if not members:
            raise EmptyClass(f"merged class {c} has no rows")
    target = max(len(m) for m in by_class.values())
    rng = rngmod.substream(seed, "oversample")
    out = []
    for c in sorted(by_class):
        members = by_class[c]
        copies, rem = divmod(target, len(members))
        out.extend(members * copies)
        if rem:
            idx = rng.choice(len(members), size=rem, replace=False)
            out.extend(members[i] for i in sorted(idx))
    return out
