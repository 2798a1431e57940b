"""Leave-k-out folds over subjects and task profiles."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Any, Sequence

import numpy as np

from mam.data.dataset import SequencePair
from mam.utils import DataError

__all__ = ["FoldSpec", "make_folds", "split_fold"]


@dataclass(frozen=True)
class FoldSpec:
    """Subjects and profiles held out in one fold."""

    held_out_subjects: tuple[str, ...]
    held_out_profiles: tuple[int, ...]
    fold_index: int
    n_folds: int

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["held_out_subjects"] = list(self.held_out_subjects)
        data["held_out_profiles"] = list(self.held_out_profiles)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FoldSpec:
        return cls(
            held_out_subjects=tuple(str(s) for s in data["held_out_subjects"]),
            held_out_profiles=tuple(int(p) for p in data["held_out_profiles"]),
            fold_index=int(data["fold_index"]),
            n_folds=int(data["n_folds"]),
        )

    def is_held_out(self, pair: SequencePair) -> bool:
        return (
            pair.subject_id in self.held_out_subjects
            or pair.profile_label in self.held_out_profiles
        )


def _rotate(items: Sequence[Any], k: int, fold: int) -> tuple[Any, ...]:
    return tuple(items[(fold * k + j) % len(items)] for j in range(k))


def make_folds(
    pairs: Sequence[SequencePair],
    k_subjects: int,
    k_profiles: int,
    n_folds: int = 0,
    seed: int = 0,
) -> list[FoldSpec]:
    """Build ``n_folds`` leave-k-out folds.

    ``n_folds = 0`` builds the smallest number of folds that covers every
    subject, ``ceil(n_subjects / k_subjects)``.

    Subjects (and profiles) are permuted with ``seed`` and fold ``i`` holds out
    the ``i``-th consecutive block of ``k`` of them, wrapping around, so the
    folds jointly cover every subject. With ``n_folds * k_subjects`` equal to
    the subject count the held-out sets partition the subjects.

    Raises:
        ValueError: If fewer than two subjects exist or the k values are
            infeasible.
    """
    subjects = sorted({p.subject_id for p in pairs})
    profiles = sorted({p.profile_label for p in pairs})
    if len(subjects) < 2:  # noqa: PLR2004
        ve = f"Cross-validation needs at least 2 subjects, found {len(subjects)}"
        raise ValueError(ve)
    if not 1 <= k_subjects < len(subjects):
        ve = f"k_subjects must lie in [1, {len(subjects) - 1}], got {k_subjects}"
        raise ValueError(ve)
    if n_folds == 0:
        n_folds = math.ceil(len(subjects) / k_subjects)
    if n_folds < 1 or n_folds * k_subjects < len(subjects):
        ve = (
            f"{n_folds} folds holding out {k_subjects} subject(s) each cannot "
            f"cover {len(subjects)} subjects"
        )
        raise ValueError(ve)
    if k_profiles and not 0 < k_profiles < len(profiles):
        ve = f"k_profiles must lie in [0, {len(profiles) - 1}], got {k_profiles}"
        raise ValueError(ve)

    rng = np.random.default_rng(seed)
    subject_order = [subjects[i] for i in rng.permutation(len(subjects))]
    profile_order = [profiles[i] for i in rng.permutation(len(profiles))]
    return [
        FoldSpec(
            held_out_subjects=_rotate(subject_order, k_subjects, i),
            held_out_profiles=_rotate(profile_order, k_profiles, i) if k_profiles else (),
            fold_index=i,
            n_folds=n_folds,
        )
        for i in range(n_folds)
    ]


def split_fold(
    pairs: Sequence[SequencePair], fold: FoldSpec
) -> tuple[list[SequencePair], list[SequencePair]]:
    """Split pairs into (train, test) for ``fold``.

    Train excludes every held-out subject and profile; test is every pair
    touching either.

    Raises:
        DataError: If either split is empty.
    """
    train = [p for p in pairs if not fold.is_held_out(p)]
    test = [p for p in pairs if fold.is_held_out(p)]
    if not train or not test:
        de = (
            f"Fold {fold.fold_index} has an empty split "
            f"(train={len(train)}, test={len(test)})"
        )
        raise DataError(de)
    return train, test
