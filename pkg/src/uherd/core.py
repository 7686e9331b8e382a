"""Pool bookkeeping shared by the selectors and the experiment loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UNKNOWN_LABEL = -1


class PreconditionError(ValueError):
    """An operation was called with inputs outside its contract."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureMatrix:
    """Embedding table ``g(x)`` of the pool, one row per sample.

    ``norm_bound`` is the radius ``R`` of a ball containing every row; it is
    computed from the data when not given.
    """

    values: np.ndarray
    norm_bound: float = field(default=-1.0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise PreconditionError(f"features must be a non-empty 2-d array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise PreconditionError("features contain non-finite entries")
        max_norm = float(np.sqrt((values * values).sum(axis=1)).max())
        bound = max_norm if self.norm_bound < 0 else float(self.norm_bound)
        if max_norm > bound * (1 + 1e-9) + 1e-300:
            raise PreconditionError(f"norm_bound {bound} is below the largest row norm {max_norm}")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "norm_bound", bound)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.rows


@dataclass(frozen=True)
class PoolState:
    """Disjoint labeled / unlabeled index sets over a pool of ``N`` points.

    ``labels`` holds the oracle label of every pool point (``-1`` when not
    known). Index sets are kept sorted so iteration order is deterministic.
    """

    labeled: np.ndarray
    unlabeled: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labeled = np.sort(np.asarray(self.labeled, dtype=np.int64).ravel())
        unlabeled = np.sort(np.asarray(self.unlabeled, dtype=np.int64).ravel())
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        n = labels.shape[0]
        if self.num_classes < 2:
            raise PreconditionError(f"num_classes must be >= 2, got {self.num_classes}")
        if np.any(labels >= self.num_classes) or np.any(labels < UNKNOWN_LABEL):
            raise PreconditionError("labels must lie in [0, num_classes) or be -1 (unknown)")
        both = np.concatenate([labeled, unlabeled])
        if both.size != n or not np.array_equal(np.sort(both), np.arange(n)):
            raise PreconditionError("labeled and unlabeled must partition the pool indices")
        if labeled.size and np.any(labels[labeled] == UNKNOWN_LABEL):
            raise PreconditionError("every labeled index needs a known label")
        object.__setattr__(self, "labeled", _frozen(labeled))
        object.__setattr__(self, "unlabeled", _frozen(unlabeled))
        object.__setattr__(self, "labels", _frozen(labels))

    @classmethod
    def initial(cls, labels: Sequence[int], num_classes: int | None = None,
                labeled: Sequence[int] = ()) -> "PoolState":
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = max(int(labels.max()) + 1, 2)
        labeled = np.asarray(labeled, dtype=np.int64)
        unlabeled = np.setdiff1d(np.arange(labels.size), labeled)
        return cls(labeled, unlabeled, labels, num_classes)

    @property
    def pool_size(self) -> int:
        return self.labels.shape[0]

    def labeled_labels(self) -> np.ndarray:
        return self.labels[self.labeled]


def mark_labeled(state: PoolState, batch: Sequence[int]) -> PoolState:
    """Move ``batch`` from the unlabeled set to the labeled set."""
    batch = np.asarray(batch, dtype=np.int64).ravel()
    if batch.size == 0:
        return state
    if np.unique(batch).size != batch.size:
        raise PreconditionError(f"batch contains duplicate indices: {batch.tolist()}")
    missing = np.setdiff1d(batch, state.unlabeled)
    if missing.size:
        raise PreconditionError(f"indices not in the unlabeled set: {missing.tolist()}")
    return PoolState(
        labeled=np.concatenate([state.labeled, batch]),
        unlabeled=np.setdiff1d(state.unlabeled, batch),
        labels=state.labels,
        num_classes=state.num_classes,
    )


@dataclass(frozen=True)
class ScheduleConfig:
    """Per-round query budgets ``B_t`` and the experiment seed."""

    budgets: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        budgets = tuple(int(b) for b in self.budgets)
        if any(b < 1 for b in budgets):
            raise PreconditionError(f"every budget must be >= 1, got {budgets}")
        object.__setattr__(self, "budgets", budgets)

    @property
    def num_rounds(self) -> int:
        return len(self.budgets)

    def check_feasible(self, num_unlabeled: int) -> None:
        if sum(self.budgets) > num_unlabeled:
            raise PreconditionError(
                f"schedule requests {sum(self.budgets)} labels but only {num_unlabeled} are unlabeled"
            )
