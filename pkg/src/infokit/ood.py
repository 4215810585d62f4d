"""Positive/negative migration splitting of cross-domain training sets.

Every training sample gets the Euclidean distance to its own class's
test-domain prototype; within each class (default) or globally, the
smallest-distance fraction becomes the positive migration subset - the
samples closest to the test domain - and the rest the negative subset.
The split depends only on distance ranks, with ties broken by ascending
sample id. All functions here are pure over immutable tables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyDistances, InvariantViolation
from .iei import ClassPrototypes, class_prototypes
from .store import EmbeddingTable


@dataclass(frozen=True, eq=False)
class MigrationDistances:
    """Per training sample: distance to its own class's test-domain prototype."""

    sample_ids: np.ndarray  # int64
    labels: np.ndarray  # int32
    distances: np.ndarray  # float64, >= 0

    def __post_init__(self) -> None:
        if not (len(self.sample_ids) == len(self.labels) == len(self.distances)):
            raise InvariantViolation("migration distance columns must share one length")
        if len(self.distances) and not np.isfinite(self.distances).all():
            raise InvariantViolation("migration distances must be finite")

    def __len__(self) -> int:
        return len(self.distances)


@dataclass(frozen=True, eq=False)
class MigrationSplit:
    positive_ids: np.ndarray  # int64, ascending
    negative_ids: np.ndarray  # int64, ascending
    positive_fraction: float
    per_class: bool

    def to_json_dict(self) -> dict:
        return {
            "positive_fraction": self.positive_fraction,
            "per_class": self.per_class,
            "positive_ids": [int(i) for i in self.positive_ids],
            "negative_ids": [int(i) for i in self.negative_ids],
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "MigrationSplit":
        return MigrationSplit(
            positive_ids=np.array(sorted(int(i) for i in obj["positive_ids"]), dtype=np.int64),
            negative_ids=np.array(sorted(int(i) for i in obj["negative_ids"]), dtype=np.int64),
            positive_fraction=float(obj["positive_fraction"]),
            per_class=bool(obj["per_class"]),
        )


def test_domain_prototypes(test: EmbeddingTable) -> ClassPrototypes:
    """Per-class mean of the test-domain features; every class must be present."""
    protos = class_prototypes(test)
    protos.require_complete()
    return protos


def migration_distances(train: EmbeddingTable, prototypes: ClassPrototypes) -> MigrationDistances:
    """Euclidean distance from each training sample to its own class's test prototype."""
    if train.dim != prototypes.dim:
        raise DimMismatch(f"train dim {train.dim} != prototype dim {prototypes.dim}")
    if train.n_classes != prototypes.n_classes:
        raise DimMismatch(f"train classes {train.n_classes} != prototype classes {prototypes.n_classes}")
    prototypes.require_complete()
    diff = train.features.astype(np.float64) - prototypes.vectors[train.labels]
    return MigrationDistances(
        sample_ids=train.sample_ids.copy(),
        labels=train.labels.copy(),
        distances=np.sqrt((diff * diff).sum(axis=1)),
    )


def migration_split(
    distances: MigrationDistances,
    positive_fraction: float = 0.4,
    per_class: bool = True,
) -> MigrationSplit:
    """Mark the smallest-distance fraction positive; everything else negative.

    ``per_class=True`` (default) takes floor(fraction * n_c) from each class,
    so no single easy class can monopolize the positive set. A fraction of
    1.0 marks everything positive (useful as an identity check); fractions
    outside (0, 1] are rejected.
    """
    if len(distances) == 0:
        raise EmptyDistances("no distances to split")
    if not (0.0 < positive_fraction <= 1.0):
        raise ValueError(f"positive_fraction must lie in (0, 1], got {positive_fraction}")
    positives: list[np.ndarray] = []
    if per_class:
        for c in np.unique(distances.labels):
            rows = np.flatnonzero(distances.labels == c)
            take = int(math.floor(positive_fraction * len(rows)))
            order = rows[np.lexsort((distances.sample_ids[rows], distances.distances[rows]))]
            positives.append(distances.sample_ids[order[:take]])
    else:
        take = int(math.floor(positive_fraction * len(distances)))
        order = np.lexsort((distances.sample_ids, distances.distances))
        positives.append(distances.sample_ids[order[:take]])
    pos = np.sort(np.concatenate(positives)) if positives else np.array([], dtype=np.int64)
    neg = np.setdiff1d(distances.sample_ids, pos)
    return MigrationSplit(
        positive_ids=pos.astype(np.int64),
        negative_ids=neg.astype(np.int64),
        positive_fraction=positive_fraction,
        per_class=per_class,
    )
