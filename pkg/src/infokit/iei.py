"""Per-sample informativeness scoring over embedding tables.

Three indicators, each one non-negative scalar per sample:

* distance entropy  - Shannon entropy, in bits, of the softmax over the
  negated Euclidean distances from the sample's feature vector to every
  class prototype. Edge-of-distribution samples score high.
* probability entropy - entropy, in bits, of the softmax over a stored
  classifier logit row. Uncertain samples score high.
* metric            - plain Euclidean distance from the sample to its
  own class prototype. Far-from-center samples score high.

Prototypes are unweighted per-class means, accumulated in float64 even
though storage is float32. Scoring is deterministic: rows are processed
in canonical (ascending id) order and reductions are fixed-order, so
results do not depend on any worker sharding an embedder might apply.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    AbsentClass,
    DimMismatch,
    EmptyScores,
    EmptyTable,
    InvariantViolation,
    MalformedHeader,
    MissingLogits,
)
from .store import EmbeddingTable, make_table, write_bytes_atomic


class Indicator(str, Enum):
    DISTANCE_ENTROPY = "distance_entropy"
    PROBABILITY_ENTROPY = "probability_entropy"
    METRIC = "metric"


# plain strings are accepted anywhere an indicator is stored; this set is what
# the scorers themselves emit ("random" additionally appears in CLI baselines)
INDICATOR_NAMES = tuple(i.value for i in Indicator)


@dataclass(frozen=True, eq=False)
class ClassPrototypes:
    """Per-class mean feature vectors; ``present[c]`` is False for classes with no support."""

    vectors: np.ndarray  # float64, (n_classes, dim)
    present: np.ndarray  # bool, (n_classes,)

    @property
    def n_classes(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.present.shape != (self.vectors.shape[0],):
            raise InvariantViolation("prototype arrays have inconsistent shapes")
        if self.present.any() and not np.isfinite(self.vectors[self.present]).all():
            raise InvariantViolation("prototype vectors contain NaN or Inf")

    def require_complete(self) -> None:
        if not self.present.all():
            absent = np.flatnonzero(~self.present).tolist()
            raise AbsentClass(f"classes with zero support samples: {absent}")


@dataclass(frozen=True, eq=False)
class DistanceVector:
    """Euclidean distances from one feature vector to every class prototype."""

    values: np.ndarray  # float64, (n_classes,)

    def __post_init__(self) -> None:
        if self.values.ndim != 1 or not np.isfinite(self.values).all() or (self.values < 0).any():
            raise InvariantViolation("distance vector must be finite and non-negative")


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    """A normalized probability vector; zero entries are allowed (one-hot is legal)."""

    values: np.ndarray  # float64, (n_classes,)

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 1 or not np.isfinite(v).all():
            raise InvariantViolation("probability vector must be finite")
        if (v < 0).any() or (v > 1).any() or abs(float(v.sum()) - 1.0) > 1e-6:
            raise InvariantViolation("probabilities must lie in [0, 1] and sum to 1 within 1e-6")


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """One score per sample, tagged with the indicator that produced it."""

    indicator: str
    sample_ids: np.ndarray  # int64
    labels: np.ndarray  # int32
    scores: np.ndarray  # float64
    n_classes: int

    def __post_init__(self) -> None:
        if not (len(self.sample_ids) == len(self.labels) == len(self.scores)):
            raise InvariantViolation("score table columns must share one length")
        if len(self.scores) and (not np.isfinite(self.scores).all() or self.scores.min() < 0):
            raise InvariantViolation("scores must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.scores)

    def to_json_dict(self) -> dict:
        return {
            "indicator": self.indicator,
            "n_classes": self.n_classes,
            "samples": [
                {"id": int(i), "label": int(l), "score": float(s)}
                for i, l, s in zip(self.sample_ids, self.labels, self.scores)
            ],
        }


def score_table_to_csv(scores: ScoreTable, path: str | Path, config_line: str | None = None) -> None:
    """Write ``id,label,indicator,score`` rows (full-precision floats)."""
    lines = []
    if config_line is not None:
        lines.append(f"# {config_line}")
    lines.append("id,label,indicator,score")
    for i, l, s in zip(scores.sample_ids, scores.labels, scores.scores):
        lines.append(f"{int(i)},{int(l)},{scores.indicator},{repr(float(s))}")
    write_bytes_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def score_table_from_csv(path: str | Path, n_classes: int | None = None) -> ScoreTable:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["id", "label", "indicator", "score"]:
        raise MalformedHeader(f"{path}: expected header id,label,indicator,score")
    body = rows[1:]
    if not body:
        raise EmptyScores(f"{path}: no score rows")
    indicators = {r[2] for r in body}
    if len(indicators) != 1:
        raise InvariantViolation(f"{path}: mixed indicators {sorted(indicators)}")
    ids = np.array([int(r[0]) for r in body], dtype=np.int64)
    labels = np.array([int(r[1]) for r in body], dtype=np.int32)
    vals = np.array([float(r[3]) for r in body], dtype=np.float64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    return ScoreTable(indicator=body[0][2], sample_ids=ids, labels=labels, scores=vals, n_classes=n_classes)


# -- prototypes and per-sample primitives ------------------------------------


def class_prototypes(table: EmbeddingTable) -> ClassPrototypes:
    """Unweighted per-class mean of feature rows; empty classes are flagged absent."""
    if table.n_samples == 0:
        raise EmptyTable("cannot compute prototypes of an empty table")
    feats = table.features.astype(np.float64)
    sums = np.zeros((table.n_classes, table.dim), dtype=np.float64)
    np.add.at(sums, table.labels, feats)
    counts = np.bincount(table.labels, minlength=table.n_classes).astype(np.float64)
    present = counts > 0
    vectors = np.zeros_like(sums)
    vectors[present] = sums[present] / counts[present, None]
    return ClassPrototypes(vectors=vectors, present=present)


def distance_vector(feature: np.ndarray, prototypes: ClassPrototypes) -> DistanceVector:
    """Euclidean distance from one feature vector to every prototype."""
    feature = np.asarray(feature, dtype=np.float64).reshape(-1)
    if feature.shape[0] != prototypes.dim:
        raise DimMismatch(f"feature dim {feature.shape[0]} != prototype dim {prototypes.dim}")
    prototypes.require_complete()
    diff = prototypes.vectors - feature[None, :]
    return DistanceVector(values=np.sqrt((diff * diff).sum(axis=1)))


def prototype_probabilities(distances: DistanceVector) -> ProbabilityVector:
    """Softmax over negated distances, stabilized by shifting with the minimum distance.

    The shift leaves the result mathematically unchanged and makes huge
    distance values safe to exponentiate.
    """
    a = distances.values
    e = np.exp(-(a - a.min()))
    return ProbabilityVector(values=e / e.sum())


def shannon_entropy(p: ProbabilityVector) -> float:
    """Entropy in bits, with 0*log(1/0) taken as 0 so one-hot vectors score 0."""
    return float(_entropy_bits_rows(p.values[None, :])[0])


def _entropy_bits_rows(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log2(p), 0.0)
    return -terms.sum(axis=1)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _distance_matrix(features: np.ndarray, vectors: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """(n, c) Euclidean distances in float64, row-chunked to bound memory."""
    n = features.shape[0]
    out = np.empty((n, vectors.shape[0]), dtype=np.float64)
    for start in range(0, n, chunk):
        block = features[start:start + chunk].astype(np.float64)
        diff = block[:, None, :] - vectors[None, :, :]
        out[start:start + chunk] = np.sqrt(np.einsum("ncd,ncd->nc", diff, diff))
    return out


def _check_dims(table: EmbeddingTable, prototypes: ClassPrototypes) -> None:
    if table.dim != prototypes.dim:
        raise DimMismatch(f"table dim {table.dim} != prototype dim {prototypes.dim}")
    if table.n_classes != prototypes.n_classes:
        raise DimMismatch(f"table has {table.n_classes} classes, prototypes {prototypes.n_classes}")


# -- batch scorers ------------------------------------------------------------


def distance_entropy_scores(table: EmbeddingTable, prototypes: ClassPrototypes) -> ScoreTable:
    """Distance entropy for every row: softmax(-distances) fed through Shannon entropy."""
    _check_dims(table, prototypes)
    prototypes.require_complete()
    d = _distance_matrix(table.features, prototypes.vectors)
    p = _softmax_rows(-d)
    return ScoreTable(
        indicator=Indicator.DISTANCE_ENTROPY.value,
        sample_ids=table.sample_ids.copy(),
        labels=table.labels.copy(),
        scores=_entropy_bits_rows(p),
        n_classes=table.n_classes,
    )


def probability_entropy_scores(table: EmbeddingTable) -> ScoreTable:
    """Entropy of the stored logit rows after softmax normalization."""
    if table.logits is None:
        raise MissingLogits("table carries no logits; extract them or use a distance indicator")
    p = _softmax_rows(table.logits.astype(np.float64))
    return ScoreTable(
        indicator=Indicator.PROBABILITY_ENTROPY.value,
        sample_ids=table.sample_ids.copy(),
        labels=table.labels.copy(),
        scores=_entropy_bits_rows(p),
        n_classes=table.n_classes,
    )


def entropy_scores_from_logits(
    sample_ids: np.ndarray, labels: np.ndarray, logits: np.ndarray, n_classes: int
) -> ScoreTable:
    """Probability entropy from an externally supplied logit matrix (probe output)."""
    p = _softmax_rows(np.asarray(logits, dtype=np.float64))
    return ScoreTable(
        indicator=Indicator.PROBABILITY_ENTROPY.value,
        sample_ids=np.asarray(sample_ids, dtype=np.int64).copy(),
        labels=np.asarray(labels, dtype=np.int32).copy(),
        scores=_entropy_bits_rows(p),
        n_classes=n_classes,
    )


def metric_scores(table: EmbeddingTable, prototypes: ClassPrototypes) -> ScoreTable:
    """Euclidean distance from every sample to its own class prototype."""
    _check_dims(table, prototypes)
    used = np.unique(table.labels)
    if used.size and not prototypes.present[used].all():
        absent = used[~prototypes.present[used]].tolist()
        raise AbsentClass(f"samples reference absent classes: {absent}")
    diff = table.features.astype(np.float64) - prototypes.vectors[table.labels]
    return ScoreTable(
        indicator=Indicator.METRIC.value,
        sample_ids=table.sample_ids.copy(),
        labels=table.labels.copy(),
        scores=np.sqrt((diff * diff).sum(axis=1)),
        n_classes=table.n_classes,
    )


def l2_normalized(table: EmbeddingTable) -> EmbeddingTable:
    """Optional preprocessing: scale every feature row to unit L2 norm. Off by default everywhere."""
    norms = np.linalg.norm(table.features.astype(np.float64), axis=1)
    if table.n_samples and norms.min() == 0.0:
        raise InvariantViolation("cannot L2-normalize a zero feature row")
    feats = (table.features.astype(np.float64) / norms[:, None]).astype(np.float32) if table.n_samples else table.features
    return make_table(
        table.sample_ids,
        table.labels,
        feats,
        table.n_classes,
        logits=table.logits,
        domain_tag=table.domain_tag,
        class_names=table.manifest.class_names,
        provenance=table.manifest.provenance,
    )


def score_with_indicator(
    indicator: str | Indicator,
    table: EmbeddingTable,
    prototypes: ClassPrototypes | None = None,
) -> ScoreTable:
    """Dispatch helper: route a table through the named indicator."""
    value = indicator.value if isinstance(indicator, Indicator) else indicator
    if value == Indicator.PROBABILITY_ENTROPY.value:
        return probability_entropy_scores(table)
    if prototypes is None:
        raise AbsentClass("distance-based indicators need prototypes")
    if value == Indicator.DISTANCE_ENTROPY.value:
        return distance_entropy_scores(table, prototypes)
    if value == Indicator.METRIC.value:
        return metric_scores(table, prototypes)
    raise ValueError(f"unknown indicator {value!r}; expected one of {INDICATOR_NAMES}")
