"""Budgeted goodset/badset selection and the addition/reduction loops.

Selection is rank-based: within each class the budgeted number of highest
(goodset) or lowest (badset) scoring samples is taken, ties broken by
ascending sample id, so any strictly increasing transform of the scores
yields the identical plan. Class budgets come either from an even split
(balanced) or proportional to each class's mean pool score (unbalanced),
both using largest-remainder rounding with class-index tie-breaks and
per-class caps with overflow redistribution.

The loops re-score every round with artifacts fitted on the current train
set only, then move the selected rows and re-fit the evaluation probe.
Round t+1 depends on round t, so the round sequence is strictly serial;
scoring within a round is free to parallelize.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np

from .errors import EmptyScores, InsufficientPool
from .iei import (
    Indicator,
    ScoreTable,
    class_prototypes,
    distance_entropy_scores,
    entropy_scores_from_logits,
    metric_scores,
)
from .probe import ProbeConfig, evaluate, fit_probe, predict_logits
from .store import EmbeddingTable, class_counts, merge, subset

_PROPORTIONAL_EPS = 1e-9

# scorer(train, target, round_index) -> ScoreTable over target's rows
Scorer = Callable[[EmbeddingTable, EmbeddingTable, int], ScoreTable]


@dataclass(frozen=True)
class BudgetScheme:
    kind: str  # "balanced" | "unbalanced"
    total_budget: int

    def __post_init__(self) -> None:
        if self.kind not in ("balanced", "unbalanced"):
            raise ValueError(f"unknown budget scheme {self.kind!r}")
        if self.total_budget < 1:
            raise ValueError("total_budget must be >= 1")

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "total_budget": self.total_budget}


@dataclass(frozen=True, eq=False)
class ClassStats:
    """Per-class score statistics over a pool: count, mean, population variance, ACI."""

    counts: np.ndarray  # int64, (n_classes,)
    means: np.ndarray  # float64, NaN where count == 0
    variances: np.ndarray  # float64, NaN where count == 0
    aci: np.ndarray | None = None  # float64 once populated, NaN where count == 0
    degenerate: bool = False

    @property
    def n_classes(self) -> int:
        return len(self.counts)

    def to_json_dict(self) -> dict:
        out = {"degenerate": self.degenerate, "classes": []}
        for c in range(self.n_classes):
            entry = {
                "label": c,
                "count": int(self.counts[c]),
                "mean": None if np.isnan(self.means[c]) else float(self.means[c]),
                "variance": None if np.isnan(self.variances[c]) else float(self.variances[c]),
            }
            if self.aci is not None:
                entry["aci"] = None if np.isnan(self.aci[c]) else float(self.aci[c])
            out["classes"].append(entry)
        return out


@dataclass(frozen=True, eq=False)
class SelectionPlan:
    """Deterministic outcome of one budgeted selection."""

    selected_ids: np.ndarray  # int64, grouped by class, best-rank first within class
    per_class_budget: dict[int, int]
    direction: str  # "goodset" | "badset"
    indicator: str
    scheme: BudgetScheme
    exhausted: bool = False  # total pool was smaller than the requested budget
    capped_classes: tuple[int, ...] = ()  # classes whose budget was limited by availability

    def to_json_dict(self) -> dict:
        return {
            "selected_ids": [int(i) for i in self.selected_ids],
            "per_class_budget": {str(c): int(b) for c, b in sorted(self.per_class_budget.items())},
            "direction": self.direction,
            "indicator": self.indicator,
            "scheme": self.scheme.to_json_dict(),
            "exhausted": self.exhausted,
            "capped_classes": list(self.capped_classes),
        }


@dataclass(frozen=True)
class RoundPoint:
    round_index: int
    train_size: int
    accuracy: float
    plan: SelectionPlan | None  # None for the round-0 baseline point


@dataclass(frozen=True, eq=False)
class CurveRecord:
    """(round, train size, probe accuracy) points for one addition/reduction arm."""

    mode: str  # "addition" | "reduction"
    indicator: str
    direction: str
    scheme: BudgetScheme
    probe_config: ProbeConfig
    rounds: tuple[RoundPoint, ...]
    exhausted: bool = False

    def sizes(self) -> list[int]:
        return [p.train_size for p in self.rounds]

    def accuracies(self) -> list[float]:
        return [p.accuracy for p in self.rounds]

    def to_csv_text(self, config_line: str | None = None) -> str:
        lines = []
        if config_line is not None:
            lines.append(f"# {config_line}")
        lines.append("round,size,accuracy")
        for p in self.rounds:
            lines.append(f"{p.round_index},{p.train_size},{repr(p.accuracy)}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "indicator": self.indicator,
            "direction": self.direction,
            "scheme": self.scheme.to_json_dict(),
            "probe": self.probe_config.to_json_dict(),
            "exhausted": self.exhausted,
            "rounds": [
                {
                    "round": p.round_index,
                    "train_size": p.train_size,
                    "accuracy": p.accuracy,
                    "plan": None if p.plan is None else p.plan.to_json_dict(),
                }
                for p in self.rounds
            ],
        }


# -- per-class statistics -----------------------------------------------------


def class_distribution_stats(scores: ScoreTable) -> ClassStats:
    """Two-pass per-class mean and population variance of the scores."""
    if len(scores) == 0:
        raise EmptyScores("cannot compute class statistics of an empty score table")
    k = scores.n_classes
    counts = np.bincount(scores.labels, minlength=k).astype(np.int64)
    sums = np.bincount(scores.labels, weights=scores.scores, minlength=k)
    means = np.full(k, np.nan)
    live = counts > 0
    means[live] = sums[live] / counts[live]
    centered_sq = (scores.scores - np.where(live, means, 0.0)[scores.labels]) ** 2
    sq_sums = np.bincount(scores.labels, weights=centered_sq, minlength=k)
    variances = np.full(k, np.nan)
    variances[live] = sq_sums[live] / counts[live]
    return ClassStats(counts=counts, means=means, variances=variances)


def aci(stats: ClassStats) -> ClassStats:
    """Populate the Amount of Class Information: the negated z-score of each
    class's mean pool score across classes.

    Classes whose pool samples carry low mean scores have little left to
    offer per sample, which means their class-level information basis is
    already high; negating the z-score encodes exactly that inversion. When
    every class mean is identical the z-scores are undefined, so all ACI
    values are 0 and the stats are flagged degenerate.
    """
    live = stats.counts > 0
    if not live.any():
        raise EmptyScores("no class has any samples")
    m = stats.means[live]
    mu = float(m.mean())
    sd = float(np.sqrt(((m - mu) ** 2).mean()))
    values = np.full(stats.n_classes, np.nan)
    if sd == 0.0:
        values[live] = 0.0
        return replace(stats, aci=values, degenerate=True)
    values[live] = -(stats.means[live] - mu) / sd
    return replace(stats, aci=values, degenerate=False)


# -- budget allocation --------------------------------------------------------


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation summing to ``total``: floors plus top fractional remainders,
    remainder ties broken by class index."""
    base = np.floor(quotas).astype(np.int64)
    residual = total - int(base.sum())
    if residual > 0:
        frac = quotas - base
        order = np.lexsort((np.arange(len(quotas)), -frac))
        base[order[:residual]] += 1
    return base


def _allocate(weights: np.ndarray, available: np.ndarray, total: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Proportional largest-remainder allocation with per-class caps.

    Overflow past a class's availability is redistributed over the remaining
    classes by the same proportional rule. Returns the allocation and the
    classes whose requested share was cut by their cap.
    """
    k = len(weights)
    alloc = np.zeros(k, dtype=np.int64)
    capped: set[int] = set()
    remaining = total
    while remaining > 0:
        room = available - alloc
        live = room > 0
        if not live.any():
            break
        w = np.where(live, weights, 0.0)
        if w.sum() <= 0.0:
            w = live.astype(np.float64)
        quotas = remaining * (w / w.sum())
        give = _largest_remainder(quotas, remaining)
        over = give > room
        if over.any():
            capped.update(np.flatnonzero(over & live).tolist())
            give = np.minimum(give, room)
        if give.sum() == 0:
            # float pathologies only: fall back to index-order fill
            idx = int(np.flatnonzero(live)[0])
            give[idx] = min(remaining, int(room[idx]))
        alloc += give
        remaining = total - int(alloc.sum())
    return alloc, tuple(sorted(capped))


def class_budgets(
    stats: ClassStats, scheme: BudgetScheme, available: Mapping[int, int]
) -> dict[int, int]:
    """Per-class budgets under the scheme, capped at availability.

    balanced: even split. unbalanced: proportional to max(mean score, 0)
    plus a small epsilon, so classes with richer remaining pools receive
    more of the budget.
    """
    k = stats.n_classes
    avail = np.array([int(available.get(c, 0)) for c in range(k)], dtype=np.int64)
    if avail.min() < 0:
        raise ValueError("availability counts must be non-negative")
    if int(avail.sum()) < scheme.total_budget:
        raise InsufficientPool(
            f"budget {scheme.total_budget} exceeds available pool of {int(avail.sum())}"
        )
    weights = _scheme_weights(stats, scheme, avail)
    alloc, _ = _allocate(weights, avail, scheme.total_budget)
    return {c: int(alloc[c]) for c in range(k)}


def _scheme_weights(stats: ClassStats, scheme: BudgetScheme, avail: np.ndarray) -> np.ndarray:
    if scheme.kind == "balanced":
        return np.ones(stats.n_classes, dtype=np.float64)
    means = np.nan_to_num(stats.means, nan=0.0)
    return np.maximum(means, 0.0) + _PROPORTIONAL_EPS


# -- selection ----------------------------------------------------------------


def select(
    scores: ScoreTable,
    scheme: BudgetScheme,
    direction: str,
    stats: ClassStats | None = None,
    allow_exhaustion: bool = False,
) -> SelectionPlan:
    """Take the budgeted top (goodset) or bottom (badset) scorers per class.

    Ties break toward the lower sample id, so plans are deterministic and
    depend only on score ranks. With ``allow_exhaustion`` a budget larger
    than the pool selects everything and flags the plan instead of raising.
    """
    if direction not in ("goodset", "badset"):
        raise ValueError(f"direction must be goodset or badset, got {direction!r}")
    if len(scores) == 0:
        raise EmptyScores("cannot select from an empty score table")
    if stats is None:
        stats = class_distribution_stats(scores)
    pool_size = len(scores)
    total = scheme.total_budget
    exhausted = False
    if total > pool_size:
        if not allow_exhaustion:
            raise InsufficientPool(f"budget {total} exceeds pool size {pool_size}")
        total = pool_size
        exhausted = True
    avail = np.array([int(stats.counts[c]) for c in range(stats.n_classes)], dtype=np.int64)
    weights = _scheme_weights(stats, scheme, avail)
    alloc, capped = _allocate(weights, avail, total)

    chosen: list[np.ndarray] = []
    for c in range(stats.n_classes):
        take = int(alloc[c])
        if take == 0:
            continue
        rows = np.flatnonzero(scores.labels == c)
        key = -scores.scores[rows] if direction == "goodset" else scores.scores[rows]
        order = rows[np.lexsort((scores.sample_ids[rows], key))]
        chosen.append(scores.sample_ids[order[:take]])
    selected = np.concatenate(chosen) if chosen else np.array([], dtype=np.int64)
    return SelectionPlan(
        selected_ids=selected,
        per_class_budget={c: int(alloc[c]) for c in range(stats.n_classes)},
        direction=direction,
        indicator=scores.indicator,
        scheme=scheme,
        exhausted=exhausted,
        capped_classes=capped,
    )


# -- round scorers ------------------------------------------------------------


def make_scorer(indicator: str, probe_config: ProbeConfig | None = None, seed: int = 42) -> Scorer:
    """Build the per-round scoring callback used by the loops.

    Distance-based indicators fit prototypes on the current train set;
    probability entropy fits a probe on the current train set and scores the
    target's logits; "random" draws seeded uniform scores (baseline arm).
    """
    if indicator == Indicator.PROBABILITY_ENTROPY.value:
        cfg = probe_config or ProbeConfig()

        def score_prob(train: EmbeddingTable, target: EmbeddingTable, round_index: int) -> ScoreTable:
            model = fit_probe(train, cfg)
            logits = predict_logits(model, target)
            return entropy_scores_from_logits(target.sample_ids, target.labels, logits, target.n_classes)

        return score_prob
    if indicator == Indicator.DISTANCE_ENTROPY.value:

        def score_dist(train: EmbeddingTable, target: EmbeddingTable, round_index: int) -> ScoreTable:
            return distance_entropy_scores(target, class_prototypes(train))

        return score_dist
    if indicator == Indicator.METRIC.value:

        def score_metric(train: EmbeddingTable, target: EmbeddingTable, round_index: int) -> ScoreTable:
            return metric_scores(target, class_prototypes(train))

        return score_metric
    if indicator == "random":

        def score_random(train: EmbeddingTable, target: EmbeddingTable, round_index: int) -> ScoreTable:
            rng = np.random.default_rng([seed, 0x5EED, round_index])
            return ScoreTable(
                indicator="random",
                sample_ids=target.sample_ids.copy(),
                labels=target.labels.copy(),
                scores=rng.random(target.n_samples),
                n_classes=target.n_classes,
            )

        return score_random
    raise ValueError(f"unknown indicator {indicator!r}")


# -- loops ---------------------------------------------------------------------


def addition_loop(
    base: EmbeddingTable,
    pool: EmbeddingTable,
    eval_table: EmbeddingTable,
    scorer: Scorer,
    indicator: str,
    scheme_kind: str,
    direction: str,
    round_budget: int,
    rounds: int,
    probe_config: ProbeConfig,
) -> CurveRecord:
    """Grow the train set from ``base`` by budgeted selections out of ``pool``.

    Every round: score the pool with artifacts fitted on the current train
    set, select per scheme/direction, move the rows, re-fit the probe, and
    record held-out accuracy. Round 0 is the base-only point.
    """
    if rounds < 0 or round_budget < 1:
        raise ValueError("rounds must be >= 0 and round_budget >= 1")
    train, remaining = base, pool
    points = [RoundPoint(0, train.n_samples, evaluate(fit_probe(train, probe_config), eval_table), None)]
    exhausted = False
    for r in range(1, rounds + 1):
        if remaining.n_samples == 0:
            exhausted = True
            break
        scores = scorer(train, remaining, r)
        stats = aci(class_distribution_stats(scores))
        plan = select(
            scores,
            BudgetScheme(kind=scheme_kind, total_budget=round_budget),
            direction,
            stats=stats,
            allow_exhaustion=True,
        )
        moved = subset(remaining, plan.selected_ids)
        train = merge(train, moved)
        keep = np.setdiff1d(remaining.sample_ids, plan.selected_ids)
        remaining = subset(remaining, keep)
        accuracy = evaluate(fit_probe(train, probe_config), eval_table)
        points.append(RoundPoint(r, train.n_samples, accuracy, plan))
        exhausted = exhausted or plan.exhausted or bool(plan.capped_classes)
    return CurveRecord(
        mode="addition",
        indicator=indicator,
        direction=direction,
        scheme=BudgetScheme(kind=scheme_kind, total_budget=round_budget),
        probe_config=probe_config,
        rounds=tuple(points),
        exhausted=exhausted,
    )


def reduction_loop(
    train: EmbeddingTable,
    eval_table: EmbeddingTable,
    scorer: Scorer,
    indicator: str,
    scheme_kind: str,
    direction: str,
    round_budget: int,
    rounds: int,
    probe_config: ProbeConfig,
) -> CurveRecord:
    """Shrink the train set by repeatedly removing the selected subset.

    ``direction`` names the subset being removed: removing the badset keeps
    information-dense rows (the slowly decaying arm), removing the goodset
    keeps the redundant ones.
    """
    if rounds < 0 or round_budget < 1:
        raise ValueError("rounds must be >= 0 and round_budget >= 1")
    if round_budget * rounds >= train.n_samples:
        raise InsufficientPool(
            f"removing {round_budget} x {rounds} rounds would empty a train set of {train.n_samples}"
        )
    current = train
    points = [RoundPoint(0, current.n_samples, evaluate(fit_probe(current, probe_config), eval_table), None)]
    exhausted = False
    for r in range(1, rounds + 1):
        scores = scorer(current, current, r)
        stats = aci(class_distribution_stats(scores))
        plan = select(
            scores,
            BudgetScheme(kind=scheme_kind, total_budget=round_budget),
            direction,
            stats=stats,
            allow_exhaustion=True,
        )
        keep = np.setdiff1d(current.sample_ids, plan.selected_ids)
        current = subset(current, keep)
        accuracy = evaluate(fit_probe(current, probe_config), eval_table)
        points.append(RoundPoint(r, current.n_samples, accuracy, plan))
        exhausted = exhausted or plan.exhausted or bool(plan.capped_classes)
    return CurveRecord(
        mode="reduction",
        indicator=indicator,
        direction=direction,
        scheme=BudgetScheme(kind=scheme_kind, total_budget=round_budget),
        probe_config=probe_config,
        rounds=tuple(points),
        exhausted=exhausted,
    )


def curve_auc(curve: CurveRecord) -> float:
    """Mean accuracy across round points (area proxy for equal-step curves)."""
    accs = curve.accuracies()
    return float(sum(accs) / len(accs))
