"""Synthetic Gaussian-mixture fixtures.

One spec generates a coherent bundle of tables so the whole tool chain can
run without any external data: a universe split into base/pool, an IID
held-out table for probe evaluation, and (when ``shift`` > 0) a mean-shifted
test-domain table for migration experiments. Class means, per-table sample
noise and shift directions come from separate child streams of the master
seed, so e.g. the eval table is reproducible independently of how many
other tables are drawn.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .store import EmbeddingTable, make_table

_EVAL_ID_OFFSET = 1_000_000
_TEST_ID_OFFSET = 2_000_000


@dataclass(frozen=True)
class MixtureSpec:
    n_classes: int = 10
    dim: int = 16
    per_class: int = 500
    separation: tuple[float, ...] = (3.0,)  # scalar broadcast or one value per class
    sigma: tuple[float, ...] = (1.0,)  # sample noise scale, broadcast like separation
    shift: float = 0.0  # test-domain mean displacement; 0 disables the test table
    base_fraction: float = 0.1
    eval_per_class: int = 200
    test_per_class: int = 200
    with_logits: bool = False
    seed: int = 42
    # optional within-class structure: a compact sub-cluster displaced toward the
    # next class. Its position carries the information a classifier needs to place
    # that boundary, so redundant core samples cannot substitute for it. Varying the
    # fraction per class makes classes differ in how much budget they genuinely need.
    frontier_fraction: tuple[float, ...] = (0.0,)  # per-class share, broadcast like sigma
    frontier_pull: float = 0.55  # position along the vector to the next class mean
    frontier_sigma: float = 0.4  # sub-cluster noise scale

    def to_json_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "dim": self.dim,
            "per_class": self.per_class,
            "separation": list(self.separation),
            "sigma": list(self.sigma),
            "shift": self.shift,
            "base_fraction": self.base_fraction,
            "eval_per_class": self.eval_per_class,
            "test_per_class": self.test_per_class,
            "with_logits": self.with_logits,
            "seed": self.seed,
            "frontier_fraction": self.frontier_fraction,
            "frontier_pull": self.frontier_pull,
            "frontier_sigma": self.frontier_sigma,
        }


def _broadcast(values: Sequence[float], n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise ValueError(f"{name} needs 1 or {n} values, got {arr.size}")
    return arr


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def class_means(spec: MixtureSpec) -> np.ndarray:
    """Deterministic class centers: random unit directions scaled per class."""
    rng = np.random.default_rng([spec.seed, 0])
    sep = _broadcast(spec.separation, spec.n_classes, "separation")
    return _unit_rows(rng, spec.n_classes, spec.dim) * sep[:, None]


def shifted_means(spec: MixtureSpec) -> np.ndarray:
    """Test-domain centers: per-class displacement of magnitude ``shift``."""
    rng = np.random.default_rng([spec.seed, 3])
    return class_means(spec) + _unit_rows(rng, spec.n_classes, spec.dim) * spec.shift


def _frontier_count(spec: MixtureSpec, per_class: int) -> int:
    return int(round(spec.frontier_fraction * per_class))


def _draw_table(
    spec: MixtureSpec,
    means: np.ndarray,
    per_class: int,
    id_offset: int,
    stream: int,
    domain_tag: str,
    provenance: str,
) -> EmbeddingTable:
    rng = np.random.default_rng([spec.seed, stream])
    sigma = _broadcast(spec.sigma, spec.n_classes, "sigma")
    n = spec.n_classes * per_class
    labels = np.repeat(np.arange(spec.n_classes, dtype=np.int32), per_class)
    noise = rng.standard_normal((n, spec.dim))
    centers = means[labels]
    scales = sigma[labels]
    n_frontier = _frontier_count(spec, per_class)
    if n_frontier:
        # within each class the last n_frontier rows come from the displaced sub-cluster
        neighbor = means[(labels + 1) % spec.n_classes]
        in_class = np.arange(n) % per_class
        frontier = in_class >= per_class - n_frontier
        centers = np.where(frontier[:, None], centers + spec.frontier_pull * (neighbor - centers), centers)
        scales = np.where(frontier, spec.frontier_sigma, scales)
    feats = (centers + scales[:, None] * noise).astype(np.float32)
    ids = np.arange(n, dtype=np.int64) + id_offset
    logits = None
    if spec.with_logits:
        diff = feats.astype(np.float64)[:, None, :] - class_means(spec)[None, :, :]
        logits = (-np.sqrt(np.einsum("ncd,ncd->nc", diff, diff))).astype(np.float32)
    return make_table(
        ids, labels, feats, spec.n_classes,
        logits=logits, domain_tag=domain_tag, provenance=provenance,
    )


def make_fixture(spec: MixtureSpec, provenance: str = "") -> dict[str, EmbeddingTable]:
    """Generate the bundle: train (universe), base, pool, eval, and optionally test.

    base takes the first round(base_fraction * per_class) ids of every class;
    pool is the rest; eval is an IID draw from the same mixture with its own
    id range; test (only when shift > 0) is drawn around the shifted means.
    """
    if spec.n_classes < 1 or spec.dim < 1 or spec.per_class < 1:
        raise ValueError("n_classes, dim and per_class must all be >= 1")
    if not (0.0 < spec.base_fraction < 1.0):
        raise ValueError("base_fraction must lie in (0, 1)")
    prov = provenance or json.dumps(spec.to_json_dict(), sort_keys=True, separators=(",", ":"))
    means = class_means(spec)
    universe = _draw_table(spec, means, spec.per_class, 0, 1, "train", prov)

    # stratified base: the first base_fraction of the core rows and of the frontier
    # rows of every class, so base composition mirrors the class composition
    n_frontier = _frontier_count(spec, spec.per_class)
    n_core = spec.per_class - n_frontier
    in_class = universe.sample_ids % spec.per_class
    base_core = max(1, int(round(spec.base_fraction * n_core))) if n_core else 0
    base_frontier = int(round(spec.base_fraction * n_frontier))
    base_mask = (in_class < base_core) | ((in_class >= n_core) & (in_class < n_core + base_frontier))
    from .store import subset  # local import to keep module load order simple

    base = subset(universe, universe.sample_ids[base_mask])
    pool = subset(universe, universe.sample_ids[~base_mask])
    base = make_table(
        base.sample_ids, base.labels, base.features, base.n_classes,
        logits=base.logits, domain_tag="base", provenance=prov,
    )
    pool = make_table(
        pool.sample_ids, pool.labels, pool.features, pool.n_classes,
        logits=pool.logits, domain_tag="pool", provenance=prov,
    )
    bundle = {
        "train": universe,
        "base": base,
        "pool": pool,
        "eval": _draw_table(spec, means, spec.eval_per_class, _EVAL_ID_OFFSET, 2, "validation", prov),
    }
    if spec.shift > 0.0:
        bundle["test"] = _draw_table(
            spec, shifted_means(spec), spec.test_per_class, _TEST_ID_OFFSET, 4, "test", prov
        )
    return bundle
