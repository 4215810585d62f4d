"""Lightweight probe classifiers fitted on embeddings.

These stand in for full backbone training inside the addition/reduction
loops: a nearest-prototype classifier and a multinomial linear probe
trained by full-batch gradient descent. Full-batch with zero-initialized
weights keeps every curve bit-reproducible; the objective is convex, so
initialization only shapes the trajectory.

Models serialize to a small PRB1 binary with the same header/checksum
discipline as EMB1 so long simulation runs can checkpoint and resume.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    AbsentClass,
    ChecksumMismatch,
    DimMismatch,
    DivergenceDetected,
    EmptyTable,
    InvariantViolation,
    MalformedHeader,
)
from .iei import ClassPrototypes, class_prototypes
from .store import EmbeddingTable, write_bytes_atomic

PROBE_MAGIC = b"PRB1"
PROBE_VERSION = 1
_PRB_HEADER = struct.Struct("<4sIIII")
_PRB_HEADER_SIZE = 64
_U32 = struct.Struct("<I")
_KINDS = ("nearest_prototype", "linear")


@dataclass(frozen=True)
class ProbeConfig:
    kind: str = "linear"  # "linear" | "nearest_prototype"
    step_size: float = 0.1
    epochs: int = 200
    l2: float = 1e-4
    seed: int = 42

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "step_size": self.step_size,
            "epochs": self.epochs,
            "l2": self.l2,
            "seed": self.seed,
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "ProbeConfig":
        return ProbeConfig(
            kind=str(obj["kind"]),
            step_size=float(obj["step_size"]),
            epochs=int(obj["epochs"]),
            l2=float(obj["l2"]),
            seed=int(obj["seed"]),
        )


@dataclass(frozen=True, eq=False)
class ProbeModel:
    kind: str
    n_classes: int
    dim: int
    config: ProbeConfig
    prototypes: ClassPrototypes | None = None
    weights: np.ndarray | None = None  # float64, (n_classes, dim)
    bias: np.ndarray | None = None  # float64, (n_classes,)
    loss_history: tuple[float, ...] = ()
    train_accuracy: float | None = None


def fit_nearest_prototype(train: EmbeddingTable, config: ProbeConfig | None = None) -> ProbeModel:
    """Store class prototypes; prediction is argmin distance (argmax of negated distances)."""
    protos = class_prototypes(train)
    protos.require_complete()
    cfg = replace(config, kind="nearest_prototype") if config else ProbeConfig(kind="nearest_prototype")
    model = ProbeModel(
        kind="nearest_prototype",
        n_classes=train.n_classes,
        dim=train.dim,
        config=cfg,
        prototypes=protos,
    )
    return replace(model, train_accuracy=evaluate(model, train))


def _loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y_onehot: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean softmax cross-entropy (natural log) + 0.5*l2*||W||^2, with analytic gradient."""
    n = x.shape[0]
    z = x @ weights.T + bias
    zmax = z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)) + zmax
    log_p = z - log_norm
    ce = -float((log_p * y_onehot).sum() / n)
    loss = ce + 0.5 * l2 * float((weights * weights).sum())
    g = (np.exp(log_p) - y_onehot) / n
    grad_w = g.T @ x + l2 * weights
    grad_b = g.sum(axis=0)
    return loss, grad_w, grad_b


def fit_linear_probe(train: EmbeddingTable, config: ProbeConfig | None = None) -> ProbeModel:
    """Full-batch gradient descent on softmax cross-entropy from zero-initialized weights.

    Deterministic given the config: fixed iteration order, no minibatching,
    no random initialization. The recorded loss history has one entry per
    epoch (loss at the params entering that epoch) plus the final loss.
    """
    cfg = replace(config, kind="linear") if config else ProbeConfig(kind="linear")
    if train.n_classes < 2:
        raise InvariantViolation("linear probe needs at least 2 classes")
    if train.n_samples == 0:
        raise EmptyTable("cannot fit a probe on an empty table")
    if cfg.epochs < 1:
        raise InvariantViolation("epochs must be >= 1")
    x = train.features.astype(np.float64)
    y = np.zeros((train.n_samples, train.n_classes), dtype=np.float64)
    y[np.arange(train.n_samples), train.labels] = 1.0
    w = np.zeros((train.n_classes, train.dim), dtype=np.float64)
    b = np.zeros(train.n_classes, dtype=np.float64)
    history: list[float] = []
    for _ in range(cfg.epochs):
        loss, gw, gb = _loss_and_grad(w, b, x, y, cfg.l2)
        if not np.isfinite(loss):
            raise DivergenceDetected(f"loss became non-finite with config {cfg.to_json_dict()}")
        history.append(loss)
        w -= cfg.step_size * gw
        b -= cfg.step_size * gb
    final_loss, _, _ = _loss_and_grad(w, b, x, y, cfg.l2)
    if not np.isfinite(final_loss):
        raise DivergenceDetected(f"loss became non-finite with config {cfg.to_json_dict()}")
    history.append(final_loss)
    model = ProbeModel(
        kind="linear",
        n_classes=train.n_classes,
        dim=train.dim,
        config=cfg,
        weights=w,
        bias=b,
        loss_history=tuple(history),
    )
    return replace(model, train_accuracy=evaluate(model, train))


def fit_probe(train: EmbeddingTable, config: ProbeConfig) -> ProbeModel:
    if config.kind == "linear":
        return fit_linear_probe(train, config)
    if config.kind == "nearest_prototype":
        return fit_nearest_prototype(train, config)
    raise ValueError(f"unknown probe kind {config.kind!r}")


def predict_logits(model: ProbeModel, table: EmbeddingTable) -> np.ndarray:
    """(n, n_classes) float64 logits; nearest-prototype emits negated distances so
    softmax over them reproduces the prototype probability vector exactly."""
    if table.dim != model.dim:
        raise DimMismatch(f"table dim {table.dim} != model dim {model.dim}")
    if table.n_classes != model.n_classes:
        raise DimMismatch(f"table classes {table.n_classes} != model classes {model.n_classes}")
    if model.kind == "linear":
        return table.features.astype(np.float64) @ model.weights.T + model.bias
    assert model.prototypes is not None
    x = table.features.astype(np.float64)
    diff = x[:, None, :] - model.prototypes.vectors[None, :, :]
    return -np.sqrt(np.einsum("ncd,ncd->nc", diff, diff))


def evaluate(model: ProbeModel, table: EmbeddingTable) -> float:
    """Fraction of rows whose argmax logit equals the label; ties go to the lowest class index."""
    if table.n_samples == 0:
        raise EmptyTable("cannot evaluate on an empty table")
    preds = np.argmax(predict_logits(model, table), axis=1)
    return float(np.mean(preds == table.labels))


# -- PRB1 serialization -------------------------------------------------------


def _probe_header(kind_code: int, n_classes: int, dim: int) -> bytes:
    head = _PRB_HEADER.pack(PROBE_MAGIC, PROBE_VERSION, kind_code, n_classes, dim)
    return head + b"\x00" * (_PRB_HEADER_SIZE - len(head))


def save_probe(model: ProbeModel, path: str | Path) -> None:
    kind_code = _KINDS.index(model.kind)
    if model.kind == "linear":
        payload = (
            np.ascontiguousarray(model.weights, dtype="<f8").tobytes()
            + np.ascontiguousarray(model.bias, dtype="<f8").tobytes()
        )
    else:
        payload = np.ascontiguousarray(model.prototypes.vectors, dtype="<f8").tobytes()
    header = _probe_header(kind_code, model.n_classes, model.dim)
    meta = {
        "checksum": hashlib.sha256(header + payload).hexdigest(),
        "config": model.config.to_json_dict(),
        "loss_history": list(model.loss_history),
        "train_accuracy": model.train_accuracy,
    }
    mbytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    write_bytes_atomic(path, header + payload + _U32.pack(len(mbytes)) + mbytes)


def load_probe(path: str | Path) -> ProbeModel:
    data = Path(path).read_bytes()
    if len(data) < _PRB_HEADER_SIZE + _U32.size:
        raise MalformedHeader(f"{path}: file too short for a PRB1 header")
    magic, version, kind_code, n_classes, dim = _PRB_HEADER.unpack_from(data)
    if magic != PROBE_MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != PROBE_VERSION:
        raise MalformedHeader(f"{path}: unsupported probe version {version}")
    if any(data[_PRB_HEADER.size:_PRB_HEADER_SIZE]):
        raise MalformedHeader(f"{path}: reserved header bytes are not zero")
    if kind_code >= len(_KINDS) or n_classes < 1 or dim < 1:
        raise MalformedHeader(f"{path}: invalid kind/shape fields")
    kind = _KINDS[kind_code]
    n_params = n_classes * dim + (n_classes if kind == "linear" else 0)
    payload_len = n_params * 8
    if len(data) < _PRB_HEADER_SIZE + payload_len + _U32.size:
        raise MalformedHeader(f"{path}: truncated payload")
    (mlen,) = _U32.unpack_from(data, _PRB_HEADER_SIZE + payload_len)
    if len(data) != _PRB_HEADER_SIZE + payload_len + _U32.size + mlen:
        raise MalformedHeader(f"{path}: file length does not match header")
    try:
        meta = json.loads(data[_PRB_HEADER_SIZE + payload_len + _U32.size:].decode("utf-8"))
        config = ProbeConfig.from_json_dict(meta["config"])
        stored = str(meta["checksum"])
        history = tuple(float(v) for v in meta["loss_history"])
        train_acc = meta["train_accuracy"]
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"{path}: unreadable metadata ({exc})") from None
    actual = hashlib.sha256(data[:_PRB_HEADER_SIZE + payload_len]).hexdigest()
    if actual != stored:
        raise ChecksumMismatch(f"{path}: checksum does not match payload")
    vals = np.frombuffer(data, dtype="<f8", count=n_params, offset=_PRB_HEADER_SIZE)
    if not np.isfinite(vals).all():
        raise InvariantViolation(f"{path}: non-finite probe parameters")
    if kind == "linear":
        w = vals[: n_classes * dim].reshape(n_classes, dim).copy()
        b = vals[n_classes * dim:].copy()
        return ProbeModel(
            kind=kind, n_classes=n_classes, dim=dim, config=config,
            weights=w, bias=b, loss_history=history,
            train_accuracy=None if train_acc is None else float(train_acc),
        )
    vectors = vals.reshape(n_classes, dim).copy()
    protos = ClassPrototypes(vectors=vectors, present=np.ones(n_classes, dtype=bool))
    return ProbeModel(
        kind=kind, n_classes=n_classes, dim=dim, config=config,
        prototypes=protos, loss_history=history,
        train_accuracy=None if train_acc is None else float(train_acc),
    )
