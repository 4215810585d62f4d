"""Embedding tables and their bit-exact EMB1 on-disk format.

Layout, little-endian throughout:

    bytes 0..64   header: magic ``EMB1``, u32 version, u64 n_samples,
                  u32 dim, u32 n_classes, u32 flags (bit0 = logits
                  present), u32 domain tag, zero padding up to 64 bytes
    next          float32 feature matrix, row-major, n_samples x dim
    next          float32 logit matrix, n_samples x n_classes
                  (present only when flag bit0 is set)
    next          int64 sample ids, then int32 labels
    tail          u32 manifest length + UTF-8 JSON manifest

The manifest carries ``format_version``, ``class_names``, ``provenance``
and a sha256 ``checksum``. The checksum covers the header plus all
numeric sections, so a single corrupted byte anywhere before the
manifest is rejected on load rather than producing a silently wrong
table. Rows are always stored sorted by ascending sample id; every
constructor re-canonicalizes, which makes the format content-addressed
and keeps downstream runs deterministic.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    ChecksumMismatch,
    DimMismatch,
    DuplicateId,
    InvariantViolation,
    MalformedHeader,
    UnknownId,
)

MAGIC = b"EMB1"
FORMAT_VERSION = 1
HEADER_SIZE = 64
FLAG_LOGITS = 0x1
DOMAIN_TAGS = ("train", "validation", "test", "pool", "base")

_HEADER = struct.Struct("<4sIQIIII")
_U32 = struct.Struct("<I")


@dataclass(frozen=True)
class TableManifest:
    """Sidecar metadata stored at the end of every EMB1 file."""

    format_version: str = str(FORMAT_VERSION)
    class_names: tuple[str, ...] = ()
    provenance: str = ""
    checksum: str = ""


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Immutable rows of (sample id, label, feature vector, optional logits).

    All mutation happens by constructing new tables via :func:`make_table`,
    :func:`subset` and :func:`merge`; concurrent readers are safe.
    """

    sample_ids: np.ndarray  # int64, ascending
    labels: np.ndarray  # int32
    features: np.ndarray  # float32, (n_samples, dim)
    n_classes: int
    logits: np.ndarray | None  # float32, (n_samples, n_classes) or None
    domain_tag: str
    manifest: TableManifest

    @property
    def n_samples(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return self.n_samples

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        if (self.n_classes, self.domain_tag, self.manifest) != (
            other.n_classes,
            other.domain_tag,
            other.manifest,
        ):
            return False
        if (self.logits is None) != (other.logits is None):
            return False
        same = (
            np.array_equal(self.sample_ids, other.sample_ids)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )
        if same and self.logits is not None:
            same = np.array_equal(self.logits, other.logits)
        return same

    def __repr__(self) -> str:
        return (
            f"EmbeddingTable(n_samples={self.n_samples}, dim={self.dim}, "
            f"n_classes={self.n_classes}, logits={self.logits is not None}, "
            f"domain_tag={self.domain_tag!r})"
        )


def _header_bytes(n: int, dim: int, n_classes: int, has_logits: bool, domain_tag: str) -> bytes:
    flags = FLAG_LOGITS if has_logits else 0
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, n, dim, n_classes, flags, DOMAIN_TAGS.index(domain_tag))
    return head + b"\x00" * (HEADER_SIZE - len(head))


def _payload_bytes(table_ids: np.ndarray, labels: np.ndarray, features: np.ndarray, logits: np.ndarray | None) -> bytes:
    parts = [np.ascontiguousarray(features, dtype="<f4").tobytes()]
    if logits is not None:
        parts.append(np.ascontiguousarray(logits, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(table_ids, dtype="<i8").tobytes())
    parts.append(np.ascontiguousarray(labels, dtype="<i4").tobytes())
    return b"".join(parts)


def _payload_checksum(header: bytes, payload: bytes) -> str:
    return hashlib.sha256(header + payload).hexdigest()


def _manifest_json(manifest: TableManifest) -> bytes:
    obj = {
        "checksum": manifest.checksum,
        "class_names": list(manifest.class_names),
        "format_version": manifest.format_version,
        "provenance": manifest.provenance,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _validate_arrays(
    sample_ids: np.ndarray,
    labels: np.ndarray,
    features: np.ndarray,
    n_classes: int,
    logits: np.ndarray | None,
) -> None:
    n = features.shape[0]
    if features.ndim != 2 or features.shape[1] < 1:
        raise InvariantViolation("features must be a 2-d matrix with at least one column")
    if n_classes < 1:
        raise InvariantViolation("n_classes must be >= 1")
    if sample_ids.shape != (n,) or labels.shape != (n,):
        raise InvariantViolation("sample_ids/labels length must match feature rows")
    if n:
        if sample_ids.min() < 0:
            raise InvariantViolation("sample ids must be non-negative")
        if np.any(sample_ids[1:] <= sample_ids[:-1]):
            # covers both duplicates and unsorted rows
            if len(np.unique(sample_ids)) != n:
                raise InvariantViolation("duplicate sample ids")
            raise InvariantViolation("rows must be sorted by ascending sample id")
        if labels.min() < 0 or labels.max() >= n_classes:
            raise InvariantViolation(f"labels must lie in [0, {n_classes})")
        if not np.isfinite(features).all():
            raise InvariantViolation("features contain NaN or Inf")
    if logits is not None:
        if logits.shape != (n, n_classes):
            raise InvariantViolation(
                f"logits shape {logits.shape} does not match (n_samples, n_classes)=({n}, {n_classes})"
            )
        if n and not np.isfinite(logits).all():
            raise InvariantViolation("logits contain NaN or Inf")


def make_table(
    sample_ids: Iterable[int] | np.ndarray,
    labels: Iterable[int] | np.ndarray,
    features: np.ndarray,
    n_classes: int,
    logits: np.ndarray | None = None,
    domain_tag: str = "train",
    class_names: Iterable[str] | None = None,
    provenance: str = "",
) -> EmbeddingTable:
    """Build a validated table, sorting rows by id and filling the manifest checksum."""
    if domain_tag not in DOMAIN_TAGS:
        raise InvariantViolation(f"unknown domain tag {domain_tag!r}; expected one of {DOMAIN_TAGS}")
    ids = np.asarray(sample_ids, dtype=np.int64).reshape(-1)
    labs = np.asarray(labels, dtype=np.int32).reshape(-1)
    feats = np.asarray(features, dtype=np.float32)
    if feats.ndim != 2:
        raise InvariantViolation("features must be a 2-d matrix")
    lg = None if logits is None else np.asarray(logits, dtype=np.float32)
    order = np.argsort(ids, kind="stable")
    ids = np.ascontiguousarray(ids[order])
    labs = np.ascontiguousarray(labs[order])
    feats = np.ascontiguousarray(feats[order])
    if lg is not None:
        if lg.ndim != 2 or lg.shape[0] != feats.shape[0]:
            raise InvariantViolation("logits row count must match feature rows")
        lg = np.ascontiguousarray(lg[order])
    _validate_arrays(ids, labs, feats, n_classes, lg)

    names = tuple(class_names) if class_names is not None else tuple(f"class_{i}" for i in range(n_classes))
    if len(names) != n_classes:
        raise InvariantViolation(f"class_names length {len(names)} != n_classes {n_classes}")
    header = _header_bytes(len(ids), feats.shape[1], n_classes, lg is not None, domain_tag)
    checksum = _payload_checksum(header, _payload_bytes(ids, labs, feats, lg))
    manifest = TableManifest(
        format_version=str(FORMAT_VERSION),
        class_names=names,
        provenance=provenance,
        checksum=checksum,
    )
    return EmbeddingTable(
        sample_ids=ids,
        labels=labs,
        features=feats,
        n_classes=n_classes,
        logits=lg,
        domain_tag=domain_tag,
        manifest=manifest,
    )


def write_bytes_atomic(path: str | Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over the target."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def table_bytes(table: EmbeddingTable) -> bytes:
    """Serialize a table to EMB1 bytes (also used to content-address tables)."""
    header = _header_bytes(table.n_samples, table.dim, table.n_classes, table.logits is not None, table.domain_tag)
    payload = _payload_bytes(table.sample_ids, table.labels, table.features, table.logits)
    manifest = TableManifest(
        format_version=table.manifest.format_version,
        class_names=table.manifest.class_names,
        provenance=table.manifest.provenance,
        checksum=_payload_checksum(header, payload),
    )
    mbytes = _manifest_json(manifest)
    return header + payload + _U32.pack(len(mbytes)) + mbytes


def save_table(table: EmbeddingTable, path: str | Path) -> None:
    _validate_arrays(table.sample_ids, table.labels, table.features, table.n_classes, table.logits)
    write_bytes_atomic(path, table_bytes(table))


def load_table(path: str | Path) -> EmbeddingTable:
    """Load and fully validate an EMB1 file.

    Raises MalformedHeader for structural damage, ChecksumMismatch when the
    stored digest disagrees with the bytes, and InvariantViolation for
    well-formed files whose contents break a table invariant.
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE + _U32.size:
        raise MalformedHeader(f"{path}: file too short for an EMB1 header")
    magic, version, n, dim, n_classes, flags, domain_code = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise MalformedHeader(f"{path}: unsupported format version {version}")
    if any(data[_HEADER.size:HEADER_SIZE]):
        raise MalformedHeader(f"{path}: reserved header bytes are not zero")
    if flags & ~FLAG_LOGITS:
        raise MalformedHeader(f"{path}: unknown flag bits 0x{flags:x}")
    if domain_code >= len(DOMAIN_TAGS):
        raise MalformedHeader(f"{path}: unknown domain tag code {domain_code}")
    if dim < 1 or n_classes < 1:
        raise MalformedHeader(f"{path}: dim and n_classes must be >= 1")
    has_logits = bool(flags & FLAG_LOGITS)
    sizes = [n * dim * 4]
    if has_logits:
        sizes.append(n * n_classes * 4)
    sizes += [n * 8, n * 4]
    payload_len = sum(sizes)
    manifest_off = HEADER_SIZE + payload_len
    if len(data) < manifest_off + _U32.size:
        raise MalformedHeader(f"{path}: truncated payload")
    (mlen,) = _U32.unpack_from(data, manifest_off)
    if len(data) != manifest_off + _U32.size + mlen:
        raise MalformedHeader(f"{path}: file length does not match header")
    try:
        raw = json.loads(data[manifest_off + _U32.size:].decode("utf-8"))
        manifest = TableManifest(
            format_version=str(raw["format_version"]),
            class_names=tuple(str(s) for s in raw["class_names"]),
            provenance=str(raw["provenance"]),
            checksum=str(raw["checksum"]),
        )
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"{path}: unreadable manifest ({exc})") from None
    actual = _payload_checksum(data[:HEADER_SIZE], data[HEADER_SIZE:manifest_off])
    if actual != manifest.checksum:
        raise ChecksumMismatch(f"{path}: checksum {manifest.checksum[:12]}... does not match payload")
    if len(manifest.class_names) != n_classes:
        raise InvariantViolation(
            f"{path}: manifest lists {len(manifest.class_names)} class names for {n_classes} classes"
        )

    off = HEADER_SIZE
    feats = np.frombuffer(data, dtype="<f4", count=n * dim, offset=off).reshape(n, dim).copy()
    off += n * dim * 4
    lg = None
    if has_logits:
        lg = np.frombuffer(data, dtype="<f4", count=n * n_classes, offset=off).reshape(n, n_classes).copy()
        off += n * n_classes * 4
    ids = np.frombuffer(data, dtype="<i8", count=n, offset=off).copy()
    off += n * 8
    labs = np.frombuffer(data, dtype="<i4", count=n, offset=off).copy()
    _validate_arrays(ids, labs, feats, n_classes, lg)
    return EmbeddingTable(
        sample_ids=ids,
        labels=labs,
        features=feats,
        n_classes=n_classes,
        logits=lg,
        domain_tag=DOMAIN_TAGS[domain_code],
        manifest=manifest,
    )


def subset(table: EmbeddingTable, ids: Iterable[int] | np.ndarray) -> EmbeddingTable:
    """Rows of ``table`` with the given ids, in ascending id order."""
    req = np.unique(np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64))
    if req.size:
        pos = np.searchsorted(table.sample_ids, req)
        bad = (pos >= table.n_samples) | (table.sample_ids[np.minimum(pos, table.n_samples - 1)] != req)
        if bad.any():
            missing = req[bad][:5].tolist()
            raise UnknownId(f"ids not present in table: {missing}{'...' if bad.sum() > 5 else ''}")
    else:
        pos = np.array([], dtype=np.int64)
    return make_table(
        table.sample_ids[pos],
        table.labels[pos],
        table.features[pos],
        table.n_classes,
        logits=None if table.logits is None else table.logits[pos],
        domain_tag=table.domain_tag,
        class_names=table.manifest.class_names,
        provenance=table.manifest.provenance,
    )


def merge(a: EmbeddingTable, b: EmbeddingTable) -> EmbeddingTable:
    """Disjoint union of two tables; rows come back sorted by id.

    Manifest strings (class names, provenance) and the domain tag are taken
    from ``a``.
    """
    if a.dim != b.dim:
        raise DimMismatch(f"feature dims differ: {a.dim} vs {b.dim}")
    if a.n_classes != b.n_classes:
        raise DimMismatch(f"class counts differ: {a.n_classes} vs {b.n_classes}")
    if (a.logits is None) != (b.logits is None):
        raise DimMismatch("cannot merge a table with logits into one without")
    common = np.intersect1d(a.sample_ids, b.sample_ids)
    if common.size:
        raise DuplicateId(f"tables share sample ids: {common[:5].tolist()}{'...' if common.size > 5 else ''}")
    lg = None
    if a.logits is not None and b.logits is not None:
        lg = np.concatenate([a.logits, b.logits])
    return make_table(
        np.concatenate([a.sample_ids, b.sample_ids]),
        np.concatenate([a.labels, b.labels]),
        np.concatenate([a.features, b.features]),
        a.n_classes,
        logits=lg,
        domain_tag=a.domain_tag,
        class_names=a.manifest.class_names,
        provenance=a.manifest.provenance,
    )


# -- CSV convenience path (tiny tests and interop) --------------------------


def table_to_csv(table: EmbeddingTable, path: str | Path, config_line: str | None = None) -> None:
    """Write ``id,label,f1..fd[,l1..lc]`` rows; floats keep full round-trip precision."""
    cols = ["id", "label"] + [f"f{i + 1}" for i in range(table.dim)]
    if table.logits is not None:
        cols += [f"l{i + 1}" for i in range(table.n_classes)]
    lines = []
    if config_line is not None:
        lines.append(f"# {config_line}")
    lines.append(",".join(cols))
    for i in range(table.n_samples):
        row = [str(int(table.sample_ids[i])), str(int(table.labels[i]))]
        row += [repr(float(v)) for v in table.features[i]]
        if table.logits is not None:
            row += [repr(float(v)) for v in table.logits[i]]
        lines.append(",".join(row))
    write_bytes_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def table_from_csv(
    path: str | Path,
    n_classes: int | None = None,
    domain_tag: str = "train",
    class_names: Iterable[str] | None = None,
    provenance: str = "",
) -> EmbeddingTable:
    """Read the CSV convenience format back into a validated table.

    Lines starting with ``#`` are ignored. Header must be
    ``id,label,f1..fd[,l1..lc]``; when logit columns are present their count
    fixes n_classes, otherwise it defaults to ``max(label)+1``.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise MalformedHeader(f"{path}: empty CSV")
    header = [c.strip() for c in rows[0]]
    if header[:2] != ["id", "label"]:
        raise MalformedHeader(f"{path}: CSV header must start with id,label")
    dim = sum(1 for c in header[2:] if c.startswith("f"))
    n_logits = sum(1 for c in header[2:] if c.startswith("l"))
    if header[2:] != [f"f{i + 1}" for i in range(dim)] + [f"l{i + 1}" for i in range(n_logits)]:
        raise MalformedHeader(f"{path}: CSV feature/logit columns must be f1..fd then l1..lc")
    body = rows[1:]
    ids = [int(r[0]) for r in body]
    labels = [int(r[1]) for r in body]
    feats = np.array([[float(v) for v in r[2:2 + dim]] for r in body], dtype=np.float32).reshape(len(body), dim)
    lg = None
    if n_logits:
        lg = np.array([[float(v) for v in r[2 + dim:2 + dim + n_logits]] for r in body], dtype=np.float32)
        lg = lg.reshape(len(body), n_logits)
    if n_classes is None:
        n_classes = n_logits if n_logits else (max(labels) + 1 if labels else 1)
    if n_logits and n_logits != n_classes:
        raise InvariantViolation(f"{path}: {n_logits} logit columns but n_classes={n_classes}")
    return make_table(
        ids, labels, feats, n_classes, logits=lg, domain_tag=domain_tag,
        class_names=class_names, provenance=provenance,
    )


def id_set(table: EmbeddingTable) -> np.ndarray:
    """Ascending id vector (alias for the canonical sample_ids array)."""
    return table.sample_ids


def class_counts(table: EmbeddingTable) -> np.ndarray:
    """Per-class row counts, length n_classes."""
    return np.bincount(table.labels, minlength=table.n_classes).astype(np.int64)


def available_per_class(table: EmbeddingTable) -> Mapping[int, int]:
    counts = class_counts(table)
    return {c: int(counts[c]) for c in range(table.n_classes)}
