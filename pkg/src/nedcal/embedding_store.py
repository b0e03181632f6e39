"""Labeled embedding sets: validation, file I/O and stratified splitting.

Three on-disk formats are supported:

``binary``
    ``b"NEDB"``, a version byte (1), little-endian ``uint64`` count and
    ``uint64`` dim, then per record a ``uint16``-length-prefixed UTF-8 id,
    a ``uint16``-length-prefixed UTF-8 label and ``dim`` little-endian
    float32 values.
``jsonl``
    One ``{"id": ..., "label": ..., "vector": [...]}`` object per line.
``csv``
    Header ``id,label,v0,...,v{m-1}`` followed by one row per record.

Labels are strings on disk and dense integer indices in memory. Unless a
label space is supplied, the mapping is the sorted order of the distinct
labels.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "EmbeddingError",
    "EmbeddingFormatError",
    "LabelSpaceError",
    "EmbeddingRecord",
    "LabelSpace",
    "EmbeddingSet",
    "SupportSet",
    "load_records",
    "write_records",
    "split_holdout",
    "FORMATS",
]

MAGIC = b"NEDB"
VERSION = 1
FORMATS = ("binary", "jsonl", "csv")
_FORMAT_ALIASES = {
    "binary": "binary",
    "bin": "binary",
    "nedb": "binary",
    "jsonl": "jsonl",
    "json-lines": "jsonl",
    "csv": "csv",
    "delimited-text": "csv",
}


class EmbeddingError(ValueError):
    """Base class for invalid embedding data."""


class EmbeddingFormatError(EmbeddingError):
    """A file or record does not conform to its declared format.

    ``record_id`` and ``line`` locate the offending record when known.
    """

    def __init__(self, message: str, *, record_id: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if record_id is not None:
            where.append(f"record {record_id!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.record_id = record_id
        self.line = line


class LabelSpaceError(EmbeddingError):
    """A label is not part of the fixed label space, or a class is empty."""


@dataclass(frozen=True)
class EmbeddingRecord:
    id: str
    vector: np.ndarray
    label: int


@dataclass(frozen=True)
class LabelSpace:
    """Ordered, duplicate-free class names. Index ``j`` is class ``labels[j]``."""

    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(set(labels)) != len(labels):
            raise LabelSpaceError("labels must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_lookup", {name: j for j, name in enumerate(labels)})

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "LabelSpace":
        return cls(tuple(sorted(set(str(n) for n in names))))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __contains__(self, name) -> bool:
        return name in self._lookup

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise LabelSpaceError(f"unknown label {name!r}") from None

    def name(self, j: int) -> str:
        return self.labels[j]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingSet:
    """An immutable collection of labeled embeddings.

    Query sets use this class directly; classes of the label space may be
    absent from them. Use :class:`SupportSet` for galleries, where every
    class must be represented.

    Parameters
    ----------
    ids : sequence of str
        Record identifiers, unique within the set.
    vectors : array_like, shape (N, m)
        Embedding coordinates. Stored as float64.
    labels : array_like of int, shape (N,)
        Indices into ``label_space``.
    label_space : LabelSpace
    dim : int, optional
        Required when ``N == 0``; otherwise inferred from ``vectors``.
    """

    ids: tuple[str, ...]
    vectors: np.ndarray
    labels: np.ndarray
    label_space: LabelSpace
    dim: int = field(default=-1)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        n = len(ids)
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        if n == 0:
            dim = max(int(self.dim), 0)
            vectors = vectors.reshape(0, dim)
        else:
            if vectors.ndim != 2 or vectors.shape[0] != n:
                raise EmbeddingError(
                    f"vectors must have shape ({n}, m), got {vectors.shape}"
                )
            dim = vectors.shape[1]
            if self.dim >= 0 and self.dim != dim:
                raise EmbeddingError(f"declared dim {self.dim} != vector dim {dim}")
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if labels.shape[0] != n:
            raise EmbeddingError(f"{labels.shape[0]} labels for {n} records")
        if len(set(ids)) != n:
            raise EmbeddingError("record ids must be unique")
        if n:
            bad = ~np.isfinite(vectors).all(axis=1)
            if bad.any():
                i = int(np.argmax(bad))
                raise EmbeddingFormatError("non-finite vector component", record_id=ids[i])
            out = (labels < 0) | (labels >= len(self.label_space))
            if out.any():
                i = int(np.argmax(out))
                raise LabelSpaceError(
                    f"record {ids[i]!r}: label index {labels[i]} outside label space"
                )
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", _frozen(vectors))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "dim", dim)

    @classmethod
    def from_records(
        cls,
        records: Sequence[EmbeddingRecord],
        label_space: LabelSpace,
        dim: int = -1,
    ):
        if not records:
            return cls((), np.zeros((0, max(dim, 0))), np.zeros(0, np.int64), label_space, dim)
        m = len(records[0].vector) if dim < 0 else dim
        for r in records:
            if len(r.vector) != m:
                raise EmbeddingFormatError(
                    f"dimension {len(r.vector)} != expected {m}", record_id=r.id
                )
        return cls(
            tuple(r.id for r in records),
            np.array([r.vector for r in records], dtype=np.float64),
            np.array([r.label for r in records], dtype=np.int64),
            label_space,
        )

    @classmethod
    def from_arrays(cls, vectors, labels, label_names=None, ids=None):
        """Build a set from raw arrays, naming classes ``0..M-1`` by default."""
        vectors = np.asarray(vectors, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if label_names is None:
            n_classes = int(labels.max()) + 1 if labels.size else 0
            width = len(str(max(n_classes - 1, 0)))
            label_names = [str(j).zfill(width) for j in range(n_classes)]
        if ids is None:
            ids = [f"r{i}" for i in range(len(labels))]
        return cls(tuple(ids), vectors, labels, LabelSpace(tuple(label_names)),
                   vectors.shape[1] if vectors.ndim == 2 else -1)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_classes(self) -> int:
        return len(self.label_space)

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def record(self, i: int) -> EmbeddingRecord:
        return EmbeddingRecord(self.ids[i], self.vectors[i], int(self.labels[i]))

    def records(self) -> list[EmbeddingRecord]:
        return [self.record(i) for i in range(len(self))]

    def subset(self, indices) -> "EmbeddingSet":
        """Records at ``indices`` in the given order, same label space and class."""
        indices = np.asarray(indices, dtype=np.int64)
        return type(self)(
            tuple(self.ids[i] for i in indices),
            self.vectors[indices],
            self.labels[indices],
            self.label_space,
            self.dim,
        )

    def with_vectors(self, vectors) -> "EmbeddingSet":
        """Same ids and labels with replaced coordinates (always a plain EmbeddingSet)."""
        return EmbeddingSet(self.ids, vectors, self.labels, self.label_space, self.dim)

    def label_names(self) -> list[str]:
        return [self.label_space.name(j) for j in self.labels]

    def as_support(self) -> "SupportSet":
        return SupportSet(self.ids, self.vectors, self.labels, self.label_space, self.dim)


class SupportSet(EmbeddingSet):
    """Gallery set: every class of the label space has at least one record."""

    def __post_init__(self):
        super().__post_init__()
        counts = self.class_counts
        if len(self) and (counts == 0).any():
            j = int(np.argmin(counts))
            raise LabelSpaceError(
                f"class {self.label_space.name(j)!r} has no records in the support set"
            )

    def as_support(self) -> "SupportSet":
        return self

    def sparse_classes(self, k: int) -> list[str]:
        """Class names with fewer than ``k`` records (diagnostic only)."""
        return [self.label_space.name(j) for j, c in enumerate(self.class_counts) if c < k]


# --------------------------------------------------------------------- I/O


def _normalize_format(fmt: str | None, path: Path) -> str:
    if fmt is None:
        suffix = path.suffix.lower().lstrip(".")
        fmt = {"bin": "binary", "nedb": "binary", "jsonl": "jsonl", "csv": "csv"}.get(suffix)
        if fmt is None:
            raise EmbeddingFormatError(f"cannot infer format from {path.name!r}")
    try:
        return _FORMAT_ALIASES[fmt.lower()]
    except KeyError:
        raise EmbeddingFormatError(f"unknown format {fmt!r}") from None


def _finite_vector(values, record_id: str, line: int | None) -> list[float]:
    try:
        vec = [float(v) for v in values]
    except (TypeError, ValueError):
        raise EmbeddingFormatError("vector components must be numbers",
                                   record_id=record_id, line=line) from None
    if not all(math.isfinite(v) for v in vec):
        raise EmbeddingFormatError("non-finite vector component", record_id=record_id, line=line)
    return vec


def _read_jsonl(path: Path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingFormatError(f"malformed JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict) or not {"id", "label", "vector"} <= obj.keys():
                raise EmbeddingFormatError('expected keys "id", "label", "vector"', line=lineno)
            rid = str(obj["id"])
            if not isinstance(obj["vector"], list):
                raise EmbeddingFormatError("vector must be an array", record_id=rid, line=lineno)
            rows.append((rid, str(obj["label"]), _finite_vector(obj["vector"], rid, lineno), lineno))
    return rows, None


def _read_csv(path: Path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmbeddingFormatError("missing header", line=1)
        dim = len(header) - 2
        expected = ["id", "label"] + [f"v{i}" for i in range(dim)]
        if dim < 0 or header != expected:
            raise EmbeddingFormatError("malformed header, expected id,label,v0,...", line=1)
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) < 2:
                raise EmbeddingFormatError("row has fewer than 2 fields", line=lineno)
            rid = row[0]
            rows.append((rid, row[1], _finite_vector(row[2:], rid, lineno), lineno))
    return rows, dim


def _read_binary(path: Path):
    data = path.read_bytes()
    head = struct.Struct("<4sBQQ")
    if len(data) < head.size:
        raise EmbeddingFormatError("malformed header: file too short")
    magic, version, count, dim = head.unpack_from(data, 0)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"malformed header: bad magic {magic!r}")
    if version != VERSION:
        raise EmbeddingFormatError(f"malformed header: unsupported version {version}")
    off = head.size
    # each record needs at least two length prefixes and its payload
    if count * (4 + 4 * dim) > len(data) - off:
        raise EmbeddingFormatError(f"header declares {count} records of dim {dim}; file is too short")
    u16 = struct.Struct("<H")
    ids, names = [], []
    vectors = np.empty((count, dim), dtype=np.float64)
    width = 4 * dim
    try:
        for i in range(count):
            (n,) = u16.unpack_from(data, off)
            rid = data[off + 2: off + 2 + n].decode("utf-8")
            off += 2 + n
            (n,) = u16.unpack_from(data, off)
            name = data[off + 2: off + 2 + n].decode("utf-8")
            off += 2 + n
            if off + width > len(data):
                raise EmbeddingFormatError("truncated payload", record_id=rid)
            vectors[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
            off += width
            ids.append(rid)
            names.append(name)
    except struct.error:
        raise EmbeddingFormatError(f"truncated record {len(ids)}") from None
    except UnicodeDecodeError:
        raise EmbeddingFormatError(f"record {len(ids)}: invalid UTF-8") from None
    if off != len(data):
        raise EmbeddingFormatError(f"{len(data) - off} trailing bytes after {count} records")
    bad = ~np.isfinite(vectors).all(axis=1)
    if bad.any():
        raise EmbeddingFormatError("non-finite vector component", record_id=ids[int(np.argmax(bad))])
    return ids, names, vectors, dim


def load_records(
    path,
    format: str | None = None,
    label_space: LabelSpace | None = None,
    support: bool = True,
) -> EmbeddingSet:
    """Load and validate an embedding file.

    Parameters
    ----------
    path : path-like
    format : {"binary", "jsonl", "csv"}, optional
        Inferred from the suffix (``.bin``, ``.jsonl``, ``.csv``) if omitted.
    label_space : LabelSpace, optional
        Fixed label space. Labels outside it raise :class:`LabelSpaceError`.
        Without it, the sorted distinct labels of the file are used.
    support : bool
        Return a :class:`SupportSet` (every class non-empty). Pass False for
        query sets loaded against a support label space.

    Record order in the file is preserved.
    """
    path = Path(path)
    fmt = _normalize_format(format, path)
    if fmt == "binary":
        ids, names, vectors, dim = _read_binary(path)
        lines = [None] * len(ids)
    else:
        rows, dim = _read_jsonl(path) if fmt == "jsonl" else _read_csv(path)
        if rows:
            m = len(rows[0][2]) if dim is None else dim
            for rid, _, vec, lineno in rows:
                if len(vec) != m:
                    raise EmbeddingFormatError(
                        f"dimension {len(vec)} != expected {m}", record_id=rid, line=lineno
                    )
            dim = m
        ids = [r[0] for r in rows]
        names = [r[1] for r in rows]
        lines = [r[3] for r in rows]
        vectors = np.array([r[2] for r in rows], dtype=np.float64).reshape(len(rows), dim or 0)
    seen = set()
    for rid, line in zip(ids, lines):
        if rid in seen:
            raise EmbeddingFormatError("duplicate id", record_id=rid, line=line)
        seen.add(rid)
    if label_space is None:
        label_space = LabelSpace.from_names(names)
    labels = []
    for rid, name, line in zip(ids, names, lines):
        if name not in label_space:
            raise LabelSpaceError(
                f"record {rid!r}"
                + (f" (line {line})" if line is not None else "")
                + f": label {name!r} not in the label space"
            )
        labels.append(label_space.index(name))
    cls = SupportSet if support else EmbeddingSet
    return cls(tuple(ids), vectors, np.array(labels, dtype=np.int64), label_space, dim or 0)


def _encode_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise EmbeddingFormatError("string longer than 65535 bytes", record_id=s[:32])
    return struct.pack("<H", len(b)) + b


def write_records(s: EmbeddingSet, path, format: str | None = None) -> None:
    """Write ``s`` to ``path``; text formats store shortest round-trip floats."""
    path = Path(path)
    fmt = _normalize_format(format, path)
    names = s.label_names()
    if fmt == "binary":
        buf = io.BytesIO()
        buf.write(struct.pack("<4sBQQ", MAGIC, VERSION, len(s), s.dim))
        payload = s.vectors.astype("<f4")
        for i, rid in enumerate(s.ids):
            buf.write(_encode_str(rid))
            buf.write(_encode_str(names[i]))
            buf.write(payload[i].tobytes())
        path.write_bytes(buf.getvalue())
    elif fmt == "jsonl":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, rid in enumerate(s.ids):
                obj = {"id": rid, "label": names[i], "vector": s.vectors[i].tolist()}
                fh.write(json.dumps(obj) + "\n")
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "label"] + [f"v{j}" for j in range(s.dim)])
            for i, rid in enumerate(s.ids):
                w.writerow([rid, names[i]] + [repr(float(v)) for v in s.vectors[i]])


def split_holdout(s: EmbeddingSet, fraction: float, seed: int):
    """Stratified split into ``(kept, held_out)``.

    Each class contributes ``ceil(fraction * N_j)`` records to the held-out
    set, capped so that at least one record stays behind. Both outputs keep
    the input order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    counts = s.class_counts
    if (counts == 1).any():
        j = int(np.argmax(counts == 1))
        raise LabelSpaceError(
            f"class {s.label_space.name(j)!r} has a single record and cannot be split"
        )
    rng = np.random.default_rng(seed)
    held = np.zeros(len(s), dtype=bool)
    for j in range(s.n_classes):
        members = np.flatnonzero(s.labels == j)
        if members.size == 0:
            continue
        n_out = min(math.ceil(fraction * members.size), members.size - 1)
        held[rng.permutation(members)[:n_out]] = True
    return s.subset(np.flatnonzero(~held)), s.subset(np.flatnonzero(held))
