"""Labeled latent-vector datasets: schema, persistence, splitting, batching.

Vectors are held in memory as float64 and written to disk as float32, so a
dataset whose values are already float32-representable (everything loaded
from disk and everything produced by :func:`synth_toy_dataset`) survives a
save/load round trip bit-exactly.
"""

import itertools
import json
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import EmptyGroupError, FormatError, ValidationError

log = logging.getLogger(__name__)

LATD_MAGIC = b"LATD"
LATD_VERSION = 1
_LATD_HEADER = struct.Struct("<4sIIQHI")
SCALE_FLOOR = 1e-8
UNKNOWN_VALUE = "?unknown"


# --------------------------------------------------------------------------
# schema and selectors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DemographicSchema:
    """Ordered demographic axes, each with an ordered list of values."""

    axes: tuple  # tuple of (name, tuple of values)

    def __post_init__(self):
        axes = tuple((str(name), tuple(str(v) for v in values)) for name, values in self.axes)
        object.__setattr__(self, "axes", axes)
        if not axes:
            raise ValidationError("schema needs at least one axis")
        names = [a for a, _ in axes]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate axis names in {names}")
        for name, values in axes:
            if not name:
                raise ValidationError("axis names must be non-empty")
            if len(values) < 2:
                raise ValidationError(f"axis {name!r} needs at least 2 values")
            if len(set(values)) != len(values):
                raise ValidationError(f"duplicate values on axis {name!r}")

    @property
    def names(self):
        return [a for a, _ in self.axes]

    @property
    def n_axes(self):
        return len(self.axes)

    def values(self, axis):
        return self.axes[self.axis_index(axis)][1]

    def axis_index(self, axis):
        for i, (name, _) in enumerate(self.axes):
            if name == axis:
                return i
        raise ValidationError(f"unknown axis {axis!r}; schema axes are {self.names}")

    def value_index(self, axis, value):
        values = self.values(axis)
        try:
            return values.index(value)
        except ValueError:
            raise ValidationError(
                f"unknown value {value!r} for axis {axis!r}; expected one of {list(values)}"
            ) from None

    def sizes(self):
        return [len(v) for _, v in self.axes]

    def combinations(self):
        """All full group combinations as tuples of value indices."""
        return list(itertools.product(*(range(k) for k in self.sizes())))

    def with_unknown(self):
        """Schema with a reserved trailing value appended to every axis."""
        return DemographicSchema(
            tuple((name, values if values[-1] == UNKNOWN_VALUE else values + (UNKNOWN_VALUE,))
                  for name, values in self.axes)
        )

    def to_json(self):
        return {"axes": [{"name": n, "values": list(v)} for n, v in self.axes]}

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(tuple((a["name"], a["values"]) for a in obj["axes"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed schema JSON: {exc}") from None

    def to_bytes(self):
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class GroupSelector:
    """Conjunction of ``(axis, value)`` clauses naming a demographic group."""

    clauses: tuple = ()

    def __post_init__(self):
        clauses = tuple((str(a), str(v)) for a, v in self.clauses)
        object.__setattr__(self, "clauses", clauses)
        axes = [a for a, _ in clauses]
        if len(set(axes)) != len(axes):
            raise ValidationError(f"selector has more than one clause on an axis: {axes}")

    @classmethod
    def parse(cls, text):
        """Parse ``"gender=female,race=hispanic"``; empty text selects everything."""
        text = (text or "").strip()
        if not text or text == "all":
            return cls(())
        clauses = []
        for part in text.split(","):
            if "=" not in part:
                raise ValidationError(f"selector clause {part!r} is not axis=value")
            a, v = part.split("=", 1)
            clauses.append((a.strip(), v.strip()))
        return cls(tuple(clauses))

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, cls):
            return obj
        if isinstance(obj, str):
            return cls.parse(obj)
        if isinstance(obj, dict):
            return cls(tuple(obj.items()))
        return cls(tuple(tuple(c) for c in obj))

    def to_json(self):
        return [list(c) for c in self.clauses]

    def validate(self, schema):
        for axis, value in self.clauses:
            schema.value_index(axis, value)
        return self

    def mask(self, ds):
        self.validate(ds.schema)
        keep = np.ones(len(ds), dtype=bool)
        for axis, value in self.clauses:
            a = ds.schema.axis_index(axis)
            keep &= ds.labels[:, a] == ds.schema.value_index(axis, value)
        return keep

    def slug(self):
        if not self.clauses:
            return "all"
        return "_".join(f"{a}-{v}" for a, v in self.clauses).replace("/", "-").replace(" ", "-")

    def __str__(self):
        return ",".join(f"{a}={v}" for a, v in self.clauses) or "all"

    @classmethod
    def for_combination(cls, schema, combo):
        return cls(tuple((name, values[i]) for (name, values), i in zip(schema.axes, combo)))


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------


class LatentRecord(NamedTuple):
    id: int
    vector: np.ndarray
    labels: tuple


@dataclass(frozen=True, eq=False)
class LatentDataset:
    schema: DemographicSchema
    vectors: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n, n_axes) uint16
    ids: np.ndarray  # (n,) uint64

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        n = vectors.shape[0] if vectors.ndim == 2 else 0
        if self.ids is None:
            ids = np.arange(n, dtype=np.uint64)
        else:
            ids = np.array(self.ids, dtype=np.uint64, copy=True)
        if vectors.ndim != 2 or n == 0 or vectors.shape[1] == 0:
            raise ValidationError("dataset must be a nonempty (n, d) array of vectors")
        if not np.all(np.isfinite(vectors)):
            bad = int(np.argwhere(~np.isfinite(vectors))[0, 0])
            raise ValidationError(f"non-finite vector entry in record {bad}")
        if labels.shape != (n, self.schema.n_axes):
            raise ValidationError(
                f"labels shape {labels.shape} does not match (n={n}, axes={self.schema.n_axes})"
            )
        sizes = np.array(self.schema.sizes())
        if np.any(labels < 0) or np.any(labels >= sizes[None, :]):
            row, col = np.argwhere((labels < 0) | (labels >= sizes[None, :]))[0]
            raise ValidationError(
                f"label index {labels[row, col]} out of range for axis "
                f"{self.schema.names[col]!r} in record {row}"
            )
        if ids.shape != (n,):
            raise ValidationError("ids must have one entry per record")
        if len(np.unique(ids)) != n:
            raise ValidationError("record ids must be unique")
        for arr in (vectors, labels, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels.astype(np.uint16))
        object.__setattr__(self, "ids", ids)
        self.labels.setflags(write=False)

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]

    def record(self, i):
        return LatentRecord(int(self.ids[i]), self.vectors[i], tuple(int(x) for x in self.labels[i]))

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def subset(self, index):
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        if index.size == 0:
            raise EmptyGroupError("subset selects no records")
        return LatentDataset(self.schema, self.vectors[index], self.labels[index], self.ids[index])

    def with_vectors(self, vectors):
        return LatentDataset(self.schema, vectors, self.labels, self.ids)

    def axis_labels(self, axis):
        return self.labels[:, self.schema.axis_index(axis)].astype(np.int64)

    def group_keys(self):
        """Integer key per record identifying its full group combination."""
        sizes = self.schema.sizes()
        key = np.zeros(len(self), dtype=np.int64)
        for a, k in enumerate(sizes):
            key = key * (k + 1) + self.labels[:, a]
        return key

    def equals(self, other):
        return (
            self.schema == other.schema
            and np.array_equal(self.vectors, other.vectors)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.ids, other.ids)
        )


def make_dataset(schema, vectors, labels, ids=None):
    return LatentDataset(schema, vectors, labels, ids)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def dataset_to_bytes(ds):
    schema = ds.schema.to_bytes()
    header = _LATD_HEADER.pack(
        LATD_MAGIC, LATD_VERSION, ds.dim, len(ds), ds.schema.n_axes, len(schema)
    )
    return b"".join(
        [
            header,
            schema,
            np.ascontiguousarray(ds.vectors, dtype="<f4").tobytes(),
            np.ascontiguousarray(ds.labels, dtype="<u2").tobytes(),
            np.ascontiguousarray(ds.ids, dtype="<u8").tobytes(),
        ]
    )


def dataset_from_bytes(buf):
    if len(buf) < _LATD_HEADER.size:
        raise FormatError("file too short for a LATD header")
    magic, version, dim, n, n_axes, schema_len = _LATD_HEADER.unpack_from(buf, 0)
    if magic != LATD_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {LATD_MAGIC!r}")
    if version != LATD_VERSION:
        raise FormatError(f"unsupported LATD version {version}")
    off = _LATD_HEADER.size
    expected = off + schema_len + n * dim * 4 + n * n_axes * 2 + n * 8
    if len(buf) != expected:
        raise FormatError(f"LATD size mismatch: header implies {expected} bytes, file has {len(buf)}")
    try:
        schema = DemographicSchema.from_json(json.loads(buf[off : off + schema_len].decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable schema blob: {exc}") from None
    if schema.n_axes != n_axes:
        raise FormatError(f"header says {n_axes} axes, schema has {schema.n_axes}")
    off += schema_len
    vectors = np.frombuffer(buf, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
    off += n * dim * 4
    labels = np.frombuffer(buf, dtype="<u2", count=n * n_axes, offset=off).reshape(n, n_axes)
    off += n * n_axes * 2
    ids = np.frombuffer(buf, dtype="<u8", count=n, offset=off)
    return LatentDataset(schema, vectors.astype(np.float64), labels, ids)


def save_dataset(ds, path):
    """Write ``ds`` in the LATD binary layout (float32 vectors)."""
    if not isinstance(ds, LatentDataset) or len(ds) == 0:
        raise ValidationError("cannot save an empty dataset")
    Path(path).write_bytes(dataset_to_bytes(ds))


def schema_sidecar_path(path):
    return Path(str(path) + ".schema.json")


def save_dataset_jsonl(ds, path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in ds:
            obj = {
                "id": rec.id,
                "vector": [float(x) for x in rec.vector],
                "labels": list(rec.labels),
            }
            fh.write(json.dumps(obj) + "\n")
    side = dict(ds.schema.to_json(), dim=ds.dim)
    schema_sidecar_path(path).write_text(json.dumps(side, indent=2) + "\n")


def _load_jsonl(path, schema=None):
    path = Path(path)
    dim = None
    if schema is None:
        side = schema_sidecar_path(path)
        if not side.exists():
            raise FormatError(f"JSON-lines dataset {path} has no schema sidecar {side.name}")
        meta = json.loads(side.read_text())
        schema = DemographicSchema.from_json(meta)
        dim = meta.get("dim")
    ids, vectors, labels = [], [], []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ids.append(int(obj["id"]))
                vectors.append([float(x) for x in obj["vector"]])
                labels.append([int(x) for x in obj["labels"]])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad record ({exc})") from None
    if not vectors:
        raise ValidationError(f"{path} holds no records")
    widths = {len(v) for v in vectors}
    if len(widths) != 1:
        raise ValidationError(f"{path}: records have differing vector lengths {sorted(widths)}")
    if dim is not None and widths != {dim}:
        raise ValidationError(f"{path}: vector length {widths.pop()} does not match declared dim {dim}")
    return LatentDataset(schema, np.array(vectors), np.array(labels), np.array(ids, dtype=np.uint64))


def load_dataset(path, schema=None):
    """Load a dataset from LATD binary or JSON-lines (sniffed from the first bytes)."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == LATD_MAGIC:
        return dataset_from_bytes(path.read_bytes())
    if head.lstrip()[:1] == b"{":
        return _load_jsonl(path, schema)
    raise FormatError(f"{path}: not a LATD file (magic {head!r}) nor JSON lines")


# --------------------------------------------------------------------------
# toy generator
# --------------------------------------------------------------------------


@dataclass
class ToyGroundTruth:
    combos: list  # value-index tuples, one per group
    means: np.ndarray  # (G, s) semantic means
    variances: np.ndarray  # (G, s) semantic diagonal variances
    mixing: np.ndarray  # (d, s) orthonormal columns
    rotation: np.ndarray  # (d, d) orthogonal, feeds the tanh entanglement
    nonlinearity: str = "x+0.5*tanh(Rx)"
    seed: int = 0

    def to_json(self):
        return {
            "combos": [list(c) for c in self.combos],
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "nonlinearity": self.nonlinearity,
            "seed": self.seed,
            "dim": int(self.mixing.shape[0]),
            "sem_dim": int(self.mixing.shape[1]),
        }


def random_orthonormal(rng, rows, cols):
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)[None, :]


def entangle(x, rotation):
    return x + 0.5 * np.tanh(x @ rotation.T)


def synth_toy_dataset(schema, n_per_group, sem_dim, dim, separation, seed):
    """Draw group-conditional toy latents pushed through an entangling map.

    Axis ``a`` owns semantic coordinate ``a``; value ``v`` of a ``k``-valued
    axis sits at ``(v - (k-1)/2) * separation`` on it (the corners of a
    hypercube with side ``separation`` for binary axes). Remaining semantic
    coordinates are shared nuisance dimensions. Semantic vectors have unit
    variance, are mapped into ``dim`` dimensions by random orthonormal
    columns, then entangled with ``x + 0.5 tanh(R x)``.
    """
    if n_per_group < 1:
        raise ValidationError("n_per_group must be positive")
    if sem_dim < 2 or sem_dim < schema.n_axes:
        raise ValidationError(f"sem_dim={sem_dim} must be >= max(2, number of axes)")
    if dim < sem_dim:
        raise ValidationError(f"dim={dim} must be >= sem_dim={sem_dim}")
    if not np.isfinite(separation) or separation < 0:
        raise ValidationError("separation must be a finite non-negative number")

    rng = np.random.default_rng(seed)
    mixing = random_orthonormal(rng, dim, sem_dim)
    rotation = random_orthonormal(rng, dim, dim)
    combos = schema.combinations()
    sizes = schema.sizes()
    means = np.zeros((len(combos), sem_dim))
    for g, combo in enumerate(combos):
        for a, v in enumerate(combo):
            means[g, a] = (v - (sizes[a] - 1) / 2.0) * separation
    variances = np.ones((len(combos), sem_dim))

    blocks, labels = [], []
    for g, combo in enumerate(combos):
        z = means[g] + np.sqrt(variances[g]) * rng.standard_normal((n_per_group, sem_dim))
        blocks.append(z)
        labels.append(np.tile(np.array(combo), (n_per_group, 1)))
    z = np.concatenate(blocks)
    w = entangle(z @ mixing.T, rotation)
    w = w.astype(np.float32).astype(np.float64)
    ds = LatentDataset(schema, w, np.concatenate(labels), np.arange(len(w), dtype=np.uint64))
    truth = ToyGroundTruth(combos, means, variances, mixing, rotation, seed=seed)
    return ds, truth


# --------------------------------------------------------------------------
# splitting, selection, batching
# --------------------------------------------------------------------------


def split_dataset(ds, test_fraction, seed, stratified=True):
    """Stratified train/test split by full group combination.

    Each group with ``n_g`` records sends ``floor(test_fraction * n_g)``
    records to test, clamped so both sides keep at least one.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(len(ds), dtype=bool)
    if stratified:
        keys = ds.group_keys()
        for key in np.unique(keys):
            members = np.flatnonzero(keys == key)
            if len(members) < 2:
                combo = tuple(int(x) for x in ds.labels[members[0]])
                name = GroupSelector.for_combination(ds.schema, combo)
                raise ValidationError(f"group {name} has fewer than 2 records; cannot stratify")
            n_test = min(max(int(np.floor(test_fraction * len(members))), 1), len(members) - 1)
            test_mask[rng.permutation(members)[:n_test]] = True
    else:
        if len(ds) < 2:
            raise ValidationError("need at least 2 records to split")
        n_test = min(max(int(np.floor(test_fraction * len(ds))), 1), len(ds) - 1)
        test_mask[rng.permutation(len(ds))[:n_test]] = True
    return ds.subset(~test_mask), ds.subset(test_mask)


def select_group(ds, selector):
    keep = selector.mask(ds)
    if not keep.any():
        raise EmptyGroupError(f"no records match group {selector}")
    return ds.subset(keep)


def make_batches(n, batch_size, seed, epoch):
    """Seeded per-epoch shuffle split into index batches.

    A trailing short batch is kept when it holds at least 2 records.
    """
    if batch_size < 2:
        raise ValidationError("batch_size must be >= 2 for contrastive pairs")
    if isinstance(n, LatentDataset):
        n = len(n)
    perm = np.random.default_rng([int(seed), int(epoch)]).permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


# --------------------------------------------------------------------------
# standardization
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def forward(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, X):
        return np.asarray(X, dtype=np.float64) * self.scale + self.mean


def fit_standardizer(ds_or_array, floor=SCALE_FLOOR):
    X = ds_or_array.vectors if isinstance(ds_or_array, LatentDataset) else np.asarray(ds_or_array, float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("cannot fit a standardizer on an empty dataset")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    low = scale < floor
    if low.any():
        warnings.warn(
            f"{int(low.sum())} dimension(s) have near-zero variance; scale clamped to {floor}",
            RuntimeWarning,
            stacklevel=2,
        )
        scale = np.where(low, floor, scale)
    return Standardizer(mean, scale)


def apply_standardizer(st, ds, direction="forward"):
    if direction == "forward":
        return ds.with_vectors(st.forward(ds.vectors))
    if direction == "inverse":
        return ds.with_vectors(st.inverse(ds.vectors))
    raise ValidationError(f"direction must be 'forward' or 'inverse', got {direction!r}")
