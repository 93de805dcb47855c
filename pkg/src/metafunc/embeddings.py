"""Synthetic embedding distributions and embedding-set persistence.

Embedding sets stand in for a fixed, pretrained representation space.
Four 2D-rooted families are provided: parallel strips (continuity),
isotropic Gaussian blobs (cluster), and interleaved moons / concentric
circles (manifold). Non-blob shapes are generated in 2D and lifted to the
target dimension through a seeded orthonormal map.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    DimensionShrink,
    EmptyClass,
    EmptySplit,
    FormatError,
    OverlappingSplit,
    UnknownClass,
    UnsupportedShape,
)

_MAGIC = b"EMBF"
_VERSION = 1

KINDS = ("blobs", "moons", "circles", "strips")


from .rng import keyed_rng as _rng


@dataclass(frozen=True)
class EmbeddingSet:
    """Labeled fixed-dimension feature vectors.

    `vectors` is (n, dim) float32, `class_ids` is (n,) int64. Instances are
    immutable; the backing arrays are marked read-only.
    """

    dim: int
    class_ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.class_ids, dtype=np.int64)
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vecs.ndim != 2 or vecs.shape[1] != self.dim:
            raise DataError(f"vectors must be (n, {self.dim}), got {vecs.shape}")
        if ids.shape != (vecs.shape[0],):
            raise DataError("class_ids length must match vectors")
        if not np.all(np.isfinite(vecs)):
            raise DataError("non-finite embedding values")
        if np.any(ids < 0):
            raise DataError("class ids must be non-negative")
        ids.flags.writeable = False
        vecs.flags.writeable = False
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.class_ids))

    def class_index(self) -> dict[int, np.ndarray]:
        """class_id -> record positions, in input order."""
        return {c: np.flatnonzero(self.class_ids == c) for c in self.classes}

    def class_vectors(self, class_id: int) -> np.ndarray:
        rows = np.flatnonzero(self.class_ids == class_id)
        if rows.size == 0:
            raise UnknownClass(f"class {class_id} not present")
        return self.vectors[rows]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.class_ids, other.class_ids)
            and np.array_equal(self.vectors, other.vectors)
        )


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    num_classes: int
    samples_per_class: int
    dim: int = 2
    noise_sigma: float = 1.0
    separation: float = 6.0
    seed: int = 0

    def validate(self):
        if self.kind not in KINDS:
            raise UnsupportedShape(f"unknown kind {self.kind!r}")
        if self.samples_per_class < 1:
            raise EmptyClass("samples_per_class must be >= 1")
        if self.num_classes < 1:
            raise EmptyClass("num_classes must be >= 1")
        if self.dim < 2:
            raise UnsupportedShape("dim must be >= 2")
        if self.kind in ("moons", "circles") and self.num_classes != 2:
            raise UnsupportedShape(f"{self.kind} supports exactly 2 classes")
        if not np.isfinite(self.noise_sigma) or self.noise_sigma < 0:
            raise DataError("noise_sigma must be finite and >= 0")
        if not np.isfinite(self.separation) or self.separation <= 0:
            raise DataError("separation must be positive")


def _blob_centers(rng: np.random.Generator, n: int, dim: int, separation: float) -> np.ndarray:
    """Centers on a sphere of radius `separation`, pairwise distance >= 0.9 R.

    If a radius cannot accommodate all centers, it grows by 1.3x.
    """
    radius = separation
    centers: list[np.ndarray] = []
    tries = 0
    while len(centers) < n:
        v = rng.normal(size=dim)
        v *= radius / np.linalg.norm(v)
        if all(np.linalg.norm(v - c) >= 0.9 * separation for c in centers):
            centers.append(v)
            tries = 0
        else:
            tries += 1
            if tries > 200:
                radius *= 1.3
                tries = 0
    return np.stack(centers)


def _base_2d(spec: DistributionSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = spec.samples_per_class
    sep, sig = spec.separation, spec.noise_sigma
    if spec.kind == "moons":
        t0 = rng.uniform(0.0, np.pi, n)
        t1 = rng.uniform(0.0, np.pi, n)
        p0 = sep * np.stack([np.cos(t0), np.sin(t0)], axis=1)
        p1 = sep * np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
        pts = np.concatenate([p0, p1]) + rng.normal(0.0, sig, (2 * n, 2))
        ids = np.repeat([0, 1], n)
    elif spec.kind == "circles":
        radii = sep * np.arange(1, spec.num_classes + 1)
        chunks, ids_l = [], []
        for c, r in enumerate(radii):
            theta = rng.uniform(0.0, 2.0 * np.pi, n)
            rr = r + rng.normal(0.0, sig, n)
            chunks.append(np.stack([rr * np.cos(theta), rr * np.sin(theta)], axis=1))
            ids_l.append(np.full(n, c))
        pts, ids = np.concatenate(chunks), np.concatenate(ids_l)
    else:  # strips
        half = 0.5 * sep * spec.num_classes
        chunks, ids_l = [], []
        for c in range(spec.num_classes):
            x0 = c * sep + rng.normal(0.0, sig, n)
            x1 = rng.uniform(-half, half, n)
            chunks.append(np.stack([x0, x1], axis=1))
            ids_l.append(np.full(n, c))
        pts, ids = np.concatenate(chunks), np.concatenate(ids_l)
    return ids.astype(np.int64), pts


def generate_synthetic(spec: DistributionSpec) -> EmbeddingSet:
    """Deterministic synthetic embedding set for the given spec."""
    spec.validate()
    rng = _rng(spec.seed)
    if spec.kind == "blobs":
        centers = _blob_centers(rng, spec.num_classes, spec.dim, spec.separation)
        n = spec.samples_per_class
        pts = np.concatenate(
            [centers[c] + rng.normal(0.0, spec.noise_sigma, (n, spec.dim)) for c in range(spec.num_classes)]
        )
        ids = np.repeat(np.arange(spec.num_classes, dtype=np.int64), n)
        return EmbeddingSet(spec.dim, ids, pts.astype(np.float32))
    ids, pts2d = _base_2d(spec, rng)
    base = EmbeddingSet(2, ids, pts2d.astype(np.float32))
    if spec.dim > 2:
        return lift_dimension(base, spec.dim, seed=spec.seed ^ 0x5EED)
    return base


def lift_dimension(es: EmbeddingSet, target_dim: int, seed: int) -> EmbeddingSet:
    """Embed into a higher dimension through a seeded orthonormal map."""
    if target_dim < es.dim:
        raise DimensionShrink(f"target_dim {target_dim} < dim {es.dim}")
    if target_dim == es.dim:
        return es
    rng = _rng(seed, 1)
    q, _ = np.linalg.qr(rng.normal(size=(target_dim, es.dim)))
    lifted = es.vectors.astype(np.float64) @ q.T
    return EmbeddingSet(target_dim, es.class_ids, lifted.astype(np.float32))


def translate(es: EmbeddingSet, offset: np.ndarray) -> EmbeddingSet:
    offset = np.asarray(offset, dtype=np.float64)
    if offset.shape != (es.dim,):
        raise DimensionShrink(f"offset must have shape ({es.dim},)")
    return EmbeddingSet(es.dim, es.class_ids, (es.vectors.astype(np.float64) + offset).astype(np.float32))


def shift_class_ids(es: EmbeddingSet, offset: int) -> EmbeddingSet:
    return EmbeddingSet(es.dim, es.class_ids + int(offset), es.vectors)


def merge_embedding_sets(*sets: EmbeddingSet) -> EmbeddingSet:
    if not sets:
        raise EmptySplit("nothing to merge")
    dim = sets[0].dim
    if any(s.dim != dim for s in sets):
        raise DimensionShrink("all sets must share a dimension")
    seen: set[int] = set()
    for s in sets:
        cs = set(s.classes)
        if cs & seen:
            raise OverlappingSplit(f"duplicate class ids {sorted(cs & seen)}")
        seen |= cs
    return EmbeddingSet(
        dim,
        np.concatenate([s.class_ids for s in sets]),
        np.concatenate([s.vectors for s in sets]),
    )


def split_classes(es: EmbeddingSet, base_ids, novel_ids) -> tuple[EmbeddingSet, EmbeddingSet]:
    base_ids, novel_ids = list(base_ids), list(novel_ids)
    if not base_ids or not novel_ids:
        raise EmptySplit("both class lists must be non-empty")
    if set(base_ids) & set(novel_ids):
        raise OverlappingSplit(f"classes {sorted(set(base_ids) & set(novel_ids))} in both splits")
    present = set(es.classes)
    missing = (set(base_ids) | set(novel_ids)) - present
    if missing:
        raise UnknownClass(f"classes {sorted(missing)} not in set")

    def pick(ids):
        mask = np.isin(es.class_ids, list(ids))
        return EmbeddingSet(es.dim, es.class_ids[mask], es.vectors[mask])

    return pick(base_ids), pick(novel_ids)


def save_embeddings(es: EmbeddingSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, es.dim, len(es)))
        row = np.empty(1 + es.dim, dtype="<f4")
        for cid, vec in zip(es.class_ids, es.vectors):
            fh.write(struct.pack("<I", int(cid)))
            row[1:] = vec
            fh.write(row[1:].astype("<f4").tobytes())


def load_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError("bad magic; not an embedding file")
    if len(blob) < 16:
        raise FormatError("truncated header")
    version, dim, n = struct.unpack_from("<III", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}")
    row_bytes = 4 + 4 * dim
    if len(blob) != 16 + n * row_bytes:
        raise FormatError(f"payload size mismatch: expected {n} rows")
    ids = np.empty(n, dtype=np.int64)
    vecs = np.empty((n, dim), dtype=np.float32)
    off = 16
    for i in range(n):
        ids[i] = struct.unpack_from("<I", blob, off)[0]
        vecs[i] = np.frombuffer(blob, dtype="<f4", count=dim, offset=off + 4)
        off += row_bytes
    if not np.all(np.isfinite(vecs)):
        raise DataError("non-finite values in embedding file")
    return EmbeddingSet(dim, ids, vecs)


def load_embeddings_csv(path) -> EmbeddingSet:
    """CSV import: header `class,f0,...,f{d-1}`, one row per record."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "class" or len(header) < 2:
            raise FormatError("expected header class,f0,...")
        dim = len(header) - 1
        if header[1:] != [f"f{i}" for i in range(dim)]:
            raise FormatError("feature columns must be f0..f{d-1}")
        ids, rows = [], []
        for row in reader:
            if len(row) != dim + 1:
                raise FormatError(f"row has {len(row)} fields, expected {dim + 1}")
            ids.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise FormatError("no records")
    vecs = np.asarray(rows, dtype=np.float32)
    if not np.all(np.isfinite(vecs)):
        raise DataError("non-finite values in CSV")
    return EmbeddingSet(dim, np.asarray(ids, dtype=np.int64), vecs)


def save_embeddings_csv(es: EmbeddingSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + [f"f{i}" for i in range(es.dim)])
        for cid, vec in zip(es.class_ids, es.vectors):
            writer.writerow([int(cid)] + [repr(float(v)) for v in vec])
