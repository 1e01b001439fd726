"""Dataset ingestion, synthetic data, and batching.

CSV is the interchange format: a header row, one named group column, an
optional label column, and numeric feature columns in header order. Group
and label values may be arbitrary strings; they are mapped to dense ids in
order of first appearance, which keeps repeated loads of the same file
byte-stable. Features are standardized per column by default.

A binary container mirrors the checkpoint header scheme for fast reloads.
Ground-truth labels ride along for evaluation only: the trainer receives a
view without them.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"FCMD"
DATASET_VERSION = 1


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    groups: np.ndarray
    labels: np.ndarray | None = None
    feature_names: tuple | None = None
    group_names: tuple | None = None
    label_names: tuple | None = None

    def __post_init__(self):
        x = self.features
        g = self.groups
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise DataError("features must be a non-empty 2-d array")
        if not np.all(np.isfinite(x)):
            raise DataError("features must be finite")
        if g.shape != (x.shape[0],):
            raise DataError("need exactly one group id per row")
        if g.min() < 0:
            raise DataError("group ids must be non-negative")
        counts = np.bincount(g)
        if np.any(counts == 0):
            raise DataError("group ids must be dense (no empty group)")
        if self.labels is not None and self.labels.shape != (x.shape[0],):
            raise DataError("need exactly one label per row when labels are present")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_groups(self) -> int:
        return int(self.groups.max()) + 1

    def train_view(self) -> "TrainView":
        """Label-free view handed to the trainer's loss path."""
        return TrainView(features=self.features, groups=self.groups)


@dataclass(frozen=True)
class TrainView:
    features: np.ndarray
    groups: np.ndarray

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_groups(self) -> int:
        return int(self.groups.max()) + 1


def _dense_ids(values):
    ids, order = {}, []
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        if v not in ids:
            ids[v] = len(order)
            order.append(v)
        out[i] = ids[v]
    return out, tuple(order)


def standardize(features: np.ndarray) -> np.ndarray:
    """Per-column zero mean, unit variance; constant columns become zero."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return (features - mean) / std


def load_csv(path, group_column: str, label_column: str | None = None,
             standardize_features: bool = True) -> Dataset:
    """Load a dataset from CSV.

    All columns except the group and label columns must be numeric features.
    Rejects empty files, duplicate header names, missing group cells, and
    non-numeric feature cells (naming the row and column).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    if group_column not in header:
        raise DataError(f"{path}: no column named {group_column!r}")
    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: no column named {label_column!r}")
    g_idx = header.index(group_column)
    l_idx = header.index(label_column) if label_column is not None else None
    f_idx = [i for i in range(len(header)) if i != g_idx and i != l_idx]
    if not f_idx:
        raise DataError(f"{path}: no feature columns left")
    if len(rows) == 1:
        raise DataError(f"{path}: header only, no data rows")

    n = len(rows) - 1
    features = np.empty((n, len(f_idx)))
    group_vals, label_vals = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        if row[g_idx].strip() == "":
            raise DataError(f"{path}: row {r} is missing its group value")
        group_vals.append(row[g_idx])
        if l_idx is not None:
            label_vals.append(row[l_idx])
        for j, i in enumerate(f_idx):
            try:
                features[r - 2, j] = float(row[i])
            except ValueError:
                raise DataError(
                    f"{path}: row {r}, column {header[i]!r}: non-numeric value {row[i]!r}"
                ) from None
    if not np.all(np.isfinite(features)):
        raise DataError(f"{path}: non-finite feature values")

    groups, group_names = _dense_ids(group_vals)
    labels, label_names = (None, None)
    if l_idx is not None:
        labels, label_names = _dense_ids(label_vals)
    if standardize_features:
        features = standardize(features)
    return Dataset(
        features=features,
        groups=groups,
        labels=labels,
        feature_names=tuple(header[i] for i in f_idx),
        group_names=group_names,
        label_names=label_names,
    )


def save_csv(dataset: Dataset, path):
    """Write features, group, and (if present) label columns.

    Group/label cells carry the original values when the dataset kept them,
    else the dense ids; floats use shortest round-trip formatting.
    """
    names = dataset.feature_names or tuple(f"f{i}" for i in range(dataset.dim))
    header = list(names) + ["group"] + (["label"] if dataset.labels is not None else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            g = dataset.groups[i]
            row.append(str(dataset.group_names[g]) if dataset.group_names else str(int(g)))
            if dataset.labels is not None:
                l = dataset.labels[i]
                row.append(str(dataset.label_names[l]) if dataset.label_names else str(int(l)))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# binary container: header scheme as for checkpoints, then raw arrays.
#   "FCMD", u32 version, u32 n, u32 dim, u32 n_groups, u32 has_labels,
#   features as n*dim f64 LE, groups as n i64 LE, labels as n i64 LE if any.

def save_binary(dataset: Dataset, path):
    header = struct.pack(
        "<4sIIIII",
        DATASET_MAGIC, DATASET_VERSION, dataset.n, dataset.dim, dataset.n_groups,
        1 if dataset.labels is not None else 0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.groups, dtype="<i8").tobytes())
        if dataset.labels is not None:
            fh.write(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())


def load_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    head = struct.calcsize("<4sIIIII")
    if len(blob) < head:
        raise DataError("dataset file truncated before header")
    magic, version, n, dim, n_groups, has_labels = struct.unpack_from("<4sIIIII", blob, 0)
    if magic != DATASET_MAGIC:
        raise DataError(f"bad dataset magic {magic!r}")
    if version != DATASET_VERSION:
        raise DataError(f"unsupported dataset version {version}")
    expected = head + 8 * n * dim + 8 * n + (8 * n if has_labels else 0)
    if len(blob) != expected:
        raise DataError(f"dataset file has {len(blob)} bytes, expected {expected}")
    off = head
    features = np.frombuffer(blob, dtype="<f8", count=n * dim, offset=off).reshape(n, dim).astype(np.float64)
    off += 8 * n * dim
    groups = np.frombuffer(blob, dtype="<i8", count=n, offset=off).astype(np.int64)
    off += 8 * n
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<i8", count=n, offset=off).astype(np.int64)
    ds = Dataset(features=features, groups=groups, labels=labels)
    if ds.n_groups != n_groups:
        raise DataError("group id range does not match the header")
    return ds


# ---------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian mixture with one cell per (class, group) pair.

    Class means sit at the vertices of a regular simplex with pairwise
    distance class_sep; group t is displaced by t * group_shift along a fixed
    unit direction orthogonal to the class-mean subspace, so the group effect
    is a pure nuisance direction. Isotropic noise everywhere.
    """

    classes: int
    groups: int
    per_cell_count: int
    class_sep: float
    group_shift: float
    dim: int
    noise_sd: float
    seed: int

    def __post_init__(self):
        if self.classes < 1 or self.groups < 1 or self.per_cell_count < 1:
            raise DataError("classes, groups, and per_cell_count must be positive")
        if self.class_sep <= 0.0:
            raise DataError("class_sep must be positive")
        if self.noise_sd < 0.0:
            raise DataError("noise_sd must be non-negative")
        needed = (self.classes - 1) + (1 if self.groups >= 2 else 0)
        if self.dim < max(needed, 1):
            raise DataError(
                f"dim={self.dim} too small to separate {self.classes} classes "
                f"and {self.groups} groups"
            )


def _simplex(k: int, sep: float) -> np.ndarray:
    """k points in k-1 dims, pairwise distance sep, centered at the origin."""
    if k == 1:
        return np.zeros((1, 0))
    verts = np.eye(k) * (sep / np.sqrt(2.0))
    verts -= verts.mean(axis=0)
    u, s, _ = np.linalg.svd(verts, full_matrices=False)
    return (u * s)[:, : k - 1]


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw the mixture; rows come out cell by cell (class-major, group-minor)."""
    rng = np.random.default_rng(spec.seed)
    class_coords = _simplex(spec.classes, spec.class_sep)
    nuisance_axis = spec.classes - 1  # first axis orthogonal to the class subspace
    blocks, labels, groups = [], [], []
    for c in range(spec.classes):
        mean_c = np.zeros(spec.dim)
        mean_c[: class_coords.shape[1]] = class_coords[c]
        for t in range(spec.groups):
            mean = mean_c.copy()
            if spec.groups >= 2:
                mean[nuisance_axis] += t * spec.group_shift
            blocks.append(rng.normal(mean, spec.noise_sd, size=(spec.per_cell_count, spec.dim)))
            labels.append(np.full(spec.per_cell_count, c, dtype=np.int64))
            groups.append(np.full(spec.per_cell_count, t, dtype=np.int64))
    return Dataset(
        features=np.concatenate(blocks, axis=0),
        groups=np.concatenate(groups),
        labels=np.concatenate(labels),
    )


def minibatches(dataset, batch_size: int, epoch_seed) -> list[np.ndarray]:
    """Seeded random permutation chopped into index batches (last may be short)."""
    n = len(dataset)
    if batch_size < 1:
        raise DataError("batch_size must be positive")
    perm = np.random.default_rng(epoch_seed).permutation(n)
    return [perm[i: i + batch_size] for i in range(0, n, batch_size)]
