"""Synthetic cross-domain keyword-feature datasets with controllable shift.

The source domain draws each class from a unit-variance Gaussian cluster.
The target domain reuses the same generative process, then rotates every
sample by ``domain_shift`` radians (in random orthogonal planes) and
translates each class mean by a random direction of length ``domain_shift``,
so a single knob moves the task from "same domain" to "severe mismatch".

Datasets carry a sensitivity tag that propagates through every split and
subset; training paths that must never see sensitive rows check it.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "SENSITIVE",
    "PUBLIC",
    "SyntheticSpec",
    "LabeledDataset",
    "Splits",
    "generate",
    "split_teacher_student_eval",
    "subset",
    "concat",
    "save_csv",
    "load_csv",
    "save_binary",
    "load_binary",
]

SENSITIVE = "sensitive"
PUBLIC = "public"

_DSET_MAGIC = b"DST1"
_DSET_VERSION = 1


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 5
    samples_per_class: int = 600
    feature_dim: int = 40
    class_separation: float = 4.0
    domain_shift: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.samples_per_class < 1:
            raise ValueError("need at least one sample per class")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        if not self.class_separation > 0.0:
            raise ValueError("class_separation must be positive")
        if self.domain_shift < 0.0:
            raise ValueError("domain_shift must be nonnegative")


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    sensitivity: str
    num_classes: int

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if features.ndim != 2 or labels.ndim != 1 or len(features) != len(labels):
            raise ValueError("features must be (n, dim) with one label per row")
        if self.sensitivity not in (SENSITIVE, PUBLIC):
            raise ValueError(f"sensitivity must be {SENSITIVE!r} or {PUBLIC!r}")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels out of range")
        features = features.copy()
        labels = labels.copy()
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(len(self.labels))

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])


class Splits(NamedTuple):
    teacher_train: LabeledDataset
    student_public: LabeledDataset
    eval: LabeledDataset


def _rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation by ``angle`` radians in dim // 2 random orthogonal planes."""
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    block = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for j in range(dim // 2):
        block[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = [[c, -s], [s, c]]
    return basis @ block @ basis.T


def generate(spec: SyntheticSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Source (public) and target (sensitive) datasets, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    c, n, dim = spec.num_classes, spec.samples_per_class, spec.feature_dim

    directions = rng.normal(size=(c, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = spec.class_separation * directions

    rotation = _rotation(dim, spec.domain_shift, rng)
    shift_dirs = rng.normal(size=(c, dim))
    shift_dirs /= np.linalg.norm(shift_dirs, axis=1, keepdims=True)
    translations = spec.domain_shift * shift_dirs

    labels = np.repeat(np.arange(c), n)
    source_x = means[labels] + rng.normal(size=(c * n, dim))
    target_x = (means[labels] + rng.normal(size=(c * n, dim))) @ rotation.T
    target_x = target_x + translations[labels]

    order_s = rng.permutation(c * n)
    order_t = rng.permutation(c * n)
    source = LabeledDataset(source_x[order_s], labels[order_s], PUBLIC, c)
    target = LabeledDataset(target_x[order_t], labels[order_t], SENSITIVE, c)
    return source, target


def subset(dataset: LabeledDataset, indices) -> LabeledDataset:
    """Row subset; the sensitivity tag propagates unchanged."""
    idx = np.asarray(indices, dtype=int)
    return LabeledDataset(
        dataset.features[idx], dataset.labels[idx], dataset.sensitivity, dataset.num_classes
    )


def _retag(dataset: LabeledDataset, sensitivity: str) -> LabeledDataset:
    return LabeledDataset(dataset.features, dataset.labels, sensitivity, dataset.num_classes)


def concat(a: LabeledDataset, b: LabeledDataset) -> LabeledDataset:
    """Stack two datasets; any sensitive part makes the result sensitive."""
    if a.num_classes != b.num_classes or a.feature_dim != b.feature_dim:
        raise ValueError("datasets are not compatible")
    tag = SENSITIVE if SENSITIVE in (a.sensitivity, b.sensitivity) else PUBLIC
    return LabeledDataset(
        np.vstack([a.features, b.features]),
        np.concatenate([a.labels, b.labels]),
        tag,
        a.num_classes,
    )


def split_teacher_student_eval(
    target: LabeledDataset, rng: np.random.Generator, test_fraction: float = 0.2
) -> Splits:
    """Carve the target domain into the three adaptation pools.

    A stratified ``test_fraction`` of the rows forms the test pool, which is
    halved (again stratified, balanced globally to within one row) into the
    student's public pool and the held-out evaluation pool. The remainder
    stays sensitive and trains the teachers. Student and eval rows are
    re-tagged public.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    teacher_idx: list[np.ndarray] = []
    student_idx: list[np.ndarray] = []
    eval_idx: list[np.ndarray] = []
    n_student = n_eval = 0
    for cls in range(target.num_classes):
        rows = np.flatnonzero(target.labels == cls)
        rows = rows[rng.permutation(len(rows))]
        n_test = int(round(test_fraction * len(rows)))
        if n_test < 2 or len(rows) - n_test < 1:
            raise ValueError(
                f"class {cls} has {len(rows)} rows, too few for a "
                f"{test_fraction:.2f} test split"
            )
        test_rows, train_rows = rows[:n_test], rows[n_test:]
        half = n_test // 2
        if n_test % 2 == 1 and n_student > n_eval:
            half += 1  # odd classes alternate so the two pools stay balanced
        student_rows, eval_rows = test_rows[:half], test_rows[half:]
        n_student += len(student_rows)
        n_eval += len(eval_rows)
        teacher_idx.append(train_rows)
        student_idx.append(student_rows)
        eval_idx.append(eval_rows)

    def build(parts, tag):
        rows = np.concatenate(parts)
        rows = rows[rng.permutation(len(rows))]
        return _retag(subset(target, rows), tag)

    return Splits(
        teacher_train=build(teacher_idx, target.sensitivity),
        student_public=build(student_idx, PUBLIC),
        eval=build(eval_idx, PUBLIC),
    )


# ---------------------------------------------------------------------------
# serialization


def save_csv(dataset: LabeledDataset, path) -> None:
    """Header row of feature names with the label column last."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.feature_dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, sensitivity: str, num_classes: int | None = None) -> LabeledDataset:
    """Read a dataset written by :func:`save_csv`.

    CSV carries no sensitivity metadata, so the tag must be supplied by the
    caller; ``num_classes`` defaults to ``max(label) + 1``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError("expected a header row ending in 'label'")
        feats, labels = [], []
        for row in reader:
            feats.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
    labels_arr = np.asarray(labels, dtype=int)
    classes = num_classes if num_classes is not None else int(labels_arr.max()) + 1
    return LabeledDataset(np.asarray(feats), labels_arr, sensitivity, classes)


def save_binary(dataset: LabeledDataset, path) -> None:
    """Compact binary form: header, float32 features, int32 labels.

    Layout (little-endian): magic ``b"DST1"``, uint32 version, uint32 rows,
    uint32 feature dim, uint32 num_classes, uint8 sensitivity (1 =
    sensitive), then the feature matrix as float32 and labels as int32.
    """
    with open(path, "wb") as fh:
        fh.write(struct.pack(
            "<4sIIIIB",
            _DSET_MAGIC,
            _DSET_VERSION,
            len(dataset),
            dataset.feature_dim,
            dataset.num_classes,
            1 if dataset.sensitivity == SENSITIVE else 0,
        ))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes())


def load_binary(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    head = struct.calcsize("<4sIIIIB")
    magic, version, rows, dim, classes, tag = struct.unpack("<4sIIIIB", raw[:head])
    if magic != _DSET_MAGIC or version != _DSET_VERSION:
        raise ValueError("not a recognized dataset file")
    feats = np.frombuffer(raw, dtype="<f4", count=rows * dim, offset=head)
    labels = np.frombuffer(raw, dtype="<i4", count=rows, offset=head + 4 * rows * dim)
    return LabeledDataset(
        feats.astype(float).reshape(rows, dim),
        labels.astype(int),
        SENSITIVE if tag else PUBLIC,
        classes,
    )
