"""Feature tables, binary arousal/valence labels, splits and class rebalancing.

Feature CSV layout::

    id,<f1>,...,<fN>[,valence][,arousal][,emotion][,speaker]

The optional trailing columns are recognised by name; every other column
after ``id`` is a feature.
"""
from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyPartition,
    InvalidCell,
    NonFiniteValue,
    NumericalWarning,
    SingleClass,
    TooFewRows,
    UnsupportedCategory,
    ValidationError,
)

DEFAULT_DIM = 88
DEFAULT_LAMBDA = 2.5
META_COLUMNS = ("valence", "arousal", "emotion", "speaker")


class BinaryLabel(enum.IntEnum):
    NEG = 0
    POS = 1

    def __str__(self):
        return "+" if self is BinaryLabel.POS else "-"


class Dimension(str, enum.Enum):
    AROUSAL = "A"
    VALENCE = "V"

    @classmethod
    def parse(cls, value) -> "Dimension":
        if isinstance(value, cls):
            return value
        text = str(value).strip().upper()
        for member in cls:
            if text in (member.value, member.name):
                return member
        raise ValidationError(f"unknown emotion dimension {value!r}")


@dataclass(frozen=True)
class DimensionalRating:
    valence: float
    arousal: float

    def __post_init__(self):
        for name in ("valence", "arousal"):
            value = getattr(self, name)
            if not (math.isfinite(value) and 1.0 <= value <= 5.0):
                raise ValidationError(f"{name} rating {value!r} outside [1, 5]")


@dataclass(frozen=True, eq=False)
class FeatureTable:
    ids: tuple
    features: np.ndarray
    feature_names: tuple = ()
    valence: np.ndarray | None = None
    arousal: np.ndarray | None = None
    emotion: tuple | None = None
    speaker: tuple | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise DimensionMismatch("features must be a 2-D matrix")
        if len(self.ids) != feats.shape[0]:
            raise DimensionMismatch("one id per feature row is required")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("utterance ids must be unique")
        if not np.all(np.isfinite(feats)):
            bad = np.argwhere(~np.isfinite(feats))[0]
            raise InvalidCell(f"non-finite feature at row {bad[0]}, column {bad[1]}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "ids", tuple(self.ids))
        if not self.feature_names:
            object.__setattr__(self, "feature_names",
                               tuple(f"f{i + 1}" for i in range(feats.shape[1])))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def N(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def take(self, indices) -> "FeatureTable":
        idx = np.asarray(indices, dtype=np.intp)

        def pick(seq):
            if seq is None:
                return None
            if isinstance(seq, np.ndarray):
                return seq[idx]
            return tuple(seq[i] for i in idx)

        return FeatureTable(
            ids=pick(self.ids),
            features=self.features[idx],
            feature_names=self.feature_names,
            valence=pick(self.valence),
            arousal=pick(self.arousal),
            emotion=pick(self.emotion),
            speaker=pick(self.speaker),
        )

    def with_features(self, features) -> "FeatureTable":
        """Same rows and metadata, new feature matrix (e.g. after noise)."""
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != self.n:
            raise DimensionMismatch("row count must be preserved")
        names = self.feature_names if features.shape[1] == self.N else ()
        return FeatureTable(self.ids, features, names, self.valence,
                            self.arousal, self.emotion, self.speaker)

    def without_labels(self) -> "FeatureTable":
        return FeatureTable(self.ids, self.features, self.feature_names,
                            speaker=self.speaker)

    def index_of(self, ids: Sequence[str]) -> np.ndarray:
        lookup = {k: i for i, k in enumerate(self.ids)}
        try:
            return np.array([lookup[k] for k in ids], dtype=np.intp)
        except KeyError as exc:
            raise ValidationError(f"id {exc.args[0]!r} not present in table") from None


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    table: FeatureTable
    labels: np.ndarray
    dimension: Dimension

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.table.n,):
            raise DimensionMismatch("labels length must equal row count")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.table.n

    @property
    def ids(self):
        return self.table.ids

    @property
    def features(self):
        return self.table.features

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return LabeledDataset(self.table.take(idx), self.labels[idx], self.dimension)

    def class_counts(self) -> dict:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def by_class(self) -> list:
        """Feature matrices grouped by label, in ascending label order."""
        return [self.features[self.labels == c] for c in np.unique(self.labels)]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    validation_fraction_of_train: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("train_fraction", "validation_fraction_of_train"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {value}")


def load_feature_table(path, expected_dim: int | None = DEFAULT_DIM) -> FeatureTable:
    """Read a feature CSV and validate it.

    Parameters
    ----------
    path : str or Path
        CSV with an ``id`` column, N feature columns and optional
        ``valence``/``arousal``/``emotion``/``speaker`` columns.
    expected_dim : int or None
        Required feature count; ``None`` accepts any width.

    Raises
    ------
    DimensionMismatch, InvalidCell, DuplicateId
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    if not header or header[0] != "id":
        raise ValidationError(f"{path}: first column must be 'id'")
    meta = {name: header.index(name) for name in META_COLUMNS if name in header}
    feat_cols = [i for i, h in enumerate(header[1:], start=1) if h not in meta]
    if expected_dim is not None and len(feat_cols) != expected_dim:
        raise DimensionMismatch(
            f"{path}: {len(feat_cols)} feature columns, expected {expected_dim}")

    ids = []
    feats = np.empty((len(rows), len(feat_cols)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DimensionMismatch(f"{path}: row {r + 1} has {len(row)} cells, "
                                    f"header has {len(header)}")
        ids.append(row[0].strip())
        for j, col in enumerate(feat_cols):
            feats[r, j] = _parse_cell(row[col], path, r, header[col])

    def numeric(name):
        if name not in meta:
            return None
        return np.array([_parse_cell(row[meta[name]], path, r, name)
                         for r, row in enumerate(rows)])

    def text(name):
        if name not in meta:
            return None
        return tuple(row[meta[name]].strip() for row in rows)

    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(i for i in ids if i in seen or seen.add(i))
        raise DuplicateId(f"{path}: duplicate id {dup!r}")
    return FeatureTable(
        ids=tuple(ids),
        features=feats,
        feature_names=tuple(header[c] for c in feat_cols),
        valence=numeric("valence"),
        arousal=numeric("arousal"),
        emotion=text("emotion"),
        speaker=text("speaker"),
    )


def _parse_cell(cell: str, path, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise InvalidCell(f"{path}: row {row + 1}, column {column!r}: "
                          f"cannot parse {cell!r}") from None
    if not math.isfinite(value):
        raise InvalidCell(f"{path}: row {row + 1}, column {column!r}: "
                          f"non-finite value {cell!r}")
    return value


def write_feature_table(path, table: FeatureTable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = [name for name in META_COLUMNS if getattr(table, name) is not None]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", *table.feature_names, *extra])
        for i in range(table.n):
            row = [table.ids[i], *(repr(float(v)) for v in table.features[i])]
            for name in extra:
                value = getattr(table, name)[i]
                row.append(value if isinstance(value, str) else repr(float(value)))
            writer.writerow(row)


def binarize_rating(rating: float, lam: float = DEFAULT_LAMBDA) -> BinaryLabel:
    """POS when the averaged rating reaches ``lam``, NEG below it."""
    if not math.isfinite(rating):
        raise NonFiniteValue(f"rating must be finite, got {rating!r}")
    return BinaryLabel.POS if rating >= lam else BinaryLabel.NEG


_CATEGORY_AV = {
    "anger": (BinaryLabel.NEG, BinaryLabel.POS),
    "happy": (BinaryLabel.POS, BinaryLabel.POS),
    "neutral": (BinaryLabel.POS, BinaryLabel.NEG),
    "sad": (BinaryLabel.NEG, BinaryLabel.NEG),
}
_CATEGORY_ALIASES = {"angry": "anger", "happiness": "happy", "sadness": "sad"}


def map_categorical_to_av(emotion: str) -> tuple:
    """Return ``(valence, arousal)`` labels for one of the four categories."""
    key = str(emotion).strip().lower()
    key = _CATEGORY_ALIASES.get(key, key)
    try:
        return _CATEGORY_AV[key]
    except KeyError:
        raise UnsupportedCategory(
            f"category {emotion!r} is not one of Anger, Happy, Neutral, Sad") from None


def labels_for(table: FeatureTable, dimension, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Binary labels for ``dimension``; ratings take precedence over categories."""
    dimension = Dimension.parse(dimension)
    ratings = table.arousal if dimension is Dimension.AROUSAL else table.valence
    if ratings is not None:
        return np.array([binarize_rating(float(r), lam) for r in ratings], dtype=np.int64)
    if table.emotion is not None:
        pos = 1 if dimension is Dimension.AROUSAL else 0
        return np.array([map_categorical_to_av(e)[pos] for e in table.emotion],
                        dtype=np.int64)
    raise ValidationError(f"table carries neither {dimension.name.lower()} ratings "
                          "nor an emotion column")


def make_dataset(table: FeatureTable, dimension, lam: float = DEFAULT_LAMBDA) -> LabeledDataset:
    dimension = Dimension.parse(dimension)
    return LabeledDataset(table, labels_for(table, dimension, lam), dimension)


def _partition_sizes(n: int, keep_fraction: float) -> int:
    # guard against 0.9 * 100 == 90.00000000000001
    n_keep = math.ceil(round(keep_fraction * n, 9))
    return min(max(n_keep, 1), n - 1)


def _random_partition(n: int, keep_fraction: float, seed: int, groups=None):
    if n < 2:
        raise TooFewRows(f"need at least 2 rows to split, got {n}")
    rng = np.random.default_rng(seed)
    if groups is None:
        perm = rng.permutation(n)
        n_keep = _partition_sizes(n, keep_fraction)
        return np.sort(perm[:n_keep]), np.sort(perm[n_keep:])

    groups = np.asarray(groups, dtype=object)
    unique = sorted(set(groups.tolist()))
    if len(unique) < 2:
        raise TooFewRows("need at least 2 groups for a grouped split")
    order = rng.permutation(len(unique))
    n_keep = _partition_sizes(len(unique), keep_fraction)
    keep_groups = {unique[i] for i in order[:n_keep]}
    mask = np.array([g in keep_groups for g in groups])
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def split_train_test(dataset: LabeledDataset, spec: SplitSpec = SplitSpec(), groups=None):
    """Random ``train_fraction`` / remainder partition of the rows.

    With ``groups`` (e.g. speaker ids) whole groups are assigned to one side,
    so sizes follow the group count instead of the row count.
    """
    if len(dataset) == 0:
        raise EmptyPartition("cannot split an empty dataset")
    train, test = _random_partition(len(dataset), spec.train_fraction, spec.seed, groups)
    return dataset.subset(train), dataset.subset(test)


def split_validation(train: LabeledDataset, spec: SplitSpec = SplitSpec(), groups=None):
    if len(train) == 0:
        raise EmptyPartition("cannot split an empty dataset")
    fit, val = _random_partition(len(train), 1.0 - spec.validation_fraction_of_train,
                                 spec.seed + 1, groups)
    return train.subset(fit), train.subset(val)


def undersample_majority(dataset: LabeledDataset, seed: int) -> LabeledDataset:
    """Drop random rows of every larger class down to the minority count.

    Minority rows are kept as-is; selected rows keep their original order.
    """
    classes, counts = np.unique(dataset.labels, return_counts=True)
    if len(classes) < 2:
        raise SingleClass("undersampling needs at least two classes")
    target = counts.min()
    rng = np.random.default_rng(seed)
    keep = []
    for cls, count in zip(classes, counts):
        idx = np.flatnonzero(dataset.labels == cls)
        if count > target:
            idx = rng.choice(idx, size=target, replace=False)
        keep.append(idx)
    return dataset.subset(np.sort(np.concatenate(keep)))


@dataclass(frozen=True, eq=False)
class CenterScaleStats:
    mean: np.ndarray
    scale: np.ndarray
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "flagged": self.flagged.tolist()}

    @classmethod
    def from_dict(cls, d) -> "CenterScaleStats":
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float),
                   np.asarray(d["flagged"], bool))


def center_scale_fit(features, scale: bool = True) -> CenterScaleStats:
    """Column means (and standard deviations when ``scale``) of training rows.

    Zero-variance columns get scale 1 and are marked in ``flagged``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise TooFewRows("center_scale_fit needs a non-empty 2-D matrix")
    mean = x.mean(axis=0)
    if not scale:
        return CenterScaleStats(mean, np.ones_like(mean), np.zeros(mean.shape, bool))
    std = x.std(axis=0)
    flagged = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if flagged.any():
        warnings.warn(f"{int(flagged.sum())} constant column(s); scale set to 1",
                      NumericalWarning, stacklevel=2)
    return CenterScaleStats(mean, np.where(flagged, 1.0, std), flagged)


def center_scale_apply(stats: CenterScaleStats, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise DimensionMismatch(f"expected {stats.mean.shape[0]} columns, got {x.shape[-1]}")
    return (x - stats.mean) / stats.scale


def write_split_manifest(path, ids: Sequence[str], partitions: Sequence[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "partition"])
        writer.writerows(zip(ids, partitions))


def read_split_manifest(path) -> dict:
    """``{partition: [ids...]}`` in file order."""
    out: dict = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["partition"], []).append(row["id"])
    return out
