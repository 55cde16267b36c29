"""Tabular dataset loading, normalization and cross-validation plans."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MISSING_TOKENS = frozenset({"", "na", "nan", "?", "null", "none"})


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (N x M) with integer labels in ``0..C-1``."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "dataset"
    feature_names: tuple = ()

    def __post_init__(self):
        X = _frozen(self.features)
        y = _frozen(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise DataError(f"labels length {y.shape[0]} != feature rows {X.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        present = set(np.unique(y).tolist())
        missing = set(range(self.class_count)) - present
        if missing or not present <= set(range(self.class_count)):
            raise DataError(f"labels must cover 0..{self.class_count - 1}; present {sorted(present)}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"f{j}" for j in range(X.shape[1])))

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.class_count, self.name,
                       self.feature_names)

    def with_features(self, X, feature_names=()) -> "Dataset":
        return Dataset(X, self.labels, self.class_count, self.name, tuple(feature_names))


@dataclass(frozen=True)
class Schema:
    name: str
    label_column: str
    label_map: dict
    feature_columns: tuple = ()
    positive_class: int = 1
    sha256: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        known = {"name", "label_column", "label_map", "feature_columns", "positive_class", "sha256"}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown schema keys: {sorted(unknown)}")
        return cls(
            name=d["name"],
            label_column=d["label_column"],
            label_map={str(k): int(v) for k, v in d["label_map"].items()},
            feature_columns=tuple(d.get("feature_columns", ())),
            positive_class=int(d.get("positive_class", 1)),
            sha256=d.get("sha256"),
        )

    @property
    def class_count(self):
        return len(set(self.label_map.values()))


def load_schema(path) -> Schema:
    path = Path(path)
    if not path.exists():
        raise DataError(f"schema file not found: {path}")
    return Schema.from_dict(json.loads(path.read_text()))


def _label_key(cell: str) -> str:
    # "1.0" and "1" name the same class
    try:
        v = float(cell)
    except ValueError:
        return cell.strip()
    return str(int(v)) if v.is_integer() else repr(v)


def load_dataset(path, schema: Schema | dict, missing: str = "reject",
                 verify_checksum: bool = True) -> Dataset:
    """Read a headered CSV file into a :class:`Dataset`.

    ``missing`` is ``"reject"`` (raise naming the first bad row) or
    ``"impute_mean"`` (replace missing cells by the column mean).
    Non-numeric cells that are not missing-value tokens are always rejected.
    When the schema records a sha256 and ``verify_checksum`` is true, the
    file must match it.
    """
    if isinstance(schema, dict):
        schema = Schema.from_dict(schema)
    if missing not in ("reject", "impute_mean"):
        raise DataError(f"unknown missing-value policy {missing!r}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    if verify_checksum and schema.sha256:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != schema.sha256.lower():
            raise DataError(f"{path}: sha256 {digest} does not match schema {schema.sha256}")

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    if schema.label_column not in header:
        raise DataError(f"{path}: label column {schema.label_column!r} not in header")
    feat_cols = list(schema.feature_columns) or [h for h in header if h != schema.label_column]
    absent = [c for c in feat_cols if c not in header]
    if absent:
        raise DataError(f"{path}: feature columns missing from header: {absent}")
    label_idx = header.index(schema.label_column)
    feat_idx = [header.index(c) for c in feat_cols]

    X = np.empty((len(rows), len(feat_idx)))
    y = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        line = i + 2  # 1-based, after header
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} columns, expected {len(header)}")
        key = _label_key(row[label_idx])
        if key not in schema.label_map:
            raise DataError(f"{path}: row {line}: unknown label value {row[label_idx]!r}")
        y[i] = schema.label_map[key]
        for j, col in enumerate(feat_idx):
            cell = row[col].strip()
            if cell.lower() in MISSING_TOKENS:
                if missing == "reject":
                    raise DataError(f"{path}: row {line}: missing value in column {header[col]!r}")
                X[i, j] = np.nan
                continue
            try:
                X[i, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {line}: non-numeric value {cell!r} in column {header[col]!r}"
                ) from None
            if not math.isfinite(X[i, j]):
                raise DataError(f"{path}: row {line}: non-finite value in column {header[col]!r}")

    if missing == "impute_mean" and np.isnan(X).any():
        means = np.nanmean(X, axis=0)
        r, c = np.nonzero(np.isnan(X))
        X[r, c] = means[c]
    return Dataset(X, y, schema.class_count, schema.name, tuple(feat_cols))


@dataclass(frozen=True)
class NormalizationSpec:
    method: str
    first: np.ndarray  # min (min_max) or mean (z_score)
    second: np.ndarray  # max (min_max) or stddev (z_score)

    def __post_init__(self):
        if self.method not in ("min_max", "z_score"):
            raise DataError(f"unknown normalization method {self.method!r}")
        a, b = _frozen(self.first), _frozen(self.second)
        if a.shape != b.shape or a.ndim != 1:
            raise DataError("normalization parameter vectors must be 1-D and equal length")
        if self.method == "min_max" and np.any(a > b):
            raise DataError("min_max spec requires min <= max per feature")
        object.__setattr__(self, "first", a)
        object.__setattr__(self, "second", b)

    def to_dict(self):
        return {"method": self.method, "first": self.first.tolist(), "second": self.second.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["method"], d["first"], d["second"])


def fit_normalization(X, method="min_max") -> NormalizationSpec:
    X = np.asarray(X, dtype=float)
    if method == "min_max":
        return NormalizationSpec(method, X.min(axis=0), X.max(axis=0))
    if method == "z_score":
        std = X.std(axis=0)
        if np.any(std == 0):
            cols = np.flatnonzero(std == 0).tolist()
            raise DataError(f"zero-variance feature(s) {cols} cannot be z-scored")
        return NormalizationSpec(method, X.mean(axis=0), std)
    raise DataError(f"unknown normalization method {method!r}")


def apply_normalization_array(X, spec: NormalizationSpec) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != spec.first.shape[0]:
        raise DataError(f"spec has {spec.first.shape[0]} features, data has {X.shape[1]}")
    if spec.method == "min_max":
        span = spec.second - spec.first
        safe = np.where(span > 0, span, 1.0)
        # constant training columns map to 0
        return np.where(span > 0, (X - spec.first) / safe, 0.0)
    return (X - spec.first) / spec.second


def normalize(ds: Dataset, method="min_max") -> tuple[Dataset, NormalizationSpec]:
    spec = fit_normalization(ds.features, method)
    return apply_normalization(ds, spec), spec


def apply_normalization(ds: Dataset, spec: NormalizationSpec) -> Dataset:
    return ds.with_features(apply_normalization_array(ds.features, spec), ds.feature_names)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int
    mode: str = "kfold"  # "kfold" or "holdout"; holdout uses fold 0 as test
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "assignments", _frozen(self.assignments, dtype=np.int64))

    @property
    def n_folds(self):
        return 1 if self.mode == "holdout" else self.k

    def split(self, fold: int):
        """Return ``(train_idx, test_idx)`` for ``fold``."""
        test = np.flatnonzero(self.assignments == fold)
        train = np.flatnonzero(self.assignments != fold)
        return train, test

    def to_dict(self):
        return {"k": self.k, "mode": self.mode, "seed": self.seed,
                "assignments": self.assignments.tolist(), "meta": dict(self.meta)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["k"], d["assignments"], d["seed"], d.get("mode", "kfold"), d.get("meta", {}))


def _class_counts(labels, class_count):
    return np.bincount(labels, minlength=class_count)


def stratified_kfold(ds: Dataset | np.ndarray, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified k-fold assignment, deterministic under ``seed``.

    Each class is shuffled and dealt round-robin; the starting fold of each
    class continues where the previous class stopped so fold sizes stay
    within one of each other as well.
    """
    labels = ds.labels if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.int64)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    counts = _class_counts(labels, labels.max() + 1)
    small = [c for c, n in enumerate(counts) if 0 < n < k]
    if small:
        raise DataError(f"class(es) {small} have fewer than k={k} samples")
    rng = np.random.default_rng(seed)
    assignments = np.empty(labels.shape[0], dtype=np.int64)
    offset = 0
    for c in range(counts.shape[0]):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        assignments[idx] = (offset + np.arange(idx.size)) % k
        offset = (offset + idx.size) % k
    return FoldPlan(k, assignments, seed)


def stratified_holdout(ds: Dataset | np.ndarray, test_ratio: float = 0.2, seed: int = 0) -> FoldPlan:
    """Single stratified split; fold 0 is the held-out part."""
    labels = ds.labels if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.int64)
    if not 0.0 < test_ratio < 1.0:
        raise DataError(f"test_ratio must be in (0, 1), got {test_ratio}")
    rng = np.random.default_rng(seed)
    assignments = np.ones(labels.shape[0], dtype=np.int64)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = int(round(test_ratio * idx.size))
        n_test = min(max(n_test, 1), idx.size - 1)
        if n_test < 1:
            raise DataError(f"class {c} too small for a holdout split")
        assignments[idx[:n_test]] = 0
    return FoldPlan(2, assignments, seed, mode="holdout", meta={"test_ratio": test_ratio})


def inner_split(labels, ratio=0.2, seed=0):
    """Stratified (train_idx, val_idx) positions inside a training fold."""
    plan = stratified_holdout(np.asarray(labels), ratio, seed)
    val = np.flatnonzero(plan.assignments == 0)
    train = np.flatnonzero(plan.assignments != 0)
    return train, val
