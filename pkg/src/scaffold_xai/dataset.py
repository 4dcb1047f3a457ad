"""Tabular datasets: CSV loading, z-score normalization, splitting, and
injection of synthetic features that carry no signal about the sensitive
attribute."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np


class DatasetError(ValueError):
    """Raised for unreadable, malformed, or inconsistent tabular input."""


@dataclass(frozen=True)
class FeatureStats:
    means: np.ndarray
    stds: np.ndarray

    def apply(self, rows):
        return (np.asarray(rows, dtype=float) - self.means) / self.stds

    def invert(self, rows):
        return np.asarray(rows, dtype=float) * self.stds + self.means


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus binary labels and the role of special columns.

    ``uncorrelated_indices`` lists columns appended by
    :func:`add_uncorrelated_features`; they stay in {0, 1} and are never
    normalized.
    """

    feature_names: list
    rows: np.ndarray
    labels: np.ndarray
    sensitive_index: int
    uncorrelated_indices: list = field(default_factory=list)
    stats: FeatureStats | None = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise DatasetError("rows must be a 2-D matrix")
        labels = np.asarray(self.labels).astype(int)
        n, m = rows.shape
        if labels.shape != (n,):
            raise DatasetError(f"expected {n} labels, got {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise DatasetError("labels must be 0 or 1")
        if len(self.feature_names) != m:
            raise DatasetError("feature_names length does not match column count")
        special = [self.sensitive_index, *self.uncorrelated_indices]
        if any(not 0 <= i < m for i in special):
            raise DatasetError("special column index out of range")
        if len(set(special)) != len(special):
            raise DatasetError("sensitive and uncorrelated indices must be distinct")
        for j in self.uncorrelated_indices:
            if not np.isin(rows[:, j], (0.0, 1.0)).all():
                raise DatasetError(f"uncorrelated column {j} is not binary")
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", list(self.feature_names))
        object.__setattr__(self, "uncorrelated_indices", [int(i) for i in self.uncorrelated_indices])

    @property
    def n_rows(self):
        return self.rows.shape[0]

    @property
    def n_features(self):
        return self.rows.shape[1]

    def subset(self, index):
        return replace(self, rows=self.rows[index], labels=self.labels[index])

    def summary(self):
        return {
            "n_rows": int(self.n_rows),
            "n_features": int(self.n_features),
            "feature_names": list(self.feature_names),
            "sensitive_feature": self.feature_names[self.sensitive_index],
            "uncorrelated_features": [self.feature_names[i] for i in self.uncorrelated_indices],
            "positive_rate": float(self.labels.mean()) if self.n_rows else 0.0,
        }


SCHEMA_KEYS = ("label_column", "positive_label", "sensitive_column", "positive_sensitive_value")


def load_schema(path):
    """Read a column-role schema.

    Required keys: ``label_column``, ``positive_label``, ``sensitive_column``,
    ``positive_sensitive_value`` (``null`` keeps a continuous sensitive column
    as is). ``drop_columns`` is optional. ``positive_label`` may also be the
    string ``">median"`` or ``">mean"`` to binarize a continuous target.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            schema = json.load(fh)
    except FileNotFoundError as exc:
        raise DatasetError(f"schema file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"schema is not valid JSON: {exc}") from exc
    return validate_schema(schema)


def validate_schema(schema):
    if not isinstance(schema, dict):
        raise DatasetError("schema must be a JSON object")
    missing = [k for k in SCHEMA_KEYS if k not in schema]
    if missing:
        raise DatasetError(f"schema missing keys: {missing}")
    schema = dict(schema)
    schema.setdefault("drop_columns", [])
    return schema


def _binarize(values, rule, what):
    if isinstance(rule, str) and rule.startswith(">"):
        stat = rule[1:]
        if stat == "median":
            cut = float(np.median(values))
        elif stat == "mean":
            cut = float(values.mean())
        else:
            raise DatasetError(f"unknown {what} rule {rule!r}")
        return (values > cut).astype(int)
    return (values == float(rule)).astype(int)


def load_csv(path, schema):
    """Load a numeric CSV into a raw (un-normalized) :class:`Dataset`.

    ``schema`` is a dict as produced by :func:`load_schema` or a path to one.
    """
    if isinstance(schema, (str, os.PathLike)):
        schema = load_schema(schema)
    schema = validate_schema(schema)
    if not os.path.isfile(path):
        raise DatasetError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        body = [r for r in reader if r]
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DatasetError(f"duplicate columns: {dupes}")
    for key in ("label_column", "sensitive_column"):
        if schema[key] not in header:
            raise DatasetError(f"column {schema[key]!r} not in {path}")
    for col in schema["drop_columns"]:
        if col not in header:
            raise DatasetError(f"drop column {col!r} not in {path}")
    if not body:
        raise DatasetError(f"{path} has no data rows")

    values = np.empty((len(body), len(header)))
    for i, rec in enumerate(body):
        if len(rec) != len(header):
            raise DatasetError(f"line {i + 2}: expected {len(header)} cells, got {len(rec)}")
        for j, cell in enumerate(rec):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DatasetError(
                    f"line {i + 2}, column {header[j]!r}: non-numeric cell {cell!r}"
                ) from None
            if not math.isfinite(values[i, j]):
                raise DatasetError(f"line {i + 2}, column {header[j]!r}: non-finite value")

    label_col = header.index(schema["label_column"])
    labels = _binarize(values[:, label_col], schema["positive_label"], "label")
    keep = [
        j for j, h in enumerate(header)
        if j != label_col and h not in schema["drop_columns"]
    ]
    if schema["sensitive_column"] in schema["drop_columns"]:
        raise DatasetError("sensitive column cannot be dropped")
    rows = values[:, keep]
    names = [header[j] for j in keep]
    sens = names.index(schema["sensitive_column"])
    if schema["positive_sensitive_value"] is not None:
        rows[:, sens] = _binarize(rows[:, sens], schema["positive_sensitive_value"], "sensitive")
    return Dataset(names, rows, labels, sens)


def normalize(d):
    """Z-score every non-injected column; constant columns become zeros."""
    if d.n_rows == 0:
        raise DatasetError("cannot normalize an empty dataset")
    raw = d.rows
    means = raw.mean(axis=0)
    stds = raw.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    # injected binary columns keep their {0,1} coding
    for j in d.uncorrelated_indices:
        means[j], stds[j] = 0.0, 1.0
    stats = FeatureStats(means, stds)
    return replace(d, rows=stats.apply(raw), stats=stats), stats


def denormalize(d):
    if d.stats is None:
        raise DatasetError("dataset carries no normalization statistics")
    return replace(d, rows=d.stats.invert(d.rows), stats=None)


def train_test_split(d, train_fraction=0.9, seed=0):
    """Shuffle and split rows; the training part gets round(N * fraction) rows."""
    if not 0 < train_fraction < 1:
        raise DatasetError("train_fraction must lie strictly between 0 and 1")
    n = d.n_rows
    if n < 2:
        raise DatasetError("need at least two rows to split")
    n_train = int(math.floor(n * train_fraction + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return d.subset(np.sort(order[:n_train])), d.subset(np.sort(order[n_train:]))


def split_indices(n, train_fraction, seed):
    """Index form of :func:`train_test_split` (same permutation)."""
    n_train = min(max(int(math.floor(n * train_fraction + 0.5)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def _pearson(a, b):
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 0.0
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def add_uncorrelated_features(d, count=1, seed=0, corr_tolerance=0.05, max_retries=100):
    """Append ``count`` Bernoulli(0.5) columns with |corr| to the sensitive
    column of at most ``corr_tolerance``.

    Each column is redrawn until it passes, up to ``max_retries`` draws.
    """
    if count not in (1, 2):
        raise DatasetError("count must be 1 or 2")
    rng = np.random.default_rng(seed)
    sens = d.rows[:, d.sensitive_index]
    new_cols = []
    for _ in range(count):
        for _attempt in range(max_retries):
            col = rng.integers(0, 2, size=d.n_rows).astype(float)
            if abs(_pearson(col, sens)) <= corr_tolerance:
                break
        else:
            raise DatasetError(
                f"no column within correlation tolerance {corr_tolerance} after {max_retries} draws"
            )
        new_cols.append(col)
    m = d.n_features
    names = list(d.feature_names)
    for k in range(count):
        name = f"unrelated_{len(d.uncorrelated_indices) + k + 1}"
        while name in names:
            name += "_"
        names.append(name)
    stats = d.stats
    if stats is not None:
        stats = FeatureStats(
            np.concatenate([stats.means, np.zeros(count)]),
            np.concatenate([stats.stds, np.ones(count)]),
        )
    return replace(
        d,
        feature_names=names,
        rows=np.column_stack([d.rows, *new_cols]),
        uncorrelated_indices=[*d.uncorrelated_indices, *range(m, m + count)],
        stats=stats,
    )


def synth_dataset(n=2000, m=10, sensitive_base_rate=0.514, seed=0):
    """Offline stand-in for the public datasets.

    Column 0 is a binary sensitive attribute at the given base rate, the other
    ``m - 1`` columns are a mix of mildly sensitive-correlated continuous,
    count, and binary features. Labels copy the sensitive column, so a rule
    on the sensitive attribute is a perfect classifier.
    """
    if n < 10 or m < 2 or not 0 < sensitive_base_rate < 1:
        raise DatasetError("synth_dataset needs n >= 10, m >= 2, 0 < base rate < 1")
    rng = np.random.default_rng(seed)
    sens = (rng.random(n) < sensitive_base_rate).astype(float)
    cols = [sens]
    names = ["sensitive"]
    for j in range(1, m):
        shift = 0.3 * (sens - sensitive_base_rate)
        kind = j % 3
        if kind == 1:
            col = rng.normal(size=n) + shift
        elif kind == 2:
            col = rng.poisson(np.exp(1.0 + shift)).astype(float)
        else:
            col = (rng.random(n) < 0.5 + 0.2 * shift).astype(float)
        cols.append(col)
        names.append(f"x{j}")
    return Dataset(names, np.column_stack(cols), sens.astype(int), 0)
