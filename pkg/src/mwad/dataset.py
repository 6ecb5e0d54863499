"""Ingestion, cleaning, splitting and normalization of labeled multivariate series.

A dataset file is a UTF-8 CSV with a header row. One column holds integer
timestamps, one holds {0,1} labels, every other column is a feature. Empty
cells and the literal ``NaN`` mark missing values.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDatasetError,
    FormatError,
    SplitError,
    UnfillableError,
    ValidationError,
)

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NaN"})


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class EventDataset:
    """Timestamp-ordered feature matrix with per-row binary labels.

    Missing feature cells are stored as NaN until :func:`fill_forward` runs.
    """

    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    column_names: tuple
    name: str = "dataset"

    def __post_init__(self):
        feats = _frozen(self.features, np.float64)
        if feats.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {feats.shape}")
        labels = _frozen(self.labels, np.int64)
        stamps = _frozen(self.timestamps, np.int64)
        m = feats.shape[0]
        if labels.shape != (m,) or stamps.shape != (m,):
            raise ValidationError(
                f"row count mismatch: features {m}, labels {labels.shape}, timestamps {stamps.shape}"
            )
        if len(self.column_names) != feats.shape[1]:
            raise ValidationError("column_names length differs from feature count")
        bad = np.flatnonzero((labels != 0) & (labels != 1))
        if bad.size:
            raise ValidationError(f"label outside {{0,1}} at row {bad[0]}")
        if m > 1:
            steps = np.flatnonzero(np.diff(stamps) <= 0)
            if steps.size:
                raise ValidationError(f"timestamps not strictly increasing at row {steps[0] + 1}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "timestamps", stamps)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_anomalies(self):
        return int(self.labels.sum())

    def take(self, rows, name=None):
        rows = np.asarray(rows, dtype=np.int64)
        return EventDataset(
            self.features[rows], self.labels[rows], self.timestamps[rows],
            self.column_names, name or self.name,
        )

    def with_features(self, features, column_names=None):
        return EventDataset(
            features, self.labels, self.timestamps,
            self.column_names if column_names is None else column_names, self.name,
        )


@dataclass(frozen=True)
class Schema:
    """Which CSV columns carry timestamps and labels; the rest are features
    unless ``features`` lists them explicitly."""

    timestamp: str = "timestamp"
    label: str = "label"
    features: tuple | None = None


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.7
    preserve_order: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise ValidationError(f"train_ratio must lie in (0,1), got {self.train_ratio}")


@dataclass(frozen=True, eq=False)
class NormalizationState:
    """Per-column min/max fitted on a training split."""

    minimum: np.ndarray
    maximum: np.ndarray
    degenerate: np.ndarray = field(init=False)

    def __post_init__(self):
        lo = _frozen(self.minimum, np.float64)
        hi = _frozen(self.maximum, np.float64)
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)
        object.__setattr__(self, "degenerate", _frozen(hi == lo, bool))

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        span = np.where(self.degenerate, 1.0, self.maximum - self.minimum)
        out = (x - self.minimum) / span
        return np.where(self.degenerate, 0.0, out)

    def invert(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.where(self.degenerate, self.minimum, z * (self.maximum - self.minimum) + self.minimum)


def _parse_float(cell):
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_csv(path, schema=None, name=None):
    """Read a dataset CSV. Malformed feature cells become NaN (missing)."""
    schema = schema or Schema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise FormatError(f"{path}: missing header row")
        header = [h.strip() for h in header]
        for role in (schema.timestamp, schema.label):
            if header.count(role) != 1:
                raise FormatError(f"{path}: header must contain exactly one {role!r} column")
        if schema.features is None:
            feat_names = [h for h in header if h not in (schema.timestamp, schema.label)]
        else:
            missing = [c for c in schema.features if c not in header]
            if missing:
                raise FormatError(f"{path}: feature columns not in header: {missing}")
            feat_names = list(schema.features)
        if not feat_names:
            raise FormatError(f"{path}: no feature columns")
        t_col = header.index(schema.timestamp)
        y_col = header.index(schema.label)
        f_cols = [header.index(c) for c in feat_names]

        stamps, labels, rows = [], [], []
        for k, rec in enumerate(reader):
            if len(rec) != len(header):
                raise FormatError(f"{path}: row {k} has {len(rec)} fields, expected {len(header)}")
            try:
                ts = int(rec[t_col].strip())
            except ValueError:
                raise ValidationError(f"{path}: row {k}: bad timestamp {rec[t_col]!r}") from None
            lab = rec[y_col].strip()
            if lab not in ("0", "1"):
                raise ValidationError(f"{path}: row {k}: label {lab!r} outside {{0,1}}")
            if stamps and ts <= stamps[-1]:
                raise ValidationError(f"{path}: timestamps not strictly increasing at row {k}")
            stamps.append(ts)
            labels.append(int(lab))
            rows.append([_parse_float(rec[c]) for c in f_cols])

    feats = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_names))
    return EventDataset(feats, labels, stamps, tuple(feat_names), name or path.stem)


def _format_float(v):
    return "NaN" if math.isnan(v) else repr(float(v))


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_csv(ds):
    lines = [",".join(["timestamp", *ds.column_names, "label"])]
    for ts, row, y in zip(ds.timestamps, ds.features, ds.labels):
        lines.append(",".join([str(int(ts)), *(_format_float(v) for v in row), str(int(y))]))
    return "\n".join(lines) + "\n"


def save_csv(ds, path):
    atomic_write_text(path, dataset_to_csv(ds))


def fill_forward(ds):
    """Replace each missing cell with the last observed value in its column."""
    x = np.array(ds.features, copy=True)
    if x.shape[0] == 0:
        return ds
    bad0 = np.flatnonzero(np.isnan(x[0]))
    if bad0.size:
        raise UnfillableError(f"missing value in row 0, column {ds.column_names[bad0[0]]!r}")
    for t in range(1, x.shape[0]):
        gaps = np.isnan(x[t])
        if gaps.any():
            x[t, gaps] = x[t - 1, gaps]
    return ds.with_features(x)


def unlearnable_columns(ds, manual_exclusions=()):
    """Map each column that should be dropped to the reason for dropping it."""
    unknown = set(manual_exclusions) - set(ds.column_names)
    if unknown:
        raise ValidationError(f"unknown exclusion columns: {sorted(unknown)}")
    reasons = {}
    for j, name in enumerate(ds.column_names):
        if name in manual_exclusions:
            reasons[name] = "manual exclusion"
            continue
        col = ds.features[:, j]
        finite = col[~np.isnan(col)]
        if finite.size == 0 or finite.min() == finite.max():
            reasons[name] = "zero variance"
    return reasons


def drop_unlearnable(ds, manual_exclusions=()):
    reasons = unlearnable_columns(ds, manual_exclusions)
    keep = [j for j, c in enumerate(ds.column_names) if c not in reasons]
    if not keep:
        raise EmptyDatasetError("every feature column was removed")
    for name, why in reasons.items():
        log.info("dropping column %s: %s", name, why)
    if not reasons:
        return ds
    return ds.with_features(ds.features[:, keep], tuple(ds.column_names[j] for j in keep))


def split_indices(ds, spec=None):
    """Row indices of the train and test parts; see :func:`split_train_test`."""
    spec = spec or SplitSpec()
    normal = np.flatnonzero(ds.labels == 0)
    if normal.size == 0:
        raise SplitError("dataset has no normal rows")
    need = math.ceil(1.0 / (1.0 - spec.train_ratio))
    if normal.size < need:
        raise SplitError(f"need at least {need} normal rows for ratio {spec.train_ratio}, have {normal.size}")
    n_train = int(math.floor(spec.train_ratio * normal.size))
    train_rows = normal[:n_train]
    mask = np.ones(ds.n_rows, dtype=bool)
    mask[train_rows] = False
    return train_rows, np.flatnonzero(mask)


def split_train_test(ds, spec=None):
    """Train on the earliest normal rows; everything else is test, in time order."""
    train_rows, test_rows = split_indices(ds, spec)
    return ds.take(train_rows, f"{ds.name}:train"), ds.take(test_rows, f"{ds.name}:test")


def fit_normalization(train):
    if train.n_rows == 0:
        raise ValidationError("cannot fit normalization on an empty training split")
    return NormalizationState(train.features.min(axis=0), train.features.max(axis=0))


def fit_apply_normalization(train, test):
    state = fit_normalization(train)
    return (
        train.with_features(state.apply(train.features)),
        test.with_features(state.apply(test.features)),
        state,
    )


def prepare(ds, exclusions=(), spec=None, with_rows=False):
    """Fill, clean, split and normalize: the full ingestion chain.

    Returns ``(train, test, state)``; with ``with_rows`` the original row
    indices of the test part are appended.
    """
    ds = drop_unlearnable(fill_forward(ds), exclusions)
    train_rows, test_rows = split_indices(ds, spec)
    out = fit_apply_normalization(ds.take(train_rows, f"{ds.name}:train"), ds.take(test_rows, f"{ds.name}:test"))
    return (*out, test_rows) if with_rows else out
