"""Per-timestamp anomaly scores and the sliding threshold grid.

The threshold grid spans ``mean +/- 25 * step`` with ``step = |max - min| / 100``,
i.e. 51 candidates. Rows with a score strictly above the threshold are flagged.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import wgat, wlae
from .dataset import atomic_write_text
from .errors import ContractError, DimensionError, FormatError, InsufficientLengthError
from .evaluate import confusion, metrics

SCORE_COLUMNS = ("row_index", "timestamp", "score", "label", "predicted")
SCORE_FORMAT_VERSION = 1
POLICIES = ("mean", "best_f1_in_range")
HALF_WIDTH = 25
DIVISIONS = 100


@dataclass(eq=False)
class ScoreSeries:
    scores: np.ndarray
    aligned_indices: np.ndarray
    labels: np.ndarray | None = None
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.aligned_indices = np.asarray(self.aligned_indices, dtype=np.int64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.int64)

    def __len__(self):
        return self.scores.size


@dataclass(frozen=True, eq=False)
class ThresholdRange:
    minimum: float
    maximum: float
    mean: float
    step: float
    lower: float
    upper: float
    candidates: np.ndarray
    degenerate: bool

    def to_dict(self):
        return {
            "min": self.minimum, "max": self.maximum, "mean": self.mean, "step": self.step,
            "lower": self.lower, "upper": self.upper, "degenerate": self.degenerate,
            "n_candidates": int(self.candidates.size),
        }


@dataclass(eq=False)
class DetectionReport:
    threshold: float
    policy: str
    predicted: np.ndarray
    range: ThresholdRange
    metrics: object | None = None  # MetricsReport when labels were available
    sweep: list = field(default_factory=list)  # (threshold, f1) per candidate, best_f1 only

    def to_dict(self):
        out = {
            "threshold": self.threshold,
            "policy": self.policy,
            "range": self.range.to_dict(),
            "n_scored": int(self.predicted.size),
            "n_flagged": int(self.predicted.sum()),
        }
        if self.metrics is not None:
            out["metrics"] = self.metrics.to_dict()
        if self.sweep:
            out["sweep"] = [{"threshold": t, "f1": f} for t, f in self.sweep]
        return out


def score(test_series, det, labels=None, timestamps=None):
    """Score every row of ``test_series`` that has a full history.

    The comparison target is the stage-one output at that row, or the raw
    (normalized) row when the detector was built with ``raw_target``.
    """
    x = np.asarray(test_series, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != det.n:
        raise DimensionError(f"test series has shape {x.shape}; detector expects {det.n} features")
    if x.shape[0] < det.offset + 1:
        raise InsufficientLengthError(f"test series of {x.shape[0]} rows is shorter than {det.offset + 1}")
    Y = det.reshape(x)
    preds = wlae.predict_series(Y, det.lae)
    w2 = det.lae.w2
    off = wgat.stage_one_offset(det.mode, det.w1)
    target = x[off + w2:] if det.raw_target else Y[w2:]
    s = wlae.mae(preds, target)
    idx = np.arange(det.offset, x.shape[0])
    return ScoreSeries(
        s, idx,
        None if labels is None else np.asarray(labels)[idx],
        None if timestamps is None else np.asarray(timestamps)[idx],
    )


def threshold_range(scores):
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ContractError("cannot build a threshold range from zero scores")
    lo, hi = float(s.min()), float(s.max())
    mean = float(s.mean())
    step = abs(hi - lo) / DIVISIONS
    degenerate = hi == lo
    if degenerate:
        cands = np.array([mean])
    else:
        cands = np.array([mean + k * step for k in range(-HALF_WIDTH, HALF_WIDTH + 1)])
    return ThresholdRange(lo, hi, mean, step, mean - HALF_WIDTH * step, mean + HALF_WIDTH * step,
                          cands, degenerate)


def classify(scores, threshold):
    return (np.asarray(scores, dtype=np.float64) > threshold).astype(np.int64)


def select_threshold(scores, labels=None, policy="mean"):
    """Pick a threshold from the grid.

    ``mean`` needs no labels. ``best_f1_in_range`` evaluates every candidate and
    keeps the highest F1; ties go to the lower threshold.
    """
    if policy not in POLICIES:
        raise ContractError(f"unknown threshold policy {policy!r}; expected one of {POLICIES}")
    if isinstance(scores, ScoreSeries):
        labels = scores.labels if labels is None else labels
        scores = scores.scores
    rng = threshold_range(scores)
    sweep = []
    if policy == "mean":
        best = rng.mean
    else:
        if labels is None:
            raise ContractError("best_f1_in_range needs ground-truth labels")
        best, best_f1 = None, -1.0
        for tau in rng.candidates:
            f1 = metrics(confusion(classify(scores, tau), labels)).f1
            sweep.append((float(tau), f1))
            if f1 > best_f1:
                best, best_f1 = float(tau), f1
    predicted = classify(scores, best)
    report = None if labels is None else metrics(confusion(predicted, labels))
    return best, DetectionReport(float(best), policy, predicted, rng, report, sweep)


def scores_to_csv(series, predicted=None, meta=None):
    """Render the score CSV; ``meta`` goes into leading ``#`` comment lines."""
    buf = io.StringIO()
    buf.write(f"# mwad-scores v{SCORE_FORMAT_VERSION}\n")
    if meta is not None:
        buf.write("# meta: " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
    buf.write(",".join(SCORE_COLUMNS) + "\n")
    n = len(series)
    ts = series.timestamps if series.timestamps is not None else np.zeros(n, dtype=np.int64)
    labels = series.labels if series.labels is not None else np.full(n, -1)
    pred = predicted if predicted is not None else np.full(n, -1)
    for i in range(n):
        buf.write(f"{series.aligned_indices[i]},{ts[i]},{float(series.scores[i])!r},{labels[i]},{pred[i]}\n")
    return buf.getvalue()


def write_scores(path, series, predicted=None, meta=None):
    atomic_write_text(path, scores_to_csv(series, predicted, meta))


def read_scores(path):
    """Parse a score CSV. Returns ``(ScoreSeries, predicted, meta)``; a label or
    prediction of -1 means 'not available'."""
    meta = {}
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    body = []
    for ln in lines:
        if ln.startswith("# meta: "):
            meta = json.loads(ln[len("# meta: "):])
        elif not ln.startswith("#"):
            body.append(ln)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None:
        raise FormatError(f"{path}: score file has no header")
    missing = [c for c in SCORE_COLUMNS if c not in header]
    if missing:
        raise FormatError(f"{path}: score file missing column(s): {', '.join(missing)}")
    pos = {c: header.index(c) for c in SCORE_COLUMNS}
    cols = {c: [] for c in SCORE_COLUMNS}
    for k, rec in enumerate(reader):
        if len(rec) != len(header):
            raise FormatError(f"{path}: row {k} has {len(rec)} fields, expected {len(header)}")
        try:
            for c in SCORE_COLUMNS:
                cols[c].append(float(rec[pos[c]]) if c == "score" else int(rec[pos[c]]))
        except ValueError as exc:
            raise FormatError(f"{path}: row {k}: {exc}") from None
    labels = np.array(cols["label"], dtype=np.int64)
    pred = np.array(cols["predicted"], dtype=np.int64)
    series = ScoreSeries(
        cols["score"], cols["row_index"], None if (labels < 0).any() else labels,
        np.array(cols["timestamp"], dtype=np.int64),
    )
    return series, None if (pred < 0).any() else pred, meta
