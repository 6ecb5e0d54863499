"""Confusion-matrix metrics and the experiment grids built on them.

Anomalous rows are the positive class. Precision is 0 when nothing is
flagged, recall is 0 when there are no anomalies, F1 is 0 when both are 0.
"""
from __future__ import annotations

import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, MwadError

log = logging.getLogger(__name__)

GRID_FORMAT_VERSION = 1
EXPERIMENT_KINDS = ("window_validity", "train_ratio", "threshold_sweep", "window_size_sweep")
AXES = {
    "window_mode": "window_validity",
    "train_ratio": "train_ratio",
    "threshold": "threshold_sweep",
    "w1": "window_size_sweep",
    "w2": "window_size_sweep",
}

# Published F1 (%) for the stage-one window ablation at w1 = 15. Annotation only.
REFERENCE_WINDOW_F1 = {
    "Code Red II": {"none": 86.31, "manual": 95.14, "adaptive": 96.33},
    "Nimda": {"none": 73.46, "manual": 79.72, "adaptive": 85.55},
    "Slammer": {"none": 86.32, "manual": 90.08, "adaptive": 98.02},
}


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self):
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: Confusion

    def to_dict(self):
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1, "confusion": self.confusion.to_dict(),
        }


def confusion(predicted, actual):
    p = np.asarray(predicted).astype(bool)
    a = np.asarray(actual).astype(bool)
    if p.shape != a.shape:
        raise ContractError(f"length mismatch: {p.shape} predicted vs {a.shape} actual")
    return Confusion(
        tp=int(np.sum(p & a)), fp=int(np.sum(p & ~a)),
        tn=int(np.sum(~p & ~a)), fn=int(np.sum(~p & a)),
    )


def metrics(c):
    total = c.tp + c.tn + c.fp + c.fn
    accuracy = (c.tp + c.tn) / total if total else 0.0
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricsReport(accuracy, precision, recall, f1, c)


# -- single experiment ---------------------------------------------------

@dataclass
class CellResult:
    value: object
    config: dict
    seed: int
    metrics: MetricsReport | None = None
    threshold: float | None = None
    final_loss: float | None = None
    error: str | None = None

    def to_dict(self):
        return {
            "value": self.value,
            "seed": self.seed,
            "config": self.config,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "threshold": self.threshold,
            "final_loss": self.final_loss,
            "error": self.error,
        }


@dataclass
class RunOutcome:
    detector: object
    train_report: object
    scores: object
    threshold: float
    detection: object


def build_detector(n, cfg):
    from .training import Detector

    return Detector.init(
        n, mode=cfg.window_mode, w1=cfg.w1, w2=cfg.w2, hidden=cfg.hidden, seed=cfg.seed,
        leaky_slope=cfg.leaky_slope, activation=cfg.activation,
        raw_target=cfg.score_target == "raw",
    )


def run_pipeline(ds, cfg, policy=None):
    """Clean, split, normalize, train, score the test split, pick a threshold."""
    from .dataset import prepare
    from .scoring import score, select_threshold
    from .training import train

    train_ds, test_ds, norm, test_rows = prepare(ds, cfg.exclude, cfg.split, with_rows=True)
    det = build_detector(train_ds.n_features, cfg)
    det, report = train(train_ds.features, det, cfg.train_config)
    det.normalization = norm
    det.columns = train_ds.column_names
    det.config = cfg.to_dict()
    series = score(test_ds.features, det, test_ds.labels, test_ds.timestamps)
    series.aligned_indices = test_rows[series.aligned_indices]
    tau, detection = select_threshold(series, policy=policy or cfg.threshold_policy)
    return RunOutcome(det, report, series, tau, detection)


# -- grids ---------------------------------------------------------------

@dataclass
class ExperimentGrid:
    kind: str
    axis: str
    values: list
    policy: str
    seeds: list
    cells: list = field(default_factory=list)
    dataset: str = ""
    reference: dict | None = None

    def f1_table(self):
        """{value: [f1 per seed]} for completed cells."""
        out = {}
        for c in self.cells:
            if c.metrics is not None:
                out.setdefault(_key(c.value), []).append(c.metrics.f1)
        return out

    def median_f1(self, value):
        vals = self.f1_table().get(_key(value), [])
        return float(np.median(vals)) if vals else float("nan")

    def to_dict(self):
        d = {
            "format_version": GRID_FORMAT_VERSION,
            "kind": self.kind,
            "axis": self.axis,
            "values": self.values,
            "policy": self.policy,
            "seeds": self.seeds,
            "dataset": self.dataset,
            "cells": [c.to_dict() for c in self.cells],
        }
        if self.reference is not None:
            d["reference"] = self.reference
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        buf.write("kind,axis,value,seed,accuracy,precision,recall,f1,threshold,error\n")
        for c in self.cells:
            m = c.metrics
            vals = ["", "", "", ""] if m is None else [repr(m.accuracy), repr(m.precision), repr(m.recall), repr(m.f1)]
            thr = "" if c.threshold is None else repr(c.threshold)
            err = "" if c.error is None else c.error.replace(",", ";").replace("\n", " ")
            buf.write(",".join([self.kind, self.axis, str(c.value), str(c.seed), *vals, thr, err]) + "\n")
        return buf.getvalue()


def _key(v):
    return float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v


def _run_cell(ds, cfg, value, policy):
    try:
        out = run_pipeline(ds, cfg, policy)
        return CellResult(value, cfg.to_dict(), cfg.seed, out.detection.metrics, out.threshold,
                          out.train_report.final_loss)
    except MwadError as exc:
        log.warning("cell %s=%r seed %d failed: %s", "value", value, cfg.seed, exc)
        return CellResult(value, cfg.to_dict(), cfg.seed, error=f"{exc.code}: {exc}")


def _threshold_cells(ds, cfg, values, policy):
    """One trained model, F1 at each threshold (retraining with a shared seed
    would reproduce the same model for every value)."""
    from .scoring import classify

    try:
        out = run_pipeline(ds, cfg, policy)
    except MwadError as exc:
        err = f"{exc.code}: {exc}"
        return [CellResult(v, cfg.to_dict(), cfg.seed, error=err) for v in (values or [None])]
    s = out.scores
    if values is None:
        values = [float(t) for t in out.detection.range.candidates]
    cells = []
    for tau in values:
        m = metrics(confusion(classify(s.scores, tau), s.labels))
        cells.append(CellResult(float(tau), cfg.to_dict(), cfg.seed, m, float(tau), out.train_report.final_loss))
    return cells


def sweep(ds, axis, values, base, seeds=None, policy="best_f1_in_range", jobs=1):
    """Run one train/score/evaluate cycle per (value, seed) along ``axis``.

    Failing cells are recorded with their error; the grid still completes.
    For the threshold axis ``values=None`` means the 51-candidate grid.
    """
    if axis not in AXES:
        raise ContractError(f"unknown sweep axis {axis!r}; expected one of {sorted(AXES)}")
    seeds = list(seeds) if seeds is not None else [base.seed]
    kind = AXES[axis]
    if axis == "threshold":
        cells = []
        for seed in seeds:
            cells.extend(_threshold_cells(ds, base.replace(seed=seed), values, policy))
        values = list(values) if values is not None else sorted({c.value for c in cells if c.value is not None})
        return ExperimentGrid(kind, axis, values, policy, seeds, cells, ds.name)

    values = list(values)
    jobs_list = []
    for value in values:
        for seed in seeds:
            try:
                cfg = base.replace(**{axis: value, "seed": seed})
            except MwadError as exc:
                jobs_list.append((value, seed, exc))
                continue
            jobs_list.append((value, seed, cfg))

    def work(item):
        value, seed, cfg = item
        if isinstance(cfg, Exception):
            return CellResult(value, {}, seed, error=f"{cfg.code}: {cfg}")
        return _run_cell(ds, cfg, value, policy)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(work, jobs_list))
    else:
        cells = [work(item) for item in jobs_list]
    grid = ExperimentGrid(kind, axis, values, policy, seeds, cells, ds.name)
    if axis == "window_mode":
        grid.reference = {"published_f1_percent_w1_15": REFERENCE_WINDOW_F1}
    return grid


def window_validity(ds, w1, base, seeds=None, policy="best_f1_in_range", jobs=1):
    """No window vs uniform trailing mean vs attention window, same seeds and settings."""
    return sweep(ds, "window_mode", ["none", "manual", "adaptive"], base.replace(w1=w1),
                 seeds, policy, jobs)


def grid_from_dict(d):
    cells = []
    for c in d["cells"]:
        m = None
        if c["metrics"] is not None:
            md = dict(c["metrics"])
            md["confusion"] = Confusion(**md["confusion"])
            m = MetricsReport(**md)
        cells.append(CellResult(c["value"], c["config"], c["seed"], m, c["threshold"], c["final_loss"], c["error"]))
    return ExperimentGrid(d["kind"], d["axis"], d["values"], d["policy"], d["seeds"], cells,
                          d.get("dataset", ""), d.get("reference"))
