"""Command-line entry point: ``mwad synth | train | score | eval | sweep | report``.

Exit status is 0 on success, 1 when an input or option fails validation and 2
when a run fails (divergence, dimension mismatch, too-short series). Failures
print one line to stderr::

    mwad: error[<code>]: <message>

Every file written goes through a temp file and a rename, and carries the
resolved configuration and seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config_file, resolve
from .dataset import atomic_write_text, fill_forward, load_csv, save_csv, split_indices
from .errors import ContractError, DimensionError, MwadError, ValidationError
from .numeric import BACKEND

log = logging.getLogger("mwad")

REPORT_FORMAT_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; route it through our codes instead."""

    def error(self, message):
        raise ValidationError(f"usage: {message}")


# -- shared option handling ---------------------------------------------

_CONFIG_HELP = {
    "data": "dataset CSV path",
    "exclude": "comma-separated feature columns to drop",
    "window_mode": "adaptive | manual | none",
    "threshold_policy": "mean | best_f1_in_range",
    "score_target": "reshaped | raw",
    "out_dir": "output directory (env MWAD_OUT_DIR sets the default)",
    "jobs": "worker threads for sweep",
}


def _config_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration (flag > --config file > default)")
    g.add_argument("--config", metavar="FILE", help="key = value config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            g.add_argument(flag, dest=f.name, metavar=f.name.upper(), default=None,
                           help=_CONFIG_HELP.get(f.name))
    return p


def _overrides(args):
    return {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name, None) is not None}


def _resolve(args, base=None):
    """Defaults, then ``base`` (e.g. a checkpoint's stored config), then the
    config file, then flags."""
    values = {}
    if base:
        known = {f.name for f in fields(RunConfig)}
        for key, value in base.items():
            if key in known:
                values[key] = tuple(value) if key == "exclude" else value
    if args.config:
        values.update(load_config_file(args.config))
    return resolve(values, _overrides(args))


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _artifact(kind, cfg, payload):
    return {"format_version": REPORT_FORMAT_VERSION, "kind": kind, "mwad_version": __version__,
            "seed": cfg.seed, "config": cfg.to_dict(), **payload}


def _out_path(explicit, cfg, default_name):
    return Path(explicit) if explicit else Path(cfg.out_dir) / default_name


def _load_dataset(cfg):
    if not cfg.data:
        raise ValidationError("no dataset given (use --data or 'data = ...' in the config file)")
    path = Path(cfg.data)
    if not path.is_file():
        raise ValidationError(f"dataset file not found: {path}")
    return load_csv(path, cfg.schema)


# -- subcommands ---------------------------------------------------------

def cmd_synth(args):
    from .synth import SynthConfig, default_config, generate

    cfg = _resolve(args)
    d = default_config(cfg.seed).to_dict()
    d.update({k: getattr(args, k) for k in ("n", "length", "noise_sigma") if getattr(args, k) is not None})
    if args.clean:
        d["anomalies"] = []
    scfg = SynthConfig.from_dict(d)
    ds = generate(scfg)
    out = _out_path(args.out, cfg, "synth.csv")
    save_csv(ds, out)
    meta = _artifact("synth_meta", cfg, {"synth": scfg.to_dict(), "dataset": out.name,
                                         "rows": ds.n_rows, "features": ds.n_features,
                                         "anomalous_rows": ds.n_anomalies})
    atomic_write_text(out.with_name(out.name + ".meta.json"), _dump(meta))
    print(f"wrote {out} ({ds.n_rows} rows, {ds.n_features} features, {ds.n_anomalies} anomalous)")
    return EXIT_OK


def cmd_train(args):
    from .evaluate import build_detector
    from .dataset import prepare
    from .training import save_checkpoint, train

    cfg = _resolve(args)
    ds = _load_dataset(cfg)
    train_ds, _, norm = prepare(ds, cfg.exclude, cfg.split)
    det = build_detector(train_ds.n_features, cfg)
    t0 = time.perf_counter()
    det, report = train(train_ds.features, det, cfg.train_config)
    det.normalization = norm
    det.columns = train_ds.column_names
    det.config = cfg.to_dict()
    ckpt = _out_path(args.checkpoint, cfg, "model.ckpt")
    save_checkpoint(det, ckpt)
    doc = _artifact("train_report", cfg, {"checkpoint": ckpt.name, "train_rows": train_ds.n_rows,
                                          "report": report.to_dict()})
    rpath = _out_path(args.report, cfg, "train_report.json")
    atomic_write_text(rpath, _dump(doc))
    losses = ", ".join(f"{v:.4g}" for v in report.epoch_losses)
    print(f"trained {cfg.window_mode} detector on {train_ds.n_rows} rows in "
          f"{time.perf_counter() - t0:.1f}s [{BACKEND} kernels]; epoch losses: {losses}")
    print(f"wrote {ckpt} and {rpath}")
    return EXIT_OK


def score_rows(ds, det, cfg, split="test"):
    """Apply a checkpoint's column selection and normalization to ``ds``.

    Returns the rows to score (the test split, or every row) and their
    indices in the original file.
    """
    missing = [c for c in det.columns if c not in ds.column_names]
    if missing:
        raise DimensionError(f"dataset lacks column(s) the detector was trained on: {', '.join(missing)}")
    ds = fill_forward(ds)
    if det.columns:
        pos = [ds.column_names.index(c) for c in det.columns]
        ds = ds.with_features(ds.features[:, pos], tuple(det.columns))
    if ds.n_features != det.n:
        raise DimensionError(f"dataset has {ds.n_features} features; detector expects {det.n}")
    rows = np.arange(ds.n_rows)
    if split == "test":
        rows = split_indices(ds, cfg.split)[1]
        ds = ds.take(rows, f"{ds.name}:test")
    if det.normalization is not None:
        ds = ds.with_features(det.normalization.apply(ds.features))
    return ds, rows


def cmd_score(args):
    from .scoring import score, write_scores
    from .training import CHECKPOINT_VERSION, load_checkpoint

    path = Path(args.checkpoint)
    if not path.is_file():
        raise ValidationError(f"checkpoint not found: {path}")
    det = load_checkpoint(path)
    cfg = _resolve(args, det.config)
    part, rows = score_rows(_load_dataset(cfg), det, cfg, args.split)
    series = score(part.features, det, part.labels, part.timestamps)
    series.aligned_indices = rows[series.aligned_indices]
    meta = {"format_version": 1, "seed": det.seed, "config": cfg.to_dict(), "split": args.split,
            "checkpoint": path.name, "checkpoint_version": CHECKPOINT_VERSION, "mode": det.mode}
    out = _out_path(args.out, cfg, "scores.csv")
    write_scores(out, series, meta=meta)
    print(f"scored {len(series)} rows (first {det.offset} rows have no full history); wrote {out}")
    return EXIT_OK


def cmd_eval(args):
    from .scoring import read_scores, select_threshold

    path = Path(args.scores)
    if not path.is_file():
        raise ValidationError(f"score file not found: {path}")
    series, _, meta = read_scores(path)
    cfg = _resolve(args, meta.get("config"))
    policy = cfg.threshold_policy
    if policy == "best_f1_in_range" and series.labels is None:
        raise ValidationError("best_f1_in_range needs labels; the score file has none")
    tau, det = select_threshold(series, policy=policy)
    doc = _artifact("detection_report", cfg, {"scores": path.name, "score_meta": meta,
                                              "detection": det.to_dict()})
    out = _out_path(args.out, cfg, "report.json")
    atomic_write_text(out, _dump(doc))
    if args.sweep_csv and det.sweep:
        atomic_write_text(args.sweep_csv, "threshold,f1\n" + "".join(f"{t!r},{f!r}\n" for t, f in det.sweep))
    r = det.range
    print(f"policy {policy}: threshold {tau:.6g} (range {r.lower:.6g} .. {r.upper:.6g}, step {r.step:.3g})")
    print(f"flagged {int(det.predicted.sum())} of {det.predicted.size} rows")
    if det.metrics is not None:
        m, c = det.metrics, det.metrics.confusion
        print(f"accuracy {m.accuracy:.4f}  precision {m.precision:.4f}  recall {m.recall:.4f}  f1 {m.f1:.4f}")
        print(f"tp {c.tp}  fp {c.fp}  tn {c.tn}  fn {c.fn}")
    print(f"wrote {out}")
    return EXIT_OK


def _parse_values(axis, text):
    if text is None:
        return None
    items = [t.strip() for t in text.split(",") if t.strip()]
    if axis == "window_mode":
        return items
    out = []
    for t in items:
        try:
            out.append(int(t) if axis in ("w1", "w2") else float(t))
        except ValueError:
            raise ValidationError(f"sweep value {t!r} is not a number") from None
    return out


def cmd_sweep(args):
    from .evaluate import sweep

    cfg = _resolve(args)
    ds = _load_dataset(cfg)
    values = _parse_values(args.axis, args.values)
    if values is None and args.axis != "threshold":
        raise ValidationError(f"--values is required for axis {args.axis}")
    try:
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    except ValueError:
        raise ValidationError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    policy = args.policy or "best_f1_in_range"
    grid = sweep(ds, args.axis, values, cfg, seeds, policy, cfg.jobs)
    base = args.name or f"grid_{args.axis}"
    jpath = Path(cfg.out_dir) / f"{base}.json"
    cpath = Path(cfg.out_dir) / f"{base}.csv"
    doc = _artifact("experiment_grid", cfg, {"grid": grid.to_dict()})
    atomic_write_text(jpath, _dump(doc))
    atomic_write_text(cpath, grid.to_csv())
    print(_grid_summary(grid))
    failed = sum(c.error is not None for c in grid.cells)
    if failed:
        print(f"{failed} cell(s) failed; see the error column in {cpath}")
    print(f"wrote {jpath} and {cpath}")
    return EXIT_OK


def _grid_summary(grid):
    table = grid.f1_table()
    lines = [f"{grid.kind} over {grid.axis} ({grid.policy}, seeds {grid.seeds})",
             f"{'value':>12}  {'median F1':>9}  {'min':>6}  {'max':>6}  n"]
    for v in grid.values:
        key = float(v) if isinstance(v, (int, float)) else v
        f1s = table.get(key, [])
        if f1s:
            lines.append(f"{v!s:>12}  {np.median(f1s):9.4f}  {min(f1s):6.4f}  {max(f1s):6.4f}  {len(f1s)}")
        else:
            lines.append(f"{v!s:>12}  {'-':>9}  {'-':>6}  {'-':>6}  0")
    return "\n".join(lines)


def cmd_report(args):
    from .evaluate import grid_from_dict

    path = Path(args.grid)
    if not path.is_file():
        raise ValidationError(f"grid file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        grid = grid_from_dict(doc["grid"] if "grid" in doc else doc)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: not a grid report ({exc})") from None
    print(_grid_summary(grid))
    if grid.reference:
        print("reference values (published, not reproduced here):")
        for ds_name, row in grid.reference.get("published_f1_percent_w1_15", {}).items():
            print(f"  {ds_name}: " + ", ".join(f"{k} {v}" for k, v in row.items()))
    if args.out:
        lines = ["value,median_f1,min_f1,max_f1,n"]
        table = grid.f1_table()
        for v in grid.values:
            f1s = table.get(float(v) if isinstance(v, (int, float)) else v, [])
            stats = [repr(float(np.median(f1s))), repr(min(f1s)), repr(max(f1s))] if f1s else ["", "", ""]
            lines.append(",".join([str(v), *stats, str(len(f1s))]))
        atomic_write_text(args.out, "\n".join(lines) + "\n")
        print(f"wrote {args.out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------

def build_parser():
    parent = _config_parent()
    p = _Parser(prog="mwad", description="Two-stage window anomaly detection for multivariate time series.")
    p.add_argument("--version", action="version", version=f"mwad {__version__}")
    p.add_argument("--log-level", default="WARNING", help="DEBUG, INFO, WARNING or ERROR")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[parent], help="generate a labeled synthetic dataset")
    s.add_argument("--out", help="dataset CSV to write (default OUT_DIR/synth.csv)")
    s.add_argument("--n", type=int, help="feature count (default 8)")
    s.add_argument("--length", type=int, help="row count (default 2100)")
    s.add_argument("--noise-sigma", type=float)
    s.add_argument("--clean", action="store_true", help="omit the injected anomalies")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", parents=[parent], help="train a detector on the normal training split")
    t.add_argument("--checkpoint", help="checkpoint path (default OUT_DIR/model.ckpt)")
    t.add_argument("--report", help="train report path (default OUT_DIR/train_report.json)")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("score", parents=[parent], help="score rows with a trained checkpoint")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--split", choices=("test", "all"), default="test",
                   help="score the test split (default) or every row of the file")
    c.add_argument("--out", help="score CSV path (default OUT_DIR/scores.csv)")
    c.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", parents=[parent], help="threshold a score file and report metrics")
    e.add_argument("--scores", required=True)
    e.add_argument("--out", help="report JSON path (default OUT_DIR/report.json)")
    e.add_argument("--sweep-csv", help="also write threshold,f1 for every candidate")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", parents=[parent], help="run a grid of train/score/eval cycles")
    w.add_argument("--axis", required=True, choices=("window_mode", "train_ratio", "threshold", "w1", "w2"))
    w.add_argument("--values", help="comma-separated axis values (threshold: default is the 51-point range)")
    w.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    w.add_argument("--policy", choices=("mean", "best_f1_in_range"),
                   help="threshold policy per cell (default best_f1_in_range)")
    w.add_argument("--name", help="output basename (default grid_<axis>)")
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarize a grid JSON")
    r.add_argument("--grid", required=True)
    r.add_argument("--out", help="write value,median_f1,min_f1,max_f1,n CSV")
    r.set_defaults(func=cmd_report)
    return p


def exit_code(exc):
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, ContractError):
        return EXIT_RUNTIME
    if isinstance(exc, MwadError) and isinstance(exc, RuntimeError):
        return EXIT_RUNTIME
    return EXIT_VALIDATION


def _fail(code, message):
    text = " ".join(str(message).split())
    print(f"mwad: error[{code}]: {text}", file=sys.stderr)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        level = getattr(logging, str(args.log_level).upper(), None)
        if not isinstance(level, int):
            raise ValidationError(f"unknown log level {args.log_level!r}")
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except MwadError as exc:
        _fail(exc.code, exc)
        return exit_code(exc)
    except OSError as exc:
        _fail("io", exc)
        return EXIT_VALIDATION
    except FloatingPointError as exc:
        _fail("numeric", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
