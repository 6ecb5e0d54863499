"""Joint optimization of the attention window and the LSTM autoencoder, and
the checkpoint container for trained detectors.

Checkpoint byte layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"MWCK"
    4       1     format version (currently 1)
    5       4     header length H (uint32)
    9       H     header: UTF-8 JSON, sorted keys
                  {"meta": {...}, "tensors": [{"name": str, "shape": [int, ...]}, ...]}
    9+H     D     tensor data: float64 little-endian, C order, concatenated in
                  header order (D = 8 * sum of shape products)
    9+H+D   4     CRC-32 of bytes [0, 9+H+D)
"""
from __future__ import annotations

import json
import logging
import math
import struct
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import wgat, wlae
from .dataset import NormalizationState, atomic_write_bytes
from .errors import (
    ContractError,
    DimensionError,
    DivergenceError,
    FormatError,
    IncompatibleVersionError,
    InsufficientLengthError,
)
from .wgat import GatParams
from .wlae import LaeModel, LstmCellParams

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MWCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "adam"
    gradient_clip: float | None = 5.0
    shuffle: bool = False

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise ContractError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.gradient_clip is not None and self.gradient_clip <= 0:
            raise ContractError("gradient_clip must be positive or None")


@dataclass
class TrainReport:
    epoch_losses: list
    final_loss: float
    wall_seconds: float
    seed: int
    config: dict
    steps: int = 0

    def to_dict(self, timing=False):
        out = {
            "epoch_losses": list(self.epoch_losses),
            "final_loss": self.final_loss,
            "seed": self.seed,
            "steps": self.steps,
            "config": dict(self.config),
        }
        if timing:
            out["wall_seconds"] = self.wall_seconds
        return out


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for name, p in params.items():
            p -= self.lr * grads[name]


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


def global_norm(grads):
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_gradients(grads, max_norm):
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass(eq=False)
class Detector:
    """A trained pipeline: optional attention window, autoencoder, and the
    preprocessing state needed to apply it to new data."""

    lae: LaeModel
    gat: GatParams | None = None
    mode: str = "adaptive"
    w1: int = 15
    raw_target: bool = False
    normalization: NormalizationState | None = None
    columns: tuple = ()
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in wgat.WINDOW_MODES:
            raise ContractError(f"unknown window mode {self.mode!r}")
        if self.mode == "adaptive":
            if self.gat is None:
                raise ContractError("adaptive mode needs GatParams")
            self.w1 = self.gat.w1
            if self.gat.n != self.lae.n:
                raise DimensionError(f"attention params expect {self.gat.n} features, autoencoder {self.lae.n}")

    @property
    def n(self):
        return self.lae.n

    @property
    def offset(self):
        """Dataset rows before the first scored row."""
        return wgat.stage_one_offset(self.mode, self.w1) + self.lae.w2

    def named(self):
        out = dict(self.gat.named()) if self.mode == "adaptive" else {}
        out.update(self.lae.named())
        return out

    def reshape(self, series):
        return wgat.stage_one(series, self.mode, self.gat, self.w1)

    @classmethod
    def init(cls, n, mode="adaptive", w1=15, w2=11, hidden=32, seed=0,
             leaky_slope=0.2, activation="sigmoid", raw_target=False):
        rng = np.random.default_rng(seed)
        gat = GatParams.init(n, w1=w1, leaky_slope=leaky_slope, activation=activation, rng=rng) \
            if mode == "adaptive" else None
        lae = LaeModel.init(n, hidden=hidden, w2=w2, rng=rng)
        return cls(lae, gat, mode, w1, raw_target, seed=seed)

    def copy(self):
        return Detector(
            self.lae.copy(), self.gat.copy() if self.gat is not None else None, self.mode, self.w1,
            self.raw_target, self.normalization, tuple(self.columns), self.seed, dict(self.config),
        )


def loss_and_grads(raw, ks, det, fixed=None, need_grad=True):
    """Mean prediction MAE over the windows whose targets are ``ks``.

    ``raw`` is the normalized series fed to stage one; ``ks`` index the
    stage-one output. ``fixed`` is the precomputed stage-one output for the
    non-trainable modes.
    """
    lae = det.lae
    w2 = lae.w2
    ks = np.asarray(ks, dtype=np.int64)
    if det.mode == "adaptive":
        lo = int(ks.min()) - w2
        seg = raw[lo:int(ks.max()) + det.gat.w1]
        Y, gat_cache = wgat.reshape_series_with_cache(seg, det.gat)
    else:
        lo = 0
        Y = fixed if fixed is not None else det.reshape(raw)
    idx = ks - lo
    inputs = Y[idx[:, None] - w2 + np.arange(w2)]
    off = wgat.stage_one_offset(det.mode, det.w1)
    target = raw[ks + off] if det.raw_target else Y[idx]
    xhat, cache = wlae.predict_batch(inputs, lae)
    diff = xhat - target
    loss = float(np.abs(diff).mean())
    if not need_grad:
        return loss, None
    g = np.sign(diff) / diff.size
    dinputs, grads = wlae.backward_batch(g, cache, lae)
    if det.mode == "adaptive":
        dY = np.zeros_like(Y)
        for j in range(w2):
            dY[idx - w2 + j] += dinputs[:, j]
        if not det.raw_target:
            dY[idx] -= g
        grads.update(wgat.reshape_backward(dY, gat_cache, det.gat))
    return loss, grads


def n_windows(m, det):
    return m - wgat.stage_one_offset(det.mode, det.w1) - det.lae.w2


def evaluate_loss(raw, det, batch_size=256):
    raw = np.asarray(raw, dtype=np.float64)
    fixed = None if det.mode == "adaptive" else det.reshape(raw)
    ks = np.arange(det.lae.w2, det.lae.w2 + n_windows(raw.shape[0], det))
    total = 0.0
    for start in range(0, ks.size, batch_size):
        part = ks[start:start + batch_size]
        total += loss_and_grads(raw, part, det, fixed, need_grad=False)[0] * part.size
    return total / ks.size


def train(train_series, det, cfg=None):
    """Minimize mean prediction error on a normal-only series.

    Returns a trained copy of ``det`` and a :class:`TrainReport`; ``det`` itself
    is left untouched.
    """
    cfg = cfg or TrainConfig()
    raw = np.ascontiguousarray(train_series, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != det.n:
        raise DimensionError(f"training series must be (M, {det.n}), got {raw.shape}")
    need = wgat.stage_one_offset(det.mode, det.w1) + det.lae.w2 + 1
    if raw.shape[0] < need:
        raise InsufficientLengthError(f"training series has {raw.shape[0]} rows, needs at least {need}")
    if not np.all(np.isfinite(raw)):
        raise ContractError("training series contains non-finite values")

    det = det.copy()
    params = det.named()
    opt = make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    fixed = None if det.mode == "adaptive" else det.reshape(raw)
    all_ks = np.arange(det.lae.w2, det.lae.w2 + n_windows(raw.shape[0], det))

    t0 = time.perf_counter()
    epoch_losses = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(all_ks) if cfg.shuffle else all_ks
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            ks = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(raw, ks, det, fixed)
            if not math.isfinite(loss):
                raise DivergenceError(step, loss)
            clip_gradients(grads, cfg.gradient_clip)
            opt.step(params, grads)
            total += loss * ks.size
            step += 1
        epoch_losses.append(total / order.size)
        log.debug("epoch %d loss %.6g", epoch + 1, epoch_losses[-1])
    final = evaluate_loss(raw, det)
    if not math.isfinite(final):
        raise DivergenceError(step, final)
    report = TrainReport(epoch_losses, final, time.perf_counter() - t0, cfg.seed, asdict(cfg), step)
    return det, report


def reference_loss_graph(raw, det):
    """Build the same objective as :func:`loss_and_grads` over every window,
    from graph primitives. Slow; meant for gradient verification on toy sizes."""
    from .numeric import Graph

    raw = np.asarray(raw, dtype=np.float64)
    g = Graph()
    x = g.const(raw, name="series")
    if det.mode == "adaptive":
        Y = wgat.build_graph(g, x, det.gat)
    else:
        Y = g.const(det.reshape(raw), name="reshaped")
    nodes = wlae.declare_graph_params(g, det.lae)
    w2 = det.lae.w2
    off = wgat.stage_one_offset(det.mode, det.w1)
    terms = []
    for k in range(w2, Y.shape[0]):
        pred = wlae.build_graph(g, g.slice_rows(Y, k - w2, k), det.lae, nodes)
        tgt = g.const(raw[k + off:k + off + 1]) if det.raw_target else g.slice_rows(Y, k, k + 1)
        terms.append(g.mean_abs(g.sub(pred, tgt)))
    total = terms[0]
    for t in terms[1:]:
        total = g.add(total, t)
    g.scale(total, 1.0 / len(terms), name="loss")
    return g


# -- checkpoints --------------------------------------------------------

def _meta(det):
    meta = {
        "mode": det.mode,
        "n": det.n,
        "w1": det.w1,
        "w2": det.lae.w2,
        "h": det.lae.hidden,
        "seed": det.seed,
        "raw_target": det.raw_target,
        "columns": list(det.columns),
        "config": det.config,
    }
    if det.gat is not None:
        meta["leaky_slope"] = det.gat.leaky_slope
        meta["activation"] = det.gat.activation
    return meta


def checkpoint_bytes(det):
    tensors = dict(det.named())
    if det.normalization is not None:
        tensors["normalization.min"] = det.normalization.minimum
        tensors["normalization.max"] = det.normalization.maximum
    header = {
        "meta": _meta(det),
        "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values())
    blob = CHECKPOINT_MAGIC + struct.pack("<BI", CHECKPOINT_VERSION, len(head)) + head + body
    return blob + struct.pack("<I", zlib.crc32(blob))


def save_checkpoint(det, path):
    atomic_write_bytes(path, checkpoint_bytes(det))


def checkpoint_from_bytes(blob):
    if len(blob) < 9 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic or truncated)")
    version, hlen = struct.unpack("<BI", blob[4:9])
    if version != CHECKPOINT_VERSION:
        raise IncompatibleVersionError(
            f"checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )
    if len(blob) < 9 + hlen:
        raise FormatError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header unreadable: {exc}") from None
    sizes = [int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"]]
    end = 9 + hlen + 8 * sum(sizes)
    if len(blob) != end + 4:
        raise FormatError(f"checkpoint truncated or padded: {len(blob)} bytes, expected {end + 4}")
    (crc,) = struct.unpack("<I", blob[end:end + 4])
    if crc != zlib.crc32(blob[:end]):
        raise FormatError("checkpoint checksum mismatch")
    tensors = {}
    pos = 9 + hlen
    for spec, size in zip(header["tensors"], sizes):
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).astype(np.float64)
        tensors[spec["name"]] = arr.reshape(spec["shape"])
        pos += 8 * size

    meta = header["meta"]
    lae = LaeModel(
        LstmCellParams(tensors["encoder.w_ih"], tensors["encoder.w_hh"], tensors["encoder.bias"]),
        LstmCellParams(tensors["decoder.w_ih"], tensors["decoder.w_hh"], tensors["decoder.bias"]),
        tensors["projection.weight"], tensors["projection.bias"], meta["w2"],
    )
    gat = None
    if meta["mode"] == "adaptive":
        gat = GatParams(tensors["gat.W"], tensors["gat.a"], meta["leaky_slope"], meta["activation"], meta["w1"])
    norm = None
    if "normalization.min" in tensors:
        norm = NormalizationState(tensors["normalization.min"], tensors["normalization.max"])
    return Detector(lae, gat, meta["mode"], meta["w1"], meta["raw_target"], norm,
                    tuple(meta["columns"]), meta["seed"], meta["config"])


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
