"""Stage-two window: LSTM encoder/decoder that predicts the next reshaped sample.

The encoder reads the ``w2`` rows strictly before the target from a zero
state; its final hidden state is the latent ``z``. The decoder takes one LSTM
step on ``z`` (again from zero state) and an affine projection maps its hidden
state back to the feature dimension.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, InsufficientLengthError
from .numeric import kernels

GATES = ("input", "forget", "candidate", "output")


@dataclass(eq=False)
class LstmCellParams:
    """Weights for one LSTM cell; gate blocks stacked in ``GATES`` order."""

    w_ih: np.ndarray  # (4h, in)
    w_hh: np.ndarray  # (4h, h)
    bias: np.ndarray  # (4h,)

    def __post_init__(self):
        self.w_ih = np.array(self.w_ih, dtype=np.float64)
        self.w_hh = np.array(self.w_hh, dtype=np.float64)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        h = self.w_hh.shape[1]
        if self.w_hh.shape != (4 * h, h) or self.w_ih.shape[0] != 4 * h or self.bias.shape != (4 * h,):
            raise DimensionError(
                f"inconsistent LSTM shapes w_ih {self.w_ih.shape}, w_hh {self.w_hh.shape}, bias {self.bias.shape}"
            )

    @property
    def hidden(self):
        return self.w_hh.shape[1]

    @property
    def n_in(self):
        return self.w_ih.shape[1]

    @classmethod
    def init(cls, n_in, hidden, rng):
        lim = 1.0 / np.sqrt(hidden)
        w_ih = rng.uniform(-lim, lim, size=(4 * hidden, n_in))
        w_hh = rng.uniform(-lim, lim, size=(4 * hidden, hidden))
        return cls(w_ih, w_hh, np.zeros(4 * hidden))

    def run(self, xs):
        """Run over ``xs`` (B x L x in); returns ``(h_last, cache)``."""
        WxT = np.ascontiguousarray(self.w_ih.T)
        WhT = np.ascontiguousarray(self.w_hh.T)
        Hs, Cs, A = kernels.lstm_forward(np.ascontiguousarray(xs), WxT, WhT, self.bias)
        return Hs[:, -1], (xs, WxT, WhT, Hs, Cs, A)

    @staticmethod
    def backward(dh_last, cache):
        xs, WxT, WhT, Hs, Cs, A = cache
        dXs, dWxT, dWhT, db = kernels.lstm_backward(np.ascontiguousarray(dh_last), xs, WxT, WhT, Hs, Cs, A)
        return dXs, {"w_ih": dWxT.T, "w_hh": dWhT.T, "bias": db}


@dataclass(eq=False)
class LaeModel:
    encoder: LstmCellParams
    decoder: LstmCellParams
    proj_w: np.ndarray  # (n, h)
    proj_b: np.ndarray  # (n,)
    w2: int = 11

    def __post_init__(self):
        self.proj_w = np.array(self.proj_w, dtype=np.float64)
        self.proj_b = np.array(self.proj_b, dtype=np.float64).reshape(-1)
        h = self.encoder.hidden
        if self.decoder.n_in != h or self.decoder.hidden != h:
            raise DimensionError("decoder must map the latent size to itself")
        if self.proj_w.shape != (self.encoder.n_in, h) or self.proj_b.shape != (self.encoder.n_in,):
            raise DimensionError(f"projection must be ({self.encoder.n_in}, {h}) + bias")
        if int(self.w2) < 1:
            raise ContractError(f"w2 must be >= 1, got {self.w2}")
        self.w2 = int(self.w2)

    @property
    def n(self):
        return self.encoder.n_in

    @property
    def hidden(self):
        return self.encoder.hidden

    @classmethod
    def init(cls, n, hidden=32, w2=11, seed=0, rng=None):
        """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases."""
        rng = rng if rng is not None else np.random.default_rng(seed)
        enc = LstmCellParams.init(n, hidden, rng)
        dec = LstmCellParams.init(hidden, hidden, rng)
        lim = 1.0 / np.sqrt(hidden)
        proj_w = rng.uniform(-lim, lim, size=(n, hidden))
        return cls(enc, dec, proj_w, np.zeros(n), w2)

    def named(self):
        return {
            "encoder.w_ih": self.encoder.w_ih,
            "encoder.w_hh": self.encoder.w_hh,
            "encoder.bias": self.encoder.bias,
            "decoder.w_ih": self.decoder.w_ih,
            "decoder.w_hh": self.decoder.w_hh,
            "decoder.bias": self.decoder.bias,
            "projection.weight": self.proj_w,
            "projection.bias": self.proj_b,
        }

    def copy(self):
        enc, dec = self.encoder, self.decoder
        return LaeModel(
            LstmCellParams(enc.w_ih.copy(), enc.w_hh.copy(), enc.bias.copy()),
            LstmCellParams(dec.w_ih.copy(), dec.w_hh.copy(), dec.bias.copy()),
            self.proj_w.copy(), self.proj_b.copy(), self.w2,
        )


class PredictionWindow(NamedTuple):
    rows: np.ndarray
    target: np.ndarray
    target_index: int


def prediction_windows(series, w2):
    series = np.asarray(series, dtype=np.float64)
    m = series.shape[0]
    if m < w2 + 1:
        raise InsufficientLengthError(f"series of {m} rows has no target after a window of {w2}")
    return [PredictionWindow(series[t - w2:t], series[t], t) for t in range(w2, m)]


def window_batch(series, w2):
    """All prediction windows at once: inputs (B x w2 x n) and targets (B x n)."""
    series = np.asarray(series, dtype=np.float64)
    if series.shape[0] < w2 + 1:
        raise InsufficientLengthError(f"series of {series.shape[0]} rows has no target after a window of {w2}")
    inputs = sliding_window_view(series[:-1], w2, axis=0).transpose(0, 2, 1)
    return np.ascontiguousarray(inputs), series[w2:]


def _as_batch(rows, model):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 2:
        rows = rows[None]
    if rows.ndim != 3 or rows.shape[2] != model.n:
        raise DimensionError(f"window rows must be (.., w2, {model.n}), got {rows.shape}")
    return rows


def encode(window, model):
    """Latent for one window (w2 x n) or a batch of them (B x w2 x n)."""
    rows = np.asarray(window.rows if isinstance(window, PredictionWindow) else window, dtype=np.float64)
    batch = _as_batch(rows, model)
    if batch.shape[1] != model.w2:
        raise ContractError(f"window has {batch.shape[1]} rows, expected w2={model.w2}")
    z, _ = model.encoder.run(batch)
    return z[0] if rows.ndim == 2 else z


def decode(z, model):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None] if single else z
    if zb.shape[1] != model.hidden:
        raise DimensionError(f"latent has size {zb.shape[1]}, model expects {model.hidden}")
    hd, _ = model.decoder.run(zb[:, None, :])
    out = hd @ model.proj_w.T + model.proj_b
    return out[0] if single else out


def forward(window, model):
    return decode(encode(window, model), model)


def predict_batch(inputs, model):
    """Predictions for a (B x w2 x n) batch, plus the cache for :func:`backward_batch`."""
    z, enc_cache = model.encoder.run(inputs)
    hd, dec_cache = model.decoder.run(z[:, None, :])
    xhat = hd @ model.proj_w.T + model.proj_b
    return xhat, (enc_cache, dec_cache, hd)


def backward_batch(dxhat, cache, model):
    """Gradients for all model parameters and the window inputs."""
    enc_cache, dec_cache, hd = cache
    grads = {"projection.weight": dxhat.T @ hd, "projection.bias": dxhat.sum(axis=0)}
    dhd = dxhat @ model.proj_w
    dz_seq, gdec = LstmCellParams.backward(dhd, dec_cache)
    dinputs, genc = LstmCellParams.backward(dz_seq[:, 0, :], enc_cache)
    for k, v in gdec.items():
        grads[f"decoder.{k}"] = v
    for k, v in genc.items():
        grads[f"encoder.{k}"] = v
    return dinputs, grads


def predict_series(series, model):
    """Prediction for every target index ``w2 .. len-1`` of ``series``."""
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[1] != model.n:
        raise DimensionError(f"series must have {model.n} features, got shape {series.shape}")
    inputs, _ = window_batch(series, model.w2)
    return predict_batch(inputs, model)[0]


def mae(xhat, x):
    """Mean absolute deviation over features."""
    xhat = np.asarray(xhat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if xhat.shape != x.shape:
        raise ContractError(f"length mismatch: {xhat.shape} vs {x.shape}")
    return np.abs(xhat - x).mean(axis=-1)


def declare_graph_params(g, model):
    """Declare the model's parameters on graph ``g``; returns the nodes by role."""
    nodes = {}
    for name, cell in (("encoder", model.encoder), ("decoder", model.decoder)):
        nodes[f"{name}.wxt"] = g.transpose(g.param(f"{name}.w_ih", cell.w_ih))
        nodes[f"{name}.wht"] = g.transpose(g.param(f"{name}.w_hh", cell.w_hh))
        nodes[f"{name}.bias"] = g.param(f"{name}.bias", cell.bias.reshape(1, -1))
    nodes["projection.wt"] = g.transpose(g.param("projection.weight", model.proj_w))
    nodes["projection.bias"] = g.param("projection.bias", model.proj_b.reshape(1, -1))
    return nodes


def _lstm_graph(g, xs_nodes, hidden, nodes, name):
    Wx, Wh, b = nodes[f"{name}.wxt"], nodes[f"{name}.wht"], nodes[f"{name}.bias"]
    h = hidden
    hid = g.const(np.zeros((1, h)))
    cel = g.const(np.zeros((1, h)))
    for x in xs_nodes:
        gates = g.add(g.add(g.matmul(x, Wx), g.matmul(hid, Wh)), b)
        i = g.sigmoid(g.slice_cols(gates, 0, h))
        f = g.sigmoid(g.slice_cols(gates, h, 2 * h))
        c_hat = g.tanh(g.slice_cols(gates, 2 * h, 3 * h))
        o = g.sigmoid(g.slice_cols(gates, 3 * h, 4 * h))
        cel = g.add(g.mul(f, cel), g.mul(i, c_hat))
        hid = g.mul(o, g.tanh(cel))
    return hid


def build_graph(g, window_node, model, nodes):
    """Declare encode/decode of a (w2 x n) window node; returns the 1 x n prediction.

    ``nodes`` comes from :func:`declare_graph_params` so several windows share
    one set of parameters. Reference route for gradient checks only.
    """
    steps = [g.slice_rows(window_node, t, t + 1) for t in range(window_node.shape[0])]
    z = _lstm_graph(g, steps, model.hidden, nodes, "encoder")
    hd = _lstm_graph(g, [z], model.hidden, nodes, "decoder")
    return g.add(g.matmul(hd, nodes["projection.wt"]), nodes["projection.bias"])
