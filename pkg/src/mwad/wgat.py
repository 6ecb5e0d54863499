"""Stage-one window: attention-weighted reshaping of each timestamp.

Every timestamp t is replaced by ``act(sum_j alpha_j W x_j)`` over the ``w1``
rows ending at t (the target row included). The weights come from a softmax of
``LeakyReLU(a . [W x_t || W x_j])``. The first ``w1 - 1`` rows have no full
window and produce no output, so a series of M rows becomes ``M - w1 + 1`` rows
with the same feature count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, InsufficientLengthError
from .numeric import kernels

ACTIVATIONS = ("sigmoid", "identity")
WINDOW_MODES = ("adaptive", "manual", "none")


@dataclass(eq=False)
class GatParams:
    W: np.ndarray
    a: np.ndarray
    leaky_slope: float = 0.2
    activation: str = "sigmoid"
    w1: int = 15

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        self.a = np.array(self.a, dtype=np.float64).reshape(-1)
        n = self.W.shape[0]
        if self.W.ndim != 2 or self.W.shape != (n, n):
            raise DimensionError(f"W must be square, got {self.W.shape}")
        if self.a.shape != (2 * n,):
            raise DimensionError(f"a must have length {2 * n}, got {self.a.shape}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}")
        if int(self.w1) < 1:
            raise ContractError(f"w1 must be >= 1, got {self.w1}")
        self.w1 = int(self.w1)

    @property
    def n(self):
        return self.W.shape[0]

    @classmethod
    def init(cls, n, seed=0, w1=15, leaky_slope=0.2, activation="sigmoid", rng=None):
        """Glorot-uniform ``W`` and ``a``."""
        rng = rng if rng is not None else np.random.default_rng(seed)
        lim_w = np.sqrt(6.0 / (n + n))
        lim_a = np.sqrt(6.0 / (2 * n + 1))
        W = rng.uniform(-lim_w, lim_w, size=(n, n))
        a = rng.uniform(-lim_a, lim_a, size=2 * n)
        return cls(W, a, leaky_slope, activation, w1)

    def named(self):
        return {"gat.W": self.W, "gat.a": self.a}

    def copy(self):
        return GatParams(self.W.copy(), self.a.copy(), self.leaky_slope, self.activation, self.w1)


class WindowGroup(NamedTuple):
    rows: np.ndarray
    target_index: int


def _check_series(series, n=None):
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise ContractError(f"series must be 2-D (rows x features), got shape {series.shape}")
    if n is not None and series.shape[1] != n:
        raise DimensionError(f"series has {series.shape[1]} features, parameters expect {n}")
    return series


def window_groups(series, w1):
    series = _check_series(series)
    m = series.shape[0]
    if m < w1:
        raise InsufficientLengthError(f"series of {m} rows is shorter than window {w1}")
    return [WindowGroup(series[t - w1 + 1:t + 1], t) for t in range(w1 - 1, m)]


def _forward(rows, params):
    return kernels.gat_forward(
        rows, params.W, params.a, params.w1, params.leaky_slope, params.activation == "sigmoid"
    )


def _group_rows(group, params):
    rows = _check_series(group.rows if isinstance(group, WindowGroup) else group, params.n)
    if rows.shape[0] != params.w1:
        raise ContractError(f"window has {rows.shape[0]} rows, expected w1={params.w1}")
    return rows


def attention_coefficients(group, params):
    return _forward(_group_rows(group, params), params)[2][0]


def reshape_target(group, params):
    return _forward(_group_rows(group, params), params)[0][0]


def reshape_series(series, params):
    series = _check_series(series, params.n)
    if series.shape[0] < params.w1:
        raise InsufficientLengthError(f"series of {series.shape[0]} rows is shorter than window {params.w1}")
    return _forward(series, params)[0]


def reshape_series_with_cache(series, params):
    """Forward pass that also returns what :func:`reshape_backward` needs."""
    series = _check_series(series, params.n)
    Y, P, alpha, E = _forward(series, params)
    return Y, (series, P, alpha, E, Y)


def reshape_backward(dY, cache, params):
    X, P, alpha, E, Y = cache
    dW, da = kernels.gat_backward(
        np.ascontiguousarray(dY), X, params.W, params.a, P, alpha, E, Y,
        params.w1, params.leaky_slope, params.activation == "sigmoid",
    )
    return {"gat.W": dW, "gat.a": da}


def manual_window_reshape(series, w1):
    """Uniform trailing mean over ``w1`` rows; the fixed-weight baseline."""
    series = _check_series(series)
    if series.shape[0] < w1:
        raise InsufficientLengthError(f"series of {series.shape[0]} rows is shorter than window {w1}")
    return sliding_window_view(series, w1, axis=0).mean(axis=2)


def stage_one(series, mode="adaptive", gat=None, w1=15):
    """Apply the configured stage-one window. ``none`` passes the series through."""
    if mode == "adaptive":
        if gat is None:
            raise ContractError("adaptive mode needs GatParams")
        return reshape_series(series, gat)
    if mode == "manual":
        return manual_window_reshape(series, w1)
    if mode == "none":
        return _check_series(series).copy()
    raise ContractError(f"unknown window mode {mode!r}; expected one of {WINDOW_MODES}")


def stage_one_offset(mode, w1):
    """Rows consumed before the first stage-one output."""
    return 0 if mode == "none" else w1 - 1


def build_graph(g, x, params, prefix="gat"):
    """Declare the reshaping of input node ``x`` (M x n) on graph ``g``.

    Returns the node holding the (M - w1 + 1) x n reshaped series. Used as the
    reference route for gradient checks; training uses the fused kernels.
    """
    w1 = params.w1
    W = g.param(f"{prefix}.W", params.W)
    a = g.param(f"{prefix}.a", params.a.reshape(-1, 1))
    Wt = g.transpose(W, name=f"{prefix}.Wt")
    ones = g.const(np.ones((w1, 1)), name=f"{prefix}.ones")
    act = g.sigmoid if params.activation == "sigmoid" else g.identity
    rows = []
    for r in range(x.shape[0] - w1 + 1):
        win = g.slice_rows(x, r, r + w1)
        P = g.matmul(win, Wt)
        pt = g.slice_rows(P, w1 - 1, w1)
        pair = g.concat([g.matmul(ones, pt), P], axis=1)
        logits = g.leaky_relu(g.matmul(pair, a), params.leaky_slope)
        alpha = g.softmax(g.transpose(logits))
        rows.append(act(g.matmul(alpha, P)))
    if len(rows) == 1:
        return rows[0]
    return g.concat(rows, axis=0, name=f"{prefix}.out")
