"""Pure numpy implementation of the fused training kernels.

Same signatures and array layouts as the compiled ``_kernels`` module; used when
the extension is not built or when ``MWAD_KERNELS=python`` is set.
"""
import numpy as np

NAME = "python"


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def gat_forward(X, W, a, w1, slope, use_sigmoid):
    """Attention-pool every trailing window of ``w1`` rows onto its last row.

    Returns ``(Y, P, alpha, E)``: outputs (R x n), transformed rows ``P = X W^T``,
    attention weights (R x w1) and pre-activation logits (R x w1), R = T - w1 + 1.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    T, n = X.shape
    R = T - w1 + 1
    P = X @ W.T
    src = P @ a[:n]
    dst = P @ a[n:]
    E = np.empty((R, w1))
    for j in range(w1):
        E[:, j] = src[w1 - 1:] + dst[j:j + R]
    L = np.where(E > 0.0, E, slope * E)
    L = L - L.max(axis=1, keepdims=True)
    ex = np.exp(L)
    alpha = ex / ex.sum(axis=1, keepdims=True)
    U = np.zeros((R, n))
    for j in range(w1):
        U += alpha[:, j:j + 1] * P[j:j + R]
    Y = _sigmoid(U) if use_sigmoid else U
    return Y, P, alpha, E


def gat_backward(dY, X, W, a, P, alpha, E, Y, w1, slope, use_sigmoid):
    """Gradients of a loss w.r.t. ``W`` and ``a`` given ``dLoss/dY``."""
    T, n = X.shape
    R = T - w1 + 1
    dU = dY * Y * (1.0 - Y) if use_sigmoid else dY
    dP = np.zeros((T, n))
    dalpha = np.empty((R, w1))
    for j in range(w1):
        Pj = P[j:j + R]
        dalpha[:, j] = np.einsum("rk,rk->r", dU, Pj)
        dP[j:j + R] += alpha[:, j:j + 1] * dU
    dL = alpha * (dalpha - np.einsum("rj,rj->r", alpha, dalpha)[:, None])
    dE = np.where(E > 0.0, dL, slope * dL)
    dsrc = dE.sum(axis=1)
    a_src, a_dst = a[:n], a[n:]
    da = np.empty(2 * n)
    da[:n] = dsrc @ P[w1 - 1:]
    dP[w1 - 1:] += dsrc[:, None] * a_src
    dst_grad = np.zeros(T)
    for j in range(w1):
        dst_grad[j:j + R] += dE[:, j]
    da[n:] = dst_grad @ P
    dP += dst_grad[:, None] * a_dst
    dW = dP.T @ X
    return dW, da


def lstm_forward(Xs, WxT, WhT, b):
    """Run an LSTM from zero state over ``Xs`` (B x L x in).

    Gate blocks in the 4h axis are ordered input, forget, candidate, output.
    Returns ``(Hs, Cs, A)`` with hidden/cell states (B x L+1 x h, index 0 is the
    zero initial state) and post-activation gates (B x L x 4h).
    """
    B, L, _ = Xs.shape
    h = WhT.shape[0]
    Hs = np.zeros((B, L + 1, h))
    Cs = np.zeros((B, L + 1, h))
    A = np.empty((B, L, 4 * h))
    for t in range(L):
        g = Xs[:, t] @ WxT + Hs[:, t] @ WhT + b
        A[:, t, :2 * h] = _sigmoid(g[:, :2 * h])
        A[:, t, 2 * h:3 * h] = np.tanh(g[:, 2 * h:3 * h])
        A[:, t, 3 * h:] = _sigmoid(g[:, 3 * h:])
        i, f, c_hat, o = (A[:, t, k * h:(k + 1) * h] for k in range(4))
        Cs[:, t + 1] = f * Cs[:, t] + i * c_hat
        Hs[:, t + 1] = o * np.tanh(Cs[:, t + 1])
    return Hs, Cs, A


def lstm_backward(dh_last, Xs, WxT, WhT, Hs, Cs, A):
    """Backpropagate ``dLoss/dh_L`` through the sequence run by :func:`lstm_forward`."""
    B, L, nin = Xs.shape
    h = WhT.shape[0]
    dXs = np.empty_like(Xs)
    dWxT = np.zeros_like(WxT)
    dWhT = np.zeros_like(WhT)
    db = np.zeros(4 * h)
    dh = np.array(dh_last, dtype=np.float64, copy=True)
    dc = np.zeros((B, h))
    dg = np.empty((B, 4 * h))
    for t in range(L - 1, -1, -1):
        i, f, c_hat, o = (A[:, t, k * h:(k + 1) * h] for k in range(4))
        tc = np.tanh(Cs[:, t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        dg[:, :h] = dc * c_hat * i * (1.0 - i)
        dg[:, h:2 * h] = dc * Cs[:, t] * f * (1.0 - f)
        dg[:, 2 * h:3 * h] = dc * i * (1.0 - c_hat * c_hat)
        dg[:, 3 * h:] = dh * tc * o * (1.0 - o)
        dWxT += Xs[:, t].T @ dg
        dWhT += Hs[:, t].T @ dg
        db += dg.sum(axis=0)
        dXs[:, t] = dg @ WxT.T
        dh = dg @ WhT.T
        dc = dc * f
    return dXs, dWxT, dWhT, db
