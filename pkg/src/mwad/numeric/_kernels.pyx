# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels for windowed attention and LSTM sequences.

Mirrors ``_kernels_py`` exactly in signature and layout. Reductions run in a
fixed loop order so results are reproducible run to run.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

NAME = "cython"


cdef inline double _sig(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))



def gat_forward(X, W, a, Py_ssize_t w1, double slope, bint use_sigmoid):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(W, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t T = x.shape[0], n = x.shape[1], R = T - w1 + 1
    P_arr = np.empty((T, n))
    Y_arr = np.empty((R, n))
    alpha_arr = np.empty((R, w1))
    E_arr = np.empty((R, w1))
    cdef double[:, ::1] P = P_arr
    cdef double[:, ::1] Y = Y_arr
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] E = E_arr
    cdef double[::1] src = np.empty(T)
    cdef double[::1] dst = np.empty(T)
    cdef Py_ssize_t r, k, m, j, t
    cdef double s, d, e, mx, tot, u
    with nogil:
        for r in range(T):
            s = 0.0
            d = 0.0
            for k in range(n):
                u = 0.0
                for m in range(n):
                    u = u + x[r, m] * w[k, m]
                P[r, k] = u
                s = s + u * av[k]
                d = d + u * av[n + k]
            src[r] = s
            dst[r] = d
        for r in range(R):
            t = r + w1 - 1
            mx = -1e308
            for j in range(w1):
                e = src[t] + dst[r + j]
                E[r, j] = e
                if e <= 0.0:
                    e = slope * e
                alpha[r, j] = e
                if e > mx:
                    mx = e
            tot = 0.0
            for j in range(w1):
                e = exp(alpha[r, j] - mx)
                alpha[r, j] = e
                tot = tot + e
            for j in range(w1):
                alpha[r, j] = alpha[r, j] / tot
            for k in range(n):
                u = 0.0
                for j in range(w1):
                    u = u + alpha[r, j] * P[r + j, k]
                Y[r, k] = _sig(u) if use_sigmoid else u
    return Y_arr, P_arr, alpha_arr, E_arr


def gat_backward(dY, X, W, a, P, alpha, E, Y, Py_ssize_t w1, double slope, bint use_sigmoid):
    cdef const double[:, ::1] dy = np.ascontiguousarray(dY, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(P, dtype=np.float64)
    cdef const double[:, ::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[:, ::1] ee = np.ascontiguousarray(E, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef Py_ssize_t T = x.shape[0], n = x.shape[1], R = T - w1 + 1
    dW_arr = np.zeros((n, n))
    da_arr = np.zeros(2 * n)
    cdef double[:, ::1] dW = dW_arr
    cdef double[::1] da = da_arr
    cdef double[:, ::1] dP = np.zeros((T, n))
    cdef double[::1] dU = np.empty(n)
    cdef double[::1] dal = np.empty(w1)
    cdef double[::1] dstg = np.zeros(T)
    cdef Py_ssize_t r, k, m, j, t
    cdef double s, dsrc, de, yv
    with nogil:
        for r in range(R):
            t = r + w1 - 1
            for k in range(n):
                if use_sigmoid:
                    yv = y[r, k]
                    dU[k] = dy[r, k] * yv * (1.0 - yv)
                else:
                    dU[k] = dy[r, k]
            s = 0.0
            for j in range(w1):
                dal[j] = 0.0
                for k in range(n):
                    dal[j] = dal[j] + dU[k] * p[r + j, k]
                    dP[r + j, k] = dP[r + j, k] + al[r, j] * dU[k]
                s = s + al[r, j] * dal[j]
            dsrc = 0.0
            for j in range(w1):
                de = al[r, j] * (dal[j] - s)
                if ee[r, j] <= 0.0:
                    de = slope * de
                dsrc = dsrc + de
                dstg[r + j] = dstg[r + j] + de
            for k in range(n):
                da[k] = da[k] + dsrc * p[t, k]
                dP[t, k] = dP[t, k] + dsrc * av[k]
        for r in range(T):
            for k in range(n):
                da[n + k] = da[n + k] + dstg[r] * p[r, k]
                dP[r, k] = dP[r, k] + dstg[r] * av[n + k]
        for r in range(T):
            for k in range(n):
                for m in range(n):
                    dW[k, m] = dW[k, m] + dP[r, k] * x[r, m]
    return dW_arr, da_arr


cdef void _gate_step(const double[:, ::1] e, const double[:, ::1] tg, const double[:, ::1] c_prev,
                     double[:, ::1] act, double[:, ::1] c_next, Py_ssize_t h) noexcept nogil:
    # e holds exp(-g) for every gate, tg holds tanh(g) for the candidate block
    cdef Py_ssize_t bi, k
    for bi in range(e.shape[0]):
        for k in range(2 * h):
            act[bi, k] = 1.0 / (1.0 + e[bi, k])
        for k in range(h):
            act[bi, 2 * h + k] = tg[bi, k]
            act[bi, 3 * h + k] = 1.0 / (1.0 + e[bi, 3 * h + k])
            c_next[bi, k] = act[bi, h + k] * c_prev[bi, k] + act[bi, k] * tg[bi, k]


# Matrix products and transcendental functions go through numpy, where BLAS
# and SIMD ufuncs beat scalar libm calls; the elementwise gate arithmetic is
# fused here.

def lstm_forward(Xs, WxT, WhT, b):
    Xs = np.asarray(Xs, dtype=np.float64)
    cdef Py_ssize_t B = Xs.shape[0], L = Xs.shape[1], h = WhT.shape[0], t
    Hs = np.zeros((B, L + 1, h))
    Cs = np.zeros((B, L + 1, h))
    A = np.empty((B, L, 4 * h))
    c_prev = np.zeros((B, h))
    for t in range(L):
        g = Xs[:, t] @ WxT
        g += Hs[:, t] @ WhT
        g += b
        tg = np.tanh(g[:, 2 * h:3 * h])
        np.negative(g, out=g)
        with np.errstate(over="ignore"):
            np.exp(g, out=g)
        act = np.empty((B, 4 * h))
        c_next = np.empty((B, h))
        _gate_step(g, tg, c_prev, act, c_next, h)
        A[:, t] = act
        Cs[:, t + 1] = c_next
        Hs[:, t + 1] = act[:, 3 * h:] * np.tanh(c_next)
        c_prev = c_next
    return Hs, Cs, A


cdef void _gate_step_back(const double[:, :, ::1] act, const double[:, :, ::1] cs,
                          const double[:, :, ::1] tcs, const double[:, ::1] dh, double[:, ::1] dc,
                          double[:, :, ::1] DG, Py_ssize_t t, Py_ssize_t h) noexcept nogil:
    cdef Py_ssize_t bi, k
    cdef double i_, f_, ch, o_, tc, v
    for bi in range(dh.shape[0]):
        for k in range(h):
            i_ = act[bi, t, k]
            f_ = act[bi, t, h + k]
            ch = act[bi, t, 2 * h + k]
            o_ = act[bi, t, 3 * h + k]
            tc = tcs[bi, t, k]
            v = dc[bi, k] + dh[bi, k] * o_ * (1.0 - tc * tc)
            DG[bi, t, k] = v * ch * i_ * (1.0 - i_)
            DG[bi, t, h + k] = v * cs[bi, t, k] * f_ * (1.0 - f_)
            DG[bi, t, 2 * h + k] = v * i_ * (1.0 - ch * ch)
            DG[bi, t, 3 * h + k] = dh[bi, k] * tc * o_ * (1.0 - o_)
            dc[bi, k] = v * f_


def lstm_backward(dh_last, Xs, WxT, WhT, Hs, Cs, A):
    Xs = np.ascontiguousarray(Xs, dtype=np.float64)
    Hs = np.ascontiguousarray(Hs, dtype=np.float64)
    WhT = np.ascontiguousarray(WhT, dtype=np.float64)
    Cs = np.ascontiguousarray(Cs, dtype=np.float64)
    cdef const double[:, :, ::1] act = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, :, ::1] cs = Cs
    cdef const double[:, :, ::1] tcs = np.tanh(Cs[:, 1:])
    cdef Py_ssize_t B = Xs.shape[0], L = Xs.shape[1], nin = Xs.shape[2], h = WhT.shape[0]
    cdef Py_ssize_t G = 4 * h, t
    DG_arr = np.empty((B, L, G))
    cdef double[:, :, ::1] DG = DG_arr
    cdef double[:, ::1] dc = np.zeros((B, h))
    cdef const double[:, ::1] dh = np.ascontiguousarray(dh_last, dtype=np.float64)
    WhT_T = WhT.T
    for t in range(L - 1, -1, -1):
        with nogil:
            _gate_step_back(act, cs, tcs, dh, dc, DG, t, h)
        dh = DG_arr[:, t] @ WhT_T
    flat = DG_arr.reshape(B * L, G)
    dWxT = Xs.reshape(B * L, nin).T @ flat
    dWhT = np.ascontiguousarray(Hs[:, :L]).reshape(B * L, h).T @ flat
    db = flat.sum(axis=0)
    dXs = (flat @ np.asarray(WxT, dtype=np.float64).T).reshape(B, L, nin)
    return dXs, dWxT, dWhT, db
