# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; drop-in replacements for ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh, INFINITY

cnp.import_array()

cdef enum:
    IDENTITY = 0
    RELU = 1
    TANH = 2


cdef void _dense(const double[:, ::1] A, const double[:, ::1] W, const double[::1] b,
                 double[:, ::1] out, int code) noexcept nogil:
    cdef Py_ssize_t n = A.shape[0], k = A.shape[1], m = W.shape[1]
    cdef Py_ssize_t i, j, p
    cdef double a, v
    for i in range(n):
        for j in range(m):
            out[i, j] = b[j]
        for p in range(k):
            a = A[i, p]
            if a == 0.0:
                continue
            for j in range(m):
                out[i, j] += a * W[p, j]
        if code == RELU:
            for j in range(m):
                v = out[i, j]
                if v < 0.0:
                    out[i, j] = 0.0
        elif code == TANH:
            for j in range(m):
                out[i, j] = tanh(out[i, j])


def _as_c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def mlp_forward(weights, biases, acts, X):
    cdef Py_ssize_t L = len(weights)
    cdef Py_ssize_t i
    cdef int code
    a = _as_c(X)
    for i in range(L):
        W = _as_c(weights[i])
        out = np.empty((a.shape[0], W.shape[1]), dtype=np.float64)
        code = acts[i] if i < L - 1 else IDENTITY
        _dense(a, W, _as_c(biases[i]), out, code)
        a = out
    return a


def mlp_loss_grad(weights, biases, acts, X, y):
    cdef Py_ssize_t L = len(weights)
    cdef Py_ssize_t li, i, j, p, n, k, m, c
    cdef int code
    cdef double mx, s, loss = 0.0, g, h
    cdef const long long[::1] yv = np.ascontiguousarray(y, dtype=np.int64)

    Ws = [_as_c(w) for w in weights]
    layer_out = []
    a = _as_c(X)
    n = a.shape[0]
    layer_in = []
    for li in range(L):
        layer_in.append(a)
        out = np.empty((n, Ws[li].shape[1]), dtype=np.float64)
        code = acts[li] if li < L - 1 else IDENTITY
        _dense(a, Ws[li], _as_c(biases[li]), out, code)
        layer_out.append(out)
        a = out

    cdef const double[:, ::1] lg = a
    cdef double[:, ::1] dz = np.array(a, dtype=np.float64, copy=True)
    c = dz.shape[1]
    for i in range(n):
        mx = dz[i, 0]
        for j in range(1, c):
            if dz[i, j] > mx:
                mx = dz[i, j]
        s = 0.0
        for j in range(c):
            dz[i, j] = exp(dz[i, j] - mx)
            s += dz[i, j]
        loss += log(s) + mx - lg[i, yv[i]]
        for j in range(c):
            dz[i, j] = dz[i, j] / s / n
        dz[i, yv[i]] -= 1.0 / n
    loss /= n

    dWs = [None] * L
    dbs = [None] * L
    cdef double[:, ::1] Ain, dW, da, Wv, Hout
    cdef double[::1] db
    for li in range(L - 1, -1, -1):
        Ain = layer_in[li]
        k = Ain.shape[1]
        m = dz.shape[1]
        dW_arr = np.zeros((k, m), dtype=np.float64)
        db_arr = np.zeros(m, dtype=np.float64)
        dW = dW_arr
        db = db_arr
        for i in range(n):
            for j in range(m):
                db[j] += dz[i, j]
            for p in range(k):
                h = Ain[i, p]
                if h == 0.0:
                    continue
                for j in range(m):
                    dW[p, j] += h * dz[i, j]
        dWs[li] = dW_arr
        dbs[li] = db_arr
        if li > 0:
            Wv = Ws[li]
            Hout = layer_out[li - 1]
            code = acts[li - 1]
            da_arr = np.empty((n, k), dtype=np.float64)
            da = da_arr
            for i in range(n):
                for p in range(k):
                    g = 0.0
                    for j in range(m):
                        g += dz[i, j] * Wv[p, j]
                    if code == RELU:
                        if Hout[i, p] <= 0.0:
                            g = 0.0
                    elif code == TANH:
                        g *= 1.0 - Hout[i, p] * Hout[i, p]
                    da[i, p] = g
            dz = da
    return loss, dWs, dbs


def farthest_first(U, L, Py_ssize_t n_query, groups=None, quota=None):
    cdef const double[:, ::1] u = _as_c(U)
    cdef const double[:, ::1] l = _as_c(L)
    cdef Py_ssize_t n = u.shape[0], d = u.shape[1], nl = l.shape[0]
    cdef Py_ssize_t i, j, p, q, best
    cdef double acc, diff, bestv
    cdef double[::1] mind = np.full(n, INFINITY)
    cdef char[::1] eligible = np.ones(n, dtype=np.int8)
    cdef bint grouped = groups is not None
    cdef const long long[::1] gv
    cdef long long[::1] left
    if grouped:
        gv = np.ascontiguousarray(groups, dtype=np.int64)
        left = np.array(quota, dtype=np.int64)
        for i in range(n):
            if left[gv[i]] <= 0:
                eligible[i] = 0
    for i in range(n):
        for j in range(nl):
            acc = 0.0
            for p in range(d):
                diff = u[i, p] - l[j, p]
                acc += diff * diff
            acc = sqrt(acc)
            if acc < mind[i]:
                mind[i] = acc
    picks = []
    for q in range(n_query):
        best = -1
        bestv = -1.0
        for i in range(n):
            if not eligible[i]:
                continue
            if mind[i] == INFINITY:
                best = i
                break
            if mind[i] > bestv:
                bestv = mind[i]
                best = i
        if best < 0:
            break
        picks.append(best)
        eligible[best] = 0
        if grouped:
            left[gv[best]] -= 1
            if left[gv[best]] <= 0:
                for i in range(n):
                    if gv[i] == gv[best]:
                        eligible[i] = 0
        for i in range(n):
            acc = 0.0
            for p in range(d):
                diff = u[i, p] - u[best, p]
                acc += diff * diff
            acc = sqrt(acc)
            if acc < mind[i]:
                mind[i] = acc
    return picks
