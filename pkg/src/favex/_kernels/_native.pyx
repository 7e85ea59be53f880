# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled implementation of the hot numeric kernels.

Mirrors reference.py; the scalar accumulation order may differ from
BLAS in the last ulp, but each backend is individually deterministic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

BACKEND = "native"


def affine_interval(w, b, lo, hi):
    cdef const double[:, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t rows = wv.shape[0], cols = wv.shape[1]
    out_lo = np.empty(rows)
    out_hi = np.empty(rows)
    cdef double[::1] olv = out_lo
    cdef double[::1] ohv = out_hi
    cdef Py_ssize_t i, j
    cdef double c, d, wij
    for i in range(rows):
        c = bv[i]
        d = 0.0
        for j in range(cols):
            wij = wv[i, j]
            c += wij * (0.5 * (hiv[j] + lov[j]))
            d += fabs(wij) * (0.5 * (hiv[j] - lov[j]))
        olv[i] = c - d
        ohv[i] = c + d
    return out_lo, out_hi


def relu_backward_lower(a, bias, lo, hi):
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] biasv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef const double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef Py_ssize_t rows = av.shape[0], n = av.shape[1]
    a_out = np.empty((rows, n))
    bias_out = np.empty(rows)
    cdef double[:, ::1] aov = a_out
    cdef double[::1] bov = bias_out
    slope_lo = np.empty(n)
    slope_hi = np.empty(n)
    icpt = np.empty(n)
    cdef double[::1] slv = slope_lo
    cdef double[::1] shv = slope_hi
    cdef double[::1] icv = icpt
    cdef Py_ssize_t i, j
    cdef double l, u, s, aij, acc
    for j in range(n):
        l = lov[j]
        u = hiv[j]
        if l >= 0.0:
            slv[j] = 1.0
            shv[j] = 1.0
            icv[j] = 0.0
        elif u <= 0.0:
            slv[j] = 0.0
            shv[j] = 0.0
            icv[j] = 0.0
        else:
            s = u / (u - l)
            shv[j] = s
            icv[j] = -s * l
            slv[j] = 1.0 if u >= -l else 0.0
    for i in range(rows):
        acc = biasv[i]
        for j in range(n):
            aij = av[i, j]
            if aij >= 0.0:
                aov[i, j] = aij * slv[j]
            else:
                aov[i, j] = aij * shv[j]
                acc += aij * icv[j]
        bov[i] = acc
    return a_out, bias_out


def linear_box_lower(a, bias, lo, hi, prefer):
    cdef const double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] biasv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef const double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
    cdef const double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
    cdef const double[::1] prefv = np.ascontiguousarray(prefer, dtype=np.float64)
    cdef Py_ssize_t rows = av.shape[0], n = av.shape[1]
    vals = np.empty(rows)
    corners = np.empty((rows, n))
    cdef double[::1] vv = vals
    cdef double[:, ::1] cv = corners
    cdef Py_ssize_t i, j
    cdef double acc, aij, p
    for i in range(rows):
        acc = biasv[i]
        for j in range(n):
            aij = av[i, j]
            if aij > 0.0:
                acc += aij * lov[j]
                cv[i, j] = lov[j]
            elif aij < 0.0:
                acc += aij * hiv[j]
                cv[i, j] = hiv[j]
            else:
                p = prefv[j]
                if p < lov[j]:
                    p = lov[j]
                elif p > hiv[j]:
                    p = hiv[j]
                cv[i, j] = p
        vv[i] = acc
    return vals, corners


cdef void _forward_store(list wv, list bv, const double[::1] x,
                         list pre, Py_ssize_t nlayers) noexcept:
    """Forward pass storing the raw pre-activation of every affine
    layer; ReLU is applied on the fly when reading hidden layers."""
    cdef const double[:, ::1] w
    cdef const double[::1] b
    cdef double[::1] dst
    cdef const double[::1] src = x
    cdef Py_ssize_t t, i, j
    cdef double acc, v
    for t in range(nlayers):
        w = wv[t]
        b = bv[t]
        dst = pre[t]
        for i in range(w.shape[0]):
            acc = b[i]
            for j in range(w.shape[1]):
                v = src[j]
                if t > 0 and v < 0.0:
                    v = 0.0
                acc += w[i, j] * v
            dst[i] = acc
        src = dst


def forward_batch(weights, biases, xs):
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    cdef Py_ssize_t nlayers = len(weights)
    cdef list wv = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
    cdef list bv = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t k = (<object> wv[nlayers - 1]).shape[0]
    out = np.empty((n, k))
    cdef double[:, ::1] outv = out
    cdef const double[:, ::1] xv = xs
    cdef list pre = [np.empty((<object> w).shape[0]) for w in wv]
    cdef double[::1] logits
    cdef Py_ssize_t s, i
    for s in range(n):
        _forward_store(wv, bv, xv[s], pre, nlayers)
        logits = pre[nlayers - 1]
        for i in range(k):
            outv[s, i] = logits[i]
    return out


def margin_grad_batch(weights, biases, xs, y):
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    cdef Py_ssize_t nlayers = len(weights)
    cdef list wv = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
    cdef list bv = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t d = xs.shape[1]
    cdef Py_ssize_t k = (<object> wv[nlayers - 1]).shape[0]
    if k < 2:  # no competing class: the margin is unbounded
        return np.full(n, np.inf), np.zeros((n, d))
    cdef Py_ssize_t yy = y
    loss = np.empty(n)
    grad = np.empty((n, d))
    cdef double[::1] lossv = loss
    cdef double[:, ::1] gradv = grad
    cdef const double[:, ::1] xv = xs
    cdef list pre = [np.empty((<object> w).shape[0]) for w in wv]
    cdef list gbuf = [np.empty((<object> w).shape[0]) for w in wv] + [np.empty(d)]
    cdef double[::1] logits, layer, gsrc, gdst
    cdef const double[:, ::1] w
    cdef Py_ssize_t s, t, i, j, comp
    cdef double best, diff, acc
    for s in range(n):
        _forward_store(wv, bv, xv[s], pre, nlayers)
        logits = pre[nlayers - 1]
        best = 0.0
        comp = -1
        for i in range(k):
            if i == yy:
                continue
            diff = logits[yy] - logits[i]
            if comp < 0 or diff < best:
                best = diff
                comp = i
        lossv[s] = best
        gsrc = gbuf[nlayers - 1]
        for i in range(k):
            gsrc[i] = 0.0
        gsrc[yy] = 1.0
        gsrc[comp] = gsrc[comp] - 1.0
        for t in range(nlayers - 1, -1, -1):
            w = wv[t]
            gdst = gbuf[t - 1] if t > 0 else gbuf[nlayers]
            for j in range(w.shape[1]):
                acc = 0.0
                for i in range(w.shape[0]):
                    acc += gsrc[i] * w[i, j]
                gdst[j] = acc
            if t > 0:
                layer = pre[t - 1]
                for j in range(w.shape[1]):
                    if layer[j] <= 0.0:
                        gdst[j] = 0.0
            gsrc = gdst
        for j in range(d):
            gradv[s, j] = gsrc[j]
    return loss, grad
