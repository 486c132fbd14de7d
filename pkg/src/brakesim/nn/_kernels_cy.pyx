# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the dense-network hot paths.

Signature-identical to the reference implementation in ``_kernels_py``;
matrix products go through BLAS dgemm, activations and the optimizer run
as C loops.  Activation tags are integers: 0 identity, 1 tanh, 2 relu.
All arrays are C-contiguous float64; weight matrices are (out, in).
"""

import numpy as np

from libc.math cimport pow as cpow, sqrt as csqrt
from scipy.linalg.cython_blas cimport dgemm

BACKEND_NAME = "cy"

IDENTITY, TANH, RELU = 0, 1, 2


# BLAS is column-major while the arrays are row-major, so every product
# below is phrased on the transposed views that share the same memory.


cdef void _gemm_forward(const double[:, ::1] h, const double[:, ::1] w, double[:, ::1] z) noexcept nogil:
    # z (B, out) = h (B, in) @ w.T; column-major z^T = w_f^T @ h^T.
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef int m = <int> w.shape[0]
    cdef int n = <int> h.shape[0]
    cdef int k = <int> w.shape[1]
    cdef double alpha = 1.0
    cdef double beta = 0.0
    if n == 0:
        return
    dgemm(&ta, &tb, &m, &n, &k, &alpha, <double*> &w[0, 0], &k, <double*> &h[0, 0], &k, &beta, &z[0, 0], &m)


cdef void _gemm_weight_grad(
    const double[:, ::1] h_prev, const double[:, ::1] delta, double[:, ::1] gw
) noexcept nogil:
    # gw (out, in) = delta.T @ h_prev; column-major gw^T = h^T @ delta.
    cdef char ta = b'N'
    cdef char tb = b'T'
    cdef int m = <int> h_prev.shape[1]
    cdef int n = <int> delta.shape[1]
    cdef int k = <int> h_prev.shape[0]
    cdef double alpha = 1.0
    cdef double beta = 0.0
    if k == 0:
        return
    dgemm(&ta, &tb, &m, &n, &k, &alpha, <double*> &h_prev[0, 0], &m, <double*> &delta[0, 0], &n,
          &beta, &gw[0, 0], &m)


cdef void _gemm_input_grad(
    const double[:, ::1] delta, const double[:, ::1] w, double[:, ::1] up
) noexcept nogil:
    # up (B, in) = delta (B, out) @ w (out, in); column-major up^T = w^T @ delta^T.
    cdef char ta = b'N'
    cdef char tb = b'N'
    cdef int m = <int> w.shape[1]
    cdef int n = <int> delta.shape[0]
    cdef int k = <int> w.shape[0]
    cdef double alpha = 1.0
    cdef double beta = 0.0
    if n == 0:
        return
    dgemm(&ta, &tb, &m, &n, &k, &alpha, <double*> &w[0, 0], &m, <double*> &delta[0, 0], &k,
          &beta, &up[0, 0], &m)


cdef void _add_bias(double[:, ::1] z, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            z[i, j] += b[j]


cdef void _delta_tanh(const double[:, ::1] up, const double[:, ::1] post, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(up.shape[0]):
        for j in range(up.shape[1]):
            out[i, j] = up[i, j] * (1.0 - post[i, j] * post[i, j])


cdef void _delta_relu(const double[:, ::1] up, const double[:, ::1] pre, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(up.shape[0]):
        for j in range(up.shape[1]):
            out[i, j] = up[i, j] if pre[i, j] > 0.0 else 0.0


cdef void _column_sums(const double[:, ::1] delta, double[::1] gb) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(delta.shape[1]):
        gb[j] = 0.0
    for i in range(delta.shape[0]):
        for j in range(delta.shape[1]):
            gb[j] += delta[i, j]


def forward(x, ws, bs, acts):
    """Affine + activation chain; returns per-layer (pre, post) lists.

    The matrix products and bias adds run in C; tanh and relu go through
    numpy's vectorized ufuncs, which beat a scalar libm loop and keep the
    activation arithmetic identical to the reference backend.
    """
    cdef const double[:, ::1] hv
    cdef const double[:, ::1] wv
    cdef const double[::1] bv
    cdef double[:, ::1] zv
    pres = []
    posts = []
    h = np.ascontiguousarray(x, dtype=np.float64)
    for w, b, a in zip(ws, bs, acts):
        hv = h
        wv = np.ascontiguousarray(w, dtype=np.float64)
        bv = np.ascontiguousarray(b, dtype=np.float64)
        z = np.empty((hv.shape[0], wv.shape[0]), dtype=np.float64)
        zv = z
        _gemm_forward(hv, wv, zv)
        _add_bias(zv, bv)
        if a == TANH:
            h = np.tanh(z)
        elif a == RELU:
            h = np.maximum(z, 0.0)
        else:
            h = z
        pres.append(z)
        posts.append(h)
    return pres, posts


def backward(x, ws, acts, pres, posts, gy):
    """Reverse-mode pass; returns (weight grads, bias grads, input grad).

    ``gy`` is the gradient of a scalar with respect to the final post; the
    returned gradients sum over the batch, so any 1/B averaging belongs in
    ``gy`` itself.
    """
    cdef Py_ssize_t n = len(ws)
    cdef Py_ssize_t i
    cdef int a
    cdef const double[:, ::1] upv
    cdef const double[:, ::1] dv
    cdef double[:, ::1] dwv
    cdef const double[:, ::1] hv
    cdef const double[:, ::1] wv
    cdef double[:, ::1] gwv
    cdef double[::1] gbv
    cdef double[:, ::1] nuv
    gws = [None] * n
    gbs = [None] * n
    xb = np.ascontiguousarray(x, dtype=np.float64)
    up = np.ascontiguousarray(gy, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        a = acts[i]
        upv = up
        if a == TANH:
            delta = np.empty_like(up)
            dwv = delta
            _delta_tanh(upv, np.ascontiguousarray(posts[i], dtype=np.float64), dwv)
            dv = delta
        elif a == RELU:
            delta = np.empty_like(up)
            dwv = delta
            _delta_relu(upv, np.ascontiguousarray(pres[i], dtype=np.float64), dwv)
            dv = delta
        else:
            dv = up
        h_prev = xb if i == 0 else np.ascontiguousarray(posts[i - 1], dtype=np.float64)
        hv = h_prev
        wv = np.ascontiguousarray(ws[i], dtype=np.float64)
        gw = np.empty((dv.shape[1], hv.shape[1]), dtype=np.float64)
        gb = np.empty(dv.shape[1], dtype=np.float64)
        new_up = np.empty((dv.shape[0], wv.shape[1]), dtype=np.float64)
        gwv = gw
        gbv = gb
        nuv = new_up
        _gemm_weight_grad(hv, dv, gwv)
        _column_sums(dv, gbv)
        _gemm_input_grad(dv, wv, nuv)
        gws[i] = gw
        gbs[i] = gb
        up = new_up
    return gws, gbs, up


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected adaptive-moment step on a flat parameter array.

    ``t`` is the 1-based step count including this call.  Returns new
    (params, first moment, second moment); inputs are not mutated.
    """
    shape = np.shape(p)
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64).ravel()
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64).ravel()
    cdef const double[::1] mv = np.ascontiguousarray(m, dtype=np.float64).ravel()
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64).ravel()
    p2 = np.empty(pv.shape[0], dtype=np.float64)
    m2 = np.empty(pv.shape[0], dtype=np.float64)
    v2 = np.empty(pv.shape[0], dtype=np.float64)
    cdef double[::1] p2v = p2
    cdef double[::1] m2v = m2
    cdef double[::1] v2v = v2
    cdef double b1 = beta1
    cdef double b2 = beta2
    cdef double step = lr
    cdef double epsilon = eps
    cdef double tt = <double> t
    cdef double c1 = 1.0 - cpow(b1, tt)
    cdef double c2 = 1.0 - cpow(b2, tt)
    cdef Py_ssize_t i
    cdef double mi, vi
    for i in range(pv.shape[0]):
        mi = b1 * mv[i] + (1.0 - b1) * gv[i]
        vi = b2 * vv[i] + (1.0 - b2) * (gv[i] * gv[i])
        m2v[i] = mi
        v2v[i] = vi
        p2v[i] = pv[i] - step * (mi / c1) / (csqrt(vi / c2) + epsilon)
    return p2.reshape(shape), m2.reshape(shape), v2.reshape(shape)
