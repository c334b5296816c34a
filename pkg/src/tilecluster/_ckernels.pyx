# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels (same contract as _pykernels)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                   const double[::1] b):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0]
    cdef Py_ssize_t n, o, c, ky, kx, y, xx, y0, y1, x0, x1, dy, dx
    cdef double wv
    out_arr = np.empty((N, O, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    with nogil:
        for n in range(N):
            for o in range(O):
                for y in range(H):
                    for xx in range(W):
                        out[n, o, y, xx] = b[o]
                for c in range(C):
                    for ky in range(3):
                        dy = ky - 1
                        y0 = 1 if dy < 0 else 0
                        y1 = H - 1 if dy > 0 else H
                        for kx in range(3):
                            dx = kx - 1
                            x0 = 1 if dx < 0 else 0
                            x1 = W - 1 if dx > 0 else W
                            wv = w[o, c, ky, kx]
                            for y in range(y0, y1):
                                for xx in range(x0, x1):
                                    out[n, o, y, xx] += wv * x[n, c, y + dy, xx + dx]
    return out_arr


def conv2d_backward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] w,
                    const double[:, :, :, ::1] grad_out):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0]
    cdef Py_ssize_t n, o, c, ky, kx, y, xx, y0, y1, x0, x1, dy, dx
    cdef double wv, acc, g
    gx_arr = np.zeros((N, C, H, W), dtype=np.float64)
    gw_arr = np.zeros((O, C, 3, 3), dtype=np.float64)
    gb_arr = np.zeros(O, dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    with nogil:
        for n in range(N):
            for o in range(O):
                acc = 0.0
                for y in range(H):
                    for xx in range(W):
                        acc = acc + grad_out[n, o, y, xx]
                gb[o] += acc
                for c in range(C):
                    for ky in range(3):
                        dy = ky - 1
                        y0 = 1 if dy < 0 else 0
                        y1 = H - 1 if dy > 0 else H
                        for kx in range(3):
                            dx = kx - 1
                            x0 = 1 if dx < 0 else 0
                            x1 = W - 1 if dx > 0 else W
                            wv = w[o, c, ky, kx]
                            acc = 0.0
                            for y in range(y0, y1):
                                for xx in range(x0, x1):
                                    g = grad_out[n, o, y, xx]
                                    acc = acc + g * x[n, c, y + dy, xx + dx]
                                    gx[n, c, y + dy, xx + dx] += wv * g
                            gw[o, c, ky, kx] += acc
    return gx_arr, gw_arr, gb_arr


def maxpool2d_forward(const double[:, :, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t H2 = x.shape[2] // 2, W2 = x.shape[3] // 2
    cdef Py_ssize_t n, c, y, xx, k, best_k
    cdef double v, best
    out_arr = np.empty((N, C, H2, W2), dtype=np.float64)
    idx_arr = np.empty((N, C, H2, W2), dtype=np.int8)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int8_t[:, :, :, ::1] idx = idx_arr
    with nogil:
        for n in range(N):
            for c in range(C):
                for y in range(H2):
                    for xx in range(W2):
                        best = x[n, c, 2 * y, 2 * xx]
                        best_k = 0
                        for k in range(1, 4):
                            v = x[n, c, 2 * y + k // 2, 2 * xx + k % 2]
                            if v > best:
                                best = v
                                best_k = k
                        out[n, c, y, xx] = best
                        idx[n, c, y, xx] = <cnp.int8_t>best_k
    return out_arr, idx_arr


def maxpool2d_backward(const double[:, :, :, ::1] grad_out, const cnp.int8_t[:, :, :, ::1] idx,
                       input_shape):
    cdef Py_ssize_t N = grad_out.shape[0], C = grad_out.shape[1]
    cdef Py_ssize_t H2 = grad_out.shape[2], W2 = grad_out.shape[3]
    cdef Py_ssize_t n, c, y, xx, k
    gx_arr = np.zeros(tuple(input_shape), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    with nogil:
        for n in range(N):
            for c in range(C):
                for y in range(H2):
                    for xx in range(W2):
                        k = idx[n, c, y, xx]
                        gx[n, c, 2 * y + k // 2, 2 * xx + k % 2] = grad_out[n, c, y, xx]
    return gx_arr
