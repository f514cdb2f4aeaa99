# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Same contracts and summation order as _fallback."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def patch_aggregate(onehot, weights):
    cdef const double[:, :, ::1] y = np.ascontiguousarray(onehot, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t k = y.shape[0], h = y.shape[1], wd = y.shape[2]
    cdef Py_ssize_t d1 = w.shape[0], d2 = w.shape[1]
    cdef Py_ssize_t r1 = d1 // 2, r2 = d2 // 2
    out_arr = np.zeros((k, h, wd), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, i, j, a, b, si, sj
    cdef double wab
    with nogil:
        for a in range(d1):
            for b in range(d2):
                wab = w[a, b]
                if wab == 0.0:
                    continue
                for c in range(k):
                    for i in range(h):
                        si = i + a - r1
                        if si < 0:
                            si = 0
                        elif si >= h:
                            si = h - 1
                        for j in range(wd):
                            sj = j + b - r2
                            if sj < 0:
                                sj = 0
                            elif sj >= wd:
                                sj = wd - 1
                            out[c, i, j] = out[c, i, j] + wab * y[c, si, sj]
    return out_arr


def im2col(x, Py_ssize_t kh, Py_ssize_t kw):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t bsz = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t r1 = kh // 2, r2 = kw // 2
    cols_arr = np.empty((bsz, c * kh * kw, h * w), dtype=np.float64)
    cdef double[:, :, ::1] cols = cols_arr
    cdef Py_ssize_t n, ch, a, b, i, j, si, sj, row
    with nogil:
        for n in range(bsz):
            for ch in range(c):
                for a in range(kh):
                    for b in range(kw):
                        row = (ch * kh + a) * kw + b
                        for i in range(h):
                            si = i + a - r1
                            if si < 0:
                                si = 0
                            elif si >= h:
                                si = h - 1
                            for j in range(w):
                                sj = j + b - r2
                                if sj < 0:
                                    sj = 0
                                elif sj >= w:
                                    sj = w - 1
                                cols[n, row, i * w + j] = xv[n, ch, si, sj]
    return cols_arr


def col2im(cols, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w, Py_ssize_t kh, Py_ssize_t kw):
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64)
    cdef Py_ssize_t bsz = cv.shape[0]
    cdef Py_ssize_t r1 = kh // 2, r2 = kw // 2
    cdef Py_ssize_t ph = h + 2 * r1, pw = w + 2 * r2
    pad_arr = np.zeros((bsz, c, ph, pw), dtype=np.float64)
    cdef double[:, :, :, ::1] p = pad_arr
    cdef Py_ssize_t n, ch, a, b, i, j, row
    with nogil:
        for n in range(bsz):
            for ch in range(c):
                for a in range(kh):
                    for b in range(kw):
                        row = (ch * kh + a) * kw + b
                        for i in range(h):
                            for j in range(w):
                                p[n, ch, a + i, b + j] = p[n, ch, a + i, b + j] + cv[n, row, i * w + j]
                for a in range(r1):
                    for j in range(pw):
                        p[n, ch, r1, j] = p[n, ch, r1, j] + p[n, ch, a, j]
                        p[n, ch, r1 + h - 1, j] = p[n, ch, r1 + h - 1, j] + p[n, ch, r1 + h + a, j]
                for b in range(r2):
                    for i in range(ph):
                        p[n, ch, i, r2] = p[n, ch, i, r2] + p[n, ch, i, b]
                        p[n, ch, i, r2 + w - 1] = p[n, ch, i, r2 + w - 1] + p[n, ch, i, r2 + w + b]
    return np.ascontiguousarray(pad_arr[:, :, r1:r1 + h, r2:r2 + w])
