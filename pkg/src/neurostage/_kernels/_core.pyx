# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core.

Mirrors ``_pyfallback`` exactly: same signatures, same results bit-for-bit.
Floating-point accumulation orders are pinned to the fallback's.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused floating:
    float
    double


def flood_fill(cnp.uint8_t[:, ::1] work, rows, cols, int fill):
    cdef Py_ssize_t h = work.shape[0]
    cdef Py_ssize_t w = work.shape[1]
    cdef cnp.uint8_t fillv = <cnp.uint8_t> fill
    cdef cnp.uint8_t target
    cdef Py_ssize_t[::1] st = np.empty(h * w, dtype=np.intp)
    cdef Py_ssize_t sp, idx, r, c, i
    cdef Py_ssize_t nseeds = len(rows)
    for i in range(nseeds):
        r = rows[i]
        c = cols[i]
        if work[r, c] == fillv:
            continue
        target = work[r, c]
        work[r, c] = fillv
        st[0] = r * w + c
        sp = 1
        while sp > 0:
            sp -= 1
            idx = st[sp]
            r = idx // w
            c = idx - r * w
            if r > 0 and work[r - 1, c] == target:
                work[r - 1, c] = fillv
                st[sp] = idx - w
                sp += 1
            if r + 1 < h and work[r + 1, c] == target:
                work[r + 1, c] = fillv
                st[sp] = idx + w
                sp += 1
            if c > 0 and work[r, c - 1] == target:
                work[r, c - 1] = fillv
                st[sp] = idx - 1
                sp += 1
            if c + 1 < w and work[r, c + 1] == target:
                work[r, c + 1] = fillv
                st[sp] = idx + 1
                sp += 1


def im2col(floating[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, c * kh * kw, oh * ow), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    cdef Py_ssize_t i, ci, ky, kx, oy, ox, row, y, xx
    with nogil:
        for i in range(n):
            for ci in range(c):
                for ky in range(kh):
                    for kx in range(kw):
                        row = (ci * kh + ky) * kw + kx
                        for oy in range(oh):
                            y = oy * stride + ky - pad
                            if y < 0 or y >= h:
                                continue
                            for ox in range(ow):
                                xx = ox * stride + kx - pad
                                if 0 <= xx < w:
                                    cols[i, row, oy * ow + ox] = x[i, ci, y, xx]
    return out


def col2im(floating[:, :, ::1] cols, Py_ssize_t n, Py_ssize_t c,
           Py_ssize_t h, Py_ssize_t w, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    buf = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dtype)
    cdef floating[:, :, :, ::1] xp = buf
    cdef Py_ssize_t i, ci, ky, kx, oy, ox, row
    # (ky, kx) outermost: matches the fallback's per-element summation order
    with nogil:
        for ky in range(kh):
            for kx in range(kw):
                for i in range(n):
                    for ci in range(c):
                        row = (ci * kh + ky) * kw + kx
                        for oy in range(oh):
                            for ox in range(ow):
                                xp[i, ci, oy * stride + ky, ox * stride + kx] += \
                                    cols[i, row, oy * ow + ox]
    if pad:
        return buf[:, :, pad : pad + h, pad : pad + w].copy()
    return buf


def maxpool2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.uint8)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef cnp.uint8_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t i, ci, oy, ox
    cdef floating v, best
    cdef int k, bestk
    with nogil:
        for i in range(n):
            for ci in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        best = x[i, ci, 2 * oy, 2 * ox]
                        bestk = 0
                        for k in range(1, 4):
                            v = x[i, ci, 2 * oy + (k >> 1), 2 * ox + (k & 1)]
                            if v > best:
                                best = v
                                bestk = k
                        out[i, ci, oy, ox] = best
                        arg[i, ci, oy, ox] = <cnp.uint8_t> bestk
    return out_arr, arg_arr


def maxpool2_backward(floating[:, :, :, ::1] dout, cnp.uint8_t[:, :, :, ::1] arg):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1]
    cdef Py_ssize_t oh = dout.shape[2], ow = dout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((n, c, 2 * oh, 2 * ow), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t i, ci, oy, ox
    cdef int k
    with nogil:
        for i in range(n):
            for ci in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        k = arg[i, ci, oy, ox]
                        dx[i, ci, 2 * oy + (k >> 1), 2 * ox + (k & 1)] = dout[i, ci, oy, ox]
    return dx_arr
