# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Direct-loop conv3d kernels.

Each output (or input-gradient / weight-gradient) element is written by
exactly one OpenMP thread, so results are bitwise deterministic for any
thread count. Inner loops run along the contiguous W axis, with a fused
3-tap stencil fast path for the dominant kw == 3, sw == 1 case.
"""

import numpy as np

cimport cython
from cython.parallel cimport prange


cdef inline void _fwd_row(double* outr, const double* xr, const double* wr,
                          Py_ssize_t W, Py_ssize_t Wo, Py_ssize_t kw,
                          Py_ssize_t sw, Py_ssize_t pw) noexcept nogil:
    """outr[wo] += sum_dw wr[dw] * xr[wo*sw + dw - pw] over valid taps."""
    cdef Py_ssize_t wo, dw, base, lo, hi
    cdef double w0, w1, w2
    if sw == 1 and kw == 3:
        w0 = wr[0]
        w1 = wr[1]
        w2 = wr[2]
        lo = pw                      # first wo with all three taps in range
        hi = W - 3 + pw + 1          # one past the last such wo
        if hi > Wo:
            hi = Wo
        if lo > Wo:
            lo = Wo
        for wo in range(0, lo):
            for dw in range(3):
                base = wo + dw - pw
                if 0 <= base < W:
                    outr[wo] += wr[dw] * xr[base]
        for wo in range(lo, hi):
            outr[wo] += w0 * xr[wo - pw] + w1 * xr[wo - pw + 1] + w2 * xr[wo - pw + 2]
        for wo in range(hi if hi > lo else lo, Wo):
            for dw in range(3):
                base = wo + dw - pw
                if 0 <= base < W:
                    outr[wo] += wr[dw] * xr[base]
    else:
        for dw in range(kw):
            base = dw - pw
            lo = 0 if base >= 0 else (-base + sw - 1) // sw
            hi = (W - 1 - base) // sw + 1
            if hi > Wo:
                hi = Wo
            w0 = wr[dw]
            for wo in range(lo, hi):
                outr[wo] += w0 * xr[wo * sw + base]


def conv3d_forward(double[:, :, :, :, ::1] x, double[:, :, :, :, ::1] w,
                   stride, pad):
    cdef Py_ssize_t N = x.shape[0], Ci = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t Co = w.shape[0], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pt = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t To = (T + 2 * pt - kt) // st + 1
    cdef Py_ssize_t Ho = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t Wo = (W + 2 * pw - kw) // sw + 1

    out_arr = np.zeros((N, Co, To, Ho, Wo), dtype=np.float64)
    cdef double[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t idx, n, co, to, ho, ci, dt, dh, ti, hi
    cdef double* outr
    cdef const double* xr
    cdef const double* wr

    for idx in prange(N * Co * To, nogil=True, schedule='static'):
        n = idx // (Co * To)
        co = (idx // To) % Co
        to = idx % To
        for ho in range(Ho):
            outr = &out[n, co, to, ho, 0]
            for ci in range(Ci):
                for dt in range(kt):
                    ti = to * st + dt - pt
                    if ti < 0 or ti >= T:
                        continue
                    for dh in range(kh):
                        hi = ho * sh + dh - ph
                        if hi < 0 or hi >= H:
                            continue
                        xr = &x[n, ci, ti, hi, 0]
                        wr = &w[co, ci, dt, dh, 0]
                        _fwd_row(outr, xr, wr, W, Wo, kw, sw, pw)
    return out_arr


cdef inline void _gin_row(double* gxr, const double* gor, const double* wr,
                          Py_ssize_t W, Py_ssize_t Wo, Py_ssize_t kw,
                          Py_ssize_t sw, Py_ssize_t pw) noexcept nogil:
    """gxr[wi] += sum_dw wr[dw] * gor[wo] with wi = wo*sw + dw - pw."""
    cdef Py_ssize_t wi, wo, dw, num, lo, hi
    cdef double w0, w1, w2
    if sw == 1 and kw == 3:
        w0 = wr[0]
        w1 = wr[1]
        w2 = wr[2]
        # gather form: wo = wi + pw - dw; interior needs all three in [0, Wo)
        lo = 2 - pw if 2 - pw > 0 else 0
        hi = Wo - pw
        if hi > W:
            hi = W
        if hi < lo:
            hi = lo
        if lo > W:
            lo = W
        for wi in range(0, lo):
            for dw in range(3):
                num = wi + pw - dw
                if 0 <= num < Wo:
                    gxr[wi] += wr[dw] * gor[num]
        for wi in range(lo, hi):
            gxr[wi] += w0 * gor[wi + pw] + w1 * gor[wi + pw - 1] + w2 * gor[wi + pw - 2]
        for wi in range(hi if hi > lo else lo, W):
            for dw in range(3):
                num = wi + pw - dw
                if 0 <= num < Wo:
                    gxr[wi] += wr[dw] * gor[num]
    else:
        for dw in range(kw):
            num = dw - pw
            lo = 0 if num >= 0 else (-num + sw - 1) // sw
            hi = (W - 1 - num) // sw + 1
            if hi > Wo:
                hi = Wo
            w0 = wr[dw]
            for wo in range(lo, hi):
                gxr[wo * sw + num] += w0 * gor[wo]


def conv3d_grad_input(double[:, :, :, :, ::1] gout, double[:, :, :, :, ::1] w,
                      x_shape, stride, pad):
    cdef Py_ssize_t N = x_shape[0], Ci = x_shape[1], T = x_shape[2]
    cdef Py_ssize_t H = x_shape[3], W = x_shape[4]
    cdef Py_ssize_t Co = w.shape[0], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pt = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t To = gout.shape[2], Ho = gout.shape[3], Wo = gout.shape[4]

    gx_arr = np.zeros((N, Ci, T, H, W), dtype=np.float64)
    cdef double[:, :, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t idx, n, ci, ti, hi, co, dt, dh, to, ho, num
    cdef double* gxr
    cdef const double* gor
    cdef const double* wr

    # Each thread owns one (n, ci, ti) input slab; writes stay thread-local.
    for idx in prange(N * Ci * T, nogil=True, schedule='static'):
        n = idx // (Ci * T)
        ci = (idx // T) % Ci
        ti = idx % T
        for co in range(Co):
            for dt in range(kt):
                num = ti + pt - dt
                if num < 0 or num % st != 0:
                    continue
                to = num // st
                if to >= To:
                    continue
                for hi in range(H):
                    gxr = &gx[n, ci, ti, hi, 0]
                    for dh in range(kh):
                        num = hi + ph - dh
                        if num < 0 or num % sh != 0:
                            continue
                        ho = num // sh
                        if ho >= Ho:
                            continue
                        gor = &gout[n, co, to, ho, 0]
                        wr = &w[co, ci, dt, dh, 0]
                        _gin_row(gxr, gor, wr, W, Wo, kw, sw, pw)
    return gx_arr


def conv3d_grad_weight(double[:, :, :, :, ::1] gout, double[:, :, :, :, ::1] x,
                       w_shape, stride, pad):
    cdef Py_ssize_t Co = w_shape[0], Ci = w_shape[1]
    cdef Py_ssize_t kt = w_shape[2], kh = w_shape[3], kw = w_shape[4]
    cdef Py_ssize_t N = x.shape[0], T = x.shape[2], H = x.shape[3], W = x.shape[4]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t pt = pad[0], ph = pad[1], pw = pad[2]
    cdef Py_ssize_t To = gout.shape[2], Ho = gout.shape[3], Wo = gout.shape[4]

    gw_arr = np.zeros((Co, Ci, kt, kh, kw), dtype=np.float64)
    cdef double[:, :, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t idx, co, ci, dt, dh, dw, n, to, ho, wo, ti, hi, lo, hi_w, base
    cdef double acc
    cdef const double* gor
    cdef const double* xr

    for idx in prange(Co * Ci, nogil=True, schedule='static'):
        co = idx // Ci
        ci = idx % Ci
        for dt in range(kt):
            for dh in range(kh):
                for dw in range(kw):
                    acc = 0.0
                    base = dw - pw
                    lo = 0 if base >= 0 else (-base + sw - 1) // sw
                    hi_w = (W - 1 - base) // sw + 1
                    if hi_w > Wo:
                        hi_w = Wo
                    for n in range(N):
                        for to in range(To):
                            ti = to * st + dt - pt
                            if ti < 0 or ti >= T:
                                continue
                            for ho in range(Ho):
                                hi = ho * sh + dh - ph
                                if hi < 0 or hi >= H:
                                    continue
                                gor = &gout[n, co, to, ho, 0]
                                xr = &x[n, ci, ti, hi, 0]
                                if sw == 1:
                                    for wo in range(lo, hi_w):
                                        acc = acc + gor[wo] * xr[wo + base]
                                else:
                                    for wo in range(lo, hi_w):
                                        acc = acc + gor[wo] * xr[wo * sw + base]
                    gw[co, ci, dt, dh, dw] = acc
    return gw_arr
