"""Pure-numpy conv3d kernels (shift-GEMM formulation).

One GEMM per kernel offset: for offset (dt, dh, dw) the padded-input slice
aligned with that tap is contracted against the (C_out, C_in) weight slab.
Memory stays bounded by one input-sized slice copy per offset instead of a
full im2col expansion. Used when the compiled extension is unavailable or
explicitly selected.
"""

import numpy as np

name = "numpy"


def _out_dim(d, p, k, s):
    return (d + 2 * p - k) // s + 1


def conv3d_forward(x, w, stride, pad):
    N, Ci, T, H, W = x.shape
    Co, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = pad
    To, Ho, Wo = _out_dim(T, pt, kt, st), _out_dim(H, ph, kh, sh), _out_dim(W, pw, kw, sw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw))) if (pt or ph or pw) else x
    acc = np.zeros((Co, N, To, Ho, Wo), dtype=np.float64)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                xs = xp[:, :,
                        dt:dt + st * (To - 1) + 1:st,
                        dh:dh + sh * (Ho - 1) + 1:sh,
                        dw:dw + sw * (Wo - 1) + 1:sw]
                acc += np.tensordot(w[:, :, dt, dh, dw], xs, axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(1, 0, 2, 3, 4))


def conv3d_grad_input(gout, w, x_shape, stride, pad):
    N, Ci, T, H, W = x_shape
    Co, _, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = pad
    To, Ho, Wo = gout.shape[2:]
    gxp = np.zeros((N, Ci, T + 2 * pt, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                contrib = np.tensordot(gout, w[:, :, dt, dh, dw], axes=([1], [0]))
                gxp[:, :,
                    dt:dt + st * (To - 1) + 1:st,
                    dh:dh + sh * (Ho - 1) + 1:sh,
                    dw:dw + sw * (Wo - 1) + 1:sw] += np.moveaxis(contrib, -1, 1)
    if pt or ph or pw:
        return np.ascontiguousarray(gxp[:, :, pt:pt + T, ph:ph + H, pw:pw + W])
    return gxp


def conv3d_grad_weight(gout, x, w_shape, stride, pad):
    Co, Ci, kt, kh, kw = w_shape
    st, sh, sw = stride
    pt, ph, pw = pad
    To, Ho, Wo = gout.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw))) if (pt or ph or pw) else x
    gw = np.empty(w_shape, dtype=np.float64)
    for dt in range(kt):
        for dh in range(kh):
            for dw in range(kw):
                xs = xp[:, :,
                        dt:dt + st * (To - 1) + 1:st,
                        dh:dh + sh * (Ho - 1) + 1:sh,
                        dw:dw + sw * (Wo - 1) + 1:sw]
                gw[:, :, dt, dh, dw] = np.tensordot(gout, xs, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw
