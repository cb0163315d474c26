"""Thin wrapper presenting the compiled extension as a backend module."""

import numpy as np

from . import _conv3d

name = "cython"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv3d_forward(x, w, stride, pad):
    return _conv3d.conv3d_forward(_c(x), _c(w), tuple(stride), tuple(pad))


def conv3d_grad_input(gout, w, x_shape, stride, pad):
    return _conv3d.conv3d_grad_input(_c(gout), _c(w), tuple(x_shape), tuple(stride), tuple(pad))


def conv3d_grad_weight(gout, x, w_shape, stride, pad):
    return _conv3d.conv3d_grad_weight(_c(gout), _c(x), tuple(w_shape), tuple(stride), tuple(pad))
