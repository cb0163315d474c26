"""Differentiable 3-D network layers.

All layers take and return :class:`~oudefend.tensor.Tensor` values shaped
(N, C, T, H, W) and record exact adjoints on the active tape. conv3d
dispatches its heavy lifting to :mod:`oudefend.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import ConfigError, LabelError, ShapeError, StatError
from .tensor import Tensor, record, reduce_mean

Triple = tuple[int, int, int]


def same_padding(kernel: Sequence[int]) -> Triple:
    """p = k // 2 per axis; requires odd kernel dims so shapes are preserved."""
    k = tuple(int(v) for v in kernel)
    if any(v % 2 == 0 for v in k):
        raise ConfigError(f"'same' padding needs odd kernel dims, got {k}")
    return tuple(v // 2 for v in k)


@dataclass
class Conv3dParams:
    """Weight (C_out, C_in, k_t, k_h, k_w), bias (C_out), stride, padding.

    ``padding`` may be the string "same" (odd kernels only) or an explicit
    per-axis triple.
    """

    weight: Tensor
    bias: Tensor
    stride: Triple = (1, 1, 1)
    padding: Union[str, Triple] = (0, 0, 0)

    def __post_init__(self):
        if self.weight.data.ndim != 5:
            raise ShapeError(f"conv weight must be rank 5, got {self.weight.shape}")
        if self.bias.data.ndim != 1 or self.bias.shape[0] != self.weight.shape[0]:
            raise ShapeError(f"bias shape {self.bias.shape} does not match C_out {self.weight.shape[0]}")
        if self.padding == "same":
            self.padding = same_padding(self.weight.shape[2:])
        self.stride = tuple(int(s) for s in self.stride)
        self.padding = tuple(int(p) for p in self.padding)


def conv3d(x: Tensor, p: Conv3dParams) -> Tensor:
    """Cross-correlation of (N, C_in, T, H, W) with p.weight, plus bias."""
    if x.data.ndim != 5:
        raise ShapeError(f"conv3d input must be rank 5, got {x.shape}")
    N, Ci, T, H, W = x.shape
    Co, Cw, kt, kh, kw = p.weight.shape
    if Ci != Cw:
        raise ShapeError(f"input has {Ci} channels, weight expects {Cw}")
    st, sh, sw = p.stride
    pt, ph, pw = p.padding
    dims_out = ((T + 2 * pt - kt) // st + 1,
                (H + 2 * ph - kh) // sh + 1,
                (W + 2 * pw - kw) // sw + 1)
    if min(dims_out) < 1:
        raise ShapeError(
            f"kernel {(kt, kh, kw)} with stride {p.stride} pad {p.padding} "
            f"does not fit input {(T, H, W)}")

    y = kernels.conv3d_forward(x.data, p.weight.data, p.stride, p.padding)
    y += p.bias.data[None, :, None, None, None]
    out = Tensor(y)

    x_data, w_data = x.data, p.weight.data
    needs = (x.requires_grad, p.weight.requires_grad, p.bias.requires_grad)

    def adjoint(g):
        gx = kernels.conv3d_grad_input(g, w_data, x_data.shape, p.stride, p.padding) if needs[0] else None
        gw = kernels.conv3d_grad_weight(g, x_data, w_data.shape, p.stride, p.padding) if needs[1] else None
        gb = g.sum(axis=(0, 2, 3, 4)) if needs[2] else None
        return (gx, gw, gb)

    return record(out, (x, p.weight, p.bias), adjoint)


def max_pool3d(x: Tensor, window: Triple) -> Tensor:
    """Non-overlapping max pooling (stride == window, no padding).

    The gradient routes to the first maximal element of each window in
    (t, h, w) row-major scan order.
    """
    if x.data.ndim != 5:
        raise ShapeError(f"max_pool3d input must be rank 5, got {x.shape}")
    wt, wh, ww = (int(v) for v in window)
    N, C, T, H, W = x.shape
    if T % wt or H % wh or W % ww:
        raise ShapeError(f"dims {(T, H, W)} not divisible by window {(wt, wh, ww)}")
    To, Ho, Wo = T // wt, H // wh, W // ww
    blocks = (x.data.reshape(N, C, To, wt, Ho, wh, Wo, ww)
              .transpose(0, 1, 2, 4, 6, 3, 5, 7)
              .reshape(N, C, To, Ho, Wo, wt * wh * ww))
    arg = np.argmax(blocks, axis=-1)
    out = Tensor(np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0])

    def adjoint(g):
        gb = np.zeros((N, C, To, Ho, Wo, wt * wh * ww), dtype=np.float64)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = (gb.reshape(N, C, To, Ho, Wo, wt, wh, ww)
              .transpose(0, 1, 2, 5, 3, 6, 4, 7)
              .reshape(N, C, T, H, W))
        return (np.ascontiguousarray(gx),)

    return record(out, (x,), adjoint)


def upsample_nearest3d(x: Tensor, factor: Triple) -> Tensor:
    """Nearest-neighbor block replication; the adjoint sums each block."""
    if x.data.ndim != 5:
        raise ShapeError(f"upsample input must be rank 5, got {x.shape}")
    ft, fh, fw = (int(v) for v in factor)
    if min(ft, fh, fw) < 1:
        raise ConfigError(f"upsample factors must be >= 1, got {factor}")
    N, C, T, H, W = x.shape
    y = x.data
    if ft > 1:
        y = np.repeat(y, ft, axis=2)
    if fh > 1:
        y = np.repeat(y, fh, axis=3)
    if fw > 1:
        y = np.repeat(y, fw, axis=4)
    out = Tensor(y)

    def adjoint(g):
        return (g.reshape(N, C, T, ft, H, fh, W, fw).sum(axis=(3, 5, 7)),)

    return record(out, (x,), adjoint)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0

    def adjoint(g):
        return (g * mask,)

    return record(out, (x,), adjoint)


class BatchNormState:
    """Per-channel running statistics owned by the training loop."""

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)


def batch_norm3d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                 mode: str, momentum: float = 0.1, eps: float = 1e-5,
                 update_running: bool = True) -> Tensor:
    """Per-channel normalization over (N, T, H, W).

    Train mode normalizes by batch statistics (biased variance) and updates
    the running stats with the unbiased variance estimate; eval mode uses
    the running stats. Gradients flow through the batch statistics.
    """
    if x.data.ndim != 5:
        raise ShapeError(f"batch_norm3d input must be rank 5, got {x.shape}")
    N, C, T, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"gamma/beta must have shape ({C},)")
    axes = (0, 2, 3, 4)
    if mode == "train":
        m = N * T * H * W
        if m < 2:
            raise StatError("train-mode batch norm needs at least 2 elements per channel")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_running:
            state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mu
            state.running_var = (1.0 - momentum) * state.running_var + momentum * var * m / (m - 1)
    elif mode == "eval":
        mu = state.running_mean
        var = state.running_var
    else:
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None, None]) * inv_std[None, :, None, None, None]
    out = Tensor(xhat * gamma.data[None, :, None, None, None] + beta.data[None, :, None, None, None])
    gm = gamma.data

    def adjoint(g):
        gb = g.sum(axis=axes)
        gg = (g * xhat).sum(axis=axes)
        scale = (gm * inv_std)[None, :, None, None, None]
        if mode == "train":
            m = N * T * H * W
            gx = scale * (g - gb[None, :, None, None, None] / m
                          - xhat * gg[None, :, None, None, None] / m)
        else:
            gx = scale * g
        return (gx, gg, gb)

    return record(out, (x, gamma, beta), adjoint)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map (N, D) -> (N, K) with weight (K, D) and bias (K)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"linear expects rank-2 input/weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input dim {x.shape[1]} does not match weight dim {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match K {weight.shape[0]}")
    out = Tensor(x.data @ weight.data.T + bias.data)
    needs = (x.requires_grad, weight.requires_grad, bias.requires_grad)

    def adjoint(g):
        gx = g @ weight.data if needs[0] else None
        gw = g.T @ x.data if needs[1] else None
        gb = g.sum(axis=0) if needs[2] else None
        return (gx, gw, gb)

    return record(out, (x, weight, bias), adjoint)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over (T, H, W): (N, C, T, H, W) -> (N, C)."""
    if x.data.ndim != 5:
        raise ShapeError(f"global_avg_pool input must be rank 5, got {x.shape}")
    return reduce_mean(x, axes=(2, 3, 4))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], max-stabilized."""
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be rank 2, got {logits.shape}")
    N, K = logits.shape
    lab = np.asarray(labels)
    if lab.shape != (N,):
        raise ShapeError(f"labels must have shape ({N},), got {lab.shape}")
    if not np.issubdtype(lab.dtype, np.integer):
        raise LabelError(f"labels must be integers, got dtype {lab.dtype}")
    if lab.min(initial=0) < 0 or lab.max(initial=0) >= K:
        raise LabelError(f"labels must lie in [0, {K})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    softmax = ez / denom
    nll = np.log(denom[:, 0]) - z[np.arange(N), lab]
    out = Tensor(np.float64(nll.mean()))

    def adjoint(g):
        onehot = np.zeros((N, K), dtype=np.float64)
        onehot[np.arange(N), lab] = 1.0
        return ((softmax - onehot) * (float(g) / N),)

    return record(out, (logits,), adjoint)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain-numpy softmax used by evaluation paths (no tape)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def per_sample_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample -log softmax(logits)[label] on raw arrays (no tape)."""
    N = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(N), labels]
