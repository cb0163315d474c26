"""The OUDefend restoration block and a small 3-D residual video classifier.

The block reduces channels through a shared pointwise convolution, then
runs two branches over the reduced features: an overcomplete branch that
upsamples after every encoder convolution (keeping receptive fields small
and detail local) and a lightweight undercomplete branch that pools first
(growing receptive fields for global context). Branch outputs are fused by
addition, projected back to the input width, passed through a final
pointwise convolution, and added to the block input as a residual.

The backbone is ResNet-18-shaped at desk scale: a 3x3x3 stem, one basic
residual block per stage (conv2..conv5), spatial stride-2 transitions, a
global average pool, and a linear head. The restoration block can be
inserted after any stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .layers import (
    BatchNormState,
    Conv3dParams,
    batch_norm3d,
    conv3d,
    global_avg_pool,
    linear,
    max_pool3d,
    relu,
    upsample_nearest3d,
)
from .tensor import Tape, Tensor, add, mul, reduce_sum

STAGES = ("conv2", "conv3", "conv4", "conv5")

ModelParams = dict[str, Tensor]


@dataclass
class OUDefendConfig:
    """Restoration block geometry.

    ``reduce_ratio`` sets branch width to in_channels / reduce_ratio. The
    default 8 keeps the block under 5% of the desk backbone's parameters.
    """

    in_channels: int
    reduce_ratio: int = 8
    o_depth: int = 3
    u_depth: int = 1
    scale: int = 2
    fusion: str = "add"
    branch_mode: str = "full"

    def __post_init__(self):
        if self.in_channels < 1 or self.reduce_ratio < 1:
            raise ConfigError("in_channels and reduce_ratio must be positive")
        if self.in_channels % self.reduce_ratio != 0:
            raise ConfigError(
                f"in_channels {self.in_channels} not divisible by reduce_ratio {self.reduce_ratio}")
        if self.o_depth < 1 or self.u_depth < 1:
            raise ConfigError("o_depth and u_depth must be >= 1")
        if self.scale < 2:
            raise ConfigError("scale must be >= 2")
        if self.fusion != "add":
            raise ConfigError(f"unsupported fusion {self.fusion!r}")
        if self.branch_mode not in ("full", "u_only", "o_only"):
            raise ConfigError(f"unknown branch_mode {self.branch_mode!r}")

    @property
    def branch_channels(self) -> int:
        return self.in_channels // self.reduce_ratio


@dataclass
class BackboneConfig:
    widths: tuple = (8, 16, 32, 64)
    num_classes: int = 5
    insert_after: str = "none"
    in_channels: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != len(STAGES) or min(self.widths) < 1:
            raise ConfigError(f"widths must be {len(STAGES)} positive ints, got {self.widths}")
        if self.insert_after not in STAGES + ("none",):
            raise ConfigError(f"insert_after must be one of {STAGES + ('none',)}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    def stage_width(self, stage: str) -> int:
        return self.widths[STAGES.index(stage)]


@dataclass
class Model:
    """A parameterized classifier: configs, trainable tensors, BN state."""

    bcfg: BackboneConfig
    ocfg: Optional[OUDefendConfig]
    params: ModelParams
    bn_state: dict[str, BatchNormState]

    def forward(self, x: Tensor, mode: str = "eval", update_running=None) -> Tensor:
        return backbone_forward(x, self.bcfg, self.ocfg, self.params, self.bn_state,
                                mode=mode, update_running=update_running)

    def logits(self, x_np: np.ndarray) -> np.ndarray:
        """Tape-free eval-mode forward on a raw pixel array."""
        return self.forward(Tensor(x_np), mode="eval").data


def _he_conv(rng, co, ci, k):
    fan_in = ci * k[0] * k[1] * k[2]
    return rng.standard_normal((co, ci) + tuple(k)) * np.sqrt(2.0 / fan_in)


def _add_conv(params, rng, name, co, ci, k):
    params[name + ".weight"] = Tensor(_he_conv(rng, co, ci, k), requires_grad=True)
    params[name + ".bias"] = Tensor(np.zeros(co), requires_grad=True)


def _add_bn(params, bn_state, name, c):
    params[name + ".gamma"] = Tensor(np.ones(c), requires_grad=True)
    params[name + ".beta"] = Tensor(np.zeros(c), requires_grad=True)
    bn_state[name] = BatchNormState(c)


def init_params(bcfg: BackboneConfig, ocfg: Optional[OUDefendConfig], seed: int):
    """He-initialized parameters and fresh BN state, deterministic in seed.

    Backbone tensors are drawn before block tensors, so a given seed yields
    an identical backbone with or without the restoration block.
    """
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    bn_state: dict[str, BatchNormState] = {}

    _add_conv(params, rng, "stem.conv", bcfg.widths[0], bcfg.in_channels, (3, 3, 3))
    _add_bn(params, bn_state, "stem.bn", bcfg.widths[0])

    w_in = bcfg.widths[0]
    for stage, w_out in zip(STAGES, bcfg.widths):
        stride = (1, 1, 1) if stage == "conv2" else (1, 2, 2)
        _add_conv(params, rng, f"{stage}.conv1", w_out, w_in, (3, 3, 3))
        _add_bn(params, bn_state, f"{stage}.bn1", w_out)
        _add_conv(params, rng, f"{stage}.conv2", w_out, w_out, (3, 3, 3))
        _add_bn(params, bn_state, f"{stage}.bn2", w_out)
        if w_in != w_out or stride != (1, 1, 1):
            _add_conv(params, rng, f"{stage}.shortcut.conv", w_out, w_in, (1, 1, 1))
            _add_bn(params, bn_state, f"{stage}.shortcut.bn", w_out)
        w_in = w_out

    k = bcfg.num_classes
    d = bcfg.widths[-1]
    params["head.weight"] = Tensor(rng.standard_normal((k, d)) * np.sqrt(2.0 / d), requires_grad=True)
    params["head.bias"] = Tensor(np.zeros(k), requires_grad=True)

    if ocfg is not None:
        if ocfg.in_channels != (bcfg.stage_width(bcfg.insert_after)
                                if bcfg.insert_after != "none" else ocfg.in_channels):
            raise ConfigError(
                f"block channels {ocfg.in_channels} do not match stage "
                f"{bcfg.insert_after} width {bcfg.stage_width(bcfg.insert_after)}")
        c, cc = ocfg.in_channels, ocfg.branch_channels
        _add_conv(params, rng, "oudefend.reduce", cc, c, (1, 1, 1))
        for i in range(1, ocfg.o_depth + 1):
            _add_conv(params, rng, f"oudefend.o_enc{i}", cc, cc, (3, 3, 3))
        for i in range(1, ocfg.o_depth + 1):
            _add_conv(params, rng, f"oudefend.o_dec{i}", cc, cc, (3, 3, 3))
        for i in range(1, ocfg.o_depth):
            _add_conv(params, rng, f"oudefend.o_skip{i}", cc, cc, (1, 1, 1))
        for i in range(1, ocfg.u_depth + 1):
            _add_conv(params, rng, f"oudefend.u_enc{i}", cc, cc, (3, 3, 3))
        for i in range(1, ocfg.u_depth + 1):
            _add_conv(params, rng, f"oudefend.u_dec{i}", cc, cc, (3, 3, 3))
        _add_conv(params, rng, "oudefend.u_adjust", cc, cc, (1, 1, 1))
        _add_conv(params, rng, "oudefend.expand", c, cc, (1, 1, 1))
        _add_conv(params, rng, "oudefend.final", c, c, (1, 1, 1))

    return params, bn_state


def init_model(bcfg: BackboneConfig, ocfg: Optional[OUDefendConfig], seed: int) -> Model:
    params, bn_state = init_params(bcfg, ocfg, seed)
    return Model(bcfg, ocfg, params, bn_state)


def param_count(params: ModelParams, prefix: Optional[str] = None) -> int:
    """Total element count over parameter names matching ``prefix``."""
    return sum(t.size for name, t in params.items()
               if prefix is None or name.startswith(prefix))


def _conv(params, name, x, stride=(1, 1, 1), padding=(0, 0, 0)):
    return conv3d(x, Conv3dParams(params[name + ".weight"], params[name + ".bias"],
                                  stride=stride, padding=padding))


def oudefend_forward(x: Tensor, cfg: OUDefendConfig, params: ModelParams,
                     prefix: str = "oudefend") -> Tensor:
    """Run the restoration block; output shape equals input shape."""
    N, C, T, H, W = x.shape
    if C != cfg.in_channels:
        raise ConfigError(f"input has {C} channels, block expects {cfg.in_channels}")
    s = cfg.scale
    if cfg.branch_mode != "o_only":
        div = s ** cfg.u_depth
        if H % div or W % div:
            raise ConfigError(
                f"spatial dims {(H, W)} must be divisible by {div} for {cfg.u_depth} pooling level(s)")

    p = lambda name: f"{prefix}.{name}"
    z = _conv(params, p("reduce"), x)

    o_out = None
    if cfg.branch_mode in ("full", "o_only"):
        enc = []
        h = z
        for i in range(1, cfg.o_depth + 1):
            h = upsample_nearest3d(relu(_conv(params, p(f"o_enc{i}"), h, padding=(1, 1, 1))), (1, s, s))
            enc.append(h)
        for j in range(1, cfg.o_depth + 1):
            h = max_pool3d(relu(_conv(params, p(f"o_dec{j}"), h, padding=(1, 1, 1))), (1, s, s))
            i = cfg.o_depth - j
            if i >= 1:  # fuse with the encoder level of equal spatial size
                h = add(h, _conv(params, p(f"o_skip{i}"), enc[i - 1]))
        o_out = h

    u_out = None
    if cfg.branch_mode in ("full", "u_only"):
        h = z
        for i in range(1, cfg.u_depth + 1):
            h = max_pool3d(relu(_conv(params, p(f"u_enc{i}"), h, padding=(1, 1, 1))), (1, s, s))
        for i in range(1, cfg.u_depth + 1):
            h = upsample_nearest3d(relu(_conv(params, p(f"u_dec{i}"), h, padding=(1, 1, 1))), (1, s, s))
        u_out = _conv(params, p("u_adjust"), h)

    if cfg.branch_mode == "full":
        fused = add(o_out, u_out)
    elif cfg.branch_mode == "o_only":
        fused = o_out
    else:
        fused = u_out

    y = _conv(params, p("expand"), fused)
    y = _conv(params, p("final"), y)
    return add(x, y)


def _basic_block(x, stage, params, bn_state, stride, mode, update_running):
    def bn(name, t):
        return batch_norm3d(t, params[name + ".gamma"], params[name + ".beta"],
                            bn_state[name], mode, update_running=update_running)

    h = relu(bn(f"{stage}.bn1", _conv(params, f"{stage}.conv1", x, stride=stride, padding=(1, 1, 1))))
    h = bn(f"{stage}.bn2", _conv(params, f"{stage}.conv2", h, padding=(1, 1, 1)))
    if f"{stage}.shortcut.conv.weight" in params:
        sc = bn(f"{stage}.shortcut.bn", _conv(params, f"{stage}.shortcut.conv", x, stride=stride))
    else:
        sc = x
    return relu(add(h, sc))


def backbone_forward_with_stages(x: Tensor, bcfg: BackboneConfig,
                                 ocfg: Optional[OUDefendConfig], params: ModelParams,
                                 bn_state: dict, mode: str = "eval",
                                 update_running=None):
    """Forward pass returning (logits, per-stage activations).

    Stage activations are captured after the restoration block when it is
    inserted at that stage.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if update_running is None:
        update_running = mode == "train"
    if x.data.ndim != 5 or x.shape[1] != bcfg.in_channels:
        raise ConfigError(f"expected input (N,{bcfg.in_channels},T,H,W), got {x.shape}")

    def bn(name, t):
        return batch_norm3d(t, params[name + ".gamma"], params[name + ".beta"],
                            bn_state[name], mode, update_running=update_running)

    h = relu(bn("stem.bn", _conv(params, "stem.conv", x, padding=(1, 1, 1))))
    stages = {}
    for stage in STAGES:
        stride = (1, 1, 1) if stage == "conv2" else (1, 2, 2)
        h = _basic_block(h, stage, params, bn_state, stride, mode, update_running)
        if ocfg is not None and bcfg.insert_after == stage:
            h = oudefend_forward(h, ocfg, params)
        stages[stage] = h
    logits = linear(global_avg_pool(h), params["head.weight"], params["head.bias"])
    return logits, stages


def backbone_forward(x: Tensor, bcfg: BackboneConfig, ocfg: Optional[OUDefendConfig],
                     params: ModelParams, bn_state: dict, mode: str = "eval",
                     update_running=None) -> Tensor:
    logits, _ = backbone_forward_with_stages(x, bcfg, ocfg, params, bn_state,
                                             mode=mode, update_running=update_running)
    return logits


def branch_unit_input_gradient(x_np: np.ndarray, cfg: OUDefendConfig,
                               params: ModelParams, branch: str,
                               prefix: str = "oudefend") -> np.ndarray:
    """Input gradient of one centered bottleneck unit of a single branch.

    The unit is the deepest pre-activation convolution output of the chosen
    branch (the most overcomplete convolution for "o", the bottleneck-scale
    decoder convolution for "u"), at channel 0 and the spatial-temporal
    center. The nonzero support of the returned gradient is an empirical
    receptive-field footprint.
    """
    if branch not in ("o", "u"):
        raise ConfigError(f"branch must be 'o' or 'u', got {branch!r}")
    p = lambda name: f"{prefix}.{name}"
    s = cfg.scale
    detached = {k: v.detach() for k, v in params.items()}
    x = Tensor(x_np, requires_grad=True)
    with Tape() as tape:
        z = _conv(detached, p("reduce"), x)
        if branch == "o":
            h = z
            for i in range(1, cfg.o_depth + 1):
                a = _conv(detached, p(f"o_enc{i}"), h, padding=(1, 1, 1))
                if i < cfg.o_depth:
                    h = upsample_nearest3d(relu(a), (1, s, s))
        else:
            h = z
            for i in range(1, cfg.u_depth + 1):
                h = max_pool3d(relu(_conv(detached, p(f"u_enc{i}"), h, padding=(1, 1, 1))), (1, s, s))
            a = _conv(detached, p("u_dec1"), h, padding=(1, 1, 1))
        mask = np.zeros(a.shape)
        _, _, t, hh, ww = a.shape
        mask[0, 0, t // 2, hh // 2, ww // 2] = 1.0
        unit = reduce_sum(mul(a, Tensor(mask)))
    tape.backward(unit)
    return x.grad
