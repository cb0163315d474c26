"""Stage-activation export as portable graymap/pixmap images.

For one (optionally attacked) video the requested stage's activations are
captured, averaged over channels per frame, min-max normalized per frame
to [0, 255] (a constant map renders as mid-gray 128), and written as one
binary P5 file per frame plus a horizontally tiled grid. The model input
frames are likewise written as binary P6 color images.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .attacks import AttackConfig, run_attack
from .errors import ConfigError
from .models import STAGES, Model, backbone_forward_with_stages
from .tensor import Tensor
from .training import ModelClosure


def write_pgm(path, gray: np.ndarray) -> None:
    """Binary portable graymap (P5) from a (H, W) uint8 array."""
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary portable pixmap (P6) from a (H, W, 3) uint8 array."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def _normalize_frame(frame: np.ndarray) -> np.ndarray:
    lo, hi = float(frame.min()), float(frame.max())
    if hi == lo:
        return np.full(frame.shape, 128, dtype=np.uint8)
    scaled = np.round(255.0 * (frame - lo) / (hi - lo))
    return np.clip(scaled, 0, 255).astype(np.uint8)


def _pixels_to_uint8(frame_chw: np.ndarray) -> np.ndarray:
    rgb = np.round(np.clip(frame_chw, 0.0, 1.0) * 255.0)
    return rgb.astype(np.uint8).transpose(1, 2, 0)


def export_feature_maps(model: Model, video: np.ndarray, label: int, stage: str,
                        attack: Optional[AttackConfig], out_dir) -> list:
    """Write per-frame feature and input images; returns the written paths.

    ``video`` is one (C, T, H, W) clip. When the restoration block sits at
    the requested stage, the captured activations are post-restoration.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; choose from {STAGES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    x = video[None].astype(np.float64)
    labels = np.asarray([label])
    if attack is not None:
        x = run_attack(ModelClosure(model), x, labels, attack).x_adv

    _, stages = backbone_forward_with_stages(Tensor(x), model.bcfg, model.ocfg,
                                             model.params, model.bn_state, mode="eval")
    feat = stages[stage].data[0].mean(axis=0)  # channel mean -> (T, H', W')

    paths = []
    frames = []
    for t in range(feat.shape[0]):
        img = _normalize_frame(feat[t])
        frames.append(img)
        p = out / f"features_{stage}_f{t:02d}.pgm"
        write_pgm(p, img)
        paths.append(p)
    grid = out / f"features_{stage}_grid.pgm"
    write_pgm(grid, np.hstack(frames))
    paths.append(grid)

    in_frames = []
    for t in range(x.shape[2]):
        img = _pixels_to_uint8(x[0, :, t])
        in_frames.append(img)
        p = out / f"input_f{t:02d}.ppm"
        write_ppm(p, img)
        paths.append(p)
    in_grid = out / "input_grid.ppm"
    write_ppm(in_grid, np.hstack(in_frames))
    paths.append(in_grid)
    return paths
