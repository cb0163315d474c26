"""Synthetic video-classification dataset: a bright square moving in one of
five ways (left, right, up, down, static) over a noisy background.

Single frames are ambiguous between the moving classes, so the task needs
genuinely temporal features. Backgrounds carry Gaussian noise so input
gradients never degenerate. Generation is fully determined by the seed.

The on-disk format stores pixels as little-endian float32; generated pixels
are quantized to the float32 grid so save/load round-trips are bitwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"OUDS"
VERSION = 1

CLASS_NAMES = ("left", "right", "up", "down", "static")


@dataclass
class DatasetSpec:
    num_train: int = 96
    num_test: int = 48
    num_classes: int = 5
    frames: int = 8
    height: int = 32
    width: int = 32
    channels: int = 3
    square: int = 6
    speed: int = 2
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes != len(CLASS_NAMES):
            raise ConfigError(f"num_classes must be {len(CLASS_NAMES)}")
        travel = self.speed * (self.frames - 1)
        if self.square + travel > min(self.height, self.width):
            raise ConfigError(
                f"square {self.square} moving {travel} px does not fit "
                f"{self.height}x{self.width} frames")


@dataclass
class VideoBatch:
    pixels: np.ndarray  # (N, C, T, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, K)

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def subset(self, idx) -> "VideoBatch":
        return VideoBatch(self.pixels[idx], self.labels[idx])


def class_names(spec: DatasetSpec) -> tuple:
    return CLASS_NAMES


_DIRECTIONS = {
    0: (0, -1),   # left: column decreases
    1: (0, 1),    # right
    2: (-1, 0),   # up: row decreases
    3: (1, 0),    # down
    4: (0, 0),    # static
}


def _render_split(spec: DatasetSpec, count: int, rng) -> VideoBatch:
    K, T = spec.num_classes, spec.frames
    H, W, C, sq = spec.height, spec.width, spec.channels, spec.square
    travel = spec.speed * (T - 1)
    pixels = np.empty((count, C, T, H, W), dtype=np.float64)
    labels = np.empty(count, dtype=np.int64)
    for n in range(count):
        label = n % K  # balanced to within one sample
        dr, dc = _DIRECTIONS[label]
        lo_r = travel if dr < 0 else 0
        hi_r = H - sq - (travel if dr > 0 else 0)
        lo_c = travel if dc < 0 else 0
        hi_c = W - sq - (travel if dc > 0 else 0)
        r0 = int(rng.integers(lo_r, hi_r + 1))
        c0 = int(rng.integers(lo_c, hi_c + 1))
        video = np.zeros((C, T, H, W))
        for t in range(T):
            r = r0 + dr * spec.speed * t
            c = c0 + dc * spec.speed * t
            video[:, t, r:r + sq, c:c + sq] = 0.9
        video += rng.normal(0.0, spec.noise_std, size=video.shape) if spec.noise_std > 0 else 0.0
        pixels[n] = video
        labels[n] = label
    np.clip(pixels, 0.0, 1.0, out=pixels)
    # quantize to the float32 grid: the file format stores float32
    pixels = pixels.astype(np.float32).astype(np.float64)
    return VideoBatch(pixels, labels)


def generate_dataset(spec: DatasetSpec):
    """Deterministic (train, test) batches for the given spec."""
    rng_train = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    rng_test = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    return (_render_split(spec, spec.num_train, rng_train),
            _render_split(spec, spec.num_test, rng_test))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _write_split(fh: BinaryIO, batch: VideoBatch, num_classes: int) -> None:
    n, c, t, h, w = batch.pixels.shape
    fh.write(struct.pack("<6I", n, num_classes, c, t, h, w))
    fh.write(batch.labels.astype("<u4").tobytes())
    fh.write(batch.pixels.astype("<f4").tobytes())


def _read_split(fh: BinaryIO) -> VideoBatch:
    n, k, c, t, h, w = struct.unpack("<6I", _read_exact(fh, 24))
    labels = np.frombuffer(_read_exact(fh, 4 * n), dtype="<u4").astype(np.int64)
    if labels.size and labels.max() >= k:
        raise FormatError("label outside [0, K)")
    count = n * c * t * h * w
    pixels = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
    pixels = pixels.astype(np.float64).reshape(n, c, t, h, w)
    return VideoBatch(pixels, labels)


def save_dataset(path, batches) -> None:
    """Write (train, test) to ``path`` in the versioned binary format."""
    train, test = batches
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        k = int(max(train.labels.max(), test.labels.max())) + 1 if len(train) else len(CLASS_NAMES)
        k = max(k, len(CLASS_NAMES))
        _write_split(fh, train, k)
        _write_split(fh, test, k)


def load_dataset(path):
    """Read (train, test) back; raises FormatError on any corruption."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise FormatError(f"unsupported version {version}, expected {VERSION}")
        train = _read_split(fh)
        test = _read_split(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after final split")
    return train, test
