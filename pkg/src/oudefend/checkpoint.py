"""Model checkpoints: a simple, inspectable, language-neutral binary format.

Layout: magic "OUDF", version u32, tensor count u32, then per tensor a
length-prefixed UTF-8 name (u16), dtype code u8 (0 = little-endian f64),
ndim u8, dims as u32, and the raw payload. Metadata rides along as
reserved tensors: ``meta.config_text`` (UTF-8 code points as f64) and
``meta.epoch``; batch-norm running stats use the ``bn.`` prefix. Writing
is canonical, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .config import model_config_from_text, model_config_text
from .errors import FormatError
from .layers import BatchNormState
from .models import Model
from .tensor import Tensor

MAGIC = b"OUDF"
VERSION = 1
_DTYPE_F64 = 0


@dataclass
class Checkpoint:
    config_text: str
    epoch: int
    params: dict = field(default_factory=dict)  # name -> float64 ndarray
    bn: dict = field(default_factory=dict)      # "layer.running_mean" -> ndarray


def _text_to_f64(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _f64_to_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


def _entries(ckpt: Checkpoint):
    yield "meta.config_text", _text_to_f64(ckpt.config_text)
    yield "meta.epoch", np.array([float(ckpt.epoch)])
    for name, arr in ckpt.params.items():
        yield name, arr
    for name, arr in ckpt.bn.items():
        yield "bn." + name, arr


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries = list(_entries(ckpt))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries:
            arr = np.asarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BB", _DTYPE_F64, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}, expected {VERSION}")
        raw: dict = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            dtype, ndim = struct.unpack("<BB", _read_exact(fh, 2))
            if dtype != _DTYPE_F64:
                raise FormatError(f"unknown dtype code {dtype} for tensor {name!r}")
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            n_elem = int(np.prod(dims)) if ndim else 1
            payload = np.frombuffer(_read_exact(fh, 8 * n_elem), dtype="<f8")
            raw[name] = payload.astype(np.float64).reshape(dims)
        if fh.read(1):
            raise FormatError("trailing bytes after final tensor")

    if "meta.config_text" not in raw or "meta.epoch" not in raw:
        raise FormatError("checkpoint missing meta entries")
    ckpt = Checkpoint(config_text=_f64_to_text(raw.pop("meta.config_text")),
                      epoch=int(raw.pop("meta.epoch")[0]))
    for name, arr in raw.items():
        if name.startswith("bn."):
            ckpt.bn[name[3:]] = arr
        else:
            ckpt.params[name] = arr
    return ckpt


def checkpoint_from_model(model: Model, epoch: int) -> Checkpoint:
    ckpt = Checkpoint(config_text=model_config_text(model.bcfg, model.ocfg), epoch=epoch)
    for name, t in model.params.items():
        ckpt.params[name] = t.data.copy()
    for name, st in model.bn_state.items():
        ckpt.bn[name + ".running_mean"] = st.running_mean.copy()
        ckpt.bn[name + ".running_var"] = st.running_var.copy()
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    bcfg, ocfg = model_config_from_text(ckpt.config_text)
    params = {name: Tensor(arr.copy(), requires_grad=True)
              for name, arr in ckpt.params.items()}
    bn_state: dict = {}
    for name, arr in ckpt.bn.items():
        if name.endswith(".running_mean"):
            layer = name[: -len(".running_mean")]
            st = bn_state.setdefault(layer, BatchNormState(arr.size))
            st.running_mean = arr.copy()
        elif name.endswith(".running_var"):
            layer = name[: -len(".running_var")]
            st = bn_state.setdefault(layer, BatchNormState(arr.size))
            st.running_var = arr.copy()
        else:
            raise FormatError(f"unrecognized batch-norm entry {name!r}")
    return Model(bcfg, ocfg, params, bn_state)
