"""Hot conv3d kernels: compiled direct-loop core + pure-numpy fallback.

Backends
--------
``cython``  direct loops with OpenMP (fast at large spatial extents / few
            channels, where GEMM shapes degenerate);
``numpy``   shift-GEMM via BLAS (fast at small spatial extents / many
            channels, and the fallback when the extension is not built);
``auto``    the default when both are built: pointwise (1x1x1) convolutions
            and channel-heavy small-spatial shapes route to the GEMM path,
            everything else to the compiled path. The crossover constants
            come from benchmarks/bench_kernels.py.

Set ``OUDEFEND_KERNELS`` to force a backend at import time, or use
:func:`set_backend` / :func:`using_backend` at runtime. Every backend is
bitwise deterministic for identical inputs within a process.
"""

import os
from contextlib import contextmanager

from . import numpy_backend

try:
    from . import cython_backend
except ImportError:  # extension not built
    cython_backend = None

_BACKENDS = {"numpy": numpy_backend}
if cython_backend is not None:
    _BACKENDS["cython"] = cython_backend
    _DEFAULT = "auto"
else:
    _DEFAULT = "numpy"


def _initial() -> str:
    forced = os.environ.get("OUDEFEND_KERNELS", "").strip().lower()
    if forced:
        if forced != "auto" and forced not in _BACKENDS:
            raise ImportError(
                f"OUDEFEND_KERNELS={forced!r} unavailable; built: {sorted(_BACKENDS)}")
        if forced == "auto" and cython_backend is None:
            return "numpy"
        return forced
    return _DEFAULT


_active = _initial()


def available_backends():
    names = sorted(_BACKENDS)
    if cython_backend is not None:
        names.append("auto")
    return names


def backend_name() -> str:
    return _active


def set_backend(name: str) -> str:
    """Select the kernel backend; returns the previously active name."""
    global _active
    if name not in _BACKENDS and name != "auto":
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    if name == "auto" and cython_backend is None:
        raise ValueError("auto needs the compiled extension, which is not built")
    prev = _active
    _active = name
    return prev


@contextmanager
def using_backend(name: str):
    prev = set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _pick(w_shape, out_area: int, grad_weight: bool):
    if _active != "auto":
        return _BACKENDS[_active]
    co, ci, kt, kh, kw = w_shape
    if kt == kh == kw == 1:
        return numpy_backend
    if grad_weight:
        return numpy_backend if ci * co >= 256 else cython_backend
    return numpy_backend if (out_area <= 128 and ci >= 16) else cython_backend


def conv3d_forward(x, w, stride, pad):
    ho = (x.shape[3] + 2 * pad[1] - w.shape[3]) // stride[1] + 1
    wo = (x.shape[4] + 2 * pad[2] - w.shape[4]) // stride[2] + 1
    return _pick(w.shape, ho * wo, False).conv3d_forward(x, w, stride, pad)


def conv3d_grad_input(gout, w, x_shape, stride, pad):
    area = gout.shape[3] * gout.shape[4]
    return _pick(w.shape, area, False).conv3d_grad_input(gout, w, x_shape, stride, pad)


def conv3d_grad_weight(gout, x, w_shape, stride, pad):
    area = gout.shape[3] * gout.shape[4]
    return _pick(w_shape, area, True).conv3d_grad_weight(gout, x, w_shape, stride, pad)
