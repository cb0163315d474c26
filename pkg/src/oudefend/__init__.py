"""Over-and-under complete feature restoration for robust video recognition.

A self-contained numerical laboratory: a float64 autodiff tape, 3-D conv
layers with compiled hot kernels, the OUDefend restoration block inside a
small 3-D residual backbone, six adversarial video attacks, Madry-style
adversarial training, and a synthetic motion-classification dataset.
"""

from .errors import (
    ArityError,
    AxisError,
    ConfigError,
    FormatError,
    LabelError,
    OUDefendError,
    ParamError,
    ShapeError,
    StatError,
    TapeConsumedError,
)
from .tensor import Tape, Tensor, build_tensor, finite_difference_gradient

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "build_tensor",
    "finite_difference_gradient",
    "OUDefendError",
    "ShapeError",
    "AxisError",
    "TapeConsumedError",
    "StatError",
    "LabelError",
    "ConfigError",
    "ParamError",
    "ArityError",
    "FormatError",
    "__version__",
]
