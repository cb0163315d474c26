"""Exception types shared across the package."""


class OUDefendError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(OUDefendError):
    """Tensor shapes are inconsistent with the requested operation."""


class AxisError(OUDefendError):
    """A reduction axis is out of range or repeated."""


class TapeConsumedError(OUDefendError):
    """backward() was called twice on the same tape."""


class StatError(OUDefendError):
    """Batch statistics are undefined (too few elements)."""


class LabelError(OUDefendError):
    """A class label lies outside [0, num_classes)."""


class ConfigError(OUDefendError):
    """A configuration value violates its invariants."""


class ParamError(OUDefendError):
    """Parameter and gradient maps are misaligned."""


class ArityError(OUDefendError):
    """Wrong number of values passed to a fixed-arity function."""


class FormatError(OUDefendError):
    """A binary file is corrupt, truncated, or has the wrong version."""
