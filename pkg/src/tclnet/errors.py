"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError -> 2, DivergenceError -> 3, everything
else -> 1.
"""


class TclError(Exception):
    """Base class for all package errors."""


class ShapeError(TclError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(TclError):
    """A value lies outside the operation's domain (bounds, empty input)."""


class ContractError(TclError):
    """An API contract was violated (e.g. backward on a non-scalar)."""


class ConfigError(TclError):
    """A configuration field is inconsistent or out of range."""


class NumericError(TclError):
    """Non-finite values appeared where finite ones are required."""


class CorruptWeightsError(TclError):
    """A weights file failed its checksum, magic, or version check."""


class DataLoadError(TclError):
    """A dataset index or image failed validation while loading."""


class AugmentationError(TclError):
    """A label could not be kept in frame by the augmentation pipeline."""


class DivergenceError(TclError):
    """Training produced non-finite losses or gradients."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
