from typing import Sequence


class ScmnError(Exception):
    """Base class for every error raised by the SCMN pipeline"""


class ShapeError(ScmnError, ValueError):
    """Raised when tensor dimensions do not fit an operation"""

    @classmethod
    def mismatch(cls, op: str, *shapes: Sequence[int]) -> "ShapeError":
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        return cls(f"{op}: incompatible shapes {rendered}")


class NonFiniteError(ScmnError, ArithmeticError):
    """Raised when a value that must be finite is inf or nan"""


class ConfigError(ScmnError, ValueError):
    """Raised for invalid or unknown configuration values"""


class CheckpointError(ScmnError):
    """Raised when a checkpoint cannot be read, validated or applied"""


class DatasetError(ScmnError):
    """Raised for unreadable, unwritable or inconsistent dataset files"""


class MatchingError(ScmnError, ValueError):
    """Raised for negative, non-finite or unbalanced transport marginals"""
