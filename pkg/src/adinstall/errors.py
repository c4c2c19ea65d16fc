"""Exception types shared across the package."""

from __future__ import annotations


class AdinstallError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(AdinstallError):
    """A feature schema is malformed or violates its invariants."""


class DataFormatError(AdinstallError):
    """A data file cell or row violates the declared schema.

    Carries the 1-based file line number and the column name when known,
    so callers can surface actionable context.
    """

    def __init__(self, message: str, *, line: int | None = None, column: str | None = None):
        parts = [message]
        if column is not None:
            parts.append(f"column={column!r}")
        if line is not None:
            parts.append(f"line={line}")
        super().__init__("; ".join(parts))
        self.line = line
        self.column = column


class PipelineMismatchError(AdinstallError):
    """A table, pipeline, or model artifact does not match its counterpart."""


class NonFiniteGradientError(AdinstallError):
    """A gradient block contains NaN or infinity; the training step must abort."""


class ArtifactError(AdinstallError):
    """A serialized artifact is corrupt or has an unsupported version."""
