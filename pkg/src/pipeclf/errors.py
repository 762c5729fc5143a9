"""Exception hierarchy shared across the toolchain."""

from __future__ import annotations


class PipeclfError(Exception):
    """Base class for every error raised by this package."""


# --- model files / model IR ---------------------------------------------


class SchemaError(PipeclfError):
    """A document is structurally malformed (missing or mistyped field)."""


class DomainError(PipeclfError):
    """Model parameters violate a model invariant (bad variance, pair count, tree shape)."""


class FeatureError(PipeclfError):
    """A feature reference or feature value is out of range for its spec."""


# --- trainers -------------------------------------------------------------


class EmptyDataset(PipeclfError):
    pass


class InsufficientClassRows(PipeclfError):
    """A class has too few rows to estimate a variance."""


class KTooLarge(PipeclfError):
    """Requested more clusters than distinct points."""


# --- mapper ---------------------------------------------------------------


class CodeWidthError(PipeclfError):
    """Packed per-tree codes do not fit the configured action width."""


class BinningRequired(PipeclfError):
    """A feature table would exceed the entry cap; set a bin count."""


class BinCountError(PipeclfError):
    """Requested bin count cannot produce non-empty covering bins."""


class ShapeMismatch(PipeclfError):
    """Programs have different table schemas; an entries-only update is impossible."""


# --- pipeline -------------------------------------------------------------


class RangeError(PipeclfError, ValueError):
    pass


class ArgumentError(PipeclfError, ValueError):
    pass


class PlacementError(PipeclfError):
    """A program does not fit the resource profile.

    ``reason`` names the first violated budget: one of ``stage_overflow``,
    ``key_too_wide``, ``metadata_overflow``, ``memory_overflow``,
    ``feature_overflow``.
    """

    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


# --- emulator -------------------------------------------------------------


class ProgramError(PipeclfError):
    """Structural defect in a compiled program (unwritten key field, field written twice)."""


class DomainTooLarge(PipeclfError):
    """Exhaustive enumeration would exceed the guard limit."""


# --- features -------------------------------------------------------------


class FormatError(PipeclfError):
    """Malformed trace line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TimestampRegression(PipeclfError):
    """Trace timestamps decreased; replay requires non-decreasing time."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnknownFeature(PipeclfError):
    pass


# --- hybrid ---------------------------------------------------------------


class LabelError(PipeclfError):
    pass
