"""Exact rational parsing and formatting for file formats.

Model files store every non-integer number as a string so no precision is
lost in transit: either a fraction "n/d" or a decimal "1.25".  Both forms
parse to an exact :class:`fractions.Fraction`.
"""

from __future__ import annotations

from fractions import Fraction

from .errors import SchemaError


def parse_rational(value: int | str | Fraction) -> Fraction:
    """Parse an int, "n/d" string, or decimal string into an exact Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise SchemaError(f"expected a number, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise SchemaError(f"bad rational literal {value!r}") from exc
    raise SchemaError(f"expected a number, got {type(value).__name__}")


def format_rational(value: Fraction) -> str:
    """Canonical string form: "n" for integers, "n/d" otherwise."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"
