"""Unit handling for quantities that appear in recording files and queries.

Everything inside the toolkit is SI (m, s, rad, m/s); unit suffixes are
accepted at the boundaries (recording parser, query parser) and converted
on the way in.
"""

from __future__ import annotations

import re

# Multipliers to m/s.
SPEED_UNITS: dict[str, float] = {
    "mps": 1.0,
    "kmh": 1.0 / 3.6,
    "mph": 0.44704,
}

_NUMBER_WITH_UNIT = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*([A-Za-z]+)?\s*$")


class UnknownUnitError(ValueError):
    """A numeric value carried a unit suffix that is not registered."""


def speed_to_si(value: float, unit: str) -> float:
    """Convert a speed in `unit` to m/s."""
    try:
        return value * SPEED_UNITS[unit]
    except KeyError:
        raise UnknownUnitError(f"unknown unit {unit!r}") from None


def speed_from_si(value: float, unit: str) -> float:
    """Convert a speed in m/s back to `unit` (inverse of speed_to_si)."""
    try:
        return value / SPEED_UNITS[unit]
    except KeyError:
        raise UnknownUnitError(f"unknown unit {unit!r}") from None


def parse_speed(raw: float | int | str) -> float:
    """Parse a speed that is either a bare number (already m/s) or a
    string like "50mph" / "80kmh" / "22.35mps".

    Raises UnknownUnitError for unregistered suffixes and ValueError for
    text that is not a number at all.
    """
    if isinstance(raw, (int, float)):
        return float(raw)
    m = _NUMBER_WITH_UNIT.match(raw)
    if not m:
        raise ValueError(f"malformed speed value {raw!r}")
    value = float(m.group(1))
    unit = m.group(2)
    if unit is None:
        return value
    return speed_to_si(value, unit)


def split_number_unit(text: str) -> tuple[float, str | None]:
    """Split "50mph" into (50.0, "mph"); plain numbers give (value, None).

    Returns None unit without validating the suffix; callers decide which
    unit table applies.
    """
    m = _NUMBER_WITH_UNIT.match(text)
    if not m:
        raise ValueError(f"not a number: {text!r}")
    return float(m.group(1)), m.group(2)
