"""Unit conversions between field units and the internal SI system.

All physics inside the package is SI (Pa, s, m, m^2, Pa.s). Field units
(psi, day, mD, cp) are accepted only at I/O boundaries and converted here.
"""

PSI_TO_PA = 6894.757
DAY_TO_S = 86400.0
MD_TO_M2 = 9.869233e-16
CP_TO_PAS = 1e-3

_FACTORS = {
    "psi": PSI_TO_PA,
    "day": DAY_TO_S,
    "mD": MD_TO_M2,
    "cp": CP_TO_PAS,
    "m": 1.0,
    "dimensionless": 1.0,
}


class UnitError(ValueError):
    """Unknown or unsupported unit tag."""


def to_si(value: float, unit: str) -> float:
    """Convert ``value`` with field-unit tag ``unit`` to SI."""
    try:
        return value * _FACTORS[unit]
    except KeyError:
        raise UnitError(f"unknown unit tag: {unit!r}") from None


def from_si(value: float, unit: str) -> float:
    """Inverse of :func:`to_si`."""
    try:
        return value / _FACTORS[unit]
    except KeyError:
        raise UnitError(f"unknown unit tag: {unit!r}") from None
