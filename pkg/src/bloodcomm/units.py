"""Unit conversions into the internal micrometre / microsecond system."""

import math

BOLTZMANN = 1.380649e-23  # J/K

UM_PER_MM = 1.0e3
UM_PER_NM = 1.0e-3
US_PER_S = 1.0e6
UM3_PER_MM3 = 1.0e9


def mm(x: float) -> float:
    return x * UM_PER_MM


def nm(x: float) -> float:
    return x * UM_PER_NM


def seconds(x: float) -> float:
    return x * US_PER_S


def mm_per_s(v: float) -> float:
    """mm/s to um/us."""
    return v * UM_PER_MM / US_PER_S


def per_mm3_to_per_um3(c: float) -> float:
    return c / UM3_PER_MM3


def m2_per_s_to_um2_per_us(d: float) -> float:
    return d * 1.0e12 / US_PER_S


def cylinder_volume(radius: float, length: float) -> float:
    return math.pi * radius * radius * length
