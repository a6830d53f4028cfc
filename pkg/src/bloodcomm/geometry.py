"""Cylindrical coordinates about the vessel axis (z along the flow)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CylindricalPosition:
    phi: float
    r: float
    z: float

    def __post_init__(self):
        if self.r < 0:
            raise ValueError(f"radial coordinate must be >= 0, got {self.r}")
        if not 0.0 <= self.phi < TWO_PI:
            object.__setattr__(self, "phi", wrap_angle(self.phi))


def wrap_angle(phi: float) -> float:
    """Map an angle into [0, 2*pi)."""
    w = math.fmod(phi, TWO_PI)
    if w < 0:
        w += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    return 0.0 if w >= TWO_PI else w


def signed_angle(phi: float) -> float:
    """Map an angle into (-pi, pi]."""
    w = wrap_angle(phi)
    return w - TWO_PI if w > math.pi else w


def to_cartesian(p: CylindricalPosition) -> np.ndarray:
    return np.array([p.r * math.cos(p.phi), p.r * math.sin(p.phi), p.z])


def from_cartesian(v) -> CylindricalPosition:
    x, y, z = (float(c) for c in v)
    r = math.hypot(x, y)
    # the axis has no direction; phi is defined as 0 there
    phi = wrap_angle(math.atan2(y, x)) if r > 0.0 else 0.0
    return CylindricalPosition(phi=phi, r=r, z=z)
