"""Physical constants derived from the configuration."""

from __future__ import annotations

import math

import numpy as np

from bloodcomm import units


def stokes_einstein_diffusivity(radius: float, temperature: float, viscosity: float) -> float:
    """Diffusion coefficient in um^2/us.

    ``radius`` in um, ``temperature`` in K, ``viscosity`` in Pa*s.
    """
    if radius <= 0 or temperature <= 0 or viscosity <= 0:
        raise ValueError("radius, temperature and viscosity must be positive")
    d_si = units.BOLTZMANN * temperature / (6.0 * math.pi * viscosity * radius * 1.0e-6)
    return units.m2_per_s_to_um2_per_us(d_si)


def species_diffusivity(spec, fluid) -> float:
    if spec.diffusivity is not None:
        return spec.diffusivity
    return stokes_einstein_diffusivity(spec.radius, fluid.temperature, fluid.viscosity)


def expected_population(concentration: float, geometry) -> float:
    """Expected count of a species filling the vessel (concentration per mm^3)."""
    volume = units.cylinder_volume(geometry.radius, geometry.length)
    return concentration * units.per_mm3_to_per_um3(1.0) * volume


def population_count(concentration: float, geometry, sampling: str = "round", rng=None) -> int:
    mean = expected_population(concentration, geometry)
    if sampling == "round":
        return int(round(mean))
    if sampling == "poisson":
        if rng is None:
            raise ValueError("poisson sampling needs a generator")
        return int(rng.poisson(mean))
    raise ValueError(f"unknown population sampling {sampling!r}")


def receptor_coverage(receptors: float, receptor_radius: float, area: float) -> float:
    """Fraction of a surface of ``area`` covered by receptor footprints, clamped to [0, 1]."""
    if area <= 0:
        raise ValueError("area must be positive")
    return float(np.clip(receptors * math.pi * receptor_radius**2 / area, 0.0, 1.0))
