"""Poiseuille drift plus Brownian displacement (Euler-Maruyama at fixed step)."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from bloodcomm import rng as crng
from bloodcomm._jit import njit, pjit, prange

FREE, ASSIMILATED, EXITED, PENDING, CAPTURED = 0, 1, 2, 3, 4
STATUS_NAMES = {FREE: "free", ASSIMILATED: "assimilated", EXITED: "exited",
                PENDING: "pending", CAPTURED: "captured"}


@dataclass(frozen=True)
class ParticleState:
    species: str
    position: np.ndarray
    radius: float
    diffusivity: float
    status: int = FREE

    def with_(self, **changes) -> "ParticleState":
        return replace(self, **changes)


@njit
def drift_speed(r, radius, v_mean):
    s = r / radius
    return 2.0 * v_mean * (1.0 - s * s)


def poiseuille_velocity(r: float, radius: float, v_mean: float) -> float:
    """Axial speed at distance ``r`` from the axis of a pipe of ``radius``."""
    if not 0.0 <= r <= radius:
        raise ValueError(f"r={r} outside [0, {radius}]")
    return drift_speed(r, radius, v_mean)


def brownian_displacement(diffusivity: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    if diffusivity < 0 or dt <= 0:
        raise ValueError("need diffusivity >= 0 and dt > 0")
    if diffusivity == 0:
        return np.zeros(3)
    return rng.normal(0.0, math.sqrt(2.0 * diffusivity * dt), size=3)


def advect_and_diffuse(p: ParticleState, geometry, fluid, dt: float, rng) -> np.ndarray:
    """Proposed position after one step; wall and outlet are handled later."""
    if p.status != FREE:
        raise ValueError("only free particles move")
    x, y, z = p.position
    r = min(math.hypot(x, y), geometry.radius)
    shift = np.array([0.0, 0.0, drift_speed(r, geometry.radius, fluid.mean_velocity) * dt])
    return np.asarray(p.position, dtype=float) + shift + brownian_displacement(p.diffusivity, dt, rng)


@njit
def _propose_one(pos, i, pid, sigma, radius, v_mean, dt, step, k0, k1):
    x = pos[i, 0]
    y = pos[i, 1]
    r = math.sqrt(x * x + y * y)
    if r > radius:
        r = radius
    vz = drift_speed(r, radius, v_mean)
    if sigma > 0.0:
        g0, g1, g2, _ = crng.normals4(pid, step, crng.DIFFUSE, 0, k0, k1)
        pos[i, 0] = x + sigma * g0
        pos[i, 1] = y + sigma * g1
        pos[i, 2] = pos[i, 2] + vz * dt + sigma * g2
    else:
        pos[i, 2] = pos[i, 2] + vz * dt


@pjit
def propose_positions(pos, sigma, active, radius, v_mean, dt, step, k0, k1):
    """Advance every active particle in place by drift and diffusion.

    ``sigma`` holds the per-particle step deviation sqrt(2*D*dt); the random
    stream of particle ``i`` at ``step`` is addressed by ``(i, step)``.
    """
    for t in prange(active.shape[0]):
        i = active[t]
        _propose_one(pos, i, i, sigma[i], radius, v_mean, dt, step, k0, k1)
