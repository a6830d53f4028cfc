"""Counter-based random streams.

Every random draw in the particle engine is addressed by
``(key, particle id, step, purpose)`` and computed with Philox4x32-10, so a
draw never depends on which thread evaluates it or in what order.  The key is
derived from the run seed and the replicate index.
"""

from __future__ import annotations

import math

import numpy as np

from bloodcomm._jit import njit

# Purpose words (third counter word).
DIFFUSE = 0
ASSIMILATE = 1
RELEASE = 2
CAPTURE = 3

_MASK32 = 0xFFFFFFFF
_M0 = 0xD2511F53
_M1 = 0xCD9E8D57
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85

_U_M0 = np.uint64(_M0)
_U_M1 = np.uint64(_M1)
_U_W0 = np.uint64(_W0)
_U_W1 = np.uint64(_W1)
_U_MASK = np.uint64(_MASK32)
_U_32 = np.uint64(32)

_TWO_PI = 2.0 * math.pi
_INV_2_32 = 1.0 / 4294967296.0


def stream_key(seed: int, replicate: int = 0) -> tuple[int, int]:
    """Philox key words for a run.  Replicate ``k`` of seed ``s`` uses ``(s, k)``."""
    if not 0 <= seed <= _MASK32:
        raise ValueError(f"seed must fit in 32 bits, got {seed}")
    if not 0 <= replicate <= _MASK32:
        raise ValueError(f"replicate index must fit in 32 bits, got {replicate}")
    return seed, replicate


def philox4x32_reference(counter, key, rounds: int = 10) -> tuple[int, int, int, int]:
    """Plain-integer Philox4x32, kept separate from the jitted kernel as a check."""
    c = [int(v) & _MASK32 for v in counter]
    k0, k1 = (int(v) & _MASK32 for v in key)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c[0]
        p1 = _M1 * c[2]
        c = [
            ((p1 >> 32) ^ c[1] ^ k0) & _MASK32,
            p1 & _MASK32,
            ((p0 >> 32) ^ c[3] ^ k1) & _MASK32,
            p0 & _MASK32,
        ]
    return tuple(c)


@njit
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x32 on uint64-held 32-bit words."""
    x0 = np.uint64(c0) & _U_MASK
    x1 = np.uint64(c1) & _U_MASK
    x2 = np.uint64(c2) & _U_MASK
    x3 = np.uint64(c3) & _U_MASK
    key0 = np.uint64(k0) & _U_MASK
    key1 = np.uint64(k1) & _U_MASK
    for r in range(10):
        if r > 0:
            key0 = (key0 + _U_W0) & _U_MASK
            key1 = (key1 + _U_W1) & _U_MASK
        p0 = _U_M0 * x0
        p1 = _U_M1 * x2
        y0 = ((p1 >> _U_32) ^ x1 ^ key0) & _U_MASK
        y1 = p1 & _U_MASK
        y2 = ((p0 >> _U_32) ^ x3 ^ key1) & _U_MASK
        y3 = p0 & _U_MASK
        x0, x1, x2, x3 = y0, y1, y2, y3
    return x0, x1, x2, x3


@njit
def to_unit(word):
    """Map a 32-bit word to the open interval (0, 1)."""
    return (np.float64(word) + 0.5) * _INV_2_32


@njit
def uniforms4(c0, c1, c2, c3, k0, k1):
    x0, x1, x2, x3 = philox4x32(c0, c1, c2, c3, k0, k1)
    return to_unit(x0), to_unit(x1), to_unit(x2), to_unit(x3)


@njit
def _polar_pair(u, v):
    """Marsaglia polar step on two uniforms; returns (accepted, z0, z1)."""
    a = 2.0 * u - 1.0
    b = 2.0 * v - 1.0
    q = a * a + b * b
    if q >= 1.0 or q == 0.0:
        return False, 0.0, 0.0
    f = math.sqrt(-2.0 * math.log(q) / q)
    return True, a * f, b * f


@njit
def normals4(c0, c1, c2, c3, k0, k1):
    """Four independent standard normals by the polar method.

    Rejected candidates draw the next block, so the draw consumes counters
    ``(c0, c1, c2, c3 + b)`` for ``b = 0, 1, ...`` and nothing else.
    """
    out0 = 0.0
    out1 = 0.0
    out2 = 0.0
    out3 = 0.0
    have = 0
    b = 0
    while have < 4:
        u0, u1, u2, u3 = uniforms4(c0, c1, c2, c3 + b, k0, k1)
        b += 1
        ok, z0, z1 = _polar_pair(u0, u1)
        if ok:
            if have == 0:
                out0, out1 = z0, z1
            else:
                out2, out3 = z0, z1
            have += 2
        if have < 4:
            ok, z0, z1 = _polar_pair(u2, u3)
            if ok:
                if have == 0:
                    out0, out1 = z0, z1
                else:
                    out2, out3 = z0, z1
                have += 2
    return out0, out1, out2, out3


@njit
def box_muller4(c0, c1, c2, c3, k0, k1):
    """Four standard normals from one block by Box-Muller (used for cross-checks)."""
    u0, u1, u2, u3 = uniforms4(c0, c1, c2, c3, k0, k1)
    ra = math.sqrt(-2.0 * math.log(u0))
    rb = math.sqrt(-2.0 * math.log(u2))
    return (
        ra * math.cos(_TWO_PI * u1),
        ra * math.sin(_TWO_PI * u1),
        rb * math.cos(_TWO_PI * u3),
        rb * math.sin(_TWO_PI * u3),
    )


@njit
def unit_vector(c0, c1, c2, c3, k0, k1):
    """Uniform direction on the unit sphere."""
    u0, u1, _, _ = uniforms4(c0, c1, c2, c3, k0, k1)
    cz = 2.0 * u0 - 1.0
    s = math.sqrt(max(0.0, 1.0 - cz * cz))
    phi = _TWO_PI * u1
    return s * math.cos(phi), s * math.sin(phi), cz
