"""Hard-sphere overlap detection on a uniform grid and positional resolution.

Resolution is overdamped: no velocities are kept.  An overlapping pair is
pushed apart along the line of centres until it is ``EPS`` beyond contact,
with the push shared in inverse proportion to radius cubed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bloodcomm._jit import njit, pjit, prange
from bloodcomm.flow import EXITED, FREE, ParticleState

EPS = 1.0e-6  # um, separation left after resolving a contact


@dataclass(frozen=True)
class SpatialGrid:
    """Counting-sort buckets: particles of cell ``c`` are ``items[start[c]:start[c+1]]``."""

    cell_size: float
    origin: np.ndarray
    dims: tuple[int, int, int]
    start: np.ndarray
    items: np.ndarray
    members: np.ndarray

    def bucket(self, cell: int) -> np.ndarray:
        return self.items[self.start[cell]:self.start[cell + 1]]

    def cell_of(self, point) -> int:
        c = [_axis_cell(point[k], self.origin[k], self.cell_size, self.dims[k]) for k in range(3)]
        return (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]

    @property
    def n_indexed(self) -> int:
        return int(self.items.shape[0])


@dataclass(frozen=True)
class CollisionEvent:
    i: int
    j: int
    normal: np.ndarray
    overlap: float


@njit
def _axis_cell(v, origin, cs, n):
    c = int(math.floor((v - origin) / cs))
    if c < 0:
        return 0
    if c >= n:
        return n - 1
    return c


@njit
def bin_particles(pos, members, origin, cs, nx, ny, nz):
    """Counting sort of ``members`` into grid cells; bucket order follows ``members`` order."""
    ncell = nx * ny * nz
    start = np.zeros(ncell + 1, dtype=np.int64)
    cell = np.empty(members.shape[0], dtype=np.int64)
    for t in range(members.shape[0]):
        i = members[t]
        cx = _axis_cell(pos[i, 0], origin[0], cs, nx)
        cy = _axis_cell(pos[i, 1], origin[1], cs, ny)
        cz = _axis_cell(pos[i, 2], origin[2], cs, nz)
        c = (cz * ny + cy) * nx + cx
        cell[t] = c
        start[c + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    items = np.empty(members.shape[0], dtype=np.int64)
    for t in range(members.shape[0]):
        c = cell[t]
        items[fill[c]] = members[t]
        fill[c] += 1
    return start, items


@njit
def _scan_neighbours(i, out, offset, cap, pos, radius, is_carrier, in_grid, dirty, start, items,
                     origin, cs, nx, ny, nz, max_r, carrier_pairs):
    """Write up to ``cap`` partners of ``i`` that overlap it; returns the total found.

    A pair seen from both sides is reported once: from a non-grid query
    always, otherwise only when the partner is clean or has a larger index.
    """
    xi = pos[i, 0]
    yi = pos[i, 1]
    zi = pos[i, 2]
    ai = radius[i]
    reach = ai + max_r
    x0 = _axis_cell(xi - reach, origin[0], cs, nx)
    x1 = _axis_cell(xi + reach, origin[0], cs, nx)
    y0 = _axis_cell(yi - reach, origin[1], cs, ny)
    y1 = _axis_cell(yi + reach, origin[1], cs, ny)
    z0 = _axis_cell(zi - reach, origin[2], cs, nz)
    z1 = _axis_cell(zi + reach, origin[2], cs, nz)
    own = in_grid[i]
    ci = is_carrier[i]
    n = 0
    for cz in range(z0, z1 + 1):
        for cy in range(y0, y1 + 1):
            # cells x0..x1 of this row are contiguous in the bucket arrays
            base = (cz * ny + cy) * nx
            for k in range(start[base + x0], start[base + x1 + 1]):
                j = items[k]
                if j == i:
                    continue
                if own and j < i and dirty[j]:
                    continue
                if ci and not carrier_pairs and is_carrier[j]:
                    continue
                dx = pos[j, 0] - xi
                dy = pos[j, 1] - yi
                dz = pos[j, 2] - zi
                s = ai + radius[j]
                if dx * dx + dy * dy + dz * dz < s * s:
                    if n < cap:
                        out[offset + n] = j
                    n += 1
    return n


_CAP = 16


@pjit
def find_overlaps(queries, pos, radius, is_carrier, in_grid, dirty, start, items,
                  origin, cs, nx, ny, nz, max_r, carrier_pairs):
    """Overlapping pairs involving ``queries``, as an (m, 2) array in query order.

    Each query writes into its own fixed slot range, so the output order does
    not depend on the number of worker threads.
    """
    nq = queries.shape[0]
    counts = np.zeros(nq + 1, dtype=np.int64)
    buf = np.empty(nq * _CAP, dtype=np.int64)
    for t in prange(nq):
        counts[t + 1] = _scan_neighbours(queries[t], buf, t * _CAP, _CAP, pos, radius, is_carrier,
                                         in_grid, dirty, start, items, origin, cs, nx, ny, nz, max_r,
                                         carrier_pairs)
    total = 0
    for t in range(nq):
        total += counts[t + 1]
    pairs = np.empty((total, 2), dtype=np.int64)
    k = 0
    for t in range(nq):
        m = counts[t + 1]
        if m == 0:
            continue
        i = queries[t]
        if m <= _CAP:
            for q in range(m):
                pairs[k + q, 0] = i
                pairs[k + q, 1] = buf[t * _CAP + q]
        else:
            wide = np.empty(m, dtype=np.int64)
            _scan_neighbours(i, wide, 0, m, pos, radius, is_carrier, in_grid, dirty, start, items,
                             origin, cs, nx, ny, nz, max_r, carrier_pairs)
            for q in range(m):
                pairs[k + q, 0] = i
                pairs[k + q, 1] = wide[q]
        k += m
    return pairs


@njit
def build_neighbour_list(queries, pos, radius, is_carrier, in_grid, start, items,
                         origin, cs, nx, ny, nz, max_r, skin, carrier_pairs):
    """Pairs whose gap is below ``skin``, sorted by (first, second).

    Grid members pair with larger-index members only; queries outside the
    grid pair with every member.  The list stays exact for overlap tests
    while no particle has moved more than ``skin / 2`` since it was built.
    """
    nq = queries.shape[0]
    cap = 64
    out = np.empty((nq * 8 + 16, 2), dtype=np.int64)
    seg = np.empty(cap, dtype=np.int64)
    m = 0
    for t in range(nq):
        i = queries[t]
        xi = pos[i, 0]
        yi = pos[i, 1]
        zi = pos[i, 2]
        ai = radius[i]
        reach = ai + max_r + skin
        x0 = _axis_cell(xi - reach, origin[0], cs, nx)
        x1 = _axis_cell(xi + reach, origin[0], cs, nx)
        y0 = _axis_cell(yi - reach, origin[1], cs, ny)
        y1 = _axis_cell(yi + reach, origin[1], cs, ny)
        z0 = _axis_cell(zi - reach, origin[2], cs, nz)
        z1 = _axis_cell(zi + reach, origin[2], cs, nz)
        own = in_grid[i]
        ci = is_carrier[i]
        ns = 0
        for cz in range(z0, z1 + 1):
            for cy in range(y0, y1 + 1):
                base = (cz * ny + cy) * nx
                for k in range(start[base + x0], start[base + x1 + 1]):
                    j = items[k]
                    if j == i or (own and j < i):
                        continue
                    if ci and not carrier_pairs and is_carrier[j]:
                        continue
                    dx = pos[j, 0] - xi
                    dy = pos[j, 1] - yi
                    dz = pos[j, 2] - zi
                    s = ai + radius[j] + skin
                    if dx * dx + dy * dy + dz * dz < s * s:
                        if ns == seg.shape[0]:
                            seg = np.concatenate((seg, np.empty(ns, dtype=np.int64)))
                        seg[ns] = j
                        ns += 1
        if ns == 0:
            continue
        part = np.sort(seg[:ns])
        if m + ns > out.shape[0]:
            grown = np.empty((2 * (m + ns), 2), dtype=np.int64)
            grown[:m] = out[:m]
            out = grown
        for q in range(ns):
            out[m + q, 0] = i
            out[m + q, 1] = part[q]
        m += ns
    return out[:m]


@njit
def list_overlaps(nbr, pos, radius, status, free_code, dirty, only_dirty):
    """Overlapping pairs from a neighbour list, in list order.

    Pairs with a member whose status is not ``free_code`` are skipped; with
    ``only_dirty`` at least one member must be flagged in ``dirty``.
    """
    hits = np.empty(nbr.shape[0], dtype=np.int64)
    m = 0
    for k in range(nbr.shape[0]):
        i = nbr[k, 0]
        j = nbr[k, 1]
        if only_dirty and not (dirty[i] or dirty[j]):
            continue
        if status[i] != free_code or status[j] != free_code:
            continue
        dx = pos[j, 0] - pos[i, 0]
        dy = pos[j, 1] - pos[i, 1]
        dz = pos[j, 2] - pos[i, 2]
        s = radius[i] + radius[j]
        if dx * dx + dy * dy + dz * dz < s * s:
            hits[m] = k
            m += 1
    pairs = np.empty((m, 2), dtype=np.int64)
    for q in range(m):
        pairs[q, 0] = nbr[hits[q], 0]
        pairs[q, 1] = nbr[hits[q], 1]
    return pairs


@njit
def separate(pos, radius, i, j, eps, pin):
    """Push ``i`` and ``j`` apart until their gap is ``eps``; returns the overlap found.

    ``pin`` (or -1) names a particle that must not move.
    """
    dx = pos[j, 0] - pos[i, 0]
    dy = pos[j, 1] - pos[i, 1]
    dz = pos[j, 2] - pos[i, 2]
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    contact = radius[i] + radius[j]
    overlap = contact - dist
    if overlap <= 0.0:
        return 0.0
    if dist > 0.0:
        nx_ = dx / dist
        ny_ = dy / dist
        nz_ = dz / dist
    else:
        nx_, ny_, nz_ = 1.0, 0.0, 0.0
    push = overlap + eps
    mi = radius[i] ** 3
    mj = radius[j] ** 3
    if i == pin:
        wi, wj = 0.0, 1.0
    elif j == pin:
        wi, wj = 1.0, 0.0
    else:
        wi = mj / (mi + mj)
        wj = mi / (mi + mj)
    pos[i, 0] -= nx_ * push * wi
    pos[i, 1] -= ny_ * push * wi
    pos[i, 2] -= nz_ * push * wi
    pos[j, 0] += nx_ * push * wj
    pos[j, 1] += ny_ * push * wj
    pos[j, 2] += nz_ * push * wj
    return overlap


@njit
def reflect_radial(pos, i, limit):
    """Mirror the radial coordinate about ``limit`` if exceeded; returns True if moved."""
    x = pos[i, 0]
    y = pos[i, 1]
    r = math.sqrt(x * x + y * y)
    if r <= limit:
        return False
    scale = (2.0 * limit - r) / r
    pos[i, 0] = x * scale
    pos[i, 1] = y * scale
    return True


@njit
def max_overlap(pairs, pos, radius):
    worst = 0.0
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        dx = pos[j, 0] - pos[i, 0]
        dy = pos[j, 1] - pos[i, 1]
        dz = pos[j, 2] - pos[i, 2]
        ov = radius[i] + radius[j] - math.sqrt(dx * dx + dy * dy + dz * dz)
        if ov > worst:
            worst = ov
    return worst


# --------------------------------------------------------------------------
# Array-level API


def build_grid(positions, radii, cell_size: float, members=None, origin=None, dims=None) -> SpatialGrid:
    """Index ``members`` (default: all particles) into cubic cells of ``cell_size``.

    Without ``origin``/``dims`` the grid spans the members' bounding box.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    rad = np.asarray(radii, dtype=np.float64)
    idx = np.arange(pos.shape[0], dtype=np.int64) if members is None else np.asarray(members, dtype=np.int64)
    if idx.size and cell_size < 2.0 * rad[idx].max():
        raise ValueError(f"cell size {cell_size} is below the largest diameter {2.0 * rad[idx].max()}")
    if cell_size <= 0:
        raise ValueError("cell size must be positive")
    if origin is None:
        origin = pos[idx].min(axis=0) if idx.size else np.zeros(3)
    origin = np.asarray(origin, dtype=np.float64)
    if dims is None:
        extent = (pos[idx].max(axis=0) - origin) if idx.size else np.zeros(3)
        dims = tuple(int(np.floor(e / cell_size)) + 1 for e in extent)
    nx, ny, nz = (int(d) for d in dims)
    start, items = bin_particles(pos, idx, origin, float(cell_size), nx, ny, nz)
    return SpatialGrid(float(cell_size), origin, (nx, ny, nz), start, items, idx)


def overlap_pairs(grid: SpatialGrid, positions, radii, is_carrier=None, carrier_pairs=True) -> np.ndarray:
    """All overlapping pairs among grid members, (i, j) with i < j, sorted."""
    pos = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
    rad = np.asarray(radii, dtype=np.float64)
    n = pos.shape[0]
    carrier = np.zeros(n, dtype=np.bool_) if is_carrier is None else np.asarray(is_carrier, dtype=np.bool_)
    in_grid = np.zeros(n, dtype=np.bool_)
    in_grid[grid.members] = True
    dirty = in_grid.copy()
    max_r = float(rad[grid.members].max()) if grid.members.size else 0.0
    nx, ny, nz = grid.dims
    pairs = find_overlaps(grid.members, pos, rad, carrier, in_grid, dirty, grid.start, grid.items,
                          grid.origin, grid.cell_size, nx, ny, nz, max_r, carrier_pairs)
    pairs = np.sort(pairs, axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def detect_collisions(grid: SpatialGrid, positions, radii) -> list[CollisionEvent]:
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    rad = np.asarray(radii, dtype=np.float64)
    events = []
    for i, j in overlap_pairs(grid, pos, rad):
        d = pos[j] - pos[i]
        dist = float(np.linalg.norm(d))
        normal = d / dist if dist > 0 else np.array([1.0, 0.0, 0.0])
        events.append(CollisionEvent(int(i), int(j), normal, float(rad[i] + rad[j] - dist)))
    return events


def brute_force_pairs(positions, radii) -> set[tuple[int, int]]:
    """O(n^2) reference: every (i, j), i < j, with centre distance below the radius sum."""
    pos = np.asarray(positions, dtype=np.float64)
    rad = np.asarray(radii, dtype=np.float64)
    out = set()
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            if np.sum((pos[i] - pos[j]) ** 2) < (rad[i] + rad[j]) ** 2:
                out.add((i, j))
    return out


def resolve_collision(event: CollisionEvent, positions, radii, eps: float = EPS) -> np.ndarray:
    """Return a copy of ``positions`` with the event's pair separated."""
    if not event.overlap > 0:
        raise ValueError("event has no overlap")
    pos = np.array(positions, dtype=np.float64).reshape(-1, 3)
    separate(pos, np.asarray(radii, dtype=np.float64), event.i, event.j, eps, -1)
    return pos


def reflect_at_wall(p: ParticleState, geometry) -> ParticleState:
    """Mirror a particle back inside the wall; particles past either end exit."""
    if p.status != FREE:
        return p
    pos = np.array(p.position, dtype=np.float64).reshape(1, 3)
    reflect_radial(pos, 0, geometry.radius - p.radius)
    status = EXITED if (pos[0, 2] < 0.0 or pos[0, 2] > geometry.length) else FREE
    return p.with_(position=pos[0], status=status)
