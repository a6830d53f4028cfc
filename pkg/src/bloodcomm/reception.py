"""Wall-mounted receiver cells and carrier assimilation on wall contact.

The wall band is tiled by rings of equal-angle cells.  Cell 0 of every ring
is centred on the transmitter's release angle, so ``ring_position`` 0 is the
column aligned with the transmitter; ring boundaries start at the lower end
of the band, which sits a whole number of sides from the release point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bloodcomm._jit import njit
from bloodcomm.flow import ASSIMILATED, FREE, ParticleState
from bloodcomm.geometry import TWO_PI, signed_angle, wrap_angle
from bloodcomm.physics import receptor_coverage


@dataclass(frozen=True)
class ReceiverCell:
    ring_index: int
    ring_position: int
    phi_center: float
    z_center: float
    side: float
    receptors: int
    receptor_radius: float
    delta_phi: float
    delta_l: float


@dataclass(frozen=True)
class WallTiling:
    cells: tuple[ReceiverCell, ...]
    radius: float
    side: float
    z_lo: float
    n_rings: int
    cells_per_ring: int
    phi_ref: float
    z_ref: float

    @property
    def dtheta(self) -> float:
        return TWO_PI / self.cells_per_ring

    def __len__(self):
        return len(self.cells)

    def index(self, ring: int, position: int) -> int:
        return ring * self.cells_per_ring + position

    def locate(self, phi: float, z: float) -> int:
        """Cell index of the wall point (phi, z), or -1 outside the band."""
        return int(locate_cell(math.cos(phi), math.sin(phi), z, self.z_lo, self.side, self.n_rings,
                               self.cells_per_ring, self.phi_ref))

    def column(self, position: int = 0) -> list[int]:
        return [self.index(k, position) for k in range(self.n_rings)]

    def delta_l(self) -> np.ndarray:
        return np.array([c.delta_l for c in self.cells])

    def delta_phi(self) -> np.ndarray:
        return np.array([c.delta_phi for c in self.cells])


def tile_vessel_wall(geometry, side: float, z_range: tuple[float, float], reference,
                     receptors: int = 1000, receptor_radius: float = 0.004) -> WallTiling:
    """Tile the wall band ``z_range`` with square-ish cells of ``side``.

    ``reference`` is the transmitter release point (a CylindricalPosition);
    every cell records its (delta_phi, delta_L) from it.
    """
    if side <= 0:
        raise ValueError("cell side must be positive")
    circumference = 2.0 * math.pi * geometry.radius
    if side > circumference * (1 + 1e-12):
        raise ValueError(f"cell side {side} exceeds the circumference {circumference:.3f}")
    z_lo, z_hi = z_range
    if z_lo < -1e-9 or z_hi > geometry.length + 1e-9 or z_hi <= z_lo:
        raise ValueError(f"z range {z_range} not inside the vessel")
    per_ring = max(1, int(round(circumference / side)))
    n_rings = int(math.floor((z_hi - z_lo) / side + 1e-9))
    dtheta = TWO_PI / per_ring
    cells = []
    for k in range(n_rings):
        zc = z_lo + (k + 0.5) * side
        for m in range(per_ring):
            dphi = signed_angle(m * dtheta)
            cells.append(ReceiverCell(k, m, wrap_angle(reference.phi + m * dtheta), zc, side,
                                      receptors, receptor_radius, dphi, zc - reference.z))
    return WallTiling(tuple(cells), geometry.radius, side, z_lo, n_rings, per_ring,
                      wrap_angle(reference.phi), reference.z)


def tiling_for(cfg) -> WallTiling:
    rx = cfg.receivers
    return tile_vessel_wall(cfg.geometry, rx.side,
                            (cfg.transmitter.z + rx.delta_l_min, cfg.transmitter.z + rx.delta_l_max),
                            cfg.transmitter, rx.receptors, rx.receptor_radius)


@njit
def locate_cell(x, y, z, z_lo, side, n_rings, per_ring, phi_ref):
    """Cell index for the wall direction (x, y) at axial position z; -1 outside the band."""
    ring = int(math.floor((z - z_lo) / side))
    if ring < 0 or ring >= n_rings:
        return -1
    dtheta = 2.0 * math.pi / per_ring
    rel = math.atan2(y, x) - phi_ref + 0.5 * dtheta
    rel = rel - 2.0 * math.pi * math.floor(rel / (2.0 * math.pi))
    pos = int(rel / dtheta)
    if pos >= per_ring:
        pos = per_ring - 1
    return ring * per_ring + pos


def coverage_fraction(cell: ReceiverCell) -> float:
    """Probability that a wall contact lands on a receptor: receptor footprint over face area."""
    return receptor_coverage(cell.receptors, cell.receptor_radius, cell.side**2)


def attempt_assimilation(carrier: ParticleState, cell: ReceiverCell, time: float, rng,
                         log: list | None = None, carrier_id: int = -1) -> tuple[bool, ParticleState]:
    """One wall contact.  On success the carrier is assimilated and ``(time, id)`` is logged."""
    if carrier.status != FREE:
        raise ValueError("only free carriers can be assimilated")
    if rng.random() < coverage_fraction(cell):
        if log is not None:
            log.append((time, carrier_id))
        return True, carrier.with_(status=ASSIMILATED)
    return False, carrier


@dataclass(frozen=True)
class EventLog:
    """Assimilation events in time order (ties ordered by carrier id)."""

    time: np.ndarray
    cell: np.ndarray
    carrier: np.ndarray

    def __len__(self):
        return int(self.time.shape[0])

    def for_cell(self, index: int) -> np.ndarray:
        return self.time[self.cell == index]

    def per_cell(self, n_cells: int) -> list[np.ndarray]:
        order = np.argsort(self.cell, kind="stable")
        bounds = np.searchsorted(self.cell[order], np.arange(n_cells + 1))
        times = self.time[order]
        return [times[bounds[k]:bounds[k + 1]] for k in range(n_cells)]

    def until(self, horizon: float) -> "EventLog":
        keep = self.time <= horizon
        return EventLog(self.time[keep], self.cell[keep], self.carrier[keep])

    @classmethod
    def empty(cls) -> "EventLog":
        return cls(np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


@dataclass(frozen=True)
class ReceptionMap:
    tiling: WallTiling
    counts: np.ndarray
    horizon: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def argmax_cell(self) -> ReceiverCell:
        return self.tiling.cells[int(np.argmax(self.counts))]

    def grid(self) -> np.ndarray:
        """Counts as (rings, cells per ring)."""
        return self.counts.reshape(self.tiling.n_rings, self.tiling.cells_per_ring)


def reception_map(tiling: WallTiling, events: EventLog, horizon: float) -> ReceptionMap:
    sel = events.cell[events.time <= horizon]
    counts = np.bincount(sel, minlength=len(tiling)).astype(np.int64)
    return ReceptionMap(tiling, counts, horizon)


def write_map_csv(rmap: ReceptionMap, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ring_index", "ring_position", "delta_phi_rad", "delta_L_um", "count"])
        for cell, n in zip(rmap.tiling.cells, rmap.counts):
            w.writerow([cell.ring_index, cell.ring_position, f"{cell.delta_phi:.6f}",
                        f"{cell.delta_l:.3f}", int(n)])
    return path


def write_events_csv(events: EventLog, tiling: WallTiling, path) -> Path:
    path = Path(path)
    per_ring = tiling.cells_per_ring
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_us", "cell_ring", "cell_pos", "carrier_id"])
        for t, c, cid in zip(events.time, events.cell, events.carrier):
            w.writerow([f"{t:.3f}", int(c) // per_ring, int(c) % per_ring, int(cid)])
    return path


def read_events_csv(path, tiling: WallTiling) -> EventLog:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    if not rows:
        return EventLog.empty()
    data = np.array(rows, dtype=float)
    cell = data[:, 1].astype(np.int64) * tiling.cells_per_ring + data[:, 2].astype(np.int64)
    return EventLog(data[:, 0], cell, data[:, 3].astype(np.int64))
