"""Particle world and the per-step update.

One step, for every free particle:

1. carriers due for release are placed on the transmitter surface;
2. drift + Brownian proposal;
3. wall contact: carriers touching a receiver cell are assimilated with the
   cell's receptor coverage probability, everything else is mirrored back;
   particles past either end of the vessel exit;
4. overlap sweeps (at most ``max_sweeps``), each followed by wall containment;
5. outlet check and conservation ledger.

All random draws come from counter-based streams keyed by (seed, replicate)
and addressed by (particle id, step), and every reduction runs in a fixed
order, so results do not depend on the thread count.
"""

from __future__ import annotations

import logging
import math
import time as _time
from dataclasses import dataclass

import numpy as np

from bloodcomm import rng as crng
from bloodcomm._jit import njit, pjit, prange, set_threads
from bloodcomm.collision import (EPS, bin_particles, build_neighbour_list, find_overlaps, list_overlaps,
                                 max_overlap, reflect_radial, separate)
from bloodcomm.config import SimulationConfig
from bloodcomm.flow import ASSIMILATED, CAPTURED, EXITED, FREE, PENDING, propose_positions
from bloodcomm.physics import population_count, receptor_coverage, species_diffusivity
from bloodcomm.reception import EventLog, WallTiling, locate_cell, tiling_for

log = logging.getLogger(__name__)

RESIDUAL_FRACTION = 0.01
NEIGHBOUR_SKIN = 1.0  # um; neighbour lists are rebuilt once anything moves half of this

# ledger columns
LEDGER_COLUMNS = ("free", "assimilated", "exited", "captured", "pending")

# float parameter slots
F_R, F_L, F_VMEAN, F_DT, F_EPS, F_CS, F_MAXR, F_ZLO, F_SIDE, F_PHIREF, F_AREAFRAC, F_SKIN = range(12)
# int parameter slots
(I_NX, I_NY, I_NZ, I_RINGS, I_PERRING, I_SWEEPS, I_CPAIRS, I_RECIRC, I_FINITE, I_RECYCLE,
 I_TX, I_K0, I_K1) = range(13)
# counter slots
C_NEXT, C_EVENTS, C_TRANS, C_QHEAD, C_QTAIL = range(5)


@pjit
def wall_contacts(active, pos, radius, is_carrier, coverage, fp, ip, step, outcome):
    """Wall handling for proposals: -1 stays free, >=0 assimilated into that cell."""
    big_r = fp[F_R]
    k0 = ip[I_K0]
    k1 = ip[I_K1]
    for t in prange(active.shape[0]):
        i = active[t]
        outcome[t] = -1
        limit = big_r - radius[i]
        x = pos[i, 0]
        y = pos[i, 1]
        if x * x + y * y <= limit * limit:
            continue
        if is_carrier[i]:
            cell = locate_cell(x, y, pos[i, 2], fp[F_ZLO], fp[F_SIDE], ip[I_RINGS], ip[I_PERRING],
                               fp[F_PHIREF])
            if cell >= 0 and coverage[cell] > 0.0:
                u, _, _, _ = crng.uniforms4(i, step, crng.ASSIMILATE, 0, k0, k1)
                if u < coverage[cell]:
                    outcome[t] = cell
                    continue
        reflect_radial(pos, i, limit)


@njit
def worst_excess(pairs, pos, radius):
    """Largest overlap beyond the accepted residual (1% of the smaller radius of the pair)."""
    worst = -np.inf
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        dx = pos[j, 0] - pos[i, 0]
        dy = pos[j, 1] - pos[i, 1]
        dz = pos[j, 2] - pos[i, 2]
        ov = radius[i] + radius[j] - math.sqrt(dx * dx + dy * dy + dz * dz)
        excess = ov - RESIDUAL_FRACTION * min(radius[i], radius[j])
        if excess > worst:
            worst = excess
    return worst


@njit
def _log_transition(cnt, tr_step, tr_id, tr_status, step, i, status):
    k = cnt[C_TRANS]
    if k < tr_step.shape[0]:
        tr_step[k] = step
        tr_id[k] = i
        tr_status[k] = status
    cnt[C_TRANS] = k + 1


@njit
def _list_valid(idx, pos, ref, listed, half_skin):
    """True while every particle in ``idx`` is listed and within half a skin of its reference."""
    lim = half_skin * half_skin
    for t in range(idx.shape[0]):
        i = idx[t]
        if not listed[i]:
            return False
        dx = pos[i, 0] - ref[i, 0]
        dy = pos[i, 1] - ref[i, 1]
        dz = pos[i, 2] - ref[i, 2]
        if dx * dx + dy * dy + dz * dz > lim:
            return False
    return True


@njit
def _rebuild_list(active, pos, radius, is_carrier, carrier_pairs, ref, listed, in_grid, member_buf,
                  origin, cs, nx, ny, nz, max_r, skin):
    listed[:] = False
    nm = 0
    for t in range(active.shape[0]):
        i = active[t]
        listed[i] = True
        ref[i, 0] = pos[i, 0]
        ref[i, 1] = pos[i, 1]
        ref[i, 2] = pos[i, 2]
        if carrier_pairs or not is_carrier[i]:
            member_buf[nm] = i
            nm += 1
            in_grid[i] = True
    members = member_buf[:nm]
    start, items = bin_particles(pos, members, origin, cs, nx, ny, nz)
    nbr = build_neighbour_list(active, pos, radius, is_carrier, in_grid, start, items, origin, cs,
                               nx, ny, nz, max_r, skin, carrier_pairs)
    for t in range(nm):
        in_grid[members[t]] = False
    return nbr


@njit
def advance(s_begin, s_end, fp, ip, pos, radius, sigma, is_carrier, status, capture_p,
            release_step, pending_order, cnt, coverage, free_receptors, q_step, q_cell,
            ev_step, ev_cell, ev_id, tr_step, tr_id, tr_status,
            ledger, diag_pairs, diag_sweeps, diag_resid):
    n = pos.shape[0]
    big_r = fp[F_R]
    length = fp[F_L]
    v_mean = fp[F_VMEAN]
    dt = fp[F_DT]
    eps = fp[F_EPS]
    cs = fp[F_CS]
    max_r = fp[F_MAXR]
    origin = np.array([-big_r, -big_r, 0.0])
    nx, ny, nz = ip[I_NX], ip[I_NY], ip[I_NZ]
    carrier_pairs = ip[I_CPAIRS] != 0
    recirc = ip[I_RECIRC] != 0
    finite = ip[I_FINITE] != 0
    tx = ip[I_TX]
    k0 = ip[I_K0]
    k1 = ip[I_K1]
    in_grid = np.zeros(n, dtype=np.bool_)
    dirty = np.zeros(n, dtype=np.bool_)
    moved = np.zeros(n, dtype=np.bool_)
    active_buf = np.empty(n, dtype=np.int64)
    member_buf = np.empty(n, dtype=np.int64)
    outcome_buf = np.empty(n, dtype=np.int64)
    query_buf = np.empty(n, dtype=np.int64)
    skin = fp[F_SKIN]
    half_skin = 0.5 * skin
    ref = np.empty((n, 3))
    listed = np.zeros(n, dtype=np.bool_)
    nbr = np.empty((0, 2), dtype=np.int64)

    for s in range(s_begin, s_end):
        # releases
        while cnt[C_NEXT] < pending_order.shape[0] and release_step[pending_order[cnt[C_NEXT]]] <= s:
            c = pending_order[cnt[C_NEXT]]
            cnt[C_NEXT] += 1
            if status[tx] != FREE:
                status[c] = EXITED
                _log_transition(cnt, tr_step, tr_id, tr_status, s, c, EXITED)
                continue
            ux, uy, uz = crng.unit_vector(c, s, crng.RELEASE, 0, k0, k1)
            d = radius[tx] + radius[c] + eps
            pos[c, 0] = pos[tx, 0] + d * ux
            pos[c, 1] = pos[tx, 1] + d * uy
            pos[c, 2] = pos[tx, 2] + d * uz
            status[c] = FREE
            _log_transition(cnt, tr_step, tr_id, tr_status, s, c, FREE)

        na = 0
        for i in range(n):
            if status[i] == FREE:
                active_buf[na] = i
                na += 1
        active = active_buf[:na]

        propose_positions(pos, sigma, active, big_r, v_mean, dt, s, k0, k1)

        # wall contact and reception
        outcome = outcome_buf[:na]
        if finite:
            while cnt[C_QHEAD] < cnt[C_QTAIL] and q_step[cnt[C_QHEAD]] <= s:
                free_receptors[q_cell[cnt[C_QHEAD]]] += 1
                cnt[C_QHEAD] += 1
            for t in range(na):
                i = active[t]
                outcome[t] = -1
                limit = big_r - radius[i]
                if pos[i, 0] ** 2 + pos[i, 1] ** 2 <= limit * limit:
                    continue
                if is_carrier[i]:
                    cell = locate_cell(pos[i, 0], pos[i, 1], pos[i, 2], fp[F_ZLO], fp[F_SIDE],
                                       ip[I_RINGS], ip[I_PERRING], fp[F_PHIREF])
                    if cell >= 0:
                        p = min(1.0, free_receptors[cell] * fp[F_AREAFRAC])
                        u, _, _, _ = crng.uniforms4(i, s, crng.ASSIMILATE, 0, k0, k1)
                        if u < p:
                            outcome[t] = cell
                            if ip[I_RECYCLE] > 0:
                                free_receptors[cell] -= 1
                                q_step[cnt[C_QTAIL]] = s + ip[I_RECYCLE]
                                q_cell[cnt[C_QTAIL]] = cell
                                cnt[C_QTAIL] += 1
                            continue
                reflect_radial(pos, i, limit)
        else:
            wall_contacts(active, pos, radius, is_carrier, coverage, fp, ip, s, outcome)

        for t in range(na):
            i = active[t]
            if outcome[t] >= 0:
                status[i] = ASSIMILATED
                k = cnt[C_EVENTS]
                ev_step[k] = s
                ev_cell[k] = outcome[t]
                ev_id[k] = i
                cnt[C_EVENTS] = k + 1
                _log_transition(cnt, tr_step, tr_id, tr_status, s, i, ASSIMILATED)
            elif (pos[i, 2] < 0.0 or pos[i, 2] > length) and not (recirc and not is_carrier[i]):
                status[i] = EXITED
                _log_transition(cnt, tr_step, tr_id, tr_status, s, i, EXITED)

        # overlap sweeps
        nf = 0
        for t in range(na):
            i = active[t]
            if status[i] == FREE:
                active[nf] = i
                nf += 1
        active = active[:nf]
        if not _list_valid(active, pos, ref, listed, half_skin):
            nbr = _rebuild_list(active, pos, radius, is_carrier, carrier_pairs, ref, listed, in_grid,
                                member_buf, origin, cs, nx, ny, nz, max_r, skin)
        queries = active
        converged = False
        sweeps = 0
        first_pairs = 0
        pairs = np.empty((0, 2), dtype=np.int64)
        for sweep in range(ip[I_SWEEPS]):
            if sweep > 0 and not _list_valid(queries, pos, ref, listed, half_skin):
                nbr = _rebuild_list(active, pos, radius, is_carrier, carrier_pairs, ref, listed,
                                    in_grid, member_buf, origin, cs, nx, ny, nz, max_r, skin)
            pairs = list_overlaps(nbr, pos, radius, status, FREE, dirty, sweep > 0)
            for t in range(queries.shape[0]):
                dirty[queries[t]] = False
            if sweep == 0:
                first_pairs = pairs.shape[0]
            if pairs.shape[0] == 0 or (sweep > 0 and worst_excess(pairs, pos, radius) <= 0.0):
                converged = True
                break
            sweeps += 1
            for k in range(pairs.shape[0]):
                i = pairs[k, 0]
                j = pairs[k, 1]
                if status[i] != FREE or status[j] != FREE:
                    continue
                if capture_p[i] > 0.0 or capture_p[j] > 0.0:
                    c = i if is_carrier[i] else j
                    host = j if c == i else i
                    if is_carrier[c] and not is_carrier[host] and capture_p[host] > 0.0:
                        u, _, _, _ = crng.uniforms4(c, s, crng.CAPTURE + 16 * sweep, host, k0, k1)
                        if u < capture_p[host]:
                            status[c] = CAPTURED
                            _log_transition(cnt, tr_step, tr_id, tr_status, s, c, CAPTURED)
                            continue
                if separate(pos, radius, i, j, eps, -1) > 0.0:
                    moved[i] = True
                    moved[j] = True
            nq = 0
            for t in range(nf):
                i = active[t]
                if moved[i]:
                    moved[i] = False
                    if status[i] == FREE:
                        reflect_radial(pos, i, big_r - radius[i])
                        dirty[i] = True
                        query_buf[nq] = i
                        nq += 1
            queries = query_buf[:nq]
            if nq == 0:
                converged = True
                break
        resid = 0.0
        if not converged:
            if not _list_valid(queries, pos, ref, listed, half_skin):
                nbr = _rebuild_list(active, pos, radius, is_carrier, carrier_pairs, ref, listed,
                                    in_grid, member_buf, origin, cs, nx, ny, nz, max_r, skin)
            pairs = list_overlaps(nbr, pos, radius, status, FREE, dirty, True)
            if worst_excess(pairs, pos, radius) > 0.0:
                resid = max_overlap(pairs, pos, radius)
            for t in range(queries.shape[0]):
                dirty[queries[t]] = False

        # outlet after collision pushes
        for t in range(nf):
            i = active[t]
            if status[i] != FREE:
                continue
            z = pos[i, 2]
            if z < 0.0 or z > length:
                if recirc and not is_carrier[i]:
                    pos[i, 2] = z - length if z > length else z + length
                else:
                    status[i] = EXITED
                    _log_transition(cnt, tr_step, tr_id, tr_status, s, i, EXITED)

        row = s - s_begin
        if row < ledger.shape[0]:
            nfree = 0
            nass = 0
            nexit = 0
            ncap = 0
            npend = 0
            for i in range(n):
                st = status[i]
                if st == FREE:
                    nfree += 1
                elif st == ASSIMILATED:
                    nass += 1
                elif st == EXITED:
                    nexit += 1
                elif st == CAPTURED:
                    ncap += 1
                else:
                    npend += 1
            ledger[row, 0] = nfree
            ledger[row, 1] = nass
            ledger[row, 2] = nexit
            ledger[row, 3] = ncap
            ledger[row, 4] = npend
            diag_pairs[row] = first_pairs
            diag_sweeps[row] = sweeps
            diag_resid[row] = resid


@njit
def relax_overlaps(pos, radius, members, pin, big_r, length, cs, nx, ny, nz, max_sweeps):
    """Push an initial placement apart; returns the number of overlaps left."""
    n = pos.shape[0]
    origin = np.array([-big_r, -big_r, 0.0])
    in_grid = np.zeros(n, dtype=np.bool_)
    dirty = np.zeros(n, dtype=np.bool_)
    carrier = np.zeros(n, dtype=np.bool_)
    for t in range(members.shape[0]):
        in_grid[members[t]] = True
        dirty[members[t]] = True
    max_r = 0.0
    for t in range(members.shape[0]):
        max_r = max(max_r, radius[members[t]])
    remaining = 0
    for _ in range(max_sweeps + 1):
        start, items = bin_particles(pos, members, origin, cs, nx, ny, nz)
        pairs = find_overlaps(members, pos, radius, carrier, in_grid, dirty, start, items,
                              origin, cs, nx, ny, nz, max_r, True)
        remaining = pairs.shape[0]
        if remaining == 0:
            break
        for k in range(pairs.shape[0]):
            separate(pos, radius, pairs[k, 0], pairs[k, 1], EPS, pin)
        for t in range(members.shape[0]):
            i = members[t]
            if i == pin:
                continue
            reflect_radial(pos, i, big_r - radius[i])
            lo = radius[i]
            hi = length - radius[i]
            if pos[i, 2] < lo:
                pos[i, 2] = lo
            elif pos[i, 2] > hi:
                pos[i, 2] = hi
    return remaining


@dataclass
class RunStats:
    steps: int
    wall_seconds: float
    non_converged_steps: int
    max_residual_overlap: float
    initial_overlaps_left: int


class World:
    """All particles of one run, stored as flat arrays indexed by particle id.

    Particle 0 is the transmitter, then the background cell populations in
    config order, then carriers grouped by release.
    """

    def __init__(self, cfg: SimulationConfig, releases=((0.0, 0),), replicate: int = 0,
                 record: bool = True):
        self.cfg = cfg
        self.replicate = replicate
        self.key = crng.stream_key(cfg.seed, replicate)
        self.tiling: WallTiling = tiling_for(cfg)
        self.n_steps = cfg.n_steps
        g = cfg.geometry
        dt = cfg.time_step
        placement = np.random.default_rng(np.random.SeedSequence([cfg.seed, replicate, 0x5EED]))

        species_names = []
        radius, diff, is_carrier, capture = [], [], [], []

        def add(spec, count, carrier=False):
            d = species_diffusivity(spec, cfg.fluid)
            cap = 0.0
            if cfg.mobile_capture and not carrier and spec.receptors > 0:
                cap = receptor_coverage(spec.receptors, spec.receptor_radius, 4 * math.pi * spec.radius**2)
            for _ in range(count):
                species_names.append(spec.name)
                radius.append(spec.radius)
                diff.append(d)
                is_carrier.append(carrier)
                capture.append(cap)

        tx_spec = cfg.species_by_name(cfg.transmitter_species)
        add(tx_spec, 1)
        capture[0] = 0.0
        species_names[0] = "transmitter"
        self.n_background = 0
        for spec in cfg.species:
            if spec.name == cfg.carrier_species:
                continue
            count = population_count(spec.concentration, g, cfg.population_sampling, placement)
            add(spec, count)
            self.n_background += count
        carrier_spec = cfg.species_by_name(cfg.carrier_species)
        rel_steps = []
        self.release_schedule = []
        for t_rel, count in releases:
            step = int(round(t_rel / dt))
            if count < 0:
                raise ValueError("release counts must be >= 0")
            self.release_schedule.append((step, int(count)))
            add(carrier_spec, int(count), carrier=True)
            rel_steps.extend([step] * int(count))

        n = len(radius)
        self.n = n
        self.species = np.array(species_names)
        self.radius = np.array(radius, dtype=np.float64)
        self.diffusivity = np.array(diff, dtype=np.float64)
        self.sigma = np.sqrt(2.0 * self.diffusivity * dt)
        self.is_carrier = np.array(is_carrier, dtype=np.bool_)
        self.capture_p = np.array(capture, dtype=np.float64)
        n_fixed = n - len(rel_steps)
        self.release_step = np.full(n, -1, dtype=np.int64)
        self.release_step[n_fixed:] = rel_steps
        self.pending_order = (n_fixed + np.argsort(self.release_step[n_fixed:], kind="stable")).astype(np.int64)
        self.status = np.full(n, FREE, dtype=np.int8)
        self.status[n_fixed:] = PENDING
        self.n_initial = n_fixed

        # placement
        self.pos = np.zeros((n, 3))
        tx = cfg.transmitter
        self.pos[0] = [tx.r * math.cos(tx.phi), tx.r * math.sin(tx.phi), tx.z]
        bg = slice(1, n_fixed)
        lim = g.radius - self.radius[bg]
        rr = lim * np.sqrt(placement.random(n_fixed - 1))
        th = placement.random(n_fixed - 1) * 2 * math.pi
        self.pos[bg, 0] = rr * np.cos(th)
        self.pos[bg, 1] = rr * np.sin(th)
        self.pos[bg, 2] = placement.random(n_fixed - 1) * g.length

        # grid over cells (carriers are queried against it, not stored, unless paired)
        grid_r = self.radius[:n_fixed] if not cfg.carrier_collisions else self.radius
        self.max_grid_radius = float(grid_r.max())
        self.cell_size = 2.0 * self.max_grid_radius
        nxy = int(math.ceil(2 * g.radius / self.cell_size))
        nzc = int(math.ceil(g.length / self.cell_size))
        self.grid_dims = (nxy, nxy, nzc)
        members = np.arange(n_fixed, dtype=np.int64)
        left = relax_overlaps(self.pos, self.radius, members, 0, g.radius, g.length, self.cell_size,
                              nxy, nxy, nzc, 500)
        self.initial_overlaps_left = int(left)
        if left:
            log.warning("initial placement: %d overlaps left after relaxation "
                        "(volume fraction too high for rigid spheres?)", left)

        # receivers
        rx = cfg.receivers
        area_frac = rx.receptor_radius**2 * math.pi / rx.side**2
        self.coverage = np.array([receptor_coverage(c.receptors, c.receptor_radius, c.side**2)
                                  for c in self.tiling.cells])
        self.free_receptors = np.full(len(self.tiling), rx.receptors, dtype=np.int64)
        recycle_steps = int(math.ceil(rx.recycle_time / dt)) if rx.finite_receptors else 0
        n_carriers = len(rel_steps)
        self.q_step = np.zeros(max(n_carriers, 1), dtype=np.int64)
        self.q_cell = np.zeros(max(n_carriers, 1), dtype=np.int64)

        self.fp = np.zeros(12)
        self.fp[[F_R, F_L, F_VMEAN, F_DT, F_EPS, F_CS, F_MAXR, F_ZLO, F_SIDE, F_PHIREF, F_AREAFRAC, F_SKIN]] = [
            g.radius, g.length, cfg.fluid.mean_velocity, dt, EPS, self.cell_size, self.max_grid_radius,
            self.tiling.z_lo, self.tiling.side, self.tiling.phi_ref, area_frac, NEIGHBOUR_SKIN]
        self.ip = np.zeros(13, dtype=np.int64)
        self.ip[[I_NX, I_NY, I_NZ, I_RINGS, I_PERRING, I_SWEEPS, I_CPAIRS, I_RECIRC, I_FINITE,
                 I_RECYCLE, I_TX, I_K0, I_K1]] = [
            nxy, nxy, nzc, self.tiling.n_rings, self.tiling.cells_per_ring, cfg.max_sweeps,
            int(cfg.carrier_collisions), int(g.outlet == "recirculate_cells"), int(rx.finite_receptors),
            recycle_steps, 0, self.key[0], self.key[1]]
        self.cnt = np.zeros(5, dtype=np.int64)

        self.ev_step = np.zeros(max(n_carriers, 1), dtype=np.int64)
        self.ev_cell = np.zeros(max(n_carriers, 1), dtype=np.int64)
        self.ev_id = np.zeros(max(n_carriers, 1), dtype=np.int64)
        cap = 2 * n + 1
        self.tr_step = np.zeros(cap, dtype=np.int64)
        self.tr_id = np.zeros(cap, dtype=np.int64)
        self.tr_status = np.zeros(cap, dtype=np.int8)
        rows = self.n_steps if record else 0
        self.ledger = np.zeros((rows, 5), dtype=np.int32)
        self.diag_pairs = np.zeros(rows, dtype=np.int32)
        self.diag_sweeps = np.zeros(rows, dtype=np.int8)
        self.diag_resid = np.zeros(rows, dtype=np.float64)
        self._scratch_ledger = np.zeros((0, 5), dtype=np.int32)
        self.step_index = 0
        self.wall_seconds = 0.0

    # ------------------------------------------------------------------
    @property
    def time(self) -> float:
        return self.step_index * self.cfg.time_step

    def released_by(self, step: int) -> int:
        """Carriers released at or before ``step``."""
        return sum(c for s, c in self.release_schedule if s <= step)

    def advance(self, n_steps: int) -> None:
        end = min(self.step_index + n_steps, self.n_steps)
        if end <= self.step_index:
            return
        lo = self.step_index
        if self.ledger.shape[0]:
            args = (self.ledger[lo:end], self.diag_pairs[lo:end], self.diag_sweeps[lo:end],
                    self.diag_resid[lo:end])
        else:
            args = (self._scratch_ledger, self.diag_pairs, self.diag_sweeps, self.diag_resid)
        t0 = _time.perf_counter()
        advance(lo, end, self.fp, self.ip, self.pos, self.radius, self.sigma, self.is_carrier,
                self.status, self.capture_p, self.release_step, self.pending_order, self.cnt,
                self.coverage, self.free_receptors, self.q_step, self.q_cell,
                self.ev_step, self.ev_cell, self.ev_id, self.tr_step, self.tr_id, self.tr_status, *args)
        self.wall_seconds += _time.perf_counter() - t0
        self.step_index = end

    def step(self) -> None:
        self.advance(1)

    def run(self, n_steps: int | None = None, chunk: int = 20000, progress: bool = False) -> RunStats:
        set_threads(self.cfg.threads)
        target = self.n_steps if n_steps is None else self.step_index + n_steps
        while self.step_index < target:
            self.advance(min(chunk, target - self.step_index))
            if progress:
                log.info("step %d/%d (%.1f s sim), free=%d events=%d, %.1f s wall",
                         self.step_index, target, self.time / 1e6, self.count(FREE), self.n_events,
                         self.wall_seconds)
        stats = self.stats()
        if stats.non_converged_steps:
            log.warning("%d steps ended with overlaps above 1%% of the smaller radius after %d sweeps; "
                        "worst %.3g um", stats.non_converged_steps, self.cfg.max_sweeps,
                        stats.max_residual_overlap)
        return stats

    # ------------------------------------------------------------------
    def count(self, status: int) -> int:
        return int(np.count_nonzero(self.status == status))

    @property
    def n_events(self) -> int:
        return int(self.cnt[C_EVENTS])

    @property
    def events(self) -> EventLog:
        k = self.n_events
        return EventLog((self.ev_step[:k] + 1) * self.cfg.time_step, self.ev_cell[:k].copy(),
                        self.ev_id[:k].copy())

    def transitions(self) -> np.ndarray:
        """(step, particle id, new status) rows for every status change."""
        k = min(int(self.cnt[C_TRANS]), self.tr_step.shape[0])
        return np.stack([self.tr_step[:k], self.tr_id[:k], self.tr_status[:k].astype(np.int64)], axis=1)

    def conservation_ok(self) -> bool:
        """free + assimilated + exited + captured == placed + released, at every recorded step."""
        rows = min(self.step_index, self.ledger.shape[0])
        if rows == 0:
            return True
        totals = self.ledger[:rows, :4].sum(axis=1)
        expected = np.array([self.n_initial + self.released_by(s) for s in range(rows)])
        return bool(np.array_equal(totals, expected))

    def stats(self) -> RunStats:
        rows = min(self.step_index, self.diag_resid.shape[0])
        resid = self.diag_resid[:rows]
        bad = int(np.count_nonzero(resid > 0))
        return RunStats(self.step_index, self.wall_seconds, bad, float(resid.max()) if rows else 0.0,
                        self.initial_overlaps_left)

    def free_overlaps(self) -> np.ndarray:
        """Overlapping free pairs right now (brute-force grid check over every free particle)."""
        from bloodcomm.collision import build_grid, overlap_pairs

        free = np.flatnonzero(self.status == FREE)
        if free.size == 0:
            return np.zeros((0, 2), dtype=np.int64)
        grid = build_grid(self.pos, self.radius, self.cell_size, members=free)
        pairs = overlap_pairs(grid, self.pos, self.radius, self.is_carrier,
                              carrier_pairs=self.cfg.carrier_collisions)
        return pairs
