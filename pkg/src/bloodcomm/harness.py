"""Batch experiments: impulse maps, count traces, (P, Th) replay sweeps and frame runs."""

from __future__ import annotations

import logging
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from bloodcomm import __version__
from bloodcomm.config import (
    ConfigError,
    SimulationConfig,
    _int,
    _line,
    _num,
    _section,
    _str,
    apply_section,
    config_from_document,
    config_to_document,
    parse_document,
)
from bloodcomm.geometry import CylindricalPosition
from bloodcomm.reception import (
    EventLog,
    ReceptionMap,
    WallTiling,
    reception_map,
    tiling_for,
    write_events_csv,
    write_map_csv,
)
from bloodcomm.txrx import (
    DecodeResult,
    EncoderConfig,
    ReceiverChainConfig,
    decode_frame,
    encode_ook,
    write_trace_csv,
)
from bloodcomm.world import RunStats, World

log = logging.getLogger(__name__)

KINDS = ("impulse", "trace", "sweep", "frame")
PLACEMENT_STEP = 5.425  # um between successive transmitter distances from the axis
PLACEMENT_COUNT = 6

# published reference values, reported beside ours in the manifest
REFERENCE = {"max_per_cell": 5, "p_opt": 33, "th_opt": 2, "near_wall_speed_ratio": 0.5}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "impulse"
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    chain: ReceiverChainConfig = field(default_factory=ReceiverChainConfig)
    sweep_delay_lines: tuple[int, ...] = (33, 528)
    sweep_thresholds: tuple[int, ...] = (2, 4)
    horizon: float | None = None
    output_dir: Path | None = None
    replicates: int = 1
    bits: tuple[int, ...] | None = None
    trace_cells: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "sweep" and (not self.sweep_delay_lines or not self.sweep_thresholds):
            raise ValueError("a sweep needs non-empty delay-line and threshold lists")
        if self.horizon is not None and not 0 < self.horizon <= self.sim.duration:
            raise ValueError(f"horizon {self.horizon} must lie in (0, duration={self.sim.duration}]")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.bits is not None and len(self.bits) != self.encoder.frame_length:
            raise ValueError(f"{len(self.bits)} bits given for frame length {self.encoder.frame_length}")

    @property
    def end_time(self) -> float:
        return self.sim.duration if self.horizon is None else self.horizon

    def with_(self, **changes) -> "ExperimentSpec":
        return replace(self, **changes)


# ----------------------------------------------------------------------------
# loading

def _int_list(v):
    if not isinstance(v, list) or not v:
        raise TypeError(f"expected a non-empty list of integers, got {v!r}")
    return tuple(_int(x) for x in v)


_ENCODER = {"burst_size": ("burst_size", _int), "frame_length": ("frame_length", _int),
            "pulse_period_us": ("pulse_period", _num)}
_CHAIN = {"window_us": ("window", _num), "delay_lines": ("delay_lines", _int), "threshold": ("threshold", _int)}
_EXPERIMENT = {"kind": ("kind", _str), "horizon_us": ("horizon", _num),
               "sweep_delay_lines": ("sweep_delay_lines", _int_list),
               "sweep_thresholds": ("sweep_thresholds", _int_list), "replicates": ("replicates", _int)}


@dataclass(frozen=True)
class _EncoderProxy:
    burst_size: int = 3000
    frame_length: int = 1
    pulse_period: float | None = None


@dataclass(frozen=True)
class _ExperimentProxy:
    kind: str = "impulse"
    horizon: float | None = None
    sweep_delay_lines: tuple[int, ...] = (33, 528)
    sweep_thresholds: tuple[int, ...] = (2, 4)
    replicates: int = 1


def experiment_from_document(doc: dict) -> ExperimentSpec:
    sim = config_from_document(doc)
    enc = apply_section(_EncoderProxy(), _section(doc, "encoder"), _ENCODER, "encoder")
    chain = apply_section(ReceiverChainConfig(), _section(doc, "receiver_chain"), _CHAIN, "receiver_chain")
    exp = apply_section(_ExperimentProxy(), _section(doc, "experiment"), _EXPERIMENT, "experiment")
    try:
        chain = replace(chain, frame_length=enc.frame_length)
        encoder = EncoderConfig(enc.burst_size, enc.frame_length,
                                chain.tau if enc.pulse_period is None else enc.pulse_period)
        return ExperimentSpec(kind=exp.kind, sim=sim, encoder=encoder, chain=chain,
                              sweep_delay_lines=exp.sweep_delay_lines, sweep_thresholds=exp.sweep_thresholds,
                              horizon=exp.horizon, replicates=exp.replicates)
    except ValueError as exc:
        raise ConfigError(str(exc), _line(doc, "experiment")) from None


def load_experiment(text: str) -> ExperimentSpec:
    """Experiment from YAML text (the simulation sections plus encoder/receiver_chain/experiment)."""
    return experiment_from_document(parse_document(text))


def load_experiment_file(path) -> ExperimentSpec:
    return load_experiment(Path(path).read_text())


def experiment_to_document(spec: ExperimentSpec) -> dict:
    doc = config_to_document(spec.sim)
    doc["encoder"] = {"burst_size": spec.encoder.burst_size, "frame_length": spec.encoder.frame_length,
                      "pulse_period_us": spec.encoder.pulse_period}
    doc["receiver_chain"] = {"window_us": spec.chain.window, "delay_lines": spec.chain.delay_lines,
                             "threshold": spec.chain.threshold}
    doc["experiment"] = {"kind": spec.kind, "horizon_us": spec.end_time,
                         "sweep_delay_lines": list(spec.sweep_delay_lines),
                         "sweep_thresholds": list(spec.sweep_thresholds), "replicates": spec.replicates}
    return doc


def placement_distances(count: int = PLACEMENT_COUNT, step: float = PLACEMENT_STEP) -> list[float]:
    """Transmitter distances from the axis, i * step for i = 0 .. count-1."""
    return [i * step for i in range(count)]


def expand_placements(spec: ExperimentSpec, count: int = PLACEMENT_COUNT,
                      step: float = PLACEMENT_STEP) -> list[ExperimentSpec]:
    tx = spec.sim.transmitter
    return [spec.with_(sim=spec.sim.with_(transmitter=CylindricalPosition(tx.phi, d, tx.z)))
            for d in placement_distances(count, step)]


# ----------------------------------------------------------------------------
# physics

@dataclass
class SimulationRun:
    events: EventLog
    tiling: WallTiling
    stats: RunStats
    conservation_ok: bool
    replicate: int
    released: int
    wall_seconds: float


def simulate(cfg: SimulationConfig, releases, replicate: int = 0, until: float | None = None,
             progress: bool = False) -> SimulationRun:
    """Run the particle world with the given (time, count) releases."""
    t0 = time.perf_counter()
    world = World(cfg, releases=releases, replicate=replicate)
    n = world.n_steps if until is None else min(world.n_steps, int(round(until / cfg.time_step)))
    stats = world.run(n, progress=progress)
    return SimulationRun(world.events, world.tiling, stats, world.conservation_ok(), replicate,
                         sum(c for _, c in releases), time.perf_counter() - t0)


def column_cells(tiling: WallTiling, position: int = 0) -> tuple[int, ...]:
    return tuple(tiling.column(position))


@dataclass
class ImpulseResult:
    spec: ExperimentSpec
    run: SimulationRun
    map: ReceptionMap
    traces: dict[int, list]

    @property
    def events(self) -> EventLog:
        return self.run.events


def run_impulse(spec: ExperimentSpec, replicate: int = 0, progress: bool = False) -> ImpulseResult:
    """One burst of B carriers at t=0; reception map at the horizon and count traces."""
    horizon = spec.end_time
    run = simulate(spec.sim, [(0.0, spec.encoder.burst_size)], replicate, until=horizon, progress=progress)
    rmap = reception_map(run.tiling, run.events, horizon)
    cells = spec.trace_cells if spec.trace_cells is not None else column_cells(run.tiling)
    traces = cell_traces(run.events, cells, spec.chain, horizon)
    return ImpulseResult(spec, run, rmap, traces)


def cell_traces(events: EventLog, cells, chain: ReceiverChainConfig, horizon: float) -> dict[int, list]:
    out = {}
    for c in cells:
        _, rows = decode_frame(events.for_cell(c), chain, horizon=horizon, trace=True)
        out[int(c)] = rows
    return out


# ----------------------------------------------------------------------------
# sweeps

def decoded_pulses(events: EventLog, n_cells: int, chain: ReceiverChainConfig, horizon: float) -> np.ndarray:
    """Decoded pulses (synchronizations plus emitted ones) per cell within the horizon."""
    out = np.zeros(n_cells, dtype=np.int64)
    kept = events.until(horizon)
    for c, times in enumerate(kept.per_cell(n_cells)):
        if times.size >= chain.threshold:
            out[c] = decode_frame(times, chain, horizon=horizon)[0].pulses
    return out


@dataclass
class SweepResult:
    pulses: dict[tuple[int, int], np.ndarray]
    tiling: WallTiling
    horizon: float

    def decoding_cells(self, p: int, th: int) -> np.ndarray:
        """Cells that synchronized at least once."""
        return np.flatnonzero(self.pulses[(p, th)] >= 1)

    def exact_cells(self, p: int, th: int) -> np.ndarray:
        """Cells that decoded exactly the one transmitted pulse."""
        return np.flatnonzero(self.pulses[(p, th)] == 1)

    def optimum(self) -> tuple[int, int]:
        """(P, Th) maximizing the number of cells decoding exactly one pulse; ties go to the first listed."""
        return max(self.pulses, key=lambda k: self.exact_cells(*k).size)

    def summary_rows(self):
        for (p, th), arr in self.pulses.items():
            yield p, th, int(np.count_nonzero(arr >= 1)), int(np.count_nonzero(arr == 1)), \
                int(np.count_nonzero(arr >= 2)), int(arr.max()) if arr.size else 0


def run_sweep(spec: ExperimentSpec, events: EventLog | None = None, tiling: WallTiling | None = None,
              replicate: int = 0, progress: bool = False) -> tuple[SweepResult, ImpulseResult | None]:
    """Replay one impulse event log through every (P, Th) receiver chain."""
    impulse = None
    if events is None:
        impulse = run_impulse(spec, replicate, progress)
        events, tiling = impulse.events, impulse.run.tiling
    tiling = tiling if tiling is not None else tiling_for(spec.sim)
    horizon = spec.end_time
    pulses = {}
    for p in spec.sweep_delay_lines:
        for th in spec.sweep_thresholds:
            chain = ReceiverChainConfig(spec.chain.window, p, th, 1)
            pulses[(p, th)] = decoded_pulses(events, len(tiling), chain, horizon)
    return SweepResult(pulses, tiling, horizon), impulse


# ----------------------------------------------------------------------------
# frames

@dataclass(frozen=True)
class CellFrame:
    cell: int
    synchronized: bool
    bits: tuple[int, ...] | None
    hamming: int | None


@dataclass
class FrameResult:
    bits: tuple[int, ...]
    run: SimulationRun
    cells: list[CellFrame]

    def exact(self) -> list[int]:
        return [c.cell for c in self.cells if c.hamming == 0]


def frame_report(events: EventLog, n_cells: int, bits, chain: ReceiverChainConfig, horizon: float) -> list[CellFrame]:
    out = []
    per_cell = events.until(horizon).per_cell(n_cells)
    for c, times in enumerate(per_cell):
        if times.size < chain.threshold:
            out.append(CellFrame(c, False, None, None))
            continue
        res: DecodeResult = decode_frame(times, chain, horizon=horizon)[0]
        if not res.frames:
            out.append(CellFrame(c, res.synchronized, None, None))
            continue
        got = res.frames[0].bits
        out.append(CellFrame(c, True, got, sum(a != b for a, b in zip(got, bits))))
    return out


def run_frame(spec: ExperimentSpec, bits=None, replicate: int = 0, progress: bool = False) -> FrameResult:
    bits = tuple(spec.bits if bits is None else bits)
    if len(bits) != spec.encoder.frame_length:
        spec = spec.with_(encoder=replace(spec.encoder, frame_length=len(bits)), bits=None)
    train = encode_ook(bits, spec.encoder)
    chain = replace(spec.chain, frame_length=len(bits))
    horizon = spec.end_time
    run = simulate(spec.sim, train.releases, replicate, until=horizon, progress=progress)
    return FrameResult(bits, run, frame_report(run.events, len(run.tiling), bits, chain, horizon))


# ----------------------------------------------------------------------------
# measured values reported beside the published ones

def near_wall_speed(events: EventLog, tiling: WallTiling, min_events: int = 2) -> float | None:
    """Axial speed (um/us) fitted to median arrival time vs distance along the aligned column, ahead only."""
    xs, ts = [], []
    for c in tiling.column(0):
        cell = tiling.cells[c]
        times = events.for_cell(c)
        if cell.delta_l > 0 and times.size >= min_events:
            xs.append(cell.delta_l)
            ts.append(float(np.median(times)))
    if len(xs) < 3:
        return None
    slope = np.polyfit(np.array(ts), np.array(xs), 1)[0]
    return float(slope)


def measured_values(impulse: ImpulseResult | None = None, sweep: SweepResult | None = None) -> dict:
    out = {}
    if impulse is not None:
        out["max_per_cell"] = int(impulse.map.counts.max()) if impulse.map.counts.size else 0
        out["total_assimilated"] = impulse.map.total
        speed = near_wall_speed(impulse.events, impulse.run.tiling)
        if speed is not None:
            out["near_wall_speed_ratio"] = speed / impulse.spec.sim.fluid.mean_velocity
    if sweep is not None:
        p, th = sweep.optimum()
        out["p_opt"] = int(p)
        out["th_opt"] = int(th)
    return out


# ----------------------------------------------------------------------------
# outputs

def _write(path: Path, writer, *args) -> Path:
    try:
        return writer(*args, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_sweep_csv(sweep: SweepResult, path) -> Path:
    path = Path(path)
    tiling = sweep.tiling
    with path.open("w") as fh:
        fh.write("delay_lines,threshold,ring_index,ring_position,delta_phi_rad,delta_L_um,decoded_pulses\n")
        for (p, th), arr in sweep.pulses.items():
            for cell, n in zip(tiling.cells, arr):
                fh.write(f"{p},{th},{cell.ring_index},{cell.ring_position},{cell.delta_phi:.6f},"
                         f"{cell.delta_l:.3f},{int(n)}\n")
    return path


def write_frame_csv(frame: FrameResult, tiling: WallTiling, path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("ring_index,ring_position,synchronized,decoded_bits,hamming\n")
        for cf in frame.cells:
            cell = tiling.cells[cf.cell]
            bits = "" if cf.bits is None else "".join(map(str, cf.bits))
            ham = "" if cf.hamming is None else cf.hamming
            fh.write(f"{cell.ring_index},{cell.ring_position},{int(cf.synchronized)},{bits},{ham}\n")
    return path


def emit_outputs(directory, spec: ExperimentSpec | None = None, impulse: ImpulseResult | None = None,
                 sweep: SweepResult | None = None, frame: FrameResult | None = None,
                 wall_seconds: float | None = None, prefix: str = "") -> list[Path]:
    """Write CSVs for whatever results are given, plus a plain-text manifest."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    files = []
    if impulse is not None:
        tiling = impulse.run.tiling
        files.append(_write(out / f"{prefix}map.csv", write_map_csv, impulse.map))
        files.append(_write(out / f"{prefix}events.csv", lambda ev, p: write_events_csv(ev, tiling, p),
                            impulse.events))
        per_ring = tiling.cells_per_ring
        for c, rows in impulse.traces.items():
            name = f"{prefix}trace_ring{c // per_ring:03d}_pos{c % per_ring:02d}.csv"
            files.append(_write(out / name, write_trace_csv, rows))
    if sweep is not None:
        files.append(_write(out / f"{prefix}sweep.csv", write_sweep_csv, sweep))
    if frame is not None:
        files.append(_write(out / f"{prefix}frame.csv", lambda f, p: write_frame_csv(f, frame.run.tiling, p),
                            frame))
        files.append(_write(out / f"{prefix}frame_events.csv",
                            lambda ev, p: write_events_csv(ev, frame.run.tiling, p), frame.run.events))
    manifest = out / f"{prefix}manifest.txt"
    files.append(_write(manifest, write_manifest, spec, impulse, sweep, frame, wall_seconds))
    return files


def write_manifest(spec, impulse, sweep, frame, wall_seconds, path) -> Path:
    path = Path(path)
    lines = [f"bloodcomm {__version__}", f"python {platform.python_version()}",
             f"written {time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    if wall_seconds is not None:
        lines.append(f"wall_clock_s {wall_seconds:.3f}")
    if spec is not None:
        lines.append(f"experiment {spec.kind}")
        lines.append(f"seed {spec.sim.seed}")
        lines.append(f"replicates {spec.replicates}")
    run = impulse.run if impulse is not None else (frame.run if frame is not None else None)
    if run is not None:
        st = run.stats
        lines += [f"steps {st.steps}", f"assimilated {len(run.events)}", f"conservation_ok {run.conservation_ok}",
                  f"non_converged_steps {st.non_converged_steps}",
                  f"max_residual_overlap_um {st.max_residual_overlap:.3g}",
                  f"initial_overlaps_left {st.initial_overlaps_left}"]
    if sweep is not None:
        lines.append("sweep delay_lines threshold decoding_cells exact_cells multi_pulse_cells max_pulses")
        lines += [" ".join(map(str, row)) for row in sweep.summary_rows()]
    if frame is not None:
        lines.append(f"bits {''.join(map(str, frame.bits))}")
        lines.append(f"synchronized_cells {sum(c.synchronized for c in frame.cells)}")
        lines.append(f"exact_cells {len(frame.exact())}")
    measured = measured_values(impulse, sweep)
    if measured:
        lines.append("measured vs published")
        for key, value in measured.items():
            ref = REFERENCE.get(key, "-")
            val = f"{value:.4g}" if isinstance(value, float) else value
            lines.append(f"  {key} {val} {ref}")
    if spec is not None:
        lines.append("config")
        lines.append(yaml.safe_dump(experiment_to_document(spec), sort_keys=False).rstrip())
    path.write_text("\n".join(lines) + "\n")
    return path


def run_experiment(spec: ExperimentSpec, progress: bool = False, events: EventLog | None = None) -> list[Path]:
    """Run ``spec`` (every replicate) and write its outputs; returns written files."""
    if spec.output_dir is None:
        raise ValueError("an output directory is required")
    written = []
    for k in range(spec.replicates):
        prefix = f"rep{k:02d}_" if spec.replicates > 1 else ""
        t0 = time.perf_counter()
        impulse = sweep = frame = None
        if spec.kind in ("impulse", "trace"):
            impulse = run_impulse(spec, k, progress)
        elif spec.kind == "sweep":
            sweep, impulse = run_sweep(spec, events=events, replicate=k, progress=progress)
        else:
            if spec.bits is None:
                raise ValueError("a frame experiment needs bits")
            frame = run_frame(spec, replicate=k, progress=progress)
        written += emit_outputs(spec.output_dir, spec, impulse, sweep, frame,
                                time.perf_counter() - t0, prefix)
        log.info("replicate %d done in %.1f s", k, time.perf_counter() - t0)
    return written

