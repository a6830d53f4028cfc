"""On-off keyed pulse trains and the per-cell receiver chain.

The chain is a windowed counter feeding a moving sum over the last P+1
windows, which drives a synchronize-then-threshold state machine:

* idle: every window, synchronize once ``f >= Th``;
* receiving: every P+1 windows, emit ``1`` if ``f >= Th`` else ``0``;
* guard: after N bits, wait P+1 windows, then go idle (that window is
  already checked for a new synchronization).
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDLE, RECEIVING, GUARD = "idle", "receiving", "guard"


class OrderingError(ValueError):
    """An event arrived before the start of the open counter window."""


@dataclass(frozen=True)
class EncoderConfig:
    burst_size: int = 3000
    frame_length: int = 1
    pulse_period: float = 25500.0
    # reserved for a spreading-code extension (K pulses carrying M bits)
    spreading: tuple[int, int] | None = None

    def __post_init__(self):
        if self.burst_size < 0:
            raise ValueError("burst size must be >= 0")
        if self.frame_length < 1:
            raise ValueError("frame length must be >= 1")
        if not self.pulse_period > 0:
            raise ValueError("pulse period must be > 0")
        if self.spreading is not None:
            raise NotImplementedError("spreading codes are not implemented")


@dataclass(frozen=True)
class PulseTrain:
    releases: tuple[tuple[float, int], ...]
    bits: tuple[int, ...]

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.releases]

    @property
    def total_carriers(self) -> int:
        return sum(c for _, c in self.releases)


def encode_ook(bits, cfg: EncoderConfig) -> PulseTrain:
    """Sync burst at 0, then a burst at ``k * tau`` for every ``b_k = 1``."""
    bits = tuple(int(b) for b in bits)
    if len(bits) != cfg.frame_length:
        raise ValueError(f"expected {cfg.frame_length} bits, got {len(bits)}")
    if any(b not in (0, 1) for b in bits):
        raise ValueError("bits must be 0 or 1")
    releases = [(0.0, cfg.burst_size)]
    releases += [(k * cfg.pulse_period, cfg.burst_size) for k, b in enumerate(bits, start=1) if b]
    return PulseTrain(tuple(releases), bits)


def parse_bits(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text or set(text) - {"0", "1"}:
        raise ValueError(f"bit string must be non-empty and contain only 0/1, got {text!r}")
    return tuple(int(c) for c in text)


@dataclass(frozen=True)
class ReceiverChainConfig:
    window: float = 750.0
    delay_lines: int = 33
    threshold: int = 2
    frame_length: int = 1

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be > 0")
        if self.delay_lines < 0:
            raise ValueError("delay line count must be >= 0")
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.frame_length < 1:
            raise ValueError("frame length must be >= 1")

    @property
    def span(self) -> int:
        """Windows covered by the moving sum, and between bit samples."""
        return self.delay_lines + 1

    @property
    def tau(self) -> float:
        return self.span * self.window


@dataclass(frozen=True)
class Frame:
    sync_window: int
    bits: tuple[int, ...]

    @property
    def pulses(self) -> int:
        return 1 + sum(self.bits)


@dataclass(frozen=True)
class TraceRow:
    window_index: int
    t_n: float
    count: int
    f: int
    mode: str
    bit: int | None


@dataclass(frozen=True)
class DecodeResult:
    frames: tuple[Frame, ...]
    mode: str
    pulses: int
    partial: tuple[int, ...] = ()

    @property
    def synchronized(self) -> bool:
        return self.pulses > 0


class ReceiverChain:
    """Streaming counter, moving sum and state machine for one cell."""

    def __init__(self, cfg: ReceiverChainConfig, trace: bool = False):
        self.cfg = cfg
        self.window_index = 0  # windows closed so far
        self.pending = 0
        self.ring = deque([0] * cfg.span, maxlen=cfg.span)
        self.f = 0
        self.mode = IDLE
        self.sync_window = -1
        self.next_sample = -1
        self.guard_end = -1
        self.bits: list[int] = []
        self.frames: list[Frame] = []
        self.pulses = 0
        self.rows: list[TraceRow] | None = [] if trace else None

    @property
    def window_start(self) -> float:
        return self.window_index * self.cfg.window

    def ingest(self, t: float) -> None:
        """Count one event in the open window; closes earlier windows first."""
        if t < self.window_start:
            raise OrderingError(f"event at {t} us precedes the open window starting at {self.window_start} us")
        while t >= self.window_start + self.cfg.window:
            self.close_window()
        self.pending += 1

    def close_window(self) -> int:
        c = self.pending
        self.pending = 0
        self.window_index += 1
        self.fir_update(c)
        bit = self.std_step()
        if self.rows is not None:
            self.rows.append(TraceRow(self.window_index, self.window_index * self.cfg.window, c, self.f,
                                      self.mode, bit))
        return c

    def fir_update(self, c: int) -> int:
        self.f += c - self.ring[0]
        self.ring.append(c)
        return self.f

    def std_step(self) -> int | None:
        """Advance the state machine on the window just closed; returns an emitted bit."""
        n = self.window_index
        cfg = self.cfg
        if self.mode == GUARD and n == self.guard_end:
            self.mode = IDLE
        if self.mode == IDLE:
            if self.f >= cfg.threshold:
                self.mode = RECEIVING
                self.sync_window = n
                self.next_sample = n + cfg.span
                self.bits = []
                self.pulses += 1
            return None
        if self.mode == RECEIVING and n == self.next_sample:
            bit = 1 if self.f >= cfg.threshold else 0
            self.bits.append(bit)
            self.pulses += bit
            if len(self.bits) == cfg.frame_length:
                self.frames.append(Frame(self.sync_window, tuple(self.bits)))
                self.bits = []
                self.mode = GUARD
                self.guard_end = n + cfg.span
            else:
                self.next_sample = n + cfg.span
            return bit
        return None

    def quiescent(self) -> bool:
        return self.mode == IDLE and self.f == 0 and self.pending == 0

    def skip_to(self, n: int) -> None:
        """Jump to ``n`` closed windows; only valid while quiescent (nothing would change)."""
        if not self.quiescent():
            raise RuntimeError("can only skip windows while idle with an empty filter")
        if self.rows is not None:
            for k in range(self.window_index + 1, n + 1):
                self.rows.append(TraceRow(k, k * self.cfg.window, 0, 0, IDLE, None))
        self.window_index = max(self.window_index, n)

    def result(self) -> DecodeResult:
        return DecodeResult(tuple(self.frames), self.mode, self.pulses, tuple(self.bits))


def n_windows(horizon: float, window: float) -> int:
    return int(math.floor(horizon / window + 1e-9))


def decode_frame(event_times, cfg: ReceiverChainConfig, horizon: float | None = None,
                 trace: bool = False) -> tuple[DecodeResult, list[TraceRow] | None]:
    """Run the chain over one cell's sorted event times.

    Closes ``floor(horizon / T)`` windows; without a horizon it runs until
    the chain is quiescent after the last event.  Events at or beyond the
    last closed window are ignored.
    """
    times = np.sort(np.asarray(event_times, dtype=float))
    chain = ReceiverChain(cfg, trace=trace)
    T = cfg.window
    if horizon is None:
        last = int(times[-1] // T) + 1 if times.size else 0
        total = last + (cfg.frame_length + 2) * cfg.span
    else:
        total = n_windows(horizon, T)
    k = 0
    while chain.window_index < total:
        if k < times.size and times[k] < (chain.window_index + 1) * T:
            chain.ingest(times[k])
            k += 1
            continue
        if chain.quiescent():
            nxt = int(times[k] // T) if k < times.size else total
            if nxt > chain.window_index:
                chain.skip_to(min(nxt, total))
                continue
        chain.close_window()
    return chain.result(), chain.rows


def window_counts(event_times, window: float, n: int) -> np.ndarray:
    """c_1..c_n for windows [(k-1)T, kT)."""
    idx = np.floor(np.asarray(event_times, dtype=float) / window).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < n)]
    return np.bincount(idx, minlength=n).astype(np.int64)


def write_trace_csv(rows: list[TraceRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_index", "t_n_us", "c_n", "f_n", "std_mode", "emitted_bit_or_blank"])
        for r in rows:
            w.writerow([r.window_index, f"{r.t_n:.3f}", r.count, r.f, r.mode, "" if r.bit is None else r.bit])
    return path
