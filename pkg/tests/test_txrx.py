import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bloodcomm.txrx import (
    GUARD,
    IDLE,
    RECEIVING,
    EncoderConfig,
    OrderingError,
    ReceiverChain,
    ReceiverChainConfig,
    decode_frame,
    encode_ook,
    parse_bits,
    window_counts,
    write_trace_csv,
)
from oracles import reference_decode, window_sums


def test_encode_example_schedule():
    train = encode_ook([1, 0, 1], EncoderConfig(3000, 3, 25500.0))
    assert train.releases == ((0.0, 3000), (25500.0, 3000), (76500.0, 3000))


def test_encode_all_zero_is_sync_only():
    train = encode_ook([0, 0, 0, 0], EncoderConfig(3000, 4, 100.0))
    assert train.releases == ((0.0, 3000),)


def test_encode_zero_burst():
    train = encode_ook([1, 1], EncoderConfig(0, 2, 10.0))
    assert [c for _, c in train.releases] == [0, 0, 0]
    assert train.total_carriers == 0


def test_encode_rejects_wrong_length_and_values():
    with pytest.raises(ValueError):
        encode_ook([1, 0], EncoderConfig(10, 3, 1.0))
    with pytest.raises(ValueError):
        encode_ook([2], EncoderConfig(10, 1, 1.0))


@pytest.mark.parametrize("kw", [dict(burst_size=-1), dict(frame_length=0), dict(pulse_period=0.0)])
def test_encoder_config_invariants(kw):
    with pytest.raises(ValueError):
        EncoderConfig(**kw)


def test_spreading_is_reserved():
    with pytest.raises(NotImplementedError):
        EncoderConfig(spreading=(4, 2))


@given(st.lists(st.integers(0, 1), min_size=1, max_size=10), st.floats(1.0, 1e5))
def test_release_k_iff_bit_k(bits, tau):
    train = encode_ook(bits, EncoderConfig(7, len(bits), tau))
    times = train.times
    assert times[0] == 0.0
    assert times[1:] == [k * tau for k, b in enumerate(bits, start=1) if b]


def test_parse_bits():
    assert parse_bits("101") == (1, 0, 1)
    for bad in ("", "12", "1 0"):
        with pytest.raises(ValueError):
            parse_bits(bad)


@pytest.mark.parametrize("kw", [dict(window=0.0), dict(delay_lines=-1), dict(threshold=0), dict(frame_length=0)])
def test_chain_config_invariants(kw):
    with pytest.raises(ValueError):
        ReceiverChainConfig(**kw)


def test_tau_is_span_times_window():
    assert ReceiverChainConfig(750.0, 33).tau == 25500.0


def test_counter_example_windows():
    chain = ReceiverChain(ReceiverChainConfig(750.0, 5))
    for t in (100, 200, 900):
        chain.ingest(t)
    assert chain.close_window() == 1  # window 1 was closed by the event at 900
    assert list(chain.ring)[-2:] == [2, 1]


def test_counter_rejects_out_of_order():
    chain = ReceiverChain(ReceiverChainConfig(10.0, 0))
    chain.ingest(25.0)
    with pytest.raises(OrderingError):
        chain.ingest(5.0)


def test_no_events_all_zero_counts():
    _, rows = decode_frame([], ReceiverChainConfig(10.0, 2), horizon=100.0, trace=True)
    assert len(rows) == 10
    assert all(r.count == 0 and r.f == 0 and r.mode == IDLE for r in rows)


def test_fir_examples():
    chain = ReceiverChain(ReceiverChainConfig(1.0, 2))
    out = [chain.fir_update(c) for c in (1, 0, 2)]
    assert out[-1] == 3
    chain = ReceiverChain(ReceiverChainConfig(1.0, 0))
    assert [chain.fir_update(c) for c in (4, 1, 0, 7)] == [4, 1, 0, 7]


def test_fir_matches_windowed_sum_on_long_stream():
    rng = np.random.default_rng(11)
    counts = rng.poisson(0.7, 10_000)
    for p in (0, 3, 33):
        chain = ReceiverChain(ReceiverChainConfig(1.0, p))
        stream = np.array([chain.fir_update(int(c)) for c in counts])
        csum = np.concatenate(([0], np.cumsum(counts)))
        idx = np.arange(1, counts.size + 1)
        brute = csum[idx] - csum[np.maximum(0, idx - (p + 1))]
        assert np.array_equal(stream, brute)


@given(st.lists(st.floats(0, 999.999, allow_nan=False), max_size=60))
def test_window_counts_partition_events(times):
    c = window_counts(times, 10.0, 100)
    assert c.sum() == len(times)


def test_std_stays_idle_on_silence():
    res, _ = decode_frame([], ReceiverChainConfig(5.0, 3, 1), horizon=1e4)
    assert res.mode == IDLE and res.pulses == 0 and res.frames == ()


def test_std_hand_trace():
    # P=1, Th=2, N=2: f=2 at window 1 synchronizes, samples at windows 3 and 5 read 3 then 0
    cfg = ReceiverChainConfig(1.0, 1, 2, 2)
    res, rows = decode_frame([0.1, 0.2, 1.5, 2.5, 2.6], cfg, horizon=10.0, trace=True)
    assert [r.f for r in rows[:5]] == [2, 3, 3, 2, 0]
    assert res.frames[0].bits == (1, 0)
    assert res.frames[0].sync_window == 1
    assert [r.bit for r in rows[:5]] == [None, None, 1, None, 0]


def test_threshold_equality_synchronizes():
    res, _ = decode_frame([0.5, 0.6], ReceiverChainConfig(1.0, 0, 2, 1), horizon=5.0)
    assert res.pulses >= 1


def test_guard_then_idle_resync():
    # P=0, N=1: sync at 1, sample at 2, guard ends at 3 where a new sync is possible
    cfg = ReceiverChainConfig(1.0, 0, 1, 1)
    res, rows = decode_frame([0.5, 1.5, 2.5], cfg, horizon=6.0, trace=True)
    assert [r.mode for r in rows[:4]] == [RECEIVING, GUARD, RECEIVING, GUARD]
    assert [f.sync_window for f in res.frames] == [1, 3]
    assert [f.bits for f in res.frames] == [(1,), (0,)]
    assert res.pulses == 3


def test_empty_log_no_frames():
    res, _ = decode_frame([], ReceiverChainConfig())
    assert res.frames == () and res.mode == IDLE


def test_synthetic_frame_from_schedule():
    cfg = ReceiverChainConfig(750.0, 33, 2, 3)
    train = encode_ook([1, 0, 1], EncoderConfig(3000, 3, cfg.tau))
    events = [t + 100.0 + d for t, _ in train.releases for d in (0.0, 1.0, 2.0)]
    res, _ = decode_frame(events, cfg, horizon=5 * cfg.tau)
    assert res.frames[0].bits == (1, 0, 1)


def _random_log(rng, T, n):
    """Poisson bursts at random windows."""
    times = []
    for w in rng.choice(n, size=min(n, int(rng.integers(0, 12))), replace=False):
        times += list(w * T + rng.uniform(0, T, rng.poisson(3)))
    return sorted(times)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_streaming_equals_reference_decoder(seed):
    rng = np.random.default_rng(seed)
    T = float(rng.choice([1.0, 7.5, 750.0]))
    P = int(rng.integers(0, 12))
    Th = int(rng.integers(1, 6))
    N = int(rng.integers(1, 9))
    n = int(rng.integers(1, 200))
    times = _random_log(rng, T, n)
    res, _ = decode_frame(times, ReceiverChainConfig(T, P, Th, N), horizon=n * T)
    frames, mode, pulses, partial = reference_decode(times, T, P, Th, N, n * T)
    assert [(f.sync_window, f.bits) for f in res.frames] == frames
    assert (res.mode, res.pulses, res.partial) == (mode, pulses, partial)


def test_trace_rows_match_window_sums():
    rng = np.random.default_rng(3)
    times = _random_log(rng, 2.0, 80)
    _, rows = decode_frame(times, ReceiverChainConfig(2.0, 4, 2, 2), horizon=160.0, trace=True)
    c, f = window_sums(times, 2.0, 80, 5)
    assert [r.count for r in rows] == list(c)
    assert [r.f for r in rows] == list(f)
    assert [r.window_index for r in rows] == list(range(1, 81))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sample_alignment(seed):
    rng = np.random.default_rng(seed)
    P = int(rng.integers(0, 6))
    N = int(rng.integers(1, 5))
    times = _random_log(rng, 1.0, 120)
    _, rows = decode_frame(times, ReceiverChainConfig(1.0, P, 1, N), horizon=120.0, trace=True)
    sync = None
    samples = []
    prev = IDLE
    for r in rows:
        if r.mode == RECEIVING and r.bit is None and prev != RECEIVING:
            sync, samples = r.window_index, []
        if r.bit is not None:
            samples.append(r.window_index)
            assert r.window_index == sync + len(samples) * (P + 1)
        prev = r.mode


def test_clean_channel_exhaustive_small_frames():
    T, P, Th = 10.0, 3, 2
    for N in range(1, 9):
        cfg = ReceiverChainConfig(T, P, Th, N)
        for bits in itertools.product((0, 1), repeat=N):
            train = encode_ook(bits, EncoderConfig(1, N, cfg.tau))
            events = [t + 1.0 + 0.1 * k for t, _ in train.releases for k in range(Th)]
            res, _ = decode_frame(events, cfg, horizon=(N + 2) * cfg.tau)
            assert res.frames[0].bits == bits


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 3))
def test_raising_threshold_never_turns_zero_into_one(seed, th, extra):
    rng = np.random.default_rng(seed)
    times = _random_log(rng, 1.0, 150)
    lo = decode_frame(times, ReceiverChainConfig(1.0, 3, th, 2), horizon=150.0, trace=True)[1]
    hi = decode_frame(times, ReceiverChainConfig(1.0, 3, th + extra, 2), horizon=150.0, trace=True)[1]
    for a, b in zip(lo, hi):
        if a.bit is not None and b.bit is not None:
            assert b.bit <= a.bit


def test_skip_matches_full_stream():
    # the idle fast path must not change any row
    rng = np.random.default_rng(5)
    times = _random_log(rng, 1.0, 300)
    cfg = ReceiverChainConfig(1.0, 2, 2, 2)
    _, fast = decode_frame(times, cfg, horizon=300.0, trace=True)
    chain = ReceiverChain(cfg, trace=True)
    for t in times:
        chain.ingest(t)
    while chain.window_index < 300:
        chain.close_window()
    assert fast == chain.rows


def test_trace_csv(tmp_path):
    _, rows = decode_frame([0.5, 0.7], ReceiverChainConfig(1.0, 0, 2, 1), horizon=3.0, trace=True)
    path = write_trace_csv(rows, tmp_path / "t.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "window_index,t_n_us,c_n,f_n,std_mode,emitted_bit_or_blank"
    assert lines[1] == "1,1.000,2,2,receiving,"
    assert lines[2] == "2,2.000,0,0,guard,0"
