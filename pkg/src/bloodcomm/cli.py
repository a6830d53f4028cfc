"""Command-line entry point: ``bloodcomm --experiment impulse --output-dir out``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from bloodcomm.config import ConfigError, profile_text
from bloodcomm.harness import (
    KINDS,
    emit_outputs,
    expand_placements,
    load_experiment,
    run_experiment,
    run_sweep,
)
from bloodcomm.reception import read_events_csv, tiling_for
from bloodcomm.txrx import parse_bits

log = logging.getLogger("bloodcomm")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bloodcomm", description="Blood-vessel molecular communication simulator.")
    ap.add_argument("--config", default="desk",
                    help="YAML experiment file, or a bundled profile name (desk, paper); default desk")
    ap.add_argument("--experiment", choices=KINDS, help="experiment kind (overrides the file)")
    ap.add_argument("--bits", help="bit string for --experiment frame, e.g. 101")
    ap.add_argument("--seed", type=int, help="run seed")
    ap.add_argument("--threads", type=int, help="worker threads for the particle kernels")
    ap.add_argument("--deterministic", action="store_true",
                    help="request deterministic mode (results never depend on the thread count)")
    ap.add_argument("--output-dir", required=True, type=Path, help="directory for CSVs and the manifest")
    ap.add_argument("--duration-us", type=float, help="simulated time; also caps the analysis horizon")
    ap.add_argument("--replicates", type=int, help="independent replicates (streams seed, 0..k-1)")
    ap.add_argument("--placement", type=int, metavar="I",
                    help="transmitter placement index i (distance i * 5.425 um from the axis)")
    ap.add_argument("--events", type=Path, help="for sweeps: replay a stored events CSV instead of simulating")
    ap.add_argument("--progress", action="store_true", help="log progress while simulating")
    return ap


def _load(source: str):
    path = Path(source)
    if path.exists():
        return load_experiment(path.read_text())
    if path.suffix in (".yaml", ".yml") or "/" in source:
        raise FileNotFoundError(f"config file not found: {source}")
    return load_experiment(profile_text(source))


def spec_from_args(args):
    spec = _load(args.config)
    sim = spec.sim
    if args.seed is not None:
        sim = sim.with_(seed=args.seed)
    if args.threads is not None:
        sim = sim.with_(threads=args.threads)
    if args.deterministic:
        sim = sim.with_(deterministic=True)
    if args.duration_us is not None:
        sim = sim.with_(duration=args.duration_us)
    horizon = spec.horizon
    if horizon is not None and horizon > sim.duration:
        horizon = sim.duration
    spec = spec.with_(sim=sim, horizon=horizon)
    if args.placement is not None:
        options = expand_placements(spec)
        if not 0 <= args.placement < len(options):
            raise ValueError(f"--placement must be in 0..{len(options) - 1}")
        spec = options[args.placement]
    changes = {"output_dir": args.output_dir}
    if args.experiment is not None:
        changes["kind"] = args.experiment
    if args.replicates is not None:
        changes["replicates"] = args.replicates
    if args.bits is not None:
        bits = parse_bits(args.bits)
        encoder = replace(spec.encoder, frame_length=len(bits))
        changes.update(bits=bits, encoder=encoder, chain=replace(spec.chain, frame_length=len(bits)))
    spec = spec.with_(**changes)
    if spec.kind == "frame" and spec.bits is None:
        raise ValueError("--experiment frame needs --bits")
    return spec


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.progress else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = spec_from_args(args)
        t0 = time.perf_counter()
        if args.events is not None:
            if spec.kind != "sweep":
                raise ValueError("--events only applies to --experiment sweep")
            tiling = tiling_for(spec.sim)
            events = read_events_csv(args.events, tiling)
            sweep, _ = run_sweep(spec, events=events, tiling=tiling)
            files = emit_outputs(spec.output_dir, spec, sweep=sweep, wall_seconds=time.perf_counter() - t0)
        else:
            files = run_experiment(spec, progress=args.progress)
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"bloodcomm: error: {exc}", file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
