"""Command-line front end.

Subcommands: simulate (room -> WAVs), separate (offline/online run),
evaluate (metrics on existing WAVs), benchmark-optimizer (test-function
success rates), benchmark-suite (pair x preset evaluation grid).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bsseval
from .objective import ObjectiveConfig
from .optimizer import SearchConfig
from .pipeline import RunConfig, benchmark_suite, run_offline, run_online
from .roomsim import (experiment_room, load_room_config, simulate,
                      write_geometry_sidecar)
from .signals import MultichannelSignal, read_wav, write_wav
from .synth import benchmark_source_pair
from .testfunctions import run_optimizer_benchmark
from .unmixer import default_max_delay


def _config_sections(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _build_config(args, sections: dict) -> tuple[SearchConfig, ObjectiveConfig, dict]:
    search_kwargs = dict(sections.get("search", {}))
    if "line_search_exponents" in search_kwargs:
        search_kwargs["line_search_exponents"] = tuple(
            search_kwargs["line_search_exponents"])
    if getattr(args, "seed", None) is not None:
        search_kwargs["seed"] = args.seed
    if getattr(args, "iterations", None) is not None:
        search_kwargs["iterations"] = args.iterations
    if getattr(args, "probes", None) is not None:
        search_kwargs["probes"] = args.probes
    search = SearchConfig(**search_kwargs)
    objective = ObjectiveConfig(**sections.get("objective", {}))
    run_kwargs = dict(sections.get("run", {}))
    return search, objective, run_kwargs


def _load_references(paths: list[str]) -> MultichannelSignal:
    if len(paths) == 1:
        return read_wav(paths[0])
    signals = [read_wav(p) for p in paths]
    rate = signals[0].sample_rate
    if any(s.sample_rate != rate for s in signals):
        raise ValueError("reference sample rates differ")
    return MultichannelSignal(rate, np.vstack([s.data for s in signals]))


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.room is not None:
        room = load_room_config(args.room)
    else:
        room = experiment_room(preset=args.preset, rt60=args.rt60,
                               sample_rate=args.sample_rate)
    if args.sources:
        sources = [read_wav(p) for p in args.sources]
    else:
        sources = list(benchmark_source_pair(duration=args.duration,
                                             sample_rate=room.sample_rate,
                                             seed=args.synthetic_seed))
    mixture, images = simulate(room, sources)
    write_wav(out / "mixture.wav", mixture)
    for s, img in enumerate(images):
        write_wav(out / f"reference_src{s}.wav",
                  MultichannelSignal(img.sample_rate, img.data[:1]))
    write_geometry_sidecar(out / "geometry.json", room,
                           extra={"preset": args.preset if args.room is None else None})
    print(f"wrote mixture ({mixture.n_channels} ch, {mixture.duration:.2f} s) "
          f"and {len(images)} references to {out}")
    return 0


def _cmd_separate(args) -> int:
    sections = _config_sections(args.config)
    search, objective, run_kwargs = _build_config(args, sections)
    mixture = read_wav(args.input)
    references = _load_references(args.references) if args.references else None

    d_max = run_kwargs.pop("d_max", None)
    if args.geometry is not None:
        with open(args.geometry) as fh:
            geometry = json.load(fh)
        d_max = default_max_delay(np.asarray(geometry["mic_positions"]),
                                  mixture.sample_rate)
    if args.repeats is not None:
        run_kwargs["repeats"] = args.repeats
    if args.chunk_size is not None:
        run_kwargs["chunk_size"] = args.chunk_size
    run_kwargs.setdefault("repeats", 1)

    cfg = RunConfig(
        search=search, objective=objective, mode=args.mode,
        mixture=mixture, references=references,
        n_sources=args.sources, d_max=d_max, workers=args.workers,
        output_dir=Path(args.out), **run_kwargs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "offline":
        result = run_offline(cfg)
        _print_summary(result.summary)
    else:
        result = run_online(cfg, clock=args.clock)
        for run in result.runs:
            for s in range(run.streamed.n_channels):
                write_wav(out / f"streamed_run{run.run_index}_src{s}.wav",
                          MultichannelSignal(run.streamed.sample_rate,
                                             run.streamed.data[s:s + 1]))
        with open(out / "latency.json", "w") as fh:
            json.dump(dataclasses.asdict(result.runs[0].latency), fh, indent=2)
            fh.write("\n")
        with open(out / "summary.json", "w") as fh:
            json.dump(result.summary, fh, indent=2)
            fh.write("\n")
        print(f"algorithmic delay: "
              f"{result.runs[0].latency.algorithmic_delay_ms:.2f} ms, "
              f"realtime factor: {result.runs[0].latency.realtime_factor:.3f}")
        _print_summary(result.summary.get("filter_then_apply", {}))
    return 0


def _print_summary(summary: dict) -> None:
    for name in ("sdr_db", "sir_db", "sar_db"):
        stats = summary.get(name)
        if stats:
            print(f"{name[:3]}: mean {stats['mean']:.2f} dB, "
                  f"std {stats['std']:.2f} dB")


def _cmd_evaluate(args) -> int:
    estimates = _load_references(args.estimates)
    references = _load_references(args.references)
    metrics = bsseval.evaluate(estimates, references, proj_len=args.proj_len)
    payload = metrics.to_dict()
    print(json.dumps(payload, indent=2))
    if args.out is not None:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0


def _cmd_benchmark_optimizer(args) -> int:
    config = SearchConfig(
        iterations=args.iterations, probes=args.probes,
        starting_scale=args.starting_scale, end_scale=args.end_scale,
        subspace_dim=args.subspace_dim, seed=args.seed,
    )
    report = run_optimizer_benchmark(runs=args.runs, seed=args.seed, config=config)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out is not None:
        Path(args.out).write_text(text + "\n")
    return 0


def _cmd_benchmark_suite(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    sections = _config_sections(args.config)
    search, objective, run_kwargs = _build_config(args, sections)
    if args.repeats is not None:
        run_kwargs["repeats"] = args.repeats
    cfg = RunConfig(search=search, objective=objective,
                    mixture=None, references=None, workers=args.workers,
                    **run_kwargs)
    report = benchmark_suite(
        items=manifest["items"],
        presets=manifest.get("presets", ["stereo"]),
        cfg=cfg,
        rt60=manifest.get("rt60", 0.1),
        sample_rate=manifest.get("sample_rate", 16000),
        output_dir=Path(args.out),
    )
    for cell in report.cells:
        status = "ok" if cell.ok else f"FAILED: {cell.error}"
        print(f"{cell.item}/{cell.preset}: {status}")
        if cell.ok and cell.result.summary.get("sir_db"):
            sir = cell.result.summary["sir_db"]
            print(f"  sir mean {sir['mean']:.2f} dB (std {sir['std']:.2f})")
    for entry in report.missing_inputs:
        print(f"missing input: {entry}")
    return 1 if report.failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdsep",
        description="Low-latency time-domain source separation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a room mixture to WAV files")
    p.add_argument("--out", required=True)
    p.add_argument("--room", help="room config JSON (overrides --preset/--rt60)")
    p.add_argument("--preset", default="stereo", choices=["stereo", "square", "cube"])
    p.add_argument("--rt60", type=float, default=0.1)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--sources", nargs="*", default=[],
                   help="dry source WAVs (default: synthetic pair)")
    p.add_argument("--synthetic-seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=8.0)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("separate", help="separate a mixture WAV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="offline", choices=["offline", "online"])
    p.add_argument("--clock", default="simulated", choices=["simulated", "wall"])
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--probes", type=int)
    p.add_argument("--sources", type=int, default=None,
                   help="number of output sources (default: from references, else 2)")
    p.add_argument("--references", nargs="*", default=[],
                   help="reference WAVs for metric computation")
    p.add_argument("--geometry", help="geometry sidecar JSON for the delay bound")
    p.add_argument("--config", help="JSON config with search/objective/run sections")
    p.add_argument("--chunk-size", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_separate)

    p = sub.add_parser("evaluate", help="compute SDR/SIR/SAR for existing WAVs")
    p.add_argument("--estimates", nargs="+", required=True)
    p.add_argument("--references", nargs="+", required=True)
    p.add_argument("--proj-len", type=int, default=512)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("benchmark-optimizer",
                       help="success rates on standard test functions")
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--starting-scale", type=float, default=4.0)
    p.add_argument("--end-scale", type=float, default=0.0)
    p.add_argument("--subspace-dim", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_benchmark_optimizer)

    p = sub.add_parser("benchmark-suite",
                       help="offline evaluation over a manifest of source pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_benchmark_suite)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
