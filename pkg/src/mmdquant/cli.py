"""Command line interface.

Subcommands:
  quantize    one run (first seed) of the configured algorithm
  benchmark   seed sweep with a min/median/max summary across seeds
  eigbench    spectral reference curve for the best m-point discrepancy
  mmd         evaluate an external point set against the configured target
  plot        render trace/state CSVs to a standalone SVG

Exit codes: 0 success, 1 all seeds failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dynamics import read_state_csv, read_trace_csv
from .embedding import build_moment_cache
from .harness import (
    ConfigError,
    evaluate_point_set,
    load_config,
    run_experiment,
)
from .plots import emit_plot
from .targets import integration_spectrum, sample, spectral_benchmark


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="TOML configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable), e.g. --set kernel.bandwidth=2.5",
    )
    parser.add_argument("--output", help="output directory (overrides run.output_dir)")


def _add_seed_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--seeds", help='comma-separated seed list, e.g. "1,2,3"')
    parser.add_argument("--n-seeds", type=int, help="number of consecutive seeds")
    parser.add_argument("--base-seed", type=int, default=0, help="first seed for --n-seeds")
    parser.add_argument("--threads", type=int, help="worker pool size (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmdquant",
        description="Compress an empirical measure into M weighted atoms by MMD minimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="single run of the configured algorithm")
    _add_common(p)
    p.add_argument("--seed", type=int, help="seed for the single run")

    p = sub.add_parser("benchmark", help="seed sweep with envelope summary")
    _add_common(p)
    _add_seed_flags(p)

    p = sub.add_parser("eigbench", help="spectral reference curve over m")
    _add_common(p)
    p.add_argument("--m-max", type=int, default=32, help="largest m in the curve")

    p = sub.add_parser("mmd", help="evaluate an external point set against the target")
    _add_common(p)
    p.add_argument(
        "--points",
        required=True,
        help="CSV of points; a final 'weight' header column supplies weights",
    )

    p = sub.add_parser("plot", help="render CSV outputs to SVG")
    p.add_argument("--kind", choices=("mmd-curve", "scatter2d"), required=True)
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("inputs", nargs="+", help="trace CSVs (mmd-curve) or state CSVs (scatter2d)")

    return parser


def _resolve(args) -> "ExperimentConfig":
    config = load_config(args.config, args.overrides)
    if args.output:
        config = replace(config, output_dir=Path(args.output))
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "plot":
        return _cmd_plot(args)
    config = _resolve(args)

    if args.command == "quantize":
        seed = args.seed if args.seed is not None else config.seeds[0]
        config = replace(config, seeds=[seed])
        traces, errors = run_experiment(config)
        if errors:
            for s, msg in errors.items():
                print(f"seed {s} failed: {msg}", file=sys.stderr)
            return 1
        final = traces[0].records[-1]
        print(
            f"{config.algorithm}: final mmd {final.mmd:.6g} after "
            f"{final.iteration} iterations"
        )
        return 0

    if args.command == "benchmark":
        seeds = _seed_list(args, config)
        if seeds is not None:
            config = replace(config, seeds=seeds)
        if args.threads is not None:
            config = replace(config, threads=args.threads)
        traces, errors = run_experiment(config)
        for s, msg in sorted(errors.items()):
            print(f"seed {s} failed: {msg}", file=sys.stderr)
        if not traces:
            return 1
        finals = [t.records[-1].mmd for t in traces]
        print(
            f"{config.algorithm}: {len(traces)}/{len(config.seeds)} seeds, final mmd "
            f"min {min(finals):.6g} median {float(np.median(finals)):.6g} "
            f"max {max(finals):.6g}"
        )
        return 0

    if args.command == "eigbench":
        target = sample(config.target)
        cache = build_moment_cache(target, config.kernel, n_pairs=config.cpi_pairs)
        spectrum = integration_spectrum(target, config.kernel)
        m_max = min(args.m_max, target.n - 1)
        rows = [
            (m, spectral_benchmark(target, config.kernel, m, cache, spectrum=spectrum))
            for m in range(1, m_max + 1)
        ]
        out_dir = config.output_dir or Path(".")
        out_dir.mkdir(parents=True, exist_ok=True)
        out_file = out_dir / "eigbench.csv"
        with out_file.open("w") as fh:
            fh.write("m,benchmark\n")
            for m, val in rows:
                fh.write(f"{m},{val!r}\n")
        print(f"wrote {out_file} ({m_max} levels; benchmark(1) = {rows[0][1]:.6g})")
        return 0

    if args.command == "mmd":
        target = sample(config.target)
        cache = build_moment_cache(target, config.kernel, n_pairs=config.cpi_pairs)
        positions, weights = _read_points(args.points)
        result = evaluate_point_set(target, config.kernel, positions, cache, weights)
        for key in ("mmd_uniform", "mmd_given", "mmd_optimal"):
            if key in result:
                print(f"{key} = {result[key]:.10g}")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def _seed_list(args, config) -> list[int] | None:
    if args.seeds and args.n_seeds:
        raise ConfigError("use either --seeds or --n-seeds, not both")
    if args.seeds:
        try:
            return [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --seeds value: {exc}") from exc
    if args.n_seeds:
        if args.n_seeds < 1:
            raise ConfigError("--n-seeds must be positive")
        return list(range(args.base_seed, args.base_seed + args.n_seeds))
    return None


def _read_points(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"points file not found: {path}")
    header = path.read_text().splitlines()[0].split(",")
    try:
        [float(v) for v in header]
        has_header = False
    except ValueError:
        has_header = True
    data = np.loadtxt(path, delimiter=",", skiprows=1 if has_header else 0, ndmin=2)
    if has_header and header[-1].strip().lower() == "weight":
        return data[:, :-1], data[:, -1]
    if has_header and header[0].strip().lower() == "weight":
        return data[:, 1:], data[:, 0]
    return data, None


def _cmd_plot(args) -> int:
    try:
        if args.kind == "mmd-curve":
            traces = [read_trace_csv(p) for p in args.inputs]
        else:
            from .dynamics import Trace

            traces = []
            for p in args.inputs:
                t = Trace()
                t.final_state = read_state_csv(p)
                traces.append(t)
        emit_plot(traces, args.kind.replace("-", "_"), args.out)
    except (OSError, ValueError) as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
