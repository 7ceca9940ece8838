"""Experiment configuration, initialization strategies, and the multi-seed runner.

Configuration lives in a TOML file with ``[target]``, ``[kernel]``,
``[run]``, ``[init]``, ``[wfr]``, ``[msip]`` and ``[baseline]`` tables; any
key can be overridden on the command line with ``--set table.key=value``.
Every run writes a resolved copy of its configuration next to its outputs.

Randomness is counter-based (Philox).  Each run seed derives independent
streams for sampling, initialization and noise, so runs are reproducible
and independent across seeds.  Output bytes are fully determined by the
configuration and seeds, except wall-clock columns.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .baselines import BaselineConfig, run_baseline
from .dynamics import (
    FlowState,
    Trace,
    read_state_csv,
    simulate,
    write_state_csv,
    write_trace_csv,
)
from .embedding import (
    EmpiricalTarget,
    MomentCache,
    WeightedQuantization,
    build_moment_cache,
    mmd,
    optimal_weights,
)
from .kernels import KernelSpec, median_heuristic
from .msip import MsipConfig, run_msip
from .presets import preset
from .targets import TargetSpec, sample

ALGORITHMS = ("wfr", "msip", "lloyd", "kmeans", "iidms", "mmdgf", "dmgd")
INIT_STRATEGIES = ("from_data", "uniform_box", "gaussian_blob", "from_file")

_STREAM_ROLES = {"sampling": 0, "init": 1, "noise": 2}


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


@dataclass
class InitSpec:
    """How to place the initial particle configuration."""

    strategy: str = "uniform_box"
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    center: np.ndarray | None = None
    scale: float = 1.0
    path: str | None = None

    def __post_init__(self):
        if self.strategy not in INIT_STRATEGIES:
            raise ConfigError(
                f"init strategy must be one of {INIT_STRATEGIES}, got {self.strategy!r}"
            )


@dataclass
class ExperimentConfig:
    target: TargetSpec
    kernel: KernelSpec
    algorithm: str = "msip"
    m: int = 3
    init: InitSpec = field(default_factory=InitSpec)
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Path | None = None
    threads: int = 0
    max_iterations: int = 300
    record_every: int = 1
    cpi_pairs: int | None = None
    # transport-reaction flow
    alpha: float = 25.0
    solver: str = "rk23"
    step: float | None = None
    rtol: float = 1e-6
    atol: float = 1e-9
    max_time: float | None = None
    # fixed-point iteration
    eta: float = 0.8
    stationarity_tol: float = 1e-8
    descent_mode: str = "fixed"
    step_shrink: float = 0.5
    # baselines
    step_size: float = 0.1
    noise_beta: float = 0.05

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


def stream(run_seed: int, role: str) -> np.random.Generator:
    """Independent counter-based stream for one role of one run."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(run_seed), _STREAM_ROLES[role]]))
    )


def initial_positions(
    init: InitSpec, target: EmpiricalTarget, m: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw an (m, d) starting configuration according to the strategy."""
    x = target.samples
    if init.strategy == "from_data":
        if m > target.n:
            raise ConfigError(f"cannot draw {m} distinct atoms from {target.n} samples")
        idx = rng.choice(target.n, size=m, replace=False)
        return x[idx].copy()
    if init.strategy == "uniform_box":
        if init.lo is None or init.hi is None:
            lo = x.min(axis=0)
            hi = x.max(axis=0)
            margin = 0.2 * (hi - lo)
            lo, hi = lo - margin, hi + margin
        else:
            lo = np.broadcast_to(np.asarray(init.lo, dtype=float), (x.shape[1],))
            hi = np.broadcast_to(np.asarray(init.hi, dtype=float), (x.shape[1],))
        return lo + (hi - lo) * rng.random((m, x.shape[1]))
    if init.strategy == "gaussian_blob":
        center = (
            x.mean(axis=0)
            if init.center is None
            else np.broadcast_to(np.asarray(init.center, dtype=float), (x.shape[1],))
        )
        return center + init.scale * rng.standard_normal((m, x.shape[1]))
    state = read_state_csv(init.path)
    if state.positions.shape != (m, x.shape[1]):
        raise ConfigError(
            f"init file {init.path} has shape {state.positions.shape}, "
            f"expected {(m, x.shape[1])}"
        )
    return state.positions.copy()


def run_single(
    config: ExperimentConfig,
    target: EmpiricalTarget,
    cache: MomentCache,
    seed: int,
) -> Trace:
    """Run the configured algorithm once for one seed."""
    y0 = initial_positions(config.init, target, config.m, stream(seed, "init"))
    if config.algorithm == "wfr":
        state = FlowState(y0, np.full(config.m, 1.0 / config.m))
        trace = simulate(
            state,
            target,
            config.kernel,
            alpha=config.alpha,
            solver=config.solver,
            max_iterations=config.max_iterations,
            max_time=config.max_time,
            step=config.step,
            rtol=config.rtol,
            atol=config.atol,
            cache=cache,
            record_every=config.record_every,
        )
    elif config.algorithm == "msip":
        trace = run_msip(
            y0,
            target,
            config.kernel,
            cache,
            MsipConfig(
                eta=config.eta,
                max_iterations=config.max_iterations,
                stationarity_tol=config.stationarity_tol,
                step_shrink=config.step_shrink,
                descent_mode=config.descent_mode,
            ),
        )
    else:
        name = "lloyd" if config.algorithm == "kmeans" else config.algorithm
        trace = run_baseline(
            BaselineConfig(
                algorithm=name,
                step_size=config.step_size,
                noise_beta=config.noise_beta if name == "mmdgf" else 0.0,
                max_iterations=config.max_iterations,
            ),
            y0,
            target,
            config.kernel,
            cache,
            rng=stream(seed, "noise"),
        )
    trace.seed = seed
    return trace


def run_experiment(
    config: ExperimentConfig,
) -> tuple[list[Trace], dict[int, str]]:
    """Run all seeds, write outputs, and return (traces, per-seed errors).

    A failure in one seed is recorded as an error string and does not abort
    the remaining seeds.
    """
    target = sample(config.target, rng=None)
    cache = build_moment_cache(
        target,
        config.kernel,
        n_pairs=config.cpi_pairs,
        rng=stream(config.seeds[0], "sampling") if config.cpi_pairs else None,
    )

    results: dict[int, Trace] = {}
    errors: dict[int, str] = {}

    def work(seed: int):
        return seed, run_single(config, target, cache, seed)

    max_workers = config.threads if config.threads > 0 else (os.cpu_count() or 1)
    max_workers = min(max_workers, len(config.seeds))
    if max_workers <= 1:
        outcomes = []
        for s in config.seeds:
            try:
                outcomes.append(work(s))
            except Exception as exc:
                errors[s] = f"{type(exc).__name__}: {exc}"
    else:
        outcomes = []
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = {pool.submit(work, s): s for s in config.seeds}
            for fut, s in futures.items():
                try:
                    outcomes.append(fut.result())
                except Exception as exc:
                    errors[s] = f"{type(exc).__name__}: {exc}"
    for seed, trace in outcomes:
        results[seed] = trace

    traces = [results[s] for s in config.seeds if s in results]
    if config.output_dir is not None:
        _write_outputs(config, target, cache, results, errors)
    return traces, errors


def _write_outputs(config, target, cache, results, errors):
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.toml").write_text(config_to_toml(config))
    for seed in config.seeds:
        if seed not in results:
            continue
        trace = results[seed]
        seed_dir = out / f"seed_{seed}"
        seed_dir.mkdir(exist_ok=True)
        write_trace_csv(trace, seed_dir / "trace.csv")
        write_state_csv(trace.final_state, seed_dir / "final_state.csv")
        if config.algorithm in ("lloyd", "kmeans"):
            # also record the weight-optimal version of the final positions
            w = optimal_weights(target, config.kernel, trace.final_state.positions)
            write_state_csv(
                FlowState(trace.final_state.positions, w, trace.final_state.time),
                seed_dir / "final_state_optimal.csv",
            )
        if trace.warnings:
            (seed_dir / "warnings.txt").write_text("\n".join(trace.warnings) + "\n")
    traces = [results[s] for s in config.seeds if s in results]
    if traces:
        rows = summarize(traces)
        with (out / "summary.csv").open("w") as fh:
            fh.write("iteration,mmd_min,mmd_median,mmd_max,n_seeds\n")
            for row in rows:
                fh.write(
                    f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]}\n"
                )
    if errors:
        with (out / "errors.csv").open("w") as fh:
            fh.write("seed,error\n")
            for seed, msg in sorted(errors.items()):
                fh.write(f"{seed},{msg.replace(',', ';')}\n")


def summarize(traces: list[Trace]) -> list[tuple[int, float, float, float, int]]:
    """Per-iteration (min, median, max) envelope of the discrepancy across seeds.

    Traces may disagree on their recorded iteration counts (adaptive
    solvers); each trace is treated as a step function of iteration and
    carried forward to the union grid.
    """
    grids = [t.iterations() for t in traces]
    series = [t.mmd_series() for t in traces]
    union = np.unique(np.concatenate(grids))
    rows = []
    values = np.empty((len(traces), union.size))
    for i, (g, s) in enumerate(zip(grids, series)):
        idx = np.clip(np.searchsorted(g, union, side="right") - 1, 0, g.size - 1)
        values[i] = s[idx]
    for j, it in enumerate(union):
        col = values[:, j]
        rows.append(
            (
                int(it),
                float(np.min(col)),
                float(np.median(col)),
                float(np.max(col)),
                len(traces),
            )
        )
    return rows


def final_mmds(traces: list[Trace]) -> np.ndarray:
    return np.array([t.records[-1].mmd for t in traces])


def evaluate_point_set(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    cache: MomentCache,
    weights: np.ndarray | None = None,
) -> dict[str, float]:
    """Discrepancy of an externally supplied point set against the target.

    Returns the uniform-weight value, the value at the supplied weights (if
    any), and the value at the MMD-optimal weights for these positions.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    m = positions.shape[0]
    out = {
        "mmd_uniform": mmd(
            target, spec, WeightedQuantization(positions, np.full(m, 1.0 / m)), cache
        )
    }
    if weights is not None:
        out["mmd_given"] = mmd(
            target, spec, WeightedQuantization(positions, weights), cache
        )
    w = optimal_weights(target, spec, positions)
    out["mmd_optimal"] = mmd(target, spec, WeightedQuantization(positions, w), cache)
    return out


# --------------------------------------------------------------------------
# TOML configuration


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read an experiment configuration, applying ``key=value`` overrides."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for item in overrides or []:
        _apply_override(raw, item)
    return config_from_dict(raw)


def _apply_override(raw: dict, item: str):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, value = item.split("=", 1)
    try:
        parsed = tomli.loads(f"v = {value}")["v"]
    except tomli.TOMLDecodeError:
        parsed = value  # plain string
    node = raw
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set key {key!r} traverses a non-table entry")
    node[parts[-1]] = parsed


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a typed configuration from parsed TOML tables."""
    try:
        target = _target_from_dict(raw.get("target", {}))
        kernel = _kernel_from_dict(raw.get("kernel", {}), target)
        run = dict(raw.get("run", {}))
        init_tbl = dict(raw.get("init", {}))
        init = InitSpec(
            strategy=init_tbl.pop("strategy", "uniform_box"),
            lo=_maybe_array(init_tbl.pop("lo", None)),
            hi=_maybe_array(init_tbl.pop("hi", None)),
            center=_maybe_array(init_tbl.pop("center", None)),
            scale=float(init_tbl.pop("scale", 1.0)),
            path=init_tbl.pop("path", None),
        )
        if init_tbl:
            raise ConfigError(f"unknown [init] keys: {sorted(init_tbl)}")
        wfr = dict(raw.get("wfr", {}))
        msip_tbl = dict(raw.get("msip", {}))
        baseline = dict(raw.get("baseline", {}))
        seeds = run.pop("seeds", [0])
        if isinstance(seeds, str):
            seeds = [int(s) for s in seeds.split(",") if s.strip()]
        out_dir = run.pop("output_dir", None)
        cfg = ExperimentConfig(
            target=target,
            kernel=kernel,
            algorithm=run.pop("algorithm", "msip"),
            m=int(run.pop("m", 3)),
            init=init,
            seeds=[int(s) for s in seeds],
            output_dir=Path(out_dir) if out_dir else None,
            threads=int(run.pop("threads", 0)),
            max_iterations=int(run.pop("max_iterations", 300)),
            record_every=int(run.pop("record_every", 1)),
            cpi_pairs=_maybe_int(run.pop("cpi_pairs", None)),
            alpha=float(wfr.pop("alpha", 25.0)),
            solver=wfr.pop("solver", "rk23"),
            step=_maybe_float(wfr.pop("step", None)),
            rtol=float(wfr.pop("rtol", 1e-6)),
            atol=float(wfr.pop("atol", 1e-9)),
            max_time=_maybe_float(wfr.pop("max_time", None)),
            eta=float(msip_tbl.pop("eta", 0.8)),
            stationarity_tol=float(msip_tbl.pop("stationarity_tol", 1e-8)),
            descent_mode=msip_tbl.pop("descent_mode", "fixed"),
            step_shrink=float(msip_tbl.pop("step_shrink", 0.5)),
            step_size=float(baseline.pop("step_size", 0.1)),
            noise_beta=float(baseline.pop("noise_beta", 0.05)),
        )
        for name, tbl in (("run", run), ("wfr", wfr), ("msip", msip_tbl), ("baseline", baseline)):
            if tbl:
                raise ConfigError(f"unknown [{name}] keys: {sorted(tbl)}")
        return cfg
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _target_from_dict(tbl: dict) -> TargetSpec:
    tbl = dict(tbl)
    n_samples = int(tbl.pop("n_samples", 1000))
    seed = int(tbl.pop("seed", 0))
    if "preset" in tbl:
        name = tbl.pop("preset")
        if tbl:
            raise ConfigError(f"unknown [target] keys with preset: {sorted(tbl)}")
        return preset(name, n_samples=n_samples, seed=seed)
    family = tbl.pop("family", None)
    if family is None:
        raise ConfigError("[target] needs either preset or family")
    return TargetSpec(
        family=family,
        n_samples=n_samples,
        seed=seed,
        means=_maybe_array(tbl.pop("means", None)),
        covariances=_maybe_array(tbl.pop("covariances", None)),
        mixture_weights=_maybe_array(tbl.pop("mixture_weights", None)),
        radii=_maybe_array(tbl.pop("radii", None)),
        ring_weights=_maybe_array(tbl.pop("ring_weights", None)),
        anchors=_maybe_array(tbl.pop("anchors", None)),
        path=tbl.pop("path", None),
        label=tbl.pop("label", family),
    )


def _kernel_from_dict(tbl: dict, target: TargetSpec) -> KernelSpec:
    tbl = dict(tbl)
    family = tbl.pop("family", "se")
    bandwidth = tbl.pop("bandwidth", 1.0)
    if bandwidth == "median":
        sampled = sample(target)
        bandwidth = median_heuristic(sampled.samples)
    spec = KernelSpec(
        family=family,
        bandwidth=float(bandwidth),
        imq_offset=float(tbl.pop("imq_offset", 1.0)),
    )
    if tbl:
        raise ConfigError(f"unknown [kernel] keys: {sorted(tbl)}")
    return spec


def _maybe_array(value):
    return None if value is None else np.asarray(value, dtype=float)


def _maybe_float(value):
    return None if value is None else float(value)


def _maybe_int(value):
    return None if value is None else int(value)


def config_to_toml(config: ExperimentConfig) -> str:
    """Serialize the resolved configuration (provenance copy)."""
    lines: list[str] = []

    def emit_table(name: str, entries: dict):
        lines.append(f"[{name}]")
        for key, value in entries.items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")

    t = config.target
    target_tbl: dict = {"family": t.family, "n_samples": t.n_samples, "seed": t.seed}
    if t.label:
        target_tbl["label"] = t.label
    for key in ("means", "covariances", "mixture_weights", "radii", "ring_weights", "anchors"):
        val = getattr(t, key)
        if val is not None:
            target_tbl[key] = np.asarray(val).tolist()
    if t.path:
        target_tbl["path"] = t.path
    emit_table("target", target_tbl)
    emit_table(
        "kernel",
        {
            "family": config.kernel.family,
            "bandwidth": config.kernel.bandwidth,
            "imq_offset": config.kernel.imq_offset,
        },
    )
    emit_table(
        "run",
        {
            "algorithm": config.algorithm,
            "m": config.m,
            "seeds": list(config.seeds),
            "output_dir": str(config.output_dir) if config.output_dir else None,
            "threads": config.threads,
            "max_iterations": config.max_iterations,
            "record_every": config.record_every,
            "cpi_pairs": config.cpi_pairs,
        },
    )
    emit_table(
        "init",
        {
            "strategy": config.init.strategy,
            "lo": None if config.init.lo is None else np.asarray(config.init.lo).tolist(),
            "hi": None if config.init.hi is None else np.asarray(config.init.hi).tolist(),
            "center": None
            if config.init.center is None
            else np.asarray(config.init.center).tolist(),
            "scale": config.init.scale,
            "path": config.init.path,
        },
    )
    emit_table(
        "wfr",
        {
            "alpha": config.alpha,
            "solver": config.solver,
            "step": config.step,
            "rtol": config.rtol,
            "atol": config.atol,
            "max_time": config.max_time,
        },
    )
    emit_table(
        "msip",
        {
            "eta": config.eta,
            "stationarity_tol": config.stationarity_tol,
            "descent_mode": config.descent_mode,
            "step_shrink": config.step_shrink,
        },
    )
    emit_table(
        "baseline",
        {"step_size": config.step_size, "noise_beta": config.noise_beta},
    )
    return "\n".join(lines)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__} to TOML")
