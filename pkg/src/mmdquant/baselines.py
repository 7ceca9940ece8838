"""Comparison algorithms: Lloyd's, classical mean shift, and two descent baselines.

* ``lloyd_step``: move each particle to the weighted centroid of its Voronoi
  cell; empty cells retain their position.  Exposed under the alias
  ``kmeans`` in the run harness (identical on empirical measures).
* ``mean_shift_step``: the classical kernel-density mode-seeking update,
  applied to each particle independently (no interaction).
* ``mmdgf_step``: unweighted discrepancy flow; particles follow the first
  variation's gradient at uniform weights, optionally with decaying
  Gaussian noise.
* ``dmgd_step``: plain (unpreconditioned) gradient descent on the
  weight-minimized squared discrepancy.

Runner helpers drive each step function for a fixed budget and produce the
same Trace structure as the flow and fixed-point solvers.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np

from .dynamics import FlowState, Trace, TraceRecord
from .embedding import (
    EmpiricalTarget,
    MomentCache,
    SingularKernelMatrix,
    WeightedQuantization,
    grad_fm,
    grad_v0,
    mmd,
    optimal_weights,
    vbar0,
    vbar1,
)
from .kernels import KernelSpec, cross_sqdist, kbar_matrix

BASELINES = ("lloyd", "iidms", "mmdgf", "dmgd")


@dataclass
class BaselineConfig:
    algorithm: str
    step_size: float = 0.1
    noise_beta: float = 0.0
    max_iterations: int = 300

    def __post_init__(self):
        if self.algorithm not in BASELINES:
            raise ValueError(f"algorithm must be one of {BASELINES}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.noise_beta < 0:
            raise ValueError("noise_beta must be nonnegative")


def lloyd_assignments(target: EmpiricalTarget, positions: np.ndarray) -> np.ndarray:
    """Index of the nearest particle for each sample (ties -> lowest index)."""
    sq = cross_sqdist(target.samples, np.atleast_2d(positions))
    return np.argmin(sq, axis=1)


def lloyd_step(target: EmpiricalTarget, positions: np.ndarray) -> np.ndarray:
    """Weighted centroid of each particle's Voronoi cell; empty cells stay put."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    assign = lloyd_assignments(target, positions)
    out = positions.copy()
    for i in range(positions.shape[0]):
        mask = assign == i
        if not mask.any():
            continue
        w = target.weights[mask]
        out[i] = (w @ target.samples[mask]) / w.sum()
    return out


def mean_shift_step(
    target: EmpiricalTarget, spec: KernelSpec, y: np.ndarray
) -> np.ndarray:
    """Classical mean shift update: companion-weighted mean of the samples.

    Accepts a single point (d,) or a batch (m, d); rows are updated
    independently.  Far from the data the companion values underflow; the
    ratio is invariant under rescaling, so those rows are recomputed with
    the smallest distance factored out of the exponential.
    """
    single = np.ndim(y) == 1
    y2 = np.atleast_2d(np.asarray(y, dtype=float))
    num = vbar1(target, spec, y2)
    den = np.asarray(vbar0(target, spec, y2))
    bad = ~(den > 1e-290)
    if bad.any():
        sq = cross_sqdist(target.samples, y2[bad])
        phi = _scaled_companion(spec, sq) * target.weights[:, None]
        num[bad] = phi.T @ target.samples
        den[bad] = phi.sum(axis=0)
    out = num / den[:, None]
    return out[0] if single else out


def _scaled_companion(spec: KernelSpec, sqdist: np.ndarray) -> np.ndarray:
    """Companion values times an arbitrary positive per-column factor.

    Only ratios within a column are meaningful; the rescaling keeps the
    exponential families representable arbitrarily far from the data.
    """
    if spec.family == "se":
        shifted = sqdist - sqdist.min(axis=0, keepdims=True)
        return np.exp(-shifted / spec.bandwidth**2)
    if spec.family == "matern32":
        r = np.sqrt(sqdist)
        shifted = r - r.min(axis=0, keepdims=True)
        return np.exp(-np.sqrt(3.0) * shifted / spec.bandwidth)
    # inverse multiquadric decays polynomially; no rescaling needed
    from .kernels import companion_from_sqdist

    return companion_from_sqdist(spec, sqdist)


def mmdgf_step(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    eta: float,
    noise_beta: float = 0.0,
    iteration: int = 1,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Unweighted discrepancy-flow update at uniform weights 1/M.

    The deterministic part moves each particle against the gradient of the
    first variation; with ``noise_beta > 0``, Gaussian noise with variance
    ``noise_beta / sqrt(iteration)`` is added per coordinate.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    m = positions.shape[0]
    if noise_beta > 0 and iteration < 1:
        raise ValueError("iteration must be >= 1 when noise is enabled")
    w = np.full(m, 1.0 / m)
    kb = kbar_matrix(spec, positions)
    interaction = kb @ (w[:, None] * positions) - positions * (kb @ w)[:, None]
    out = positions - eta * (interaction - grad_v0(target, spec, positions))
    if noise_beta > 0:
        if rng is None:
            raise ValueError("rng required when noise_beta > 0")
        std = np.sqrt(noise_beta / np.sqrt(iteration))
        out = out + rng.normal(0.0, std, size=out.shape)
    return out


def dmgd_step(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    cache: MomentCache,
    eta: float,
) -> np.ndarray:
    """Plain gradient step on the weight-minimized squared discrepancy."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    return positions - eta * grad_fm(target, spec, positions, cache)


def _uniform_mmd(target, spec, positions, cache) -> float:
    m = positions.shape[0]
    return mmd(target, spec, WeightedQuantization(positions, np.full(m, 1.0 / m)), cache)


def _optimal_mmd(target, spec, positions, cache) -> float:
    try:
        w = optimal_weights(target, spec, positions)
    except SingularKernelMatrix:
        return float("nan")
    return mmd(target, spec, WeightedQuantization(positions, w), cache)


def run_baseline(
    config: BaselineConfig,
    initial_positions: np.ndarray,
    target: EmpiricalTarget,
    spec: KernelSpec,
    cache: MomentCache,
    rng: np.random.Generator | None = None,
) -> Trace:
    """Drive a baseline for its iteration budget, recording discrepancies.

    The trace's main ``mmd`` column uses uniform weights 1/M for lloyd,
    iidms and mmdgf (these algorithms do not produce weights) and the
    optimal weights for dmgd (which optimizes exactly that objective).  The
    optimal-weight discrepancy of the current positions is always recorded
    in ``extras['mmd_optimal']``; Lloyd also records the number of empty
    cells per iteration in ``extras['empty_cells']``.
    """
    positions = np.atleast_2d(np.asarray(initial_positions, dtype=float)).copy()
    m = positions.shape[0]
    trace = Trace(algorithm=config.algorithm)
    trace.extras["mmd_optimal"] = []
    if config.algorithm == "lloyd":
        trace.extras["empty_cells"] = []
    t_start = _time.perf_counter()

    def record(iteration: int):
        if config.algorithm == "dmgd":
            val = _optimal_mmd(target, spec, positions, cache)
        else:
            val = _uniform_mmd(target, spec, positions, cache)
        trace.records.append(
            TraceRecord(
                iteration=iteration,
                time=float(iteration),
                mmd=val,
                min_weight=1.0 / m,
                max_weight=1.0 / m,
                wall_ms=(_time.perf_counter() - t_start) * 1e3,
            )
        )
        trace.extras["mmd_optimal"].append(_optimal_mmd(target, spec, positions, cache))
        if config.algorithm == "lloyd":
            occupied = np.unique(lloyd_assignments(target, positions))
            trace.extras["empty_cells"].append(m - occupied.size)

    record(0)
    for t in range(1, config.max_iterations + 1):
        if config.algorithm == "lloyd":
            positions = lloyd_step(target, positions)
        elif config.algorithm == "iidms":
            positions = mean_shift_step(target, spec, positions)
        elif config.algorithm == "mmdgf":
            positions = mmdgf_step(
                target,
                spec,
                positions,
                eta=config.step_size,
                noise_beta=config.noise_beta,
                iteration=t,
                rng=rng,
            )
        else:
            positions = dmgd_step(target, spec, positions, cache, config.step_size)
        record(t)

    final_weights = np.full(m, 1.0 / m)
    trace.final_state = FlowState(positions, final_weights, time=float(config.max_iterations))
    return trace
