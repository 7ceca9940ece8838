"""Damped fixed-point iteration on particle positions, driven by kernelized moments.

The map sends a configuration Y to ``W(Y)^-1 Kbar(Y)^-1 vhat1(Y)``, where W
is the diagonal matrix of MMD-optimal weights.  Iterating it with damping
``eta``,

    Y <- (1 - eta) Y + eta Psi(Y),

is exactly preconditioned gradient descent on the weight-minimized squared
discrepancy, with preconditioner W Kbar W.  For the squared-exponential
kernel (companion proportional to the kernel) the map simplifies to
``W^-1 K^-1 v1(Y)``, which needs one factorization instead of two; that fast
path is selected automatically.

With a single particle the map coincides with the classical mean shift map
whenever the companion is proportional to the kernel.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np

from .dynamics import FlowState, Trace, TraceRecord
from .embedding import (
    EmpiricalTarget,
    MomentCache,
    fm,
    mmd,
    optimal_weights,
    solve_spd,
    v0,
    v1,
    vhat1,
    WeightedQuantization,
)
from .kernels import KernelSpec, companion_ratio, kbar_matrix, kernel_matrix

BACKTRACK_LIMIT = 30

DESCENT_MODES = ("fixed", "backtracking")
MAP_PATHS = ("auto", "general", "fast")


class DegenerateWeight(Exception):
    """An optimal weight's magnitude underflowed; the map row is undefined."""


@dataclass
class MsipConfig:
    """Damping, iteration budget and stopping rule for the fixed-point run."""

    eta: float = 0.8
    max_iterations: int = 300
    stationarity_tol: float = 1e-8
    step_shrink: float = 0.5
    descent_mode: str = "fixed"

    def __post_init__(self):
        # eta == 0 is tolerated as the identity update of msip_step; a run
        # requires a strictly positive damping.
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if not 0.0 < self.step_shrink < 1.0:
            raise ValueError(f"step_shrink must be in (0, 1), got {self.step_shrink}")
        if self.descent_mode not in DESCENT_MODES:
            raise ValueError(f"descent_mode must be one of {DESCENT_MODES}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


def _check_weights(w: np.ndarray, indices: np.ndarray | None = None):
    bad = np.nonzero(np.abs(w) < 1e-300)[0]
    if bad.size:
        which = int(indices[bad[0]]) if indices is not None else int(bad[0])
        raise DegenerateWeight(
            f"optimal weight magnitude underflow at particle index {which}"
        )


def msip_map(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    cache: MomentCache,
    path: str = "auto",
) -> np.ndarray:
    """The raw fixed-point map: rows of Kbar^-1 vhat1, divided by the optimal weights.

    A particle thrown so far out that its kernel values underflow decouples
    from the system; when the companion is proportional to the kernel, that
    row's exact limit is the classical mean shift update, which is computed
    in rescaled form instead of through the (then 0/0) linear algebra.
    """
    if path not in MAP_PATHS:
        raise ValueError(f"path must be one of {MAP_PATHS}")
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    w = optimal_weights(target, spec, positions)
    rescued = _far_decoupled(target, spec, positions, w)
    _check_weights(w[~rescued], indices=np.nonzero(~rescued)[0])
    use_fast = path == "fast" or (path == "auto" and companion_ratio(spec) is not None)
    if use_fast and companion_ratio(spec) is None:
        raise ValueError("fast path requires a companion proportional to the kernel")
    if use_fast:
        z = solve_spd(
            kernel_matrix(spec, positions), v1(target, spec, positions), spec, label="K"
        )
    else:
        z = solve_spd(
            kbar_matrix(spec, positions),
            vhat1(target, spec, positions, w),
            spec,
            label="Kbar",
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = z / w[:, None]
    if rescued.any():
        from .baselines import mean_shift_step

        out[rescued] = np.atleast_2d(mean_shift_step(target, spec, positions[rescued]))
    return out


_FAR_TINY = 1e-290


def _far_decoupled(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    w: np.ndarray,
) -> np.ndarray:
    """Rows whose kernel couplings underflowed and that admit the mean shift limit."""
    if companion_ratio(spec) is None:
        return np.zeros(positions.shape[0], dtype=bool)
    suspect = np.abs(w) < _FAR_TINY
    if not suspect.any():
        return suspect
    k = kernel_matrix(spec, positions)
    off_diag = k - np.diag(np.diag(k))
    v0y = np.atleast_1d(v0(target, spec, positions))
    return suspect & (np.abs(v0y) < _FAR_TINY) & (off_diag.max(axis=1) < _FAR_TINY)


def stationarity_residual(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    cache: MomentCache,
) -> float:
    """Normalized Frobenius defect of the stationarity system Kbar W Y = vhat1."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    w = optimal_weights(target, spec, positions)
    defect = kbar_matrix(spec, positions) @ (w[:, None] * positions) - vhat1(
        target, spec, positions, w
    )
    m, d = positions.shape
    return float(np.linalg.norm(defect) / np.sqrt(m * d))


def _damped_step(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    cache: MomentCache,
    config: MsipConfig,
    path: str = "auto",
) -> tuple[np.ndarray, float, bool]:
    """One damped update; returns (new positions, eta used, backtracking exhausted)."""
    mapped = msip_map(target, spec, positions, cache, path=path)
    if config.descent_mode == "fixed":
        eta = config.eta
        return (1.0 - eta) * positions + eta * mapped, eta, False
    f_old = fm(target, spec, positions, cache)
    eta = config.eta
    for _ in range(BACKTRACK_LIMIT):
        candidate = (1.0 - eta) * positions + eta * mapped
        if fm(target, spec, candidate, cache) <= f_old:
            return candidate, eta, False
        eta *= config.step_shrink
    return (1.0 - eta) * positions + eta * mapped, eta, True


def msip_step(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    cache: MomentCache,
    config: MsipConfig,
    path: str = "auto",
) -> np.ndarray:
    """One damped fixed-point update (convex combination of Y and the map)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if config.eta == 0.0:  # allowed here as the identity update
        return positions.copy()
    new_positions, _, _ = _damped_step(target, spec, positions, cache, config, path)
    return new_positions


def run_msip(
    initial_positions: np.ndarray,
    target: EmpiricalTarget,
    spec: KernelSpec,
    cache: MomentCache,
    config: MsipConfig | None = None,
    path: str = "auto",
) -> Trace:
    """Iterate the damped map until the stationarity residual drops below tolerance.

    The trace records, per iterate, the discrepancy of the weight-optimal
    quantization and the weight extremes; the final state carries the
    optimal weights for the final configuration.
    """
    config = config if config is not None else MsipConfig()
    if config.eta == 0.0:
        raise ValueError("a fixed-point run requires eta > 0")
    positions = np.atleast_2d(np.asarray(initial_positions, dtype=float)).copy()
    trace = Trace(algorithm="msip")
    trace.extras["fm"] = []
    t_start = _time.perf_counter()

    iteration = 0
    while True:
        try:
            w = optimal_weights(target, spec, positions)
            defect = kbar_matrix(spec, positions) @ (w[:, None] * positions) - vhat1(
                target, spec, positions, w
            )
            m, d = positions.shape
            residual = float(np.linalg.norm(defect) / np.sqrt(m * d))
            val = mmd(target, spec, WeightedQuantization(positions, w), cache)
            trace.records.append(
                TraceRecord(
                    iteration=iteration,
                    time=float(iteration),
                    mmd=val,
                    min_weight=float(w.min()),
                    max_weight=float(w.max()),
                    wall_ms=(_time.perf_counter() - t_start) * 1e3,
                )
            )
            trace.extras["fm"].append(fm(target, spec, positions, cache))
            if residual <= config.stationarity_tol or iteration >= config.max_iterations:
                break
            positions, _, exhausted = _damped_step(
                target, spec, positions, cache, config, path
            )
            if exhausted:
                trace.warnings.append(
                    f"backtracking exhausted at iteration {iteration}; step accepted"
                )
        except Exception as exc:
            exc.args = (f"iteration {iteration}: {exc}",)
            raise
        iteration += 1

    trace.final_state = FlowState(positions, w, time=float(iteration))
    return trace
