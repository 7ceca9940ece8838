"""Interacting-particle ODE for the transport-reaction flow and its integrators.

Positions follow the negative gradient of the discrepancy's first variation
(scaled by ``alpha``); weights follow a reaction term proportional to the
first variation itself:

    dy_i/dt = -alpha * ( sum_m w_m grad_2 kappa(y_m, y_i) - grad v0(y_i) )
    dw_i/dt = -w_i  * ( sum_m w_m kappa(y_m, y_i)         - v0(y_i) )

Weights are deliberately NOT projected to the simplex: the flow itself keeps
weights in (0, 1) when started there with a nonnegative constant-diagonal
kernel, and projecting would break that structure.

Solvers: explicit Euler, classical RK4, and an adaptive Bogacki-Shampine 2(3)
embedded pair.  Iteration budgets count right-hand-side evaluations, so an
RK4 run with budget T takes T/4 steps.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import (
    EmpiricalTarget,
    MomentCache,
    WeightedQuantization,
    build_moment_cache,
    grad_v0,
    mmd,
    v0,
)
from .kernels import KernelSpec, kbar_matrix, kernel_matrix

SOLVERS = ("euler", "rk4", "rk23")

# Adaptive controller limits.
MIN_STEP = 1e-12
SAFETY = 0.9
MAX_GROWTH = 5.0
MAX_SHRINK = 0.2

DESCENT_SLACK = 1e-8

# Weights this small cannot change sign under the reaction term; freeze them.
WEIGHT_FLOOR = 1e-300


class NonFiniteState(Exception):
    """A state entry became NaN/Inf during integration."""


class StepUnderflow(Exception):
    """The adaptive solver's step size fell below the minimum."""


@dataclass
class FlowState:
    """Particle positions, weights, and flow time."""

    positions: np.ndarray
    weights: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.positions.shape[0],):
            raise ValueError("one weight per particle required")


@dataclass
class TraceRecord:
    iteration: int
    time: float
    mmd: float
    min_weight: float
    max_weight: float
    wall_ms: float


@dataclass
class Trace:
    """Per-iteration diagnostics plus the final state of a run."""

    records: list[TraceRecord] = field(default_factory=list)
    final_state: FlowState | None = None
    extras: dict[str, list] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    algorithm: str = ""
    seed: int | None = None

    def mmd_series(self) -> np.ndarray:
        return np.array([r.mmd for r in self.records])

    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.records])


def wfr_rhs(
    state: FlowState,
    target: EmpiricalTarget,
    spec: KernelSpec,
    alpha: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Time derivatives (positions, weights) of the coupled particle system."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    y, w = state.positions, state.weights
    kb = kbar_matrix(spec, y)
    k = kernel_matrix(spec, y)
    # sum_m w_m (y_m - y_i) kbar(y_m, y_i), rows indexed by i
    interaction = kb @ (w[:, None] * y) - y * (kb @ w)[:, None]
    d_pos = -alpha * (interaction - grad_v0(target, spec, y))
    d_w = -w * (k @ w - v0(target, spec, y))
    d_w[np.abs(w) < WEIGHT_FLOOR] = 0.0
    return d_pos, d_w


def euler_step(
    state: FlowState,
    target: EmpiricalTarget,
    spec: KernelSpec,
    alpha: float,
    eta: float,
) -> FlowState:
    """One explicit Euler step of size ``eta``."""
    if not eta > 0:
        raise ValueError(f"step size must be positive, got {eta}")
    d_pos, d_w = wfr_rhs(state, target, spec, alpha)
    return FlowState(
        positions=state.positions + eta * d_pos,
        weights=state.weights + eta * d_w,
        time=state.time + eta,
    )


def _pack(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.concatenate([y.ravel(), w])


def _unpack(z: np.ndarray, m: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    return z[: m * d].reshape(m, d), z[m * d :]


def simulate(
    initial: FlowState,
    target: EmpiricalTarget,
    spec: KernelSpec,
    alpha: float = 25.0,
    solver: str = "rk23",
    max_iterations: int | None = None,
    max_time: float | None = None,
    step: float | None = None,
    rtol: float = 1e-6,
    atol: float = 1e-9,
    cache: MomentCache | None = None,
    record_every: int = 1,
) -> Trace:
    """Integrate the particle flow and record diagnostics at accepted steps.

    ``max_iterations`` bounds right-hand-side evaluations; ``max_time``
    bounds flow time; at least one is required.  ``step`` is the fixed step
    for euler/rk4 and the initial step for the adaptive solver.  Increases of
    the recorded discrepancy beyond a small slack are flagged in
    ``extras['descent_violation']`` rather than raised: the exact flow
    descends, a discretization need not at solver tolerance.
    """
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    if max_iterations is None and max_time is None:
        raise ValueError("provide max_iterations and/or max_time")
    if solver in ("euler", "rk4") and step is None:
        raise ValueError(f"{solver} requires a step size")

    if cache is None:
        cache = build_moment_cache(target, spec)
    m, d = initial.positions.shape

    def rhs(z: np.ndarray) -> np.ndarray:
        y, w = _unpack(z, m, d)
        dy, dw = wfr_rhs(FlowState(y, w, 0.0), target, spec, alpha)
        return _pack(dy, dw)

    trace = Trace(algorithm="wfr")
    trace.extras["descent_violation"] = []
    t_start = _time.perf_counter()
    evals = 0
    t = initial.time
    z = _pack(initial.positions.copy(), initial.weights.copy())
    last_mmd = np.inf
    steps_accepted = 0

    def check_finite(zv: np.ndarray):
        if not np.all(np.isfinite(zv)):
            raise NonFiniteState(
                f"non-finite state after {evals} evaluations (t={t:.6g}); "
                "try a smaller step or tolerance"
            )

    def record():
        nonlocal last_mmd
        y, w = _unpack(z, m, d)
        val = mmd(target, spec, WeightedQuantization(y, w), cache)
        violated = val > last_mmd + DESCENT_SLACK
        trace.records.append(
            TraceRecord(
                iteration=evals,
                time=t,
                mmd=val,
                min_weight=float(w.min()),
                max_weight=float(w.max()),
                wall_ms=(_time.perf_counter() - t_start) * 1e3,
            )
        )
        trace.extras["descent_violation"].append(int(violated))
        if violated:
            trace.warnings.append(
                f"descent violation at iteration {evals}: {val:.3e} > {last_mmd:.3e}"
            )
        last_mmd = val

    def out_of_budget() -> bool:
        if max_iterations is not None and evals >= max_iterations:
            return True
        if max_time is not None and t >= max_time - 1e-15:
            return True
        return False

    def clip_to_horizon(h: float) -> float:
        if max_time is not None:
            return min(h, max_time - t)
        return h

    record()

    if solver == "euler":
        while not out_of_budget():
            h = clip_to_horizon(step)
            z = z + h * rhs(z)
            evals += 1
            t += h
            check_finite(z)
            steps_accepted += 1
            if steps_accepted % record_every == 0 or out_of_budget():
                record()
    elif solver == "rk4":
        while not out_of_budget():
            if max_iterations is not None and max_iterations - evals < 4:
                break
            h = clip_to_horizon(step)
            k1 = rhs(z)
            k2 = rhs(z + 0.5 * h * k1)
            k3 = rhs(z + 0.5 * h * k2)
            k4 = rhs(z + h * k3)
            z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            evals += 4
            t += h
            check_finite(z)
            steps_accepted += 1
            if steps_accepted % record_every == 0 or out_of_budget():
                record()
    else:
        # Bogacki-Shampine 2(3): propagate the third-order solution, control
        # the step with the embedded second-order error estimate (FSAL).
        h = step if step is not None else 1e-2
        k1 = rhs(z)
        evals += 1
        while not out_of_budget():
            h = clip_to_horizon(h)
            if h < MIN_STEP:
                raise StepUnderflow(
                    f"adaptive step underflow ({h:.3e} < {MIN_STEP:.0e}) at t={t:.6g}"
                )
            k2 = rhs(z + 0.5 * h * k1)
            k3 = rhs(z + 0.75 * h * k2)
            z_new = z + h * (2.0 / 9.0 * k1 + 1.0 / 3.0 * k2 + 4.0 / 9.0 * k3)
            k4 = rhs(z_new)
            evals += 3
            err = h * (
                (2.0 / 9.0 - 7.0 / 24.0) * k1
                + (1.0 / 3.0 - 1.0 / 4.0) * k2
                + (4.0 / 9.0 - 1.0 / 3.0) * k3
                - 1.0 / 8.0 * k4
            )
            scale = atol + rtol * np.maximum(np.abs(z), np.abs(z_new))
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if err_norm <= 1.0:
                t += h
                z = z_new
                k1 = k4
                check_finite(z)
                steps_accepted += 1
                if steps_accepted % record_every == 0 or out_of_budget():
                    record()
            factor = MAX_GROWTH if err_norm == 0.0 else SAFETY * err_norm ** (-1.0 / 3.0)
            h = h * min(MAX_GROWTH, max(MAX_SHRINK, factor))

    if trace.records[-1].iteration != evals:
        record()
    y, w = _unpack(z, m, d)
    trace.final_state = FlowState(y, w, t)
    return trace


def write_trace_csv(trace: Trace, path: str | Path):
    """Serialize a trace: iteration,time,mmd,min_weight,max_weight,wall_ms[,extras]."""
    path = Path(path)
    extra_keys = sorted(trace.extras)
    with path.open("w", newline="") as fh:
        cols = ["iteration", "time", "mmd", "min_weight", "max_weight", "wall_ms"]
        fh.write(",".join(cols + extra_keys) + "\n")
        for idx, r in enumerate(trace.records):
            row = [
                str(r.iteration),
                repr(r.time),
                repr(r.mmd),
                repr(r.min_weight),
                repr(r.max_weight),
                f"{r.wall_ms:.3f}",
            ]
            for key in extra_keys:
                row.append(repr(trace.extras[key][idx]))
            fh.write(",".join(row) + "\n")


def read_trace_csv(path: str | Path) -> Trace:
    """Read back a trace CSV written by :func:`write_trace_csv`."""
    path = Path(path)
    trace = Trace()
    with path.open(newline="") as fh:
        header = fh.readline().strip().split(",")
        extra_keys = header[6:]
        trace.extras = {k: [] for k in extra_keys}
        for line in fh:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            trace.records.append(
                TraceRecord(
                    iteration=int(parts[0]),
                    time=float(parts[1]),
                    mmd=float(parts[2]),
                    min_weight=float(parts[3]),
                    max_weight=float(parts[4]),
                    wall_ms=float(parts[5]),
                )
            )
            for key, val in zip(extra_keys, parts[6:]):
                trace.extras[key].append(float(val))
    return trace


def write_state_csv(state: FlowState, path: str | Path):
    """Serialize a final state: weight,coord_1,...,coord_d."""
    path = Path(path)
    d = state.positions.shape[1]
    with path.open("w", newline="") as fh:
        fh.write(",".join(["weight"] + [f"coord_{j + 1}" for j in range(d)]) + "\n")
        for w, row in zip(state.weights, state.positions):
            fh.write(",".join([repr(float(w))] + [repr(float(v)) for v in row]) + "\n")


def read_state_csv(path: str | Path) -> FlowState:
    """Read back a final-state CSV written by :func:`write_state_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return FlowState(positions=data[:, 1:], weights=data[:, 0])
