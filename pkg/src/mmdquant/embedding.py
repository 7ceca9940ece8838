"""Empirical measures, kernelized moments, optimal weights, MMD and its objective.

The target measure is a weighted collection of N samples.  A candidate
compression is a configuration of M particle positions with (possibly
signed) weights.  This module provides:

* the kernelized moments ``v0``, ``v1`` (kernel) and ``vbar0``, ``vbar1``
  (companion kernel) of the target, evaluated at query points,
* the MMD-optimal weights for fixed positions (a symmetric linear solve),
* the squared-MMD objective after minimizing over weights, ``fm``, and its
  closed-form gradient ``grad_fm``,
* the auxiliary matrix ``vhat1`` entering the fixed-point stationarity
  system.

All kernel linear systems are solved by Cholesky factorization with a small
additive jitter that escalates on failure; matrix inverses are never formed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kernels import (
    KernelSpec,
    cross_companion,
    cross_kernel,
    diag_value,
    kbar_matrix,
    kernel_matrix,
)

# Jitter ladder for kernel-system solves, relative to the diagonal value.
JITTER_START = 1e-12
JITTER_MAX = 1e-6
CONDITION_LIMIT = 1e14

WEIGHT_SUM_TOL = 1e-12


class SingularKernelMatrix(Exception):
    """Raised when a kernel linear system stays ill-conditioned under jitter."""


@dataclass
class EmpiricalTarget:
    """The target measure: N weighted sample points in d dimensions."""

    samples: np.ndarray
    weights: np.ndarray

    def __init__(self, samples: np.ndarray, weights: np.ndarray | None = None):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        n = samples.shape[0]
        if n < 1:
            raise ValueError("target needs at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("target samples contain NaN or Inf")
        if weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (n,):
                raise ValueError(f"expected {n} sample weights, got shape {weights.shape}")
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise ValueError("sample weights must be finite and nonnegative")
            if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
                raise ValueError(f"sample weights must sum to 1, got {weights.sum()!r}")
        self.samples = samples
        self.weights = weights

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass
class WeightedQuantization:
    """A candidate compression: M positions with real (signed) weights."""

    positions: np.ndarray
    weights: np.ndarray

    def __init__(self, positions: np.ndarray, weights: np.ndarray):
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (positions.shape[0],):
            raise ValueError(
                f"{positions.shape[0]} positions but weight shape {weights.shape}"
            )
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(weights))):
            raise ValueError("quantization entries must be finite")
        self.positions = positions
        self.weights = weights

    @property
    def m(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class MomentCache:
    """Precomputed double integral of the kernel against the target, per (target, kernel)."""

    c_pi: float


def _query(target: EmpiricalTarget, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Coerce a query to 2-d, remembering whether it was a single point."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    if y2.shape[1] != target.dim:
        raise ValueError(f"query dimension {y2.shape[1]} != target dimension {target.dim}")
    return y2, single


def v0(target: EmpiricalTarget, spec: KernelSpec, y: np.ndarray):
    """Kernel mean embedding of the target at y: sum_l pi_l kappa(x_l, y).

    Accepts a single d-vector (returns a scalar) or an (m, d) batch
    (returns an m-vector).
    """
    y2, single = _query(target, y)
    vals = target.weights @ cross_kernel(spec, target.samples, y2)
    return float(vals[0]) if single else vals


def v1(target: EmpiricalTarget, spec: KernelSpec, y: np.ndarray):
    """Kernelized first moment: sum_l pi_l x_l kappa(x_l, y); (d,) or (m, d)."""
    y2, single = _query(target, y)
    k = cross_kernel(spec, target.samples, y2)  # (n, m)
    vals = k.T @ (target.weights[:, None] * target.samples)
    return vals[0] if single else vals


def vbar0(target: EmpiricalTarget, spec: KernelSpec, y: np.ndarray):
    """Companion-kernel zeroth moment: sum_l pi_l kbar(x_l, y)."""
    y2, single = _query(target, y)
    vals = target.weights @ cross_companion(spec, target.samples, y2)
    return float(vals[0]) if single else vals


def vbar1(target: EmpiricalTarget, spec: KernelSpec, y: np.ndarray):
    """Companion-kernel first moment: sum_l pi_l x_l kbar(x_l, y)."""
    y2, single = _query(target, y)
    k = cross_companion(spec, target.samples, y2)
    vals = k.T @ (target.weights[:, None] * target.samples)
    return vals[0] if single else vals


def grad_v0(target: EmpiricalTarget, spec: KernelSpec, y: np.ndarray):
    """Gradient of v0, via the companion identity: vbar1(y) - y * vbar0(y)."""
    y2, single = _query(target, y)
    vals = vbar1(target, spec, y2) - y2 * vbar0(target, spec, y2)[:, None]
    return vals[0] if single else vals


def build_moment_cache(
    target: EmpiricalTarget,
    spec: KernelSpec,
    n_pairs: int | None = None,
    rng: np.random.Generator | None = None,
) -> MomentCache:
    """Compute the kernel double integral over the target.

    The exact value is an O(N^2) double sum.  If ``n_pairs`` is given, an
    unbiased Monte Carlo estimate over that many independent index pairs is
    returned instead; its standard error is about
    ``std(kappa) / sqrt(n_pairs)``, so downstream MMD values inherit an
    error of the same order.
    """
    x, w = target.samples, target.weights
    if n_pairs is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        i = rng.choice(target.n, size=n_pairs, p=w)
        j = rng.choice(target.n, size=n_pairs, p=w)
        diff = x[i] - x[j]
        from .kernels import kernel_from_sqdist  # local to avoid cycle noise

        vals = kernel_from_sqdist(spec, np.einsum("ij,ij->i", diff, diff))
        return MomentCache(c_pi=float(np.mean(vals)))
    # Blockwise double sum keeps memory at O(N * block).
    block = 2048
    total = 0.0
    for start in range(0, target.n, block):
        stop = min(start + block, target.n)
        k = cross_kernel(spec, x[start:stop], x)
        total += w[start:stop] @ k @ w
    return MomentCache(c_pi=float(total))


def solve_spd(
    matrix: np.ndarray, rhs: np.ndarray, spec: KernelSpec, label: str = "K"
) -> np.ndarray:
    """Solve ``matrix @ z = rhs`` for a kernel matrix, with escalating jitter.

    Jitter starts at ``1e-12 * B`` (B the constant kernel diagonal) and
    grows tenfold up to ``1e-6 * B``.  A factorization is accepted only if
    the jittered matrix's condition estimate stays below 1e14; otherwise
    SingularKernelMatrix is raised describing the offending system.  The
    jittered factor preconditions a few refinement sweeps against the
    original matrix, so mildly conditioned systems are solved essentially
    to working precision despite the jitter.
    """
    matrix = np.asarray(matrix, dtype=float)
    m = matrix.shape[0]
    scale = diag_value(spec)
    eye = np.eye(m)
    jitter = JITTER_START * scale
    last_err: str | None = None
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-9):
        jittered = matrix + jitter * eye
        try:
            factor = cho_factor(jittered, lower=True, check_finite=False)
        except (LinAlgError, ValueError) as exc:
            last_err = str(exc)
            jitter *= 10.0
            continue
        cond = float(np.linalg.cond(jittered))
        if cond > CONDITION_LIMIT:
            last_err = f"condition estimate {cond:.3e}"
            jitter *= 10.0
            continue
        z = cho_solve(factor, rhs, check_finite=False)
        best = z
        best_res = np.linalg.norm(matrix @ z - rhs)
        for _ in range(3):
            z = z + cho_solve(factor, rhs - matrix @ z, check_finite=False)
            res = np.linalg.norm(matrix @ z - rhs)
            if res < best_res:
                best, best_res = z, res
            else:
                break
        return best
    raise SingularKernelMatrix(
        f"{label} matrix (m={m}, family={spec.family}, bandwidth={spec.bandwidth}) "
        f"not solvable with jitter up to {JITTER_MAX * scale:.2e}: {last_err}"
    )


def optimal_weights(
    target: EmpiricalTarget, spec: KernelSpec, positions: np.ndarray
) -> np.ndarray:
    """MMD-optimal weights for fixed positions: solve K(Y) w = v0(Y)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    k = kernel_matrix(spec, positions)
    return solve_spd(k, v0(target, spec, positions), spec, label="K")


def mmd(
    target: EmpiricalTarget,
    spec: KernelSpec,
    quant: WeightedQuantization,
    cache: MomentCache,
) -> float:
    """MMD between the target and a weighted quantization.

    Expands to ``C_pi - 2 <w, v0(Y)> + w' K(Y) w`` and returns the square
    root of its nonnegative part (tiny negatives are roundoff).
    """
    w = quant.weights
    k = kernel_matrix(spec, quant.positions)
    sq = cache.c_pi - 2.0 * (w @ v0(target, spec, quant.positions)) + w @ k @ w
    return float(np.sqrt(max(sq, 0.0)))


def fm(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    cache: MomentCache,
) -> float:
    """Half squared MMD at the weight-optimal quantization of ``positions``.

    Closed form ``(C_pi - <w_opt, v0(Y)>) / 2``; lies in [0, C_pi / 2].
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    w = optimal_weights(target, spec, positions)
    val = 0.5 * (cache.c_pi - w @ v0(target, spec, positions))
    return float(max(val, 0.0))


def vhat1(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """The (M, d) matrix with rows grad v0(y_i) + y_i * sum_m w_m kbar(y_m, y_i).

    The stationarity system for optimal configurations reads
    ``Kbar(Y) W Y = vhat1(Y)`` at the optimal weights; this function accepts
    arbitrary weights, but that characterization holds at the optimum.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    weights = np.asarray(weights, dtype=float)
    kb = kbar_matrix(spec, positions)
    return grad_v0(target, spec, positions) + positions * (kb @ weights)[:, None]


def grad_fm(
    target: EmpiricalTarget,
    spec: KernelSpec,
    positions: np.ndarray,
    cache: MomentCache,
) -> np.ndarray:
    """Closed-form gradient of ``fm``: W (Kbar(Y) W Y - vhat1(Y)), shape (M, d)."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    w = optimal_weights(target, spec, positions)
    kb = kbar_matrix(spec, positions)
    defect = kb @ (w[:, None] * positions) - vhat1(target, spec, positions, w)
    return w[:, None] * defect


def load_target_csv(path: str | Path) -> EmpiricalTarget:
    """Read a target from CSV: one sample per row, optional header.

    If the header's last column is named ``weight``, that column supplies
    sample weights; otherwise all columns are coordinates and weights are
    uniform.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty target file")
    header = rows[0]
    has_header = not _all_numeric(header)
    weight_col = has_header and header[-1].strip().lower() == "weight"
    data_rows = rows[1:] if has_header else rows
    values = np.array([[float(v) for v in row] for row in data_rows if row])
    if values.ndim != 2 or values.size == 0:
        raise ValueError(f"{path}: no numeric data")
    if weight_col:
        weights = values[:, -1]
        total = weights.sum()
        if total <= 0:
            raise ValueError(f"{path}: weight column must have positive sum")
        return EmpiricalTarget(values[:, :-1], weights / total)
    return EmpiricalTarget(values)


def _all_numeric(row: list[str]) -> bool:
    try:
        for v in row:
            float(v)
    except ValueError:
        return False
    return True
