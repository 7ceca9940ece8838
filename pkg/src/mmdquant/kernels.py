"""Kernel families with closed-form gradients and companion kernels.

Every kernel here is radial, kappa(x, y) = phi(||x - y||), and comes with a
*companion* kernel kbar satisfying

    grad_2 kappa(x, y) = (x - y) * kbar(x, y),

which is the structural identity behind mean-shift-style fixed points.

Conventions (important):

* Squared exponential: ``kappa(x, y) = exp(-||x - y||^2 / s^2)`` with ``s``
  the bandwidth.  There is NO factor 1/2 in the exponent; many libraries use
  ``exp(-r^2 / (2 s^2))`` instead, so translate bandwidths accordingly.
* Inverse multiquadric: ``kappa(x, y) = (c^2 + ||x - y||^2)^(-1/2)`` with
  offset ``c``.
* Matern 3/2: ``kappa(x, y) = (1 + sqrt(3) r / s) exp(-sqrt(3) r / s)``.

Companion closed forms (derived, each satisfies the gradient identity
analytically):

* SE:        kbar = (2 / s^2) * kappa          (proportional, ratio 2/s^2)
* IMQ:       kbar = (c^2 + r^2)^(-3/2)         (= kappa^3)
* Matern32:  kbar = (3 / s^2) * exp(-sqrt(3) r / s)

All squared distances are accumulated once per pair, so evaluation is
exactly symmetric in its two arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNEL_FAMILIES = ("se", "imq", "matern32")

_SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its length-scale parameters.

    Attributes:
        family: one of ``se``, ``imq``, ``matern32``.
        bandwidth: positive length scale in data-space units.
        imq_offset: positive offset ``c`` (IMQ only; ignored otherwise).
    """

    family: str
    bandwidth: float
    imq_offset: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(
                f"unknown kernel family {self.family!r}; expected one of {KERNEL_FAMILIES}"
            )
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.family == "imq" and not self.imq_offset > 0:
            raise ValueError(f"imq_offset must be positive, got {self.imq_offset}")


def diag_value(spec: KernelSpec) -> float:
    """Value of kappa(x, x), constant over x for all supported families."""
    if spec.family == "imq":
        return 1.0 / spec.imq_offset
    return 1.0


def companion_ratio(spec: KernelSpec) -> float | None:
    """If kbar = lambda * kappa identically, return lambda; else None.

    Only the squared exponential kernel has a proportional companion, with
    lambda = 2 / bandwidth^2.  This enables the fast fixed-point path that
    works with kernelized first moments directly.
    """
    if spec.family == "se":
        return 2.0 / spec.bandwidth**2
    return None


def kernel_from_sqdist(spec: KernelSpec, sqdist: np.ndarray) -> np.ndarray:
    """Evaluate kappa elementwise from squared distances."""
    sqdist = np.asarray(sqdist, dtype=float)
    if spec.family == "se":
        return np.exp(-sqdist / spec.bandwidth**2)
    if spec.family == "imq":
        return (spec.imq_offset**2 + sqdist) ** -0.5
    # matern32
    t = _SQRT3 * np.sqrt(sqdist) / spec.bandwidth
    return (1.0 + t) * np.exp(-t)


def companion_from_sqdist(spec: KernelSpec, sqdist: np.ndarray) -> np.ndarray:
    """Evaluate the companion kernel kbar elementwise from squared distances."""
    sqdist = np.asarray(sqdist, dtype=float)
    if spec.family == "se":
        return (2.0 / spec.bandwidth**2) * np.exp(-sqdist / spec.bandwidth**2)
    if spec.family == "imq":
        return (spec.imq_offset**2 + sqdist) ** -1.5
    t = _SQRT3 * np.sqrt(sqdist) / spec.bandwidth
    return (3.0 / spec.bandwidth**2) * np.exp(-t)


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, y has shape {y.shape}")
    return x, y


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """kappa(x, y) for a single pair of d-vectors."""
    x, y = _check_pair(x, y)
    diff = x - y
    return float(kernel_from_sqdist(spec, diff @ diff))


def companion_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """kbar(x, y) for a single pair of d-vectors."""
    x, y = _check_pair(x, y)
    diff = x - y
    return float(companion_from_sqdist(spec, diff @ diff))


def kernel_grad2(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of kappa(x, .) evaluated at y, i.e. (x - y) * kbar(x, y)."""
    x, y = _check_pair(x, y)
    diff = x - y
    return diff * companion_from_sqdist(spec, diff @ diff)


def self_sqdist(points: np.ndarray) -> np.ndarray:
    """Pairwise squared distances within one point set, exactly symmetric.

    Uses explicit differences, so entry (i, j) and entry (j, i) are computed
    from identical floating-point operations.  Intended for the small
    particle-configuration matrices, not for large sample sets.
    """
    points = np.asarray(points, dtype=float)
    diff = points[:, None, :] - points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def cross_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared distances between rows of ``a`` (n, d) and rows of ``b`` (m, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]} columns")
    # ||a||^2 + ||b||^2 - 2 a.b, clamped against roundoff negatives
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.maximum(sq, 0.0)


def cross_kernel(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kernel matrix kappa(a_i, b_j) of shape (n, m)."""
    return kernel_from_sqdist(spec, cross_sqdist(a, b))


def cross_companion(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Companion matrix kbar(a_i, b_j) of shape (n, m)."""
    return companion_from_sqdist(spec, cross_sqdist(a, b))


def kernel_matrix(spec: KernelSpec, positions: np.ndarray) -> np.ndarray:
    """Kernel matrix of a particle configuration; exactly symmetric."""
    return kernel_from_sqdist(spec, self_sqdist(positions))


def kbar_matrix(spec: KernelSpec, positions: np.ndarray) -> np.ndarray:
    """Companion-kernel matrix of a particle configuration; exactly symmetric."""
    return companion_from_sqdist(spec, self_sqdist(positions))


def median_heuristic(samples: np.ndarray, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise distance of (a subsample of) the data.

    Convenience only: bandwidth selection is otherwise left to the caller.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n = samples.shape[0]
    if n > max_points:
        idx = np.random.default_rng(seed).choice(n, size=max_points, replace=False)
        samples = samples[idx]
    sq = cross_sqdist(samples, samples)
    iu = np.triu_indices_from(sq, k=1)
    if iu[0].size == 0:
        return 1.0
    return float(np.median(np.sqrt(sq[iu])))
