"""Synthetic target generators and the spectral optimal-quantization benchmark."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EmpiricalTarget, MomentCache, load_target_csv
from .kernels import KernelSpec, cross_kernel

TARGET_FAMILIES = ("gmm", "rings", "checkers", "funnel", "from_file")


@dataclass
class TargetSpec:
    """Parameters of a target distribution plus sampling size and seed."""

    family: str
    n_samples: int = 1000
    seed: int = 0
    # gmm
    means: np.ndarray | None = None
    covariances: np.ndarray | None = None
    mixture_weights: np.ndarray | None = None
    # rings
    radii: np.ndarray | None = None
    ring_weights: np.ndarray | None = None
    # checkers
    anchors: np.ndarray | None = None
    # from_file
    path: str | None = None
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.family not in TARGET_FAMILIES:
            raise ValueError(
                f"unknown target family {self.family!r}; expected one of {TARGET_FAMILIES}"
            )
        if self.family != "from_file" and self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.family == "gmm":
            self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
            self.covariances = np.asarray(self.covariances, dtype=float)
            n_comp, dim = self.means.shape
            if self.covariances.shape != (n_comp, dim, dim):
                raise ValueError(
                    f"covariances must have shape {(n_comp, dim, dim)}, "
                    f"got {self.covariances.shape}"
                )
            if self.mixture_weights is None:
                self.mixture_weights = np.full(n_comp, 1.0 / n_comp)
            self.mixture_weights = np.asarray(self.mixture_weights, dtype=float)
            _check_simplex(self.mixture_weights, n_comp)
            for idx, cov in enumerate(self.covariances):
                if not np.allclose(cov, cov.T, atol=1e-12):
                    raise ValueError(f"covariance {idx} is not symmetric")
                if np.linalg.eigvalsh(cov).min() <= 0:
                    raise ValueError(f"covariance {idx} is not positive definite")
        elif self.family == "rings":
            self.radii = np.atleast_1d(np.asarray(self.radii, dtype=float))
            if np.any(self.radii <= 0):
                raise ValueError("ring radii must be positive")
            if self.ring_weights is None:
                self.ring_weights = np.full(self.radii.size, 1.0 / self.radii.size)
            self.ring_weights = np.asarray(self.ring_weights, dtype=float)
            _check_simplex(self.ring_weights, self.radii.size)
        elif self.family == "checkers":
            self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
            if self.anchors.shape[1] != 2:
                raise ValueError("checkers anchors must be 2-dimensional")
        elif self.family == "from_file":
            if not self.path:
                raise ValueError("from_file target needs a path")


def _check_simplex(w: np.ndarray, size: int):
    if w.shape != (size,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("mixture weights must be nonnegative and sum to 1")


def default_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used throughout for reproducible sampling."""
    return np.random.Generator(np.random.Philox(seed))


def sample(spec: TargetSpec, rng: np.random.Generator | None = None) -> EmpiricalTarget:
    """Draw the empirical target defined by ``spec``.

    Deterministic for a fixed spec: the default generator is keyed by
    ``spec.seed``.  Passing ``rng`` explicitly overrides that stream.
    """
    if spec.family == "from_file":
        return load_target_csv(spec.path)
    rng = rng if rng is not None else default_rng(spec.seed)
    n = spec.n_samples
    if spec.family == "gmm":
        comps = rng.choice(spec.means.shape[0], size=n, p=spec.mixture_weights)
        z = rng.standard_normal((n, spec.means.shape[1]))
        x = np.empty_like(z)
        for m in range(spec.means.shape[0]):
            mask = comps == m
            chol = np.linalg.cholesky(spec.covariances[m])
            x[mask] = spec.means[m] + z[mask] @ chol.T
        return EmpiricalTarget(x)
    if spec.family == "rings":
        comps = rng.choice(spec.radii.size, size=n, p=spec.ring_weights)
        radial = rng.normal(1.0, 0.05, size=n)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        r = spec.radii[comps] * radial
        return EmpiricalTarget(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    if spec.family == "checkers":
        comps = rng.choice(spec.anchors.shape[0], size=n)
        u = rng.random((n, 2))
        return EmpiricalTarget(spec.anchors[comps] + u)
    # funnel: x1 standard normal, x2 centered normal with variance exp(x1)
    x1 = rng.standard_normal(n)
    x2 = rng.standard_normal(n) * np.exp(0.5 * x1)
    return EmpiricalTarget(np.column_stack([x1, x2]))


def integration_spectrum(target: EmpiricalTarget, spec: KernelSpec) -> np.ndarray:
    """Eigenvalues (descending) of the kernel integration operator's discretization.

    For a weighted empirical measure this is the symmetrically weighted
    kernel matrix diag(sqrt(w)) K diag(sqrt(w)); with uniform weights it
    reduces to K / N.
    """
    root = np.sqrt(target.weights)
    mat = cross_kernel(spec, target.samples, target.samples) * np.outer(root, root)
    vals = np.linalg.eigvalsh(mat)
    return vals[::-1]


def spectral_benchmark(
    target: EmpiricalTarget,
    spec: KernelSpec,
    m: int,
    cache: MomentCache,
    spectrum: np.ndarray | None = None,
) -> float:
    """Reference level for the best discrepancy achievable with ``m`` points.

    Square root of the (m+1)-st eigenvalue of the integration operator,
    normalized by the target's embedding norm.  The discretized operator
    has rank at most N, so for m >= N the level is exactly zero.  Pass a
    precomputed ``spectrum`` when evaluating a curve over many values of m.
    """
    if m < 1:
        raise ValueError(f"m must be positive, got {m}")
    if m >= target.n:
        return 0.0
    if spectrum is None:
        spectrum = integration_spectrum(target, spec)
    lam = max(float(spectrum[m]), 0.0)
    return float(np.sqrt(lam / cache.c_pi))
