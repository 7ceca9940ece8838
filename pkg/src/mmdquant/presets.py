"""Bundled target presets.

The Gaussian-mixture presets fix explicit means, covariances and mixture
weights (well-separated anisotropic components); the high-dimensional
variant is marginally normalized so the mixture covariance has ones on the
diagonal.  Bump PRESETS_VERSION whenever any preset parameter changes, since
downstream tolerance bands are tied to these numbers.
"""

from __future__ import annotations

import numpy as np

from .targets import TargetSpec

PRESETS_VERSION = 1

PRESET_NAMES = ("gmm2", "gmm100", "rings", "checkers", "funnel", "joker")

# Three well-separated anisotropic components in the plane.
_GMM2_MEANS = np.array([[-6.0, -3.0], [5.0, -4.0], [1.0, 6.0]])
_GMM2_COVS = np.array(
    [
        [[2.5, 1.0], [1.0, 1.0]],
        [[1.5, -0.625], [-0.625, 2.0]],
        [[0.875, 0.25], [0.25, 3.0]],
    ]
)
_GMM2_WEIGHTS = np.array([0.4, 0.35, 0.25])

# Three-mode planar mixture with a concentrated top-right mode at (0.98, 0.68).
_JOKER_MEANS = np.array([[0.98, 0.68], [-0.35, 0.75], [0.15, -0.45]])
_JOKER_COVS = np.array(
    [
        [[0.010, 0.004], [0.004, 0.016]],
        [[0.060, 0.035], [0.035, 0.050]],
        [[0.110, -0.060], [-0.060, 0.080]],
    ]
)
_JOKER_WEIGHTS = np.array([0.25, 0.35, 0.40])

_RING_RADII = np.array([1.0, 2.0, 3.0])

# Five unit cells in a checkerboard layout on [0, 3]^2.
_CHECKER_ANCHORS = np.array(
    [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]
)

# Internal seed fixing the procedural high-dimensional mixture parameters.
_GMM_ND_PARAM_SEED = 20240801


def gmm_nd(
    dim: int, n_components: int, n_samples: int = 1000, seed: int = 0
) -> TargetSpec:
    """Procedural high-dimensional Gaussian mixture, marginally normalized.

    Component means and covariances are generated from a fixed internal
    parameter seed (so the distribution itself is a constant of the
    package), then all coordinates are rescaled to give the mixture unit
    marginal variances.
    """
    rng = np.random.Generator(np.random.Philox(_GMM_ND_PARAM_SEED))
    means = rng.normal(0.0, 2.0, size=(n_components, dim))
    covs = np.empty((n_components, dim, dim))
    for m in range(n_components):
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        eigs = rng.uniform(0.3, 1.7, size=dim)
        covs[m] = (q * eigs) @ q.T
        covs[m] = 0.5 * (covs[m] + covs[m].T)
    weights = rng.uniform(0.5, 1.5, size=n_components)
    weights /= weights.sum()

    mean_bar = weights @ means
    marginal_var = (
        weights @ (np.einsum("mii->mi", covs) + means**2) - mean_bar**2
    )
    scale = 1.0 / np.sqrt(marginal_var)
    means = means * scale
    covs = covs * scale[None, :, None] * scale[None, None, :]
    return TargetSpec(
        family="gmm",
        n_samples=n_samples,
        seed=seed,
        means=means,
        covariances=covs,
        mixture_weights=weights,
        label=f"gmm{dim}",
    )


def preset(name: str, n_samples: int = 1000, seed: int = 0) -> TargetSpec:
    """Build a bundled target spec by name."""
    if name == "gmm2":
        return TargetSpec(
            family="gmm",
            n_samples=n_samples,
            seed=seed,
            means=_GMM2_MEANS.copy(),
            covariances=_GMM2_COVS.copy(),
            mixture_weights=_GMM2_WEIGHTS.copy(),
            label="gmm2",
        )
    if name == "gmm100":
        return gmm_nd(100, 5, n_samples=n_samples, seed=seed)
    if name == "rings":
        return TargetSpec(
            family="rings", n_samples=n_samples, seed=seed, radii=_RING_RADII.copy(),
            label="rings",
        )
    if name == "checkers":
        return TargetSpec(
            family="checkers",
            n_samples=n_samples,
            seed=seed,
            anchors=_CHECKER_ANCHORS.copy(),
            label="checkers",
        )
    if name == "funnel":
        return TargetSpec(family="funnel", n_samples=n_samples, seed=seed, label="funnel")
    if name == "joker":
        return TargetSpec(
            family="gmm",
            n_samples=n_samples,
            seed=seed,
            means=_JOKER_MEANS.copy(),
            covariances=_JOKER_COVS.copy(),
            mixture_weights=_JOKER_WEIGHTS.copy(),
            label="joker",
        )
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
