import numpy as np
import pytest

from mmdquant import EmpiricalTarget, KernelSpec, build_moment_cache, spectral_benchmark
from mmdquant.presets import PRESET_NAMES, gmm_nd, preset
from mmdquant.targets import TargetSpec, integration_spectrum, sample

from conftest import make_rng


def test_sampling_is_deterministic_per_seed():
    for name in PRESET_NAMES:
        spec = preset(name, n_samples=200, seed=9)
        a = sample(spec)
        b = sample(preset(name, n_samples=200, seed=9))
        assert np.array_equal(a.samples, b.samples), name
        c = sample(preset(name, n_samples=200, seed=10))
        assert not np.array_equal(a.samples, c.samples), name


def test_single_gaussian_clt_mean_bound():
    spec = TargetSpec(
        family="gmm",
        n_samples=100_000,
        seed=4,
        means=np.zeros((1, 3)),
        covariances=np.eye(3)[None, :, :],
    )
    t = sample(spec)
    bound = 3.0 / np.sqrt(t.n)  # 3 sigma / sqrt(N) per coordinate
    assert np.all(np.abs(t.samples.mean(axis=0)) < bound)
    assert np.allclose(t.samples.std(axis=0), 1.0, atol=0.02)


def test_funnel_conditional_variance():
    t = sample(TargetSpec(family="funnel", n_samples=100_000, seed=5))
    x1, x2 = t.samples[:, 0], t.samples[:, 1]
    near_zero = np.abs(x1) < 0.05
    assert near_zero.sum() > 1000
    cond_var = x2[near_zero].var()
    assert abs(cond_var - 1.0) < 0.1  # exp(0) = 1 at the funnel's neck
    assert abs(x1.var() - 1.0) < 0.05


def test_checkers_support_containment():
    spec = preset("checkers", n_samples=5000, seed=6)
    t = sample(spec)
    inside = np.zeros(t.n, dtype=bool)
    for anchor in spec.anchors:
        local = t.samples - anchor
        inside |= np.all((local >= 0.0) & (local <= 1.0), axis=1)
    assert inside.all()


def test_rings_radial_distribution():
    spec = preset("rings", n_samples=30_000, seed=7)
    t = sample(spec)
    radius = np.linalg.norm(t.samples, axis=1)
    # every sample close to one of the nominal radii, up to ~5 sigma of 5% noise
    rel = np.min(np.abs(radius[:, None] / spec.radii[None, :] - 1.0), axis=1)
    assert rel.max() < 0.05 * 5.5
    # all three rings populated roughly equally
    nearest = np.argmin(np.abs(radius[:, None] - spec.radii[None, :]), axis=1)
    counts = np.bincount(nearest, minlength=3) / t.n
    assert np.all(np.abs(counts - 1 / 3) < 0.02)


def test_gmm2_preset_shape():
    spec = preset("gmm2")
    assert spec.means.shape == (3, 2)
    assert spec.covariances.shape == (3, 2, 2)
    t = sample(spec)
    assert t.samples.shape == (1000, 2)


def test_gmm100_preset_is_marginally_normalized():
    spec = preset("gmm100", n_samples=10)
    assert spec.means.shape == (5, 100)
    w, mu, cov = spec.mixture_weights, spec.means, spec.covariances
    marginal = w @ (np.einsum("mii->mi", cov) + mu**2) - (w @ mu) ** 2
    assert np.allclose(marginal, 1.0, atol=1e-10)


def test_gmm_nd_reduced_variant():
    spec = gmm_nd(20, 5, n_samples=500, seed=3)
    t = sample(spec)
    assert t.samples.shape == (500, 20)
    # empirical marginal variances hover around the normalized value 1
    assert 0.7 < t.samples.var(axis=0).mean() < 1.3


def test_joker_preset_top_right_mode():
    spec = preset("joker")
    assert np.allclose(spec.means[0], [0.98, 0.68])


def test_target_spec_validation():
    with pytest.raises(ValueError):
        TargetSpec(family="swirl")
    with pytest.raises(ValueError):
        TargetSpec(
            family="gmm",
            means=np.zeros((1, 2)),
            covariances=np.array([[[1.0, 2.0], [2.0, 1.0]]]),  # indefinite
        )
    with pytest.raises(ValueError):
        TargetSpec(
            family="gmm",
            means=np.zeros((2, 2)),
            covariances=np.stack([np.eye(2), np.eye(2)]),
            mixture_weights=np.array([0.7, 0.6]),
        )
    with pytest.raises(ValueError):
        TargetSpec(family="rings", radii=np.array([1.0, -2.0]))
    with pytest.raises(ValueError):
        TargetSpec(family="from_file")


# ---------------------------------------------------------------------------
# spectral benchmark


def test_spectral_benchmark_single_atom():
    spec = KernelSpec("se", 1.0)
    t = EmpiricalTarget(np.array([[0.0]]))
    cache = build_moment_cache(t, spec)
    assert spectral_benchmark(t, spec, 1, cache) == 0.0


def test_spectral_benchmark_two_atoms_closed_form():
    # eigenvalues of K/2 for two atoms at distance 2: (1 +- e^{-4}) / 2
    spec = KernelSpec("se", 1.0)
    t = EmpiricalTarget(np.array([[-1.0], [1.0]]))
    cache = build_moment_cache(t, spec)
    e = np.exp(-4.0)
    expected = np.sqrt((1.0 - e) / 2.0) / np.sqrt((1.0 + e) / 2.0)
    assert spectral_benchmark(t, spec, 1, cache) == pytest.approx(expected, rel=1e-12)
    assert cache.c_pi == pytest.approx((1.0 + e) / 2.0, rel=1e-14)


def test_spectral_benchmark_monotone_in_m():
    rng = make_rng(120)
    spec = KernelSpec("se", 1.0)
    t = EmpiricalTarget(rng.normal(size=(40, 2)))
    cache = build_moment_cache(t, spec)
    spectrum = integration_spectrum(t, spec)
    values = [
        spectral_benchmark(t, spec, m, cache, spectrum=spectrum) for m in range(1, 40)
    ]
    assert np.all(np.diff(values) <= 1e-15)


def test_integration_spectrum_nonnegative():
    rng = make_rng(121)
    for family in ("se", "imq", "matern32"):
        spec = KernelSpec(family, 1.0)
        t = EmpiricalTarget(rng.normal(size=(50, 3)))
        spectrum = integration_spectrum(t, spec)
        assert spectrum.min() >= -1e-10
        assert np.all(np.diff(spectrum) <= 1e-12)  # sorted descending
