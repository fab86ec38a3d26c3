import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.special import ndtri

from cpfn.errors import DimensionMismatch, InvalidConfig, InvalidTau
from cpfn.inference import (conditional_density, conditional_quantile, conditional_statistics,
                            sample_conditional, sample_standardized, summarize_samples)
from cpfn.kernels import scaled_kernel_eval
from cpfn.model import Standardization, init_model

from conftest import stub_model


def fitted_like(seed=0, transform="identity", q=1):
    """Random network with non-trivial standardization statistics."""
    m = init_model(2, q, r=4, hidden_widths=(8, 8), seed=seed, eps0=0.3)
    return m.replace(x_stats=Standardization([0.5, -1.0], [2.0, 0.5]),
                     y_stats=Standardization(np.full(q, 0.2), np.full(q, 1.5)), y_transform=transform)


def test_sampling_is_deterministic_under_seed():
    m = fitted_like()
    a = sample_conditional(m, [0.1, 0.2], 50, np.random.default_rng(3))
    b = sample_conditional(m, [0.1, 0.2], 50, np.random.default_rng(3))
    assert a.shape == (50, 1) and np.array_equal(a, b)


def test_batch_sampling_shape():
    m = fitted_like(q=2)
    s = sample_conditional(m, np.zeros((4, 2)), 7, np.random.default_rng(0))
    assert s.shape == (4, 7, 2)


def test_raw_and_standardized_samples_agree_bit_exactly():
    m = fitted_like(transform="log1p")
    x = np.array([0.3, -0.7])
    raw = sample_conditional(m, x, 100, np.random.default_rng(9))
    z = sample_standardized(m, m.x_stats.apply(x)[None], 100, np.random.default_rng(9))[0]
    np.testing.assert_array_equal(raw, np.expm1(m.y_stats.invert(z)))


def test_sampling_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        sample_conditional(fitted_like(), [1.0, 2.0, 3.0], 5, np.random.default_rng(0))
    with pytest.raises(InvalidConfig):
        sample_conditional(fitted_like(), [1.0, 2.0], 0, np.random.default_rng(0))


def test_density_of_zero_stub_at_origin():
    m = stub_model(r=1, phi_out=[1.0], psi_out=[0.0], eps0=0.05)
    assert conditional_density(m, [0.0], 0.0) == pytest.approx(7.978845608, rel=1e-9)


def test_log1p_density_at_zero_has_unit_jacobian():
    m = fitted_like()
    t = fitted_like(transform="log1p")
    assert conditional_density(t, [0.1, 0.2], 0.0) == pytest.approx(
        conditional_density(m, [0.1, 0.2], 0.0), rel=1e-14)
    # elsewhere the Jacobian 1/(1+y) applies
    y = 1.5
    assert conditional_density(t, [0.1, 0.2], y) == pytest.approx(
        conditional_density(m, [0.1, 0.2], np.log1p(y)) / (1 + y), rel=1e-13)


def test_density_is_deterministic_by_default_and_random_with_rng():
    m = fitted_like()
    a = conditional_density(m, [0.0, 0.0], [0.1, 0.5])
    b = conditional_density(m, [0.0, 0.0], [0.1, 0.5])
    np.testing.assert_array_equal(a, b)
    c = conditional_density(m, [0.0, 0.0], [0.1, 0.5], rng=np.random.default_rng(1))
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("seed", range(5))
def test_density_integrates_to_one(seed):
    m = fitted_like(seed)
    x = np.array([0.3, -0.2])
    s = sample_conditional(m, x, 2000, np.random.default_rng(seed))[:, 0]
    pad = 8 * m.bandwidth()[0] * m.y_stats.std[0]
    ys = np.linspace(s.min() - pad, s.max() + pad, 4001)
    dens = conditional_density(m, x, ys)
    assert np.all(dens >= 0)
    assert trapezoid(dens, ys) == pytest.approx(1.0, abs=0.02)


def test_paired_density_matches_pointwise():
    m = fitted_like(q=2)
    X = np.random.default_rng(0).normal(size=(6, 2))
    Y = np.random.default_rng(1).normal(size=(6, 2))
    paired = conditional_density(m, X, Y, R_density=200)
    single = [conditional_density(m, X[i], Y[i], R_density=200) for i in range(6)]
    np.testing.assert_allclose(paired, single, rtol=1e-12)


def test_samples_smoothed_with_kernel_match_density():
    m = fitted_like()
    x = np.array([0.2, 0.1])
    xs = m.x_stats.apply(x)[None]
    z = sample_standardized(m, xs, 10_000, np.random.default_rng(5))[0]
    grid = np.linspace(z.min(), z.max(), 41)
    k = scaled_kernel_eval(m.kernel, m.bandwidth_spec, grid[:, None, None] - z[None])
    smooth, se1 = k.mean(axis=1), k.std(axis=1) / np.sqrt(k.shape[1])
    R = 1000
    zd = sample_standardized(m, xs, R, np.random.default_rng(20240531))[0]
    kd = scaled_kernel_eval(m.kernel, m.bandwidth_spec, grid[:, None, None] - zd[None])
    se2 = kd.std(axis=1) / np.sqrt(R)
    dens = conditional_density(m, x, m.y_stats.invert(grid)) * m.y_stats.std[0]
    assert np.all(np.abs(smooth - dens) <= 3 * np.sqrt(se1 ** 2 + se2 ** 2) + 1e-12)


def test_quantile_conventions():
    assert conditional_quantile([1, 2, 3, 4, 5], 0.5) == 3
    assert conditional_quantile([5, 1, 4, 2, 3], 1e-12) == pytest.approx(1)
    assert conditional_quantile([5, 1, 4, 2, 3], 1 - 1e-12) == pytest.approx(5)
    assert conditional_quantile([1, 2, 3, 4], 0.5) == 2.5
    s = np.random.default_rng(0).normal(size=100_000)
    assert conditional_quantile(s, 0.9) == pytest.approx(ndtri(0.9), abs=0.02)
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(InvalidTau):
            conditional_quantile(s, bad)


def test_statistics_of_constant_model():
    m = stub_model(r=1, phi_out=[1.0], psi_out=[0.4], eps0=0.05)
    stats = conditional_statistics(m, [0.0], 200, np.random.default_rng(0))
    assert stats.mean[0] == pytest.approx(0.4, abs=1e-12)
    assert np.abs(stats.covariance).max() < 1e-20
    np.testing.assert_allclose(stats.quantiles, 0.4, atol=1e-12)


def test_statistics_ignore_sample_order(rng):
    s = rng.normal(size=(300, 2))
    a, b = summarize_samples(s), summarize_samples(s[rng.permutation(300)])
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-14)
    np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-14)
    np.testing.assert_array_equal(a.quantiles, b.quantiles)
    assert a.quantiles.shape == (5, 2)
    with pytest.raises(InvalidConfig):
        conditional_statistics(fitted_like(), [0.0, 0.0], 1, rng)
