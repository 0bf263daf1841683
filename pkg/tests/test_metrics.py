import numpy as np
import pytest

from tok4d import metrics
from tok4d.errors import (
    DimensionMismatch,
    NotSymmetric,
    ShapeMismatch,
    SqrtFailure,
    TooFewSamples,
)
from tok4d.metrics import FeatureStats, feature_stats, frechet, psnr, sqrtm_psd, ssim


def random_psd_stats(rng, dim):
    a = rng.normal(size=(dim, dim))
    return FeatureStats(rng.normal(size=dim), a @ a.T + 0.1 * np.eye(dim), 100)


def test_feature_stats_two_points_1d():
    stats = feature_stats(np.array([[0.0], [2.0]]))
    assert stats.mean[0] == 1.0
    assert stats.cov[0, 0] == 2.0  # unbiased: ((0-1)^2 + (2-1)^2) / 1


def test_feature_stats_identical_points():
    stats = feature_stats(np.ones((5, 3)))
    assert np.all(stats.cov == 0.0)


def test_feature_stats_too_few():
    with pytest.raises(TooFewSamples):
        feature_stats(np.ones((1, 3)))


def test_sqrtm_identity():
    assert np.array_equal(sqrtm_psd(np.eye(3)), np.eye(3))


def test_sqrtm_diagonal():
    out = sqrtm_psd(np.diag([4.0, 9.0]))
    assert np.allclose(out, np.diag([2.0, 3.0]), atol=1e-12)


def test_sqrtm_reconstructs_random_psd():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.normal(size=(5, 5))
        sigma = a @ a.T
        root = sqrtm_psd(sigma)
        rel = np.linalg.norm(root @ root - sigma) / np.linalg.norm(sigma)
        assert rel < 1e-6


def test_sqrtm_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        sqrtm_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sqrtm_rejects_indefinite():
    with pytest.raises(SqrtFailure):
        sqrtm_psd(np.diag([1.0, -0.5]))


def test_frechet_zero_for_equal_stats():
    rng = np.random.default_rng(1)
    stats = random_psd_stats(rng, 4)
    total, mean_term, cov_term = frechet(stats, stats)
    assert abs(total) < 1e-9 and abs(mean_term) < 1e-12 and abs(cov_term) < 1e-9


def test_frechet_closed_form_mean_only():
    a = FeatureStats([0.0], [[1.0]], 10)
    b = FeatureStats([1.0], [[1.0]], 10)
    total, mean_term, cov_term = frechet(a, b)
    assert abs(total - 1.0) < 1e-9
    assert abs(mean_term - 1.0) < 1e-12
    assert abs(cov_term) < 1e-9


def test_frechet_closed_form_cov_only():
    a = FeatureStats([0.0], [[1.0]], 10)
    b = FeatureStats([0.0], [[4.0]], 10)
    total, mean_term, cov_term = frechet(a, b)
    # 1 + 4 - 2 * 2 = 1
    assert abs(total - 1.0) < 1e-9
    assert abs(mean_term) < 1e-12
    assert abs(cov_term - 1.0) < 1e-9


def test_frechet_decomposition_identity_random():
    rng = np.random.default_rng(2)
    for _ in range(50):
        dim = int(rng.integers(1, 16))
        a, b = random_psd_stats(rng, dim), random_psd_stats(rng, dim)
        total, mean_term, cov_term = frechet(a, b)
        assert total == mean_term + cov_term  # exact by construction
        assert cov_term > -1e-8


def test_frechet_symmetry():
    rng = np.random.default_rng(3)
    a, b = random_psd_stats(rng, 6), random_psd_stats(rng, 6)
    t_ab = frechet(a, b)[0]
    t_ba = frechet(b, a)[0]
    assert abs(t_ab - t_ba) < 1e-6 * max(1.0, abs(t_ab))


def test_frechet_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        frechet(FeatureStats([0.0], [[1.0]], 5),
                FeatureStats([0.0, 0.0], np.eye(2), 5))


def test_frechet_empirical_converges_to_closed_form():
    rng = np.random.default_rng(4)
    dim = 6
    mean_a, mean_b = np.zeros(dim), np.full(dim, 0.5)
    scale_a = np.eye(dim)
    scale_b = np.diag(np.linspace(0.5, 2.0, dim))
    sample_a = rng.normal(size=(10_000, dim)) @ scale_a + mean_a
    sample_b = rng.normal(size=(10_000, dim)) @ scale_b + mean_b
    total_emp = frechet(feature_stats(sample_a), feature_stats(sample_b))[0]
    # closed form for diagonal Gaussians
    diff = mean_a - mean_b
    closed = diff @ diff + np.sum((np.diag(scale_a) - np.diag(scale_b)) ** 2)
    assert abs(total_emp - closed) / closed < 0.05


def test_psnr_identical_is_inf():
    img = np.random.default_rng(5).uniform(size=(8, 8, 3))
    assert psnr(img, img) == float("inf")


def test_psnr_constant_offset_hand_value():
    x = np.zeros((16, 16))
    val = psnr(x, x + 16.0 / 255.0)
    assert abs(val - 20.0 * np.log10(255.0 / 16.0)) < 1e-9


def test_psnr_permutation_invariance():
    rng = np.random.default_rng(6)
    x = rng.uniform(size=64)
    y = rng.uniform(size=64)
    perm = rng.permutation(64)
    assert abs(psnr(x.reshape(8, 8), y.reshape(8, 8))
               - psnr(x[perm].reshape(8, 8), y[perm].reshape(8, 8))) < 1e-12


def test_ssim_identical_is_one():
    img = np.random.default_rng(7).uniform(size=(16, 16, 3))
    assert ssim(img, img) == 1.0


def test_ssim_constants_zero_vs_one():
    val = ssim(np.zeros((8, 8)), np.ones((8, 8)))
    assert abs(val - metrics.SSIM_C1 / (1.0 + metrics.SSIM_C1)) < 1e-12


def test_ssim_bounded():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = rng.uniform(size=(16, 16))
        b = rng.uniform(size=(16, 16))
        assert -1.0 <= ssim(a, b) <= 1.0


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ssim(np.zeros((8, 8)), np.zeros((8, 9)))
