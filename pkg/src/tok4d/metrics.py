"""Reconstruction metrics and the Fréchet distance decomposition.

The Fréchet distance between Gaussian feature fits splits exactly into a
mean term ||mu_a - mu_b||^2 and a covariance term
Tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2}); the symmetric-sandwich
square root keeps the inner matrix PSD.  Feature sources are pluggable
(probe features or stored ATFT files), so only the decomposition
methodology is fixed here, not any particular backbone's magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NotSymmetric,
    ShapeMismatch,
    SqrtFailure,
    TooFewSamples,
)

EIG_CLIP = 1e-8
SSIM_C1 = 1e-4
SSIM_C2 = 9e-4
SSIM_WINDOW = 8


@dataclass
class FeatureStats:
    """Gaussian fit of a feature set: mean, covariance, sample count."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise DimensionMismatch(f"cov {self.cov.shape} vs mean dim {d}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def feature_stats(features: np.ndarray) -> FeatureStats:
    """Sample mean and unbiased covariance of an (n, D) feature matrix."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeMismatch(f"features must be (n, D), got {features.shape}")
    n = features.shape[0]
    if n < 2:
        raise TooFewSamples(f"need n >= 2 samples, got {n}")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (n - 1)
    return FeatureStats(mean, cov, n)


def sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues within -1e-8 of zero are clipped to zero; anything more
    negative signals broken statistics upstream and raises SqrtFailure.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise NotSymmetric(f"square matrix required, got {matrix.shape}")
    if np.abs(matrix - matrix.T).max() > 1e-8 * max(1.0, np.abs(matrix).max()):
        raise NotSymmetric("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2.0)
    if vals.min() < -EIG_CLIP * max(1.0, abs(vals.max())):
        raise SqrtFailure(f"eigenvalue {vals.min():.3e} too negative for a PSD root")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet(a: FeatureStats, b: FeatureStats) -> tuple[float, float, float]:
    """Fréchet distance and its exact mean/covariance decomposition.

    Returns (total, mean_term, cov_term) with total = mean_term + cov_term
    by construction.
    """
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    mean_term = float(diff @ diff)
    root_a = sqrtm_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    cross = sqrtm_psd((inner + inner.T) / 2.0)
    cov_term = float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return mean_term + cov_term, mean_term, cov_term


def psnr(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for [0, 1] data; inf when identical."""
    x, x_hat = _check_pair(x, x_hat)
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def ssim(x: np.ndarray, x_hat: np.ndarray, window: int = SSIM_WINDOW) -> float:
    """Structural similarity over non-overlapping windows, mean-reduced.

    Uses the standard constants C1 = 1e-4 and C2 = 9e-4 for unit dynamic
    range.  Multi-channel inputs average across channels; videos average
    across frames.  Inputs smaller than the window fall back to a single
    whole-image window.
    """
    x, x_hat = _check_pair(x, x_hat)
    if x.ndim == 4:  # video: mean over frames
        return float(np.mean([ssim(fa, fb, window) for fa, fb in zip(x, x_hat)]))
    if x.ndim == 3:  # channels last
        return float(np.mean([ssim(x[..., c], x_hat[..., c], window)
                              for c in range(x.shape[-1])]))
    h, w = x.shape
    win = min(window, h, w)
    ny, nx = h // win, w // win
    a = x[:ny * win, :nx * win].reshape(ny, win, nx, win).transpose(0, 2, 1, 3)
    b = x_hat[:ny * win, :nx * win].reshape(ny, win, nx, win).transpose(0, 2, 1, 3)
    a = a.reshape(ny * nx, win * win)
    b = b.reshape(ny * nx, win * win)
    mu_a, mu_b = a.mean(axis=1), b.mean(axis=1)
    var_a = ((a - mu_a[:, None]) ** 2).mean(axis=1)
    var_b = ((b - mu_b[:, None]) ** 2).mean(axis=1)
    cov = ((a - mu_a[:, None]) * (b - mu_b[:, None])).mean(axis=1)
    lum = (2 * mu_a * mu_b + SSIM_C1) / (mu_a ** 2 + mu_b ** 2 + SSIM_C1)
    struct = (2 * cov + SSIM_C2) / (var_a + var_b + SSIM_C2)
    return float(np.mean(lum * struct))


def _check_pair(x, x_hat):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeMismatch(f"{x.shape} vs {x_hat.shape}")
    return x, x_hat
